#pragma once

// Batch construction and losses for the four pre-training objectives. The
// builders own the token layout, prediction sets, labels, and the attention
// visibility matrix; the losses are plain masked-token cross entropy over the
// prediction set.

#include <optional>
#include <vector>

#include "camlmlab/batch.hpp"
#include "camlmlab/corpus.hpp"
#include "camlmlab/masks.hpp"
#include "camlmlab/model.hpp"

namespace camlmlab {

struct MaskingResult {
    std::vector<int> tokens;     // corrupted copy
    std::vector<int> positions;  // ascending indices into the input list
    std::vector<int> labels;     // original tokens at those positions
};

// BERT-style corruption: positions are chosen without replacement at
// mask_rate over the non-special tokens (at least one is always selected),
// then replaced per the 80/10/10 mask/random/keep split. The random
// replacement is drawn from the language range of the replaced token.
MaskingResult apply_masking(const std::vector<int>& tokens, const MaskingPolicy& policy,
                            const Vocabulary& vocab);

enum class TlmSides : uint8_t { Both, SrcOnly, TgtOnly };

// [CLS] s [SEP], full visibility.
MaskedBatch build_mmlm_batch(const MonoSentence& s, const MaskingPolicy& policy,
                             const Vocabulary& vocab, int max_positions);

// [CLS] src [SEP] tgt [SEP], full visibility, both sides masked.
// forced_src/forced_tgt (0-based content-relative indices) override the
// policy's position choice; used by golden tests and mask inspection.
MaskedBatch build_tlm_batch(const SentencePair& p, const MaskingPolicy& policy,
                            const Vocabulary& vocab, int max_positions,
                            TlmSides sides = TlmSides::Both,
                            const std::vector<int>* forced_src = nullptr,
                            const std::vector<int>* forced_tgt = nullptr);

// Same layout as TLM with the cross-attention visibility matrix: masked
// positions in one sentence may only see the other sentence (plus their own
// position/language slot).
MaskedBatch build_camlm_batch(const SentencePair& p, const MaskingPolicy& policy,
                              const Vocabulary& vocab, int max_positions, MaskMode mode,
                              const std::vector<int>* forced_src = nullptr,
                              const std::vector<int>* forced_tgt = nullptr);

// [CLS] s [SEP] then pseudo_count [MASK] placeholders carrying the target
// language id and continued positions. Prediction set = placeholders; no
// labels (generation batch).
MaskedBatch build_btmlm_stage1_batch(const MonoSentence& s, int pseudo_count, int tgt_lang,
                                     const Vocabulary& vocab, int max_positions);

// [CLS] corrupted(s) [SEP] P [SEP], full visibility; prediction set = the
// masked sentence positions only, pseudo tokens receive no loss.
MaskedBatch build_btmlm_stage2_batch(const MonoSentence& s, const MaskingPolicy& policy,
                                     const std::vector<int>& pseudo_tokens, int tgt_lang,
                                     const Vocabulary& vocab, int max_positions);

struct DecodeConfig {
    enum class Kind : uint8_t { Argmax, Sample } kind = Kind::Argmax;
    double temperature = 1.0;
    uint64_t seed = 0;
    // Restrict decoding to the placeholder's language range. At toy scale
    // with random init, unrestricted decoding collapses early training.
    bool restrict_to_lang = true;
};

template <typename S>
std::vector<int> generate_pseudo_tokens(Params<S>& params, const MaskedBatch& stage1,
                                        const Vocabulary& vocab,
                                        const DecodeConfig& decode = {}) {
    if (stage1.has_labels() || stage1.predict_positions.empty())
        throw StateError("generate_pseudo_tokens: not a stage-1 generation batch");
    Graph<S> g(false);  // one forward pass, no gradient recording
    auto enc = forward(g, params, stage1);
    const int v = params.config.vocab;
    std::vector<int> out;
    out.reserve(stage1.predict_positions.size());
    Rng rng(hash_mix(decode.seed, 0xdecade));
    for (size_t r = 0; r < stage1.predict_positions.size(); ++r) {
        const int lang = stage1.lang_ids[stage1.predict_positions[r]];
        int lo = 0, hi = v;
        if (decode.restrict_to_lang) {
            lo = vocab.lang_begin(lang);
            hi = vocab.lang_end(lang);
        }
        const S* row = enc.logits->value.data() + r * static_cast<size_t>(v);
        if (decode.kind == DecodeConfig::Kind::Argmax) {
            int best = lo;
            for (int j = lo + 1; j < hi; ++j)
                if (row[j] > row[best]) best = j;
            out.push_back(best);
        } else {
            const double tau = decode.temperature > 0 ? decode.temperature : 1.0;
            double maxv = static_cast<double>(row[lo]);
            for (int j = lo + 1; j < hi; ++j) maxv = std::max(maxv, static_cast<double>(row[j]));
            std::vector<double> cum(hi - lo);
            double acc = 0.0;
            for (int j = lo; j < hi; ++j) {
                acc += std::exp((static_cast<double>(row[j]) - maxv) / tau);
                cum[j - lo] = acc;
            }
            const double u = rng.next_unit() * acc;
            int pick = lo;
            while (pick - lo < hi - lo - 1 && cum[pick - lo] < u) ++pick;
            out.push_back(pick);
        }
    }
    return out;
}

// Cross entropy over the batch's prediction set, mean per position.
template <typename S>
Tensor<S> objective_loss(Graph<S>& g, Params<S>& params, const MaskedBatch& batch,
                         const ForwardCtx& ctx = {}) {
    if (!batch.has_labels()) throw LabelError("objective_loss: batch has no labels");
    auto enc = forward(g, params, batch, ctx);
    return cross_entropy_logits(g, enc.logits, batch.labels);
}

}  // namespace camlmlab
