#include "camlmlab/objectives.hpp"

#include <algorithm>

namespace camlmlab {

namespace {

// Partial Fisher-Yates: k distinct picks from items, then sorted ascending.
std::vector<int> choose_k(std::vector<int> items, size_t k, Rng& rng) {
    for (size_t i = 0; i < k; ++i) {
        const size_t j = i + rng.below(items.size() - i);
        std::swap(items[i], items[j]);
    }
    items.resize(k);
    std::sort(items.begin(), items.end());
    return items;
}

MaskingResult mask_at_positions(const std::vector<int>& tokens,
                                const std::vector<int>& positions,
                                const MaskingPolicy& policy, const Vocabulary& vocab, Rng& rng) {
    MaskingResult res;
    res.tokens = tokens;
    res.positions = positions;
    for (int pos : positions) {
        const int original = tokens[pos];
        res.labels.push_back(original);
        const double u = rng.next_unit();
        if (u < policy.frac_mask) {
            res.tokens[pos] = Vocabulary::kMask;
        } else if (u < policy.frac_mask + policy.frac_random) {
            const int lang = vocab.lang_of(original);
            const int base = vocab.lang_begin(lang < 0 ? 0 : lang);
            res.tokens[pos] = base + static_cast<int>(rng.below(vocab.range_size));
        }  // else keep
    }
    return res;
}

void check_length(int n, int max_positions) {
    if (n > max_positions)
        throw ConfigError("batch length " + std::to_string(n) + " exceeds max positions " +
                          std::to_string(max_positions));
}

std::vector<int> iota_vec(int begin, int count) {
    std::vector<int> v(count);
    for (int i = 0; i < count; ++i) v[i] = begin + i;
    return v;
}

}  // namespace

MaskingResult apply_masking(const std::vector<int>& tokens, const MaskingPolicy& policy,
                            const Vocabulary& vocab) {
    policy.validate();
    if (tokens.empty()) throw ConfigError("apply_masking: empty token list");
    std::vector<int> maskable;
    for (size_t i = 0; i < tokens.size(); ++i)
        if (!vocab.is_special(tokens[i])) maskable.push_back(static_cast<int>(i));
    if (maskable.empty()) throw ConfigError("apply_masking: no maskable positions");

    Rng rng(hash_mix(policy.seed, 0x3a5c));
    size_t k = static_cast<size_t>(
        std::llround(policy.mask_rate * static_cast<double>(maskable.size())));
    k = std::min(std::max<size_t>(k, 1), maskable.size());
    const auto positions = choose_k(maskable, k, rng);
    return mask_at_positions(tokens, positions, policy, vocab, rng);
}

MaskedBatch build_mmlm_batch(const MonoSentence& s, const MaskingPolicy& policy,
                             const Vocabulary& vocab, int max_positions) {
    const int n = static_cast<int>(s.tokens.size()) + 2;
    check_length(n, max_positions);
    const auto masked = apply_masking(s.tokens, policy, vocab);

    MaskedBatch b;
    b.tokens.push_back(Vocabulary::kCls);
    b.tokens.insert(b.tokens.end(), masked.tokens.begin(), masked.tokens.end());
    b.tokens.push_back(Vocabulary::kSep);
    b.pos_ids = iota_vec(0, n);
    b.lang_ids.assign(n, s.lang);
    b.allowed = BoolMatrix::ones(n);
    for (size_t i = 0; i < masked.positions.size(); ++i) {
        b.predict_positions.push_back(masked.positions[i] + 1);
        b.labels.push_back(masked.labels[i]);
    }
    b.segment.assign(n, Segment::SRC);
    b.segment.front() = Segment::SPECIAL;
    b.segment.back() = Segment::SPECIAL;
    return b;
}

namespace {

// Shared pair layout: [CLS] src [SEP] tgt [SEP]. Returns the batch with
// tokens corrupted per side; masked positions come back via out-params as
// batch-coordinate index sets.
MaskedBatch pair_layout(const SentencePair& p, const MaskingPolicy& policy,
                        const Vocabulary& vocab, int max_positions, bool mask_src,
                        bool mask_tgt, const std::vector<int>* forced_src,
                        const std::vector<int>* forced_tgt, std::vector<int>& masked_src_out,
                        std::vector<int>& masked_tgt_out) {
    const int s = static_cast<int>(p.src.tokens.size());
    const int t = static_cast<int>(p.tgt.tokens.size());
    const int n = s + t + 3;
    check_length(n, max_positions);
    if (s == 0 || t == 0) throw ConfigError("pair batch: empty sentence");

    auto side = [&](const std::vector<int>& tokens, bool mask, const std::vector<int>* forced,
                    uint64_t salt) {
        if (forced) {
            Rng rng(hash_mix(policy.seed, salt));
            for (int i : *forced)
                if (i < 0 || i >= static_cast<int>(tokens.size()))
                    throw ConfigError("pair batch: forced mask index out of range");
            std::vector<int> sorted = *forced;
            std::sort(sorted.begin(), sorted.end());
            return mask_at_positions(tokens, sorted, policy, vocab, rng);
        }
        if (!mask) return MaskingResult{tokens, {}, {}};
        return apply_masking(tokens, policy.with_seed(hash_mix(policy.seed, salt)), vocab);
    };
    const auto src_masked = side(p.src.tokens, mask_src, forced_src, 0xa);
    const auto tgt_masked = side(p.tgt.tokens, mask_tgt, forced_tgt, 0xb);

    MaskedBatch b;
    b.tokens.push_back(Vocabulary::kCls);
    b.tokens.insert(b.tokens.end(), src_masked.tokens.begin(), src_masked.tokens.end());
    b.tokens.push_back(Vocabulary::kSep);
    b.tokens.insert(b.tokens.end(), tgt_masked.tokens.begin(), tgt_masked.tokens.end());
    b.tokens.push_back(Vocabulary::kSep);
    // target-side positions restart at 1, so aligned tokens share a position
    // embedding regardless of the source length (language ids separate the
    // sides); a masked slot's own position then names its counterpart
    b.pos_ids = iota_vec(0, s + 2);
    for (int i = 0; i < t + 1; ++i) b.pos_ids.push_back(i + 1);
    b.lang_ids.assign(n, p.src.lang);
    for (int i = s + 2; i < n; ++i) b.lang_ids[i] = p.tgt.lang;
    b.segment.assign(n, Segment::SRC);
    b.segment[0] = Segment::SPECIAL;
    b.segment[s + 1] = Segment::SPECIAL;
    for (int i = s + 2; i < n - 1; ++i) b.segment[i] = Segment::TGT;
    b.segment[n - 1] = Segment::SPECIAL;

    for (size_t i = 0; i < src_masked.positions.size(); ++i) {
        b.predict_positions.push_back(src_masked.positions[i] + 1);
        b.labels.push_back(src_masked.labels[i]);
    }
    for (size_t i = 0; i < tgt_masked.positions.size(); ++i) {
        b.predict_positions.push_back(tgt_masked.positions[i] + s + 2);
        b.labels.push_back(tgt_masked.labels[i]);
    }
    masked_src_out.clear();
    masked_tgt_out.clear();
    for (int i : src_masked.positions) masked_src_out.push_back(i + 1);
    for (int i : tgt_masked.positions) masked_tgt_out.push_back(i + s + 2);
    return b;
}

}  // namespace

MaskedBatch build_tlm_batch(const SentencePair& p, const MaskingPolicy& policy,
                            const Vocabulary& vocab, int max_positions, TlmSides sides,
                            const std::vector<int>* forced_src,
                            const std::vector<int>* forced_tgt) {
    std::vector<int> ms, mt;
    MaskedBatch b = pair_layout(p, policy, vocab, max_positions, sides != TlmSides::TgtOnly,
                                sides != TlmSides::SrcOnly, forced_src, forced_tgt, ms, mt);
    b.allowed = BoolMatrix::ones(b.n());
    return b;
}

MaskedBatch build_camlm_batch(const SentencePair& p, const MaskingPolicy& policy,
                              const Vocabulary& vocab, int max_positions, MaskMode mode,
                              const std::vector<int>* forced_src,
                              const std::vector<int>* forced_tgt) {
    std::vector<int> masked_src, masked_tgt;
    MaskedBatch b = pair_layout(p, policy, vocab, max_positions, true, true, forced_src,
                                forced_tgt, masked_src, masked_tgt);
    if (masked_src.empty() || masked_tgt.empty())
        throw ConfigError("camlm batch: both sides need at least one masked position");
    const int s = static_cast<int>(p.src.tokens.size());
    // [CLS] and the first [SEP] ride with the source segment, the final [SEP]
    // with the target segment.
    std::vector<int> src_idx = iota_vec(0, s + 2);
    std::vector<int> tgt_idx = iota_vec(s + 2, b.n() - s - 2);
    b.allowed = camlm_attention_mask(b.n(), src_idx, tgt_idx, masked_src, masked_tgt, mode);
    return b;
}

MaskedBatch build_btmlm_stage1_batch(const MonoSentence& s, int pseudo_count, int tgt_lang,
                                     const Vocabulary& vocab, int max_positions) {
    if (pseudo_count < 1) throw ConfigError("stage-1 batch: pseudo_count must be >= 1");
    if (tgt_lang < 0 || tgt_lang >= vocab.languages || tgt_lang == s.lang)
        throw ConfigError("stage-1 batch: bad target language");
    for (int t : s.tokens)
        if (t == Vocabulary::kMask) throw ConfigError("stage-1 batch: sentence already masked");
    const int slen = static_cast<int>(s.tokens.size());
    const int n = slen + 2 + pseudo_count;
    check_length(n, max_positions);

    MaskedBatch b;
    b.tokens.push_back(Vocabulary::kCls);
    b.tokens.insert(b.tokens.end(), s.tokens.begin(), s.tokens.end());
    b.tokens.push_back(Vocabulary::kSep);
    b.tokens.insert(b.tokens.end(), pseudo_count, Vocabulary::kMask);
    b.pos_ids = iota_vec(0, n);
    b.lang_ids.assign(n, s.lang);
    for (int i = slen + 2; i < n; ++i) b.lang_ids[i] = tgt_lang;
    b.segment.assign(n, Segment::SRC);
    b.segment[0] = Segment::SPECIAL;
    b.segment[slen + 1] = Segment::SPECIAL;
    for (int i = slen + 2; i < n; ++i) b.segment[i] = Segment::PSEUDO;
    b.predict_positions = iota_vec(slen + 2, pseudo_count);
    // labels intentionally absent: generation batch
    b.allowed = btmlm_stage1_attention_mask(n, iota_vec(0, slen + 2), b.predict_positions);
    return b;
}

MaskedBatch build_btmlm_stage2_batch(const MonoSentence& s, const MaskingPolicy& policy,
                                     const std::vector<int>& pseudo_tokens, int tgt_lang,
                                     const Vocabulary& vocab, int max_positions) {
    if (pseudo_tokens.empty()) throw ConfigError("stage-2 batch: empty pseudo-token list");
    const int slen = static_cast<int>(s.tokens.size());
    const int plen = static_cast<int>(pseudo_tokens.size());
    const int n = slen + plen + 3;
    check_length(n, max_positions);
    const auto masked = apply_masking(s.tokens, policy, vocab);

    MaskedBatch b;
    b.tokens.push_back(Vocabulary::kCls);
    b.tokens.insert(b.tokens.end(), masked.tokens.begin(), masked.tokens.end());
    b.tokens.push_back(Vocabulary::kSep);
    b.tokens.insert(b.tokens.end(), pseudo_tokens.begin(), pseudo_tokens.end());
    b.tokens.push_back(Vocabulary::kSep);
    b.pos_ids = iota_vec(0, n);
    b.lang_ids.assign(n, s.lang);
    for (int i = slen + 2; i < n; ++i) b.lang_ids[i] = tgt_lang;
    b.segment.assign(n, Segment::SRC);
    b.segment[0] = Segment::SPECIAL;
    b.segment[slen + 1] = Segment::SPECIAL;
    for (int i = slen + 2; i < n - 1; ++i) b.segment[i] = Segment::PSEUDO;
    b.segment[n - 1] = Segment::SPECIAL;
    b.allowed = BoolMatrix::ones(n);
    for (size_t i = 0; i < masked.positions.size(); ++i) {
        b.predict_positions.push_back(masked.positions[i] + 1);
        b.labels.push_back(masked.labels[i]);
    }
    return b;
}

}  // namespace camlmlab
