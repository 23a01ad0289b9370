#pragma once

// Desk-scale measurement suite: cross-lingual retrieval over pooled
// middle-layer embeddings, a synthetic transfer probe with a frozen logistic
// head, hardest-negative retrieval fine-tuning, held-out masked-LM perplexity
// sweeps, and the objective-set ablation grid.

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "camlmlab/corpus.hpp"
#include "camlmlab/model.hpp"
#include "camlmlab/objectives.hpp"
#include "camlmlab/trainer.hpp"

namespace camlmlab {

using EmbeddingMatrix = std::vector<std::vector<double>>;

struct RetrievalReport {
    double top1_src2tgt = 0.0;
    double top1_tgt2src = 0.0;
    double mrr = 0.0;
    int pairs = 0;
};

// Cosine nearest-neighbor retrieval, ties broken by lowest index. Throws
// NumericsError naming the sentence for zero-norm embeddings.
RetrievalReport retrieval_from_embeddings(const EmbeddingMatrix& src, const EmbeddingMatrix& tgt);

struct ProbeReport {
    double acc_a = 0.0;
    double acc_b = 0.0;
    double gap = 0.0;
};

// Trains a logistic head on frozen embeddings of language A, evaluates on
// both test sets. Deterministic (zero init, full-batch gradient descent).
ProbeReport probe_from_embeddings(const EmbeddingMatrix& train, const std::vector<int>& train_labels,
                                  const EmbeddingMatrix& test_a, const std::vector<int>& labels_a,
                                  const EmbeddingMatrix& test_b, const std::vector<int>& labels_b,
                                  int steps, double lr);

struct ProbeConfig {
    int train_n = 500;
    int test_n = 200;
    int classes = 12;
    int head_steps = 200;
    double head_lr = 0.5;
    uint64_t seed = 7;
};

struct ProbeData {
    std::vector<MonoSentence> train;  // language A
    std::vector<int> train_labels;
    std::vector<MonoSentence> test_a;
    std::vector<int> labels_a;
    std::vector<MonoSentence> test_b;  // cipher translations of test_a
    std::vector<int> labels_b;
    std::vector<int> class_tokens;  // designated source-class set (language A ids)
};

// Synthetic labeled task: label = sentence contains at least one token from a
// designated class set; the class set maps through the cipher, so labels are
// invariant under translation. Balanced by construction.
ProbeData generate_probe_data(const CorpusConfig& corpus_cfg, const ProbeConfig& probe_cfg);

std::string hardware_context();

// ---------------------------------------------------------------------------

inline MaskedBatch build_plain_batch(const MonoSentence& s, int max_positions) {
    const int n = static_cast<int>(s.tokens.size()) + 2;
    if (n > max_positions) throw ConfigError("plain batch exceeds max positions");
    MaskedBatch b;
    b.tokens.push_back(Vocabulary::kCls);
    b.tokens.insert(b.tokens.end(), s.tokens.begin(), s.tokens.end());
    b.tokens.push_back(Vocabulary::kSep);
    b.pos_ids.resize(n);
    for (int i = 0; i < n; ++i) b.pos_ids[i] = i;
    b.lang_ids.assign(n, s.lang);
    b.allowed = BoolMatrix::ones(n);
    b.segment.assign(n, Segment::SRC);
    b.segment.front() = Segment::SPECIAL;
    b.segment.back() = Segment::SPECIAL;
    return b;
}

template <typename S>
EmbeddingMatrix embed_sentences(Params<S>& params, const std::vector<MonoSentence>& sentences) {
    EmbeddingMatrix out;
    out.reserve(sentences.size());
    for (const auto& s : sentences) {
        Graph<S> g(false);
        auto pooled = pool_middle_layer(g, params, build_plain_batch(s, params.config.max_positions));
        std::vector<double> row(pooled->value.size());
        for (size_t i = 0; i < row.size(); ++i) row[i] = static_cast<double>(pooled->value[i]);
        out.push_back(std::move(row));
    }
    return out;
}

template <typename S>
RetrievalReport retrieval_eval(Params<S>& params, const std::vector<SentencePair>& pairs) {
    if (pairs.size() < 2) throw ConfigError("retrieval_eval: need at least 2 pairs");
    std::vector<MonoSentence> src, tgt;
    for (const auto& p : pairs) {
        src.push_back(p.src);
        tgt.push_back(p.tgt);
    }
    return retrieval_from_embeddings(embed_sentences(params, src), embed_sentences(params, tgt));
}

template <typename S>
ProbeReport transfer_probe(Params<S>& params, const CorpusConfig& corpus_cfg,
                           const ProbeConfig& probe_cfg) {
    const ProbeData data = generate_probe_data(corpus_cfg, probe_cfg);
    return probe_from_embeddings(embed_sentences(params, data.train), data.train_labels,
                                 embed_sentences(params, data.test_a), data.labels_a,
                                 embed_sentences(params, data.test_b), data.labels_b,
                                 probe_cfg.head_steps, probe_cfg.head_lr);
}

// ---------------------------------------------------------------------------
// Hardest-negative retrieval fine-tuning.

struct FinetuneConfig {
    int steps = 150;
    int batch = 16;
    double lr = 1e-4;
    double tau = 0.05;
    double clip_norm = 1.0;
    uint64_t seed = 11;
};

// In-batch hardest-negative binary cross entropy over cosine similarities of
// pooled embeddings; gradients flow into the encoder. Returns the per-step
// loss curve.
template <typename S>
std::vector<double> hardest_negative_finetune(Params<S>& params,
                                              const std::vector<SentencePair>& pairs,
                                              const FinetuneConfig& cfg) {
    if (cfg.batch < 4) throw ConfigError("finetune: batch must be >= 4 pairs");
    if (pairs.size() < static_cast<size_t>(cfg.batch))
        throw ConfigError("finetune: not enough pairs for one batch");
    TrainConfig opt_cfg;
    opt_cfg.weight_decay = 0.0;
    auto state = OptimizerState<S>::zeros_like(params);
    std::vector<double> curve;
    curve.reserve(cfg.steps);
    const int max_positions = params.config.max_positions;

    const bool fixed_batch = pairs.size() == static_cast<size_t>(cfg.batch);
    for (int step = 0; step < cfg.steps; ++step) {
        Rng rng(hash_mix(cfg.seed, 0xf17e, static_cast<uint64_t>(step)));
        Graph<S> g;
        std::vector<Tensor<S>> src_rows, tgt_rows;
        for (int b = 0; b < cfg.batch; ++b) {
            const auto& p = pairs[fixed_batch ? b : rng.below(pairs.size())];
            src_rows.push_back(pool_middle_layer(g, params, build_plain_batch(p.src, max_positions)));
            tgt_rows.push_back(pool_middle_layer(g, params, build_plain_batch(p.tgt, max_positions)));
        }
        auto u = row_l2_normalize(g, stack_rows(g, src_rows));
        auto v = row_l2_normalize(g, stack_rows(g, tgt_rows));
        auto sims = scale(g, matmul_nt(g, u, v), static_cast<S>(1.0 / cfg.tau));
        // hardest in-batch negative per row, selected on the forward values
        std::vector<std::pair<int, int>> pos_at, neg_at;
        for (int i = 0; i < cfg.batch; ++i) {
            int jstar = i == 0 ? 1 : 0;
            for (int j = 0; j < cfg.batch; ++j) {
                if (j == i) continue;
                if (sims->at(i, j) > sims->at(i, jstar)) jstar = j;
            }
            pos_at.emplace_back(i, i);
            neg_at.emplace_back(i, jstar);
        }
        auto pos = gather_elems(g, sims, pos_at);
        auto neg = gather_elems(g, sims, neg_at);
        auto loss = scale(g, add(g, sum(g, softplus(g, scale(g, pos, S(-1)))),
                                 sum(g, softplus(g, neg))),
                          static_cast<S>(1.0 / cfg.batch));
        params.zero_grads();
        g.backward(loss);
        clip_gradients(params, cfg.clip_norm);
        adam_step(params, state, cfg.lr, opt_cfg);
        curve.push_back(static_cast<double>(scalar_value(loss)));
    }
    return curve;
}

// ---------------------------------------------------------------------------
// Masked-LM perplexity on held-out monolingual data (mask-only corruption).

template <typename S>
double ppl_eval(Params<S>& params, const std::vector<MonoSentence>& heldout, double mask_rate,
                uint64_t seed) {
    if (heldout.empty()) throw ConfigError("ppl_eval: empty held-out set");
    MaskingPolicy policy;
    policy.mask_rate = mask_rate;
    policy.frac_mask = 1.0;
    policy.frac_random = 0.0;
    policy.frac_keep = 0.0;
    Vocabulary vocab;  // only special-token classification is needed here
    double total_nll = 0.0;
    int64_t total_positions = 0;
    for (size_t i = 0; i < heldout.size(); ++i) {
        policy.seed = hash_mix(seed, 0x991, i);
        const auto batch =
            build_mmlm_batch(heldout[i], policy, vocab, params.config.max_positions);
        Graph<S> g(false);
        const double nll = static_cast<double>(scalar_value(objective_loss(g, params, batch)));
        total_nll += nll * static_cast<double>(batch.predict_positions.size());
        total_positions += static_cast<int64_t>(batch.predict_positions.size());
    }
    return std::exp(total_nll / static_cast<double>(total_positions));
}

struct PplPoint {
    int step = 0;
    double ppl = 0.0;
};

struct PplSweepRow {
    double proportion = 0.0;
    std::vector<PplPoint> curve;
};

// Trains one run per pseudo-token proportion, logging held-out PPL every
// ppl_every steps (plus step 0 and the final step).
template <typename S>
std::vector<PplSweepRow> ppl_sweep(const ModelConfig& model_cfg, const TrainConfig& base_cfg,
                                   const TrainData& data, const Vocabulary& vocab,
                                   const std::vector<MonoSentence>& heldout,
                                   const std::vector<double>& proportions, int ppl_every,
                                   uint64_t model_seed) {
    if (proportions.empty()) throw ConfigError("ppl_sweep: no proportions");
    for (double p : proportions)
        if (p <= 0.0 || p > 0.5) throw ConfigError("ppl_sweep: proportions must lie in (0, 0.5]");
    std::vector<PplSweepRow> rows;
    for (const double prob : proportions) {
        TrainConfig cfg = base_cfg;
        cfg.pseudo_prob = prob;
        Params<S> params = init_params<S>(model_cfg, model_seed);
        auto state = OptimizerState<S>::zeros_like(params);
        PplSweepRow row;
        row.proportion = prob;
        row.curve.push_back({0, ppl_eval(params, heldout, cfg.mask_rate, cfg.seed)});
        TrainHooks<S> hooks;
        hooks.eval_every = ppl_every;
        hooks.on_eval = [&](int step, Params<S>& p) {
            row.curve.push_back({step, ppl_eval(p, heldout, cfg.mask_rate, cfg.seed)});
        };
        run_training(params, state, cfg, data, vocab, hooks);
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Ablation grid: identical init and hyperparameters, objective set varies.

struct AblationRow {
    std::string exp_id;
    std::array<double, 4> weights{};  // MMLM,TLM,CAMLM,BTMLM
    bool trained = false;
    RetrievalReport retrieval;
    ProbeReport probe;
    std::string init_checksum;
};

inline std::vector<std::pair<std::string, std::array<double, 4>>> ablation_objective_sets() {
    return {
        {"mmlm", {1, 0, 0, 0}},
        {"mmlm+tlm", {1, 1, 0, 0}},
        {"mmlm+camlm", {1, 0, 1, 0}},
        {"mmlm+camlm+btmlm", {1, 0, 1, 1}},
        {"full", {1, 1, 1, 1}},
    };
}

template <typename S>
std::string params_checksum(Params<S>& params) {
    uint64_t h = 0x9d;
    params.for_each([&](const std::string&, Tensor<S>& t) {
        for (const S v : t->value) {
            const float f = static_cast<float>(v);
            uint32_t bits;
            std::memcpy(&bits, &f, 4);
            h = hash_mix(h, bits);
        }
    });
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

template <typename S>
AblationRow ablation_train_row(const std::string& exp_id, const std::array<double, 4>& weights,
                               const ModelConfig& model_cfg, const TrainConfig& base_cfg,
                               const TrainData& data, const Vocabulary& vocab,
                               const std::vector<SentencePair>& heldout,
                               const CorpusConfig& corpus_cfg, const ProbeConfig& probe_cfg,
                               uint64_t model_seed) {
    Params<S> params = init_params<S>(model_cfg, model_seed);
    AblationRow row;
    row.exp_id = exp_id;
    row.weights = weights;
    row.init_checksum = params_checksum(params);
    TrainConfig cfg = base_cfg;
    cfg.objective_weights = weights;
    if (weights != std::array<double, 4>{0, 0, 0, 0}) {
        auto state = OptimizerState<S>::zeros_like(params);
        run_training(params, state, cfg, data, vocab);
        row.trained = true;
    }
    row.retrieval = retrieval_eval(params, heldout);
    row.probe = transfer_probe(params, corpus_cfg, probe_cfg);
    return row;
}

// Baseline (untrained) row plus the five trained objective sets.
template <typename S>
std::vector<AblationRow> ablation_run(const ModelConfig& model_cfg, const TrainConfig& base_cfg,
                                      const TrainData& data, const Vocabulary& vocab,
                                      const std::vector<SentencePair>& heldout,
                                      const CorpusConfig& corpus_cfg,
                                      const ProbeConfig& probe_cfg, uint64_t model_seed) {
    std::vector<AblationRow> rows;
    rows.push_back(ablation_train_row<S>("baseline", {0, 0, 0, 0}, model_cfg, base_cfg, data,
                                         vocab, heldout, corpus_cfg, probe_cfg, model_seed));
    for (const auto& [exp_id, weights] : ablation_objective_sets())
        rows.push_back(ablation_train_row<S>(exp_id, weights, model_cfg, base_cfg, data, vocab,
                                             heldout, corpus_cfg, probe_cfg, model_seed));
    return rows;
}

// ---------------------------------------------------------------------------
// Step-time overhead: full objective set vs MMLM+TLM.

struct OverheadReport {
    double ms_full = 0.0;
    double ms_base = 0.0;
    double ratio = 0.0;
    std::string hardware;
};

template <typename S>
OverheadReport measure_overhead(const ModelConfig& model_cfg, const TrainConfig& base_cfg,
                                const TrainData& data, const Vocabulary& vocab, int steps,
                                uint64_t model_seed) {
    auto mean_step_ms = [&](const std::array<double, 4>& weights) {
        TrainConfig cfg = base_cfg;
        cfg.objective_weights = weights;
        cfg.total_steps = steps;
        cfg.warmup_steps = std::min(base_cfg.warmup_steps, steps / 2);
        cfg.btmlm_start_step = 0;
        cfg.checkpoint_interval = steps + 1;
        Params<S> params = init_params<S>(model_cfg, model_seed);
        auto state = OptimizerState<S>::zeros_like(params);
        double total = 0.0;
        int counted = 0;
        TrainHooks<S> hooks;
        hooks.on_metrics = [&](const MetricsRecord& rec) {
            if (rec.step >= 2) {  // skip cache-cold steps
                total += rec.elapsed_ms;
                ++counted;
            }
        };
        run_training(params, state, cfg, data, vocab, hooks);
        return total / std::max(counted, 1);
    };
    OverheadReport report;
    report.ms_full = mean_step_ms({1, 1, 1, 1});
    report.ms_base = mean_step_ms({1, 1, 0, 0});
    report.ratio = report.ms_full / report.ms_base;
    report.hardware = hardware_context();
    return report;
}

}  // namespace camlmlab
