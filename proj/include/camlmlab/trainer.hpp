#pragma once

// Optimization loop: Adam with linear warmup/decay, deterministic weighted
// round-robin over the enabled objectives, per-step derived seeds so resumed
// runs replay the exact data stream, and checkpoints that carry optimizer
// state.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "camlmlab/corpus.hpp"
#include "camlmlab/model.hpp"
#include "camlmlab/objectives.hpp"

namespace camlmlab {

struct TrainConfig {
    double peak_lr = 3e-4;
    int warmup_steps = 300;
    int total_steps = 3000;
    int batch_size = 32;
    double beta1 = 0.98;
    double beta2 = 0.999;
    double eps = 1e-6;
    double weight_decay = 0.01;
    double clip_norm = 1.0;
    std::array<double, 4> objective_weights = {1.0, 1.0, 1.0, 1.0};  // MMLM,TLM,CAMLM,BTMLM
    int btmlm_start_step = 900;
    double pseudo_prob = 0.15;
    double mask_rate = 0.15;
    MaskMode mask_mode = MaskMode::Strict;
    int checkpoint_interval = 1000;
    uint64_t seed = 1;
    std::string numeric_mode = "f32";  // "f32" or "f64"; CLI dispatch key

    void validate() const {
        if (total_steps <= 0) throw ConfigError("train: total_steps must be positive");
        if (warmup_steps < 0 || warmup_steps >= total_steps)
            throw ConfigError("train: need 0 <= warmup_steps < total_steps");
        if (batch_size <= 0) throw ConfigError("train: batch_size must be positive");
        if (peak_lr <= 0) throw ConfigError("train: peak_lr must be positive");
        double wsum = 0;
        for (double w : objective_weights) {
            if (w < 0) throw ConfigError("train: negative objective weight");
            wsum += w;
        }
        if (wsum == 0) throw ConfigError("train: all objective weights are zero");
        if (btmlm_start_step < 0) throw ConfigError("train: negative btmlm_start_step");
        if (pseudo_prob <= 0 || pseudo_prob > 0.5)
            throw ConfigError("train: pseudo_prob must be in (0,0.5]");
        if (checkpoint_interval <= 0) throw ConfigError("train: bad checkpoint interval");
        if (numeric_mode != "f32" && numeric_mode != "f64")
            throw ConfigError("train: numeric_mode must be f32 or f64");
    }

    MaskingPolicy masking_policy() const {
        MaskingPolicy p;
        p.mask_rate = mask_rate;
        return p;
    }
};

// Linear 0 -> peak over warmup, then linear peak -> 0 at total_steps.
inline double lr_at(int64_t step, const TrainConfig& cfg) {
    if (step < 0 || step > cfg.total_steps)
        throw ConfigError("lr_at: step outside [0, total_steps]");
    if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps)
        return cfg.peak_lr * static_cast<double>(step) / cfg.warmup_steps;
    return cfg.peak_lr * static_cast<double>(cfg.total_steps - step) /
           static_cast<double>(cfg.total_steps - cfg.warmup_steps);
}

template <typename S>
struct OptimizerState {
    std::vector<std::vector<S>> m;
    std::vector<std::vector<S>> v;
    int64_t step = 0;

    template <typename P>
    static OptimizerState zeros_like(P& params) {
        OptimizerState st;
        params.for_each([&](const std::string&, auto& t) {
            st.m.emplace_back(t->size(), S(0));
            st.v.emplace_back(t->size(), S(0));
        });
        return st;
    }
};

// Scales all gradients so the global L2 norm is at most clip_norm.
template <typename S>
double clip_gradients(Params<S>& params, double clip_norm) {
    double sq = 0.0;
    params.for_each([&](const std::string&, Tensor<S>& t) {
        for (const S gv : t->grad) sq += static_cast<double>(gv) * static_cast<double>(gv);
    });
    const double norm = std::sqrt(sq);
    if (clip_norm > 0.0 && norm > clip_norm) {
        const S factor = static_cast<S>(clip_norm / norm);
        params.for_each([&](const std::string&, Tensor<S>& t) {
            for (S& gv : t->grad) gv *= factor;
        });
    }
    return norm;
}

// Bias-corrected Adam with decoupled weight decay; decay skips rank-1
// tensors (layer-norm gains/biases and all bias vectors). Increments
// state.step.
template <typename S>
void adam_step(Params<S>& params, OptimizerState<S>& state, double lr, const TrainConfig& cfg) {
    const int64_t t = state.step + 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    size_t idx = 0;
    params.for_each([&](const std::string& name, Tensor<S>& tensor) {
        std::vector<S>& m = state.m[idx];
        std::vector<S>& v = state.v[idx];
        ++idx;
        const bool decay = decays(tensor->shape) && cfg.weight_decay > 0.0;
        const bool has_grad = !tensor->grad.empty();
        for (size_t i = 0; i < tensor->size(); ++i) {
            const double g = has_grad ? static_cast<double>(tensor->grad[i]) : 0.0;
            if (!std::isfinite(g))
                throw NumericsError("adam_step: non-finite gradient in tensor " + name);
            const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
            const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
            m[i] = static_cast<S>(mi);
            v[i] = static_cast<S>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            double update = lr * mhat / (std::sqrt(vhat) + cfg.eps);
            if (decay) update += lr * cfg.weight_decay * static_cast<double>(tensor->value[i]);
            tensor->value[i] = static_cast<S>(static_cast<double>(tensor->value[i]) - update);
        }
    });
    state.step = t;
}

// Smooth weighted round-robin; totals over any horizon are within one step
// of exact proportionality, so equal weights schedule exactly equally.
class ObjectiveScheduler {
public:
    explicit ObjectiveScheduler(const TrainConfig& cfg)
        : weights_(cfg.objective_weights), btmlm_start_(cfg.btmlm_start_step) {}

    ObjectiveKind pick(int step) {
        double total = 0.0;
        int best = -1;
        for (int i = 0; i < 4; ++i) {
            if (!eligible(i, step)) continue;
            credit_[i] += weights_[i];
            total += weights_[i];
            if (best < 0 || credit_[i] > credit_[best]) best = i;
        }
        if (best < 0) throw ConfigError("scheduler: no eligible objective at step " +
                                        std::to_string(step));
        credit_[best] -= total;
        return static_cast<ObjectiveKind>(best);
    }

private:
    bool eligible(int i, int step) const {
        if (weights_[i] <= 0.0) return false;
        if (static_cast<ObjectiveKind>(i) == ObjectiveKind::BTMLM && step < btmlm_start_)
            return false;
        return true;
    }

    std::array<double, 4> weights_;
    std::array<double, 4> credit_{};
    int btmlm_start_;
};

struct TrainData {
    std::vector<std::vector<MonoSentence>> mono;  // per language
    std::vector<SentencePair> pairs;

    void validate(int languages) const {
        if (static_cast<int>(mono.size()) != languages)
            throw ConfigError("train data: expected one mono stream per language");
        for (const auto& m : mono)
            if (m.empty()) throw ConfigError("train data: empty monolingual stream");
        if (pairs.empty()) throw ConfigError("train data: empty parallel stream");
    }
};

inline TrainData load_train_data(const CorpusPaths& paths) {
    TrainData data;
    for (const auto& p : paths.mono) data.mono.push_back(read_mono_corpus(p));
    data.pairs = read_parallel_corpus(paths.parallel);
    return data;
}

struct MetricsRecord {
    int step = 0;
    ObjectiveKind objective = ObjectiveKind::MMLM;
    double loss = 0.0;
    double lr = 0.0;
    double elapsed_ms = 0.0;
    int64_t tokens = 0;

    std::string to_json_line() const {
        nlohmann::json j = {{"step", step},          {"objective", objective_name(objective)},
                            {"loss", loss},          {"lr", lr},
                            {"elapsed_ms", elapsed_ms}, {"tokens", tokens}};
        return j.dump();
    }
};

template <typename S>
struct TrainHooks {
    std::function<void(const MetricsRecord&)> on_metrics;
    std::function<void(int step, Params<S>&, OptimizerState<S>&)> on_checkpoint;
    std::function<void(int step, Params<S>&)> on_eval;
    int eval_every = 0;
};

// One optimization step for the given objective. Builds batch_size sequences,
// averages their losses, backpropagates, clips, and applies Adam.
template <typename S>
MetricsRecord train_step(Params<S>& params, OptimizerState<S>& state, ObjectiveKind objective,
                         const TrainData& data, const Vocabulary& vocab, const TrainConfig& cfg,
                         int step) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(hash_mix(cfg.seed, 0x57e9, static_cast<uint64_t>(step)));
    const int languages = vocab.languages;
    const int max_positions = params.config.max_positions;
    MaskingPolicy policy = cfg.masking_policy();

    Graph<S> g;
    std::vector<Tensor<S>> losses;
    losses.reserve(cfg.batch_size);
    int64_t tokens = 0;
    for (int b = 0; b < cfg.batch_size; ++b) {
        policy.seed = hash_mix(cfg.seed, static_cast<uint64_t>(step), static_cast<uint64_t>(b));
        MaskedBatch batch;
        switch (objective) {
            case ObjectiveKind::MMLM: {
                const int lang = static_cast<int>(rng.below(languages));
                const auto& s = data.mono[lang][rng.below(data.mono[lang].size())];
                batch = build_mmlm_batch(s, policy, vocab, max_positions);
                break;
            }
            case ObjectiveKind::TLM: {
                const auto& p = data.pairs[rng.below(data.pairs.size())];
                batch = build_tlm_batch(p, policy, vocab, max_positions);
                break;
            }
            case ObjectiveKind::CAMLM: {
                const auto& p = data.pairs[rng.below(data.pairs.size())];
                batch = build_camlm_batch(p, policy, vocab, max_positions, cfg.mask_mode);
                break;
            }
            case ObjectiveKind::BTMLM: {
                const int lang = static_cast<int>(rng.below(languages));
                const auto& s = data.mono[lang][rng.below(data.mono[lang].size())];
                int tgt_lang = languages == 2
                                   ? 1 - lang
                                   : static_cast<int>(rng.below(languages - 1));
                if (languages > 2 && tgt_lang >= lang) ++tgt_lang;
                const int pseudo = std::max<int>(
                    1, static_cast<int>(std::llround(cfg.pseudo_prob *
                                                     static_cast<double>(s.tokens.size()))));
                auto stage1 = build_btmlm_stage1_batch(s, pseudo, tgt_lang, vocab, max_positions);
                DecodeConfig decode;
                decode.seed = policy.seed;
                const auto pseudo_tokens = generate_pseudo_tokens(params, stage1, vocab, decode);
                batch = build_btmlm_stage2_batch(s, policy, pseudo_tokens, tgt_lang, vocab,
                                                 max_positions);
                break;
            }
        }
        tokens += batch.n();
        losses.push_back(objective_loss(g, params, batch));
    }
    auto loss = mean_scalars(g, losses);
    params.zero_grads();
    g.backward(loss);
    clip_gradients(params, cfg.clip_norm);
    const double lr = lr_at(std::min<int64_t>(state.step + 1, cfg.total_steps), cfg);
    adam_step(params, state, lr, cfg);

    MetricsRecord rec;
    rec.step = step;
    rec.objective = objective;
    rec.loss = static_cast<double>(scalar_value(loss));
    rec.lr = lr;
    rec.tokens = tokens;
    rec.elapsed_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

// Runs steps [state.step, total_steps). Resume-safe: the scheduler replays
// the decisions for already-completed steps, and every random choice is a
// pure function of (seed, step).
template <typename S>
void run_training(Params<S>& params, OptimizerState<S>& state, const TrainConfig& cfg,
                  const TrainData& data, const Vocabulary& vocab,
                  const TrainHooks<S>& hooks = {}) {
    cfg.validate();
    data.validate(vocab.languages);
    ObjectiveScheduler scheduler(cfg);
    const int start = static_cast<int>(state.step);
    for (int step = 0; step < start; ++step) scheduler.pick(step);
    for (int step = start; step < cfg.total_steps; ++step) {
        const ObjectiveKind objective = scheduler.pick(step);
        const MetricsRecord rec = train_step(params, state, objective, data, vocab, cfg, step);
        if (hooks.on_metrics) hooks.on_metrics(rec);
        const int done = step + 1;
        if (hooks.on_checkpoint &&
            (done % cfg.checkpoint_interval == 0 || done == cfg.total_steps))
            hooks.on_checkpoint(done, params, state);
        if (hooks.on_eval && hooks.eval_every > 0 &&
            (done % hooks.eval_every == 0 || done == cfg.total_steps))
            hooks.on_eval(done, params);
    }
}

// ---------------------------------------------------------------------------
// Training checkpoint = model section + optimizer appendix + config echo.

inline constexpr char kOptStateMagic[] = "OPTSTATE1";
inline constexpr char kConfigEchoMagic[] = "CFGECHO01";

template <typename S>
void save_train_checkpoint(const std::string& path, Params<S>& params,
                           const OptimizerState<S>& state, const std::string& config_echo) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    save_checkpoint_section(out, params);

    std::vector<float> payload;
    for (const auto& m : state.m)
        for (const S x : m) payload.push_back(static_cast<float>(x));
    for (const auto& v : state.v)
        for (const S x : v) payload.push_back(static_cast<float>(x));
    nlohmann::json header = {{"step", state.step}, {"payload_bytes", payload.size() * 4}};
    const std::string htext = header.dump();
    out.write(kOptStateMagic, sizeof(kOptStateMagic) - 1);
    detail::write_u64(out, htext.size());
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    detail::write_f32_payload(out, payload);

    out.write(kConfigEchoMagic, sizeof(kConfigEchoMagic) - 1);
    detail::write_u64(out, config_echo.size());
    out.write(config_echo.data(), static_cast<std::streamsize>(config_echo.size()));
    if (!out) throw IoError("checkpoint write failed: " + path);
}

template <typename S>
struct TrainCheckpoint {
    Params<S> params;
    OptimizerState<S> state;
    std::string config_echo;
};

template <typename S>
TrainCheckpoint<S> load_train_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    TrainCheckpoint<S> ckpt;
    ckpt.params = load_checkpoint_section<S>(in);

    char magic[sizeof(kOptStateMagic) - 1];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kOptStateMagic, sizeof(magic)) != 0)
        throw ParseError("checkpoint: missing optimizer section");
    const uint64_t hlen = detail::read_u64(in);
    std::string htext(hlen, '\0');
    in.read(htext.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw IoError("checkpoint: truncated optimizer header");
    const auto header = nlohmann::json::parse(htext);
    ckpt.state = OptimizerState<S>::zeros_like(ckpt.params);
    ckpt.state.step = header.at("step").get<int64_t>();
    const uint64_t payload_bytes = header.at("payload_bytes").get<uint64_t>();
    std::vector<float> payload(payload_bytes / 4);
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload_bytes));
    if (static_cast<uint64_t>(in.gcount()) != payload_bytes)
        throw ParseError("checkpoint: optimizer payload shorter than declared");
    size_t off = 0;
    for (auto& m : ckpt.state.m)
        for (auto& x : m) x = static_cast<S>(payload[off++]);
    for (auto& v : ckpt.state.v)
        for (auto& x : v) x = static_cast<S>(payload[off++]);
    if (off != payload.size()) throw ParseError("checkpoint: optimizer payload size mismatch");

    char magic2[sizeof(kConfigEchoMagic) - 1];
    in.read(magic2, sizeof(magic2));
    if (in && std::memcmp(magic2, kConfigEchoMagic, sizeof(magic2)) == 0) {
        const uint64_t elen = detail::read_u64(in);
        ckpt.config_echo.resize(elen);
        in.read(ckpt.config_echo.data(), static_cast<std::streamsize>(elen));
        if (!in) throw IoError("checkpoint: truncated config echo");
    }
    return ckpt;
}

}  // namespace camlmlab
