#pragma once

// Transformer encoder over token + position + language embeddings. Every
// batch carries its own boolean visibility matrix, shared by all layers and
// heads; the output head is tied to the token embedding table.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "camlmlab/batch.hpp"
#include "camlmlab/corpus.hpp"
#include "camlmlab/tensor.hpp"

namespace camlmlab {

struct ModelConfig {
    int layers = 2;
    int hidden = 64;
    int heads = 4;
    int ffn = 256;
    int vocab = 520;
    int languages = 2;
    int max_positions = 64;
    double dropout = 0.0;
    double attn_dropout = 0.0;

    void validate() const {
        if (layers < 0) throw ConfigError("model: negative layer count");
        if (hidden <= 0 || heads <= 0 || hidden % heads != 0)
            throw ConfigError("model: hidden must be a positive multiple of heads");
        if (ffn <= 0) throw ConfigError("model: ffn size must be positive");
        if (vocab <= Vocabulary::kNumSpecials) throw ConfigError("model: vocab too small");
        if (languages < 1) throw ConfigError("model: need at least one language");
        if (max_positions < 3) throw ConfigError("model: max_positions too small");
        if (dropout < 0.0 || dropout >= 1.0 || attn_dropout < 0.0 || attn_dropout >= 1.0)
            throw ConfigError("model: dropout rate out of range");
    }
};

template <typename S>
struct Params {
    struct Layer {
        // no key bias: a row-constant score shift cancels in the softmax
        Tensor<S> wq, bq, wk, wv, bv, wo, bo;
        Tensor<S> ln1_g, ln1_b, ln2_g, ln2_b;
        Tensor<S> w1, b1, w2, b2;
    };

    ModelConfig config;
    Tensor<S> tok_emb;   // [V,H]
    Tensor<S> pos_emb;   // [P,H]
    Tensor<S> lang_emb;  // [G,H]
    std::vector<Layer> layers;
    // final norm of the block stack, feeding the tied output head; present
    // only when layers >= 1 so the L=0 head reads raw embeddings
    Tensor<S> final_ln_g, final_ln_b;

    // Stable iteration order; checkpoint manifests and optimizer state both
    // follow it.
    void for_each(const std::function<void(const std::string&, Tensor<S>&)>& fn) {
        fn("tok_emb", tok_emb);
        fn("pos_emb", pos_emb);
        fn("lang_emb", lang_emb);
        if (!layers.empty()) {
            fn("final_ln_g", final_ln_g);
            fn("final_ln_b", final_ln_b);
        }
        for (size_t l = 0; l < layers.size(); ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            auto& ly = layers[l];
            fn(p + "ln1_g", ly.ln1_g);
            fn(p + "ln1_b", ly.ln1_b);
            fn(p + "wq", ly.wq);
            fn(p + "bq", ly.bq);
            fn(p + "wk", ly.wk);
            fn(p + "wv", ly.wv);
            fn(p + "bv", ly.bv);
            fn(p + "wo", ly.wo);
            fn(p + "bo", ly.bo);
            fn(p + "ln2_g", ly.ln2_g);
            fn(p + "ln2_b", ly.ln2_b);
            fn(p + "w1", ly.w1);
            fn(p + "b1", ly.b1);
            fn(p + "w2", ly.w2);
            fn(p + "b2", ly.b2);
        }
    }

    std::vector<std::pair<std::string, Tensor<S>>> named_tensors() {
        std::vector<std::pair<std::string, Tensor<S>>> out;
        for_each([&](const std::string& name, Tensor<S>& t) { out.emplace_back(name, t); });
        return out;
    }

    void zero_grads() {
        for_each([](const std::string&, Tensor<S>& t) {
            if (!t->grad.empty()) t->zero_grad();
        });
    }
};

// Weight decay applies to matrices only; layer-norm gains and all bias
// vectors are rank 1.
inline bool decays(const std::vector<int>& shape) { return shape.size() >= 2; }

template <typename S>
Params<S> init_params(const ModelConfig& config, uint64_t seed) {
    config.validate();
    Rng rng(hash_mix(seed, 0x1217));
    auto trunc_normal = [&](std::vector<int> shape) {
        auto t = make_tensor<S>(std::move(shape), true);
        for (auto& v : t->value) v = static_cast<S>(rng.truncated_normal(0.02, 2.0));
        return t;
    };
    auto zeros = [&](std::vector<int> shape) { return make_tensor<S>(std::move(shape), true); };
    auto ones = [&](std::vector<int> shape) {
        auto t = make_tensor<S>(std::move(shape), true);
        for (auto& v : t->value) v = S(1);
        return t;
    };

    Params<S> p;
    p.config = config;
    const int h = config.hidden, f = config.ffn;
    p.tok_emb = trunc_normal({config.vocab, h});
    p.pos_emb = trunc_normal({config.max_positions, h});
    p.lang_emb = trunc_normal({config.languages, h});
    if (config.layers > 0) {
        p.final_ln_g = ones({h});
        p.final_ln_b = zeros({h});
    }
    p.layers.resize(config.layers);
    for (auto& ly : p.layers) {
        ly.ln1_g = ones({h});
        ly.ln1_b = zeros({h});
        ly.wq = trunc_normal({h, h});
        ly.bq = zeros({h});
        ly.wk = trunc_normal({h, h});
        ly.wv = trunc_normal({h, h});
        ly.bv = zeros({h});
        ly.wo = trunc_normal({h, h});
        ly.bo = zeros({h});
        ly.ln2_g = ones({h});
        ly.ln2_b = zeros({h});
        ly.w1 = trunc_normal({h, f});
        ly.b1 = zeros({f});
        ly.w2 = trunc_normal({f, h});
        ly.b2 = zeros({h});
    }
    return p;
}

template <typename S>
struct EncoderOutput {
    std::vector<Tensor<S>> hidden;  // layer 0 = embeddings, then one per block
    Tensor<S> logits;               // [|predict_positions|, V]
};

// Optional per-forward context for dropout during training.
struct ForwardCtx {
    Rng* rng = nullptr;
};

template <typename S>
EncoderOutput<S> forward(Graph<S>& g, Params<S>& params, const MaskedBatch& batch,
                         const ForwardCtx& ctx = {}) {
    const ModelConfig& cfg = params.config;
    const int n = batch.n();
    if (n == 0) throw ShapeError("forward: empty batch");
    if (batch.allowed.n != n) throw ShapeError("forward: attention matrix extent mismatch");
    if (static_cast<int>(batch.pos_ids.size()) != n ||
        static_cast<int>(batch.lang_ids.size()) != n)
        throw ShapeError("forward: id array length mismatch");
    for (int t : batch.tokens)
        if (t < 0 || t >= cfg.vocab) throw LabelError("forward: token id out of range");
    for (int p : batch.pos_ids)
        if (p < 0 || p >= cfg.max_positions) throw LabelError("forward: position id out of range");
    for (int l : batch.lang_ids)
        if (l < 0 || l >= cfg.languages) throw LabelError("forward: language id out of range");

    const bool use_dropout = ctx.rng != nullptr && (cfg.dropout > 0.0 || cfg.attn_dropout > 0.0);
    const int nheads = cfg.heads, dh = cfg.hidden / cfg.heads;
    const S inv_sqrt_dh = S(1) / std::sqrt(S(dh));

    EncoderOutput<S> out;
    auto x = add(g, add(g, gather_rows(g, params.tok_emb, batch.tokens),
                        gather_rows(g, params.pos_emb, batch.pos_ids)),
                 gather_rows(g, params.lang_emb, batch.lang_ids));
    out.hidden.push_back(x);

    for (auto& ly : params.layers) {
        auto h1 = layer_norm(g, x, ly.ln1_g, ly.ln1_b);
        auto q = add_rowvec(g, matmul(g, h1, ly.wq), ly.bq);
        auto k = matmul(g, h1, ly.wk);
        auto v = add_rowvec(g, matmul(g, h1, ly.wv), ly.bv);
        std::vector<Tensor<S>> head_outs;
        head_outs.reserve(nheads);
        for (int head = 0; head < nheads; ++head) {
            const int c0 = head * dh, c1 = c0 + dh;
            auto qh = slice_cols(g, q, c0, c1);
            auto kh = slice_cols(g, k, c0, c1);
            auto vh = slice_cols(g, v, c0, c1);
            auto scores = scale(g, matmul_nt(g, qh, kh), inv_sqrt_dh);
            auto probs = masked_softmax(g, scores, batch.allowed);
            if (use_dropout && cfg.attn_dropout > 0.0)
                probs = dropout(g, probs, cfg.attn_dropout, *ctx.rng);
            head_outs.push_back(matmul(g, probs, vh));
        }
        auto attn = add_rowvec(g, matmul(g, concat_cols(g, head_outs), ly.wo), ly.bo);
        if (use_dropout && cfg.dropout > 0.0) attn = dropout(g, attn, cfg.dropout, *ctx.rng);
        x = add(g, x, attn);

        auto h2 = layer_norm(g, x, ly.ln2_g, ly.ln2_b);
        auto ff = add_rowvec(g, matmul(g, gelu(g, add_rowvec(g, matmul(g, h2, ly.w1), ly.b1)),
                                       ly.w2),
                             ly.b2);
        if (use_dropout && cfg.dropout > 0.0) ff = dropout(g, ff, cfg.dropout, *ctx.rng);
        x = add(g, x, ff);
        out.hidden.push_back(x);
    }

    auto head_input = params.layers.empty()
                          ? x
                          : layer_norm(g, x, params.final_ln_g, params.final_ln_b);
    if (!batch.predict_positions.empty()) {
        auto picked = gather_rows(g, head_input, batch.predict_positions);
        out.logits = matmul_nt(g, picked, params.tok_emb);
    } else {
        out.logits = make_tensor<S>({0, cfg.vocab});
    }
    return out;
}

// Mean hidden state of the middle layer over content positions (everything
// except [PAD]/[CLS]/[SEP]).
template <typename S>
Tensor<S> pool_middle_layer(Graph<S>& g, Params<S>& params, const MaskedBatch& batch) {
    auto enc = forward(g, params, batch);
    const int mid = (params.config.layers + 1) / 2;
    std::vector<int> content;
    for (int i = 0; i < batch.n(); ++i) {
        const int t = batch.tokens[i];
        if (t != Vocabulary::kPad && t != Vocabulary::kCls && t != Vocabulary::kSep)
            content.push_back(i);
    }
    if (content.empty()) throw StateError("pool_middle_layer: no content positions");
    return mean_axis0(g, gather_rows(g, enc.hidden[mid], content));
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic, JSON header (config + tensor manifest with byte
// offsets), then raw little-endian float32 payload in manifest order.
// Bit-exact round trips hold in 32-bit numeric mode.

inline constexpr char kCheckpointMagic[] = "CAMLMLAB1";

namespace detail {

inline void write_u64(std::ostream& out, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline uint64_t read_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw IoError("checkpoint: truncated length field");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

inline nlohmann::json model_config_json(const ModelConfig& c) {
    return {{"layers", c.layers},        {"hidden", c.hidden},
            {"heads", c.heads},          {"ffn", c.ffn},
            {"vocab", c.vocab},          {"languages", c.languages},
            {"max_positions", c.max_positions}, {"dropout", c.dropout},
            {"attn_dropout", c.attn_dropout}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.layers = j.at("layers").get<int>();
    c.hidden = j.at("hidden").get<int>();
    c.heads = j.at("heads").get<int>();
    c.ffn = j.at("ffn").get<int>();
    c.vocab = j.at("vocab").get<int>();
    c.languages = j.at("languages").get<int>();
    c.max_positions = j.at("max_positions").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.attn_dropout = j.at("attn_dropout").get<double>();
    return c;
}

inline void write_f32_payload(std::ostream& out, const std::vector<float>& data) {
    static_assert(sizeof(float) == 4);
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * 4));
}

}  // namespace detail

template <typename S>
void save_checkpoint_section(std::ostream& out, Params<S>& params) {
    nlohmann::json manifest = nlohmann::json::array();
    std::vector<float> payload;
    uint64_t offset = 0;
    params.for_each([&](const std::string& name, Tensor<S>& t) {
        manifest.push_back({{"name", name}, {"shape", t->shape}, {"offset", offset}});
        for (const S v : t->value) payload.push_back(static_cast<float>(v));
        offset += t->size() * 4;
    });
    nlohmann::json header = {{"config", detail::model_config_json(params.config)},
                             {"tensors", manifest},
                             {"payload_bytes", offset}};
    const std::string htext = header.dump();
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic) - 1);
    detail::write_u64(out, htext.size());
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    detail::write_f32_payload(out, payload);
}

template <typename S>
void save_checkpoint(const std::string& path, Params<S>& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    save_checkpoint_section(out, params);
    if (!out) throw IoError("checkpoint write failed: " + path);
}

template <typename S>
Params<S> load_checkpoint_section(std::istream& in) {
    char magic[sizeof(kCheckpointMagic) - 1];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw ParseError("checkpoint: bad magic");
    const uint64_t hlen = detail::read_u64(in);
    std::string htext(hlen, '\0');
    in.read(htext.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw IoError("checkpoint: truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(htext);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint: bad header: ") + e.what());
    }
    const ModelConfig config = detail::model_config_from_json(header.at("config"));
    Params<S> params = init_params<S>(config, 0);

    const uint64_t payload_bytes = header.at("payload_bytes").get<uint64_t>();
    std::vector<float> payload(payload_bytes / 4);
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload_bytes));
    if (static_cast<uint64_t>(in.gcount()) != payload_bytes)
        throw ParseError("checkpoint: payload shorter than manifest declares");

    const auto& manifest = header.at("tensors");
    size_t idx = 0;
    params.for_each([&](const std::string& name, Tensor<S>& t) {
        if (idx >= manifest.size()) throw ParseError("checkpoint: manifest too short");
        const auto& entry = manifest[idx++];
        if (entry.at("name").get<std::string>() != name)
            throw ParseError("checkpoint: manifest order mismatch at " + name);
        const auto shape = entry.at("shape").get<std::vector<int>>();
        if (shape != t->shape) throw ParseError("checkpoint: shape mismatch for " + name);
        const uint64_t off = entry.at("offset").get<uint64_t>() / 4;
        if (off + t->size() > payload.size())
            throw ParseError("checkpoint: manifest offset past payload end");
        for (size_t i = 0; i < t->size(); ++i) t->value[i] = static_cast<S>(payload[off + i]);
    });
    if (idx != manifest.size()) throw ParseError("checkpoint: manifest has extra tensors");
    return params;
}

template <typename S>
Params<S> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    return load_checkpoint_section<S>(in);
}

}  // namespace camlmlab
