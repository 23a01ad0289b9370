// Python bindings for the main operations: corpus generation, visibility
// matrices, core tensor ops, training, and retrieval evaluation.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "camlmlab/cli.hpp"
#include "camlmlab/evalsuite.hpp"
#include "camlmlab/masks.hpp"
#include "camlmlab/objectives.hpp"
#include "camlmlab/runconfig.hpp"

namespace py = pybind11;
using namespace camlmlab;

namespace {

RunConfig config_from_path(const std::string& path) {
    RunConfig cfg = path.empty() ? RunConfig{} : load_run_config(path);
    cfg.validate();
    return cfg;
}

py::array_t<uint8_t> mask_to_numpy(const BoolMatrix& m) {
    py::array_t<uint8_t> out({m.n, m.n});
    auto r = out.mutable_unchecked<2>();
    for (int i = 0; i < m.n; ++i)
        for (int j = 0; j < m.n; ++j) r(i, j) = m.at(i, j);
    return out;
}

py::array_t<uint8_t> mask_matrix(const std::string& objective, int src_len, int tgt_len,
                                 const std::vector<int>& masked_src,
                                 const std::vector<int>& masked_tgt, const std::string& mode_text,
                                 int pseudo) {
    std::vector<int> src_idx, other_idx;
    if (objective == "mmlm") return mask_to_numpy(BoolMatrix::ones(src_len));
    if (objective == "tlm") return mask_to_numpy(BoolMatrix::ones(src_len + tgt_len));
    if (objective == "camlm") {
        const int n = src_len + tgt_len;
        for (int i = 0; i < src_len; ++i) src_idx.push_back(i);
        for (int i = src_len; i < n; ++i) other_idx.push_back(i);
        const MaskMode mode = mode_text == "figure" ? MaskMode::Figure : MaskMode::Strict;
        return mask_to_numpy(
            camlm_attention_mask(n, src_idx, other_idx, masked_src, masked_tgt, mode));
    }
    if (objective == "btmlm-stage1") {
        const int n = src_len + pseudo;
        for (int i = 0; i < src_len; ++i) src_idx.push_back(i);
        for (int i = src_len; i < n; ++i) other_idx.push_back(i);
        return mask_to_numpy(btmlm_stage1_attention_mask(n, src_idx, other_idx));
    }
    throw ConfigError("mask_matrix: unknown objective '" + objective + "'");
}

py::array_t<double> masked_softmax_np(py::array_t<double, py::array::c_style | py::array::forcecast> scores,
                                      py::array_t<bool, py::array::c_style | py::array::forcecast> allowed) {
    if (scores.ndim() != 2 || scores.shape(0) != scores.shape(1))
        throw ShapeError("masked_softmax: expected square scores");
    const int n = static_cast<int>(scores.shape(0));
    if (allowed.ndim() != 2 || allowed.shape(0) != n || allowed.shape(1) != n)
        throw ShapeError("masked_softmax: allowed shape mismatch");
    auto t = make_tensor<double>({n, n});
    auto sr = scores.unchecked<2>();
    BoolMatrix m(n);
    auto ar = allowed.unchecked<2>();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            t->at(i, j) = sr(i, j);
            m.at(i, j) = ar(i, j) ? 1 : 0;
        }
    Graph<double> g(false);
    auto result = masked_softmax(g, t, m);
    py::array_t<double> out({n, n});
    auto w = out.mutable_unchecked<2>();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) w(i, j) = result->at(i, j);
    return out;
}

py::array_t<double> gelu_np(py::array_t<double, py::array::c_style | py::array::forcecast> x) {
    auto t = make_tensor<double>({static_cast<int>(x.size())});
    std::copy(x.data(), x.data() + x.size(), t->value.begin());
    Graph<double> g(false);
    auto result = gelu(g, t);
    py::array_t<double> out(x.size());
    std::copy(result->value.begin(), result->value.end(), out.mutable_data());
    return out;
}

int run_cli(const std::vector<std::string>& args) { return cli_main(args); }

py::dict gen_corpora_py(const std::string& config_path, const std::string& out_dir) {
    const RunConfig cfg = config_from_path(config_path);
    const CorpusPaths paths = gen_corpora(cfg.corpus, out_dir);
    py::dict d;
    d["parallel"] = paths.parallel;
    d["heldout"] = paths.heldout;
    d["mono"] = paths.mono;
    return d;
}

template <typename S>
py::dict retrieval_eval_typed(const RunConfig& cfg, const std::string& checkpoint,
                              const std::string& data_dir) {
    Params<S> params = checkpoint.empty()
                           ? init_params<S>([&] {
                                 ModelConfig m = cfg.model;
                                 m.vocab = cfg.corpus.vocab().size();
                                 return m;
                             }(), cfg.train.seed)
                           : load_checkpoint<S>(checkpoint);
    const auto heldout = read_parallel_corpus(corpus_paths(cfg.corpus, data_dir).heldout);
    const RetrievalReport r = retrieval_eval(params, heldout);
    py::dict d;
    d["top1_src2tgt"] = r.top1_src2tgt;
    d["top1_tgt2src"] = r.top1_tgt2src;
    d["mrr"] = r.mrr;
    d["pairs"] = r.pairs;
    return d;
}

py::dict retrieval_eval_py(const std::string& config_path, const std::string& checkpoint,
                           const std::string& data_dir) {
    const RunConfig cfg = config_from_path(config_path);
    if (cfg.train.numeric_mode == "f64")
        return retrieval_eval_typed<double>(cfg, checkpoint, data_dir);
    return retrieval_eval_typed<float>(cfg, checkpoint, data_dir);
}

// Full-encoder gradient check at toy extents; returns the max relative error
// between autodiff and central differences.
double encoder_gradcheck(uint64_t seed) {
    ModelConfig cfg;
    cfg.layers = 1;
    cfg.hidden = 8;
    cfg.heads = 2;
    cfg.ffn = 16;
    cfg.vocab = 11;
    cfg.languages = 2;
    cfg.max_positions = 16;
    auto params = init_params<double>(cfg, seed);
    // check at a generic O(0.3) point: training-init gradients sit at the
    // central-difference noise floor
    Rng rng(hash_mix(seed, 0x6c));
    params.for_each([&](const std::string& name, Tensor<double>& t) {
        for (auto& v : t->value) v = rng.next_unit() - 0.5;
        if (name.find("ln") != std::string::npos && name.back() == 'g')
            for (auto& v : t->value) v += 1.0;
    });

    MaskedBatch batch;
    batch.tokens = {4, 1, 6, 7, 8, 1, 10};
    batch.pos_ids = {0, 1, 2, 3, 4, 5, 6};
    batch.lang_ids = {0, 0, 0, 1, 1, 1, 1};
    batch.segment = {Segment::SRC, Segment::SRC, Segment::SRC, Segment::TGT,
                     Segment::TGT, Segment::TGT, Segment::TGT};
    batch.allowed = BoolMatrix::ones(7);
    batch.predict_positions = {1, 5};
    batch.labels = {5, 9};

    double worst = 0.0;
    params.for_each([&](const std::string&, Tensor<double>& t) {
        const double err = finite_diff_check<double>(
            [&](Graph<double>& g) { return objective_loss(g, params, batch); }, t, 1e-5);
        worst = std::max(worst, err);
    });
    return worst;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "cross-lingual masked-LM objectives on cipher corpora";
    m.attr("__version__") = "0.1.0";

    py::register_exception<ConfigError>(m, "CamlmlabConfigError");
    py::register_exception<Error>(m, "CamlmlabError");

    m.def("cli_main", &run_cli, py::arg("args"),
          "Run a camlmlab CLI command; returns the exit code.");
    m.def("gen_corpora", &gen_corpora_py, py::arg("config_path"), py::arg("out_dir"),
          "Generate cipher-language corpora; returns the written paths.");
    m.def("mask_matrix", &mask_matrix, py::arg("objective"), py::arg("src_len") = 0,
          py::arg("tgt_len") = 0, py::arg("masked_src") = std::vector<int>{},
          py::arg("masked_tgt") = std::vector<int>{}, py::arg("mode") = "strict",
          py::arg("pseudo") = 0,
          "Visibility matrix for an objective over 0-based position sets.");
    m.def("masked_softmax", &masked_softmax_np, py::arg("scores"), py::arg("allowed"));
    m.def("gelu", &gelu_np, py::arg("x"));
    m.def("retrieval_eval", &retrieval_eval_py, py::arg("config_path"),
          py::arg("checkpoint") = std::string(), py::arg("data_dir") = std::string(),
          "Held-out retrieval report for a checkpoint (random init when empty).");
    m.def("encoder_gradcheck", &encoder_gradcheck, py::arg("seed") = 1);
}
