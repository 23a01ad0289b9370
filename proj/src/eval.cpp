#include "camlmlab/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace camlmlab {

namespace {

std::vector<std::vector<double>> normalize_rows(const EmbeddingMatrix& m, const char* side) {
    std::vector<std::vector<double>> out = m;
    for (size_t i = 0; i < out.size(); ++i) {
        double sq = 0.0;
        for (double v : out[i]) sq += v * v;
        const double norm = std::sqrt(sq);
        if (!(norm > 0.0))
            throw NumericsError(std::string("retrieval: zero-norm embedding for ") + side +
                                " sentence " + std::to_string(i));
        for (double& v : out[i]) v /= norm;
    }
    return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// top-1 accuracy and MRR of retrieving b[i] given a[i]; ties go to the
// lowest index.
std::pair<double, double> direction(const std::vector<std::vector<double>>& a,
                                    const std::vector<std::vector<double>>& b) {
    const int n = static_cast<int>(a.size());
    int hits = 0;
    double mrr = 0.0;
    for (int i = 0; i < n; ++i) {
        int best = 0;
        double best_sim = dot(a[i], b[0]);
        double true_sim = 0.0;
        for (int j = 0; j < n; ++j) {
            const double s = j == 0 ? best_sim : dot(a[i], b[j]);
            if (s > best_sim) {
                best_sim = s;
                best = j;
            }
            if (j == i) true_sim = s;
        }
        if (best == i) ++hits;
        int rank = 1;
        for (int j = 0; j < n; ++j) {
            const double s = dot(a[i], b[j]);
            if (s > true_sim || (s == true_sim && j < i)) ++rank;
        }
        mrr += 1.0 / rank;
    }
    return {static_cast<double>(hits) / n, mrr / n};
}

}  // namespace

RetrievalReport retrieval_from_embeddings(const EmbeddingMatrix& src, const EmbeddingMatrix& tgt) {
    if (src.size() != tgt.size() || src.size() < 2)
        throw ConfigError("retrieval: need matching src/tgt sets of >= 2");
    const auto u = normalize_rows(src, "source");
    const auto v = normalize_rows(tgt, "target");
    const auto [top_ab, mrr_ab] = direction(u, v);
    const auto [top_ba, mrr_ba] = direction(v, u);
    RetrievalReport report;
    report.top1_src2tgt = top_ab;
    report.top1_tgt2src = top_ba;
    report.mrr = 0.5 * (mrr_ab + mrr_ba);
    report.pairs = static_cast<int>(src.size());
    return report;
}

namespace {

double accuracy(const std::vector<double>& w, double bias, const EmbeddingMatrix& x,
                const std::vector<int>& y) {
    int hits = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double z = dot(w, x[i]) + bias;
        if ((z > 0.0 ? 1 : 0) == y[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(x.size());
}

}  // namespace

ProbeReport probe_from_embeddings(const EmbeddingMatrix& train, const std::vector<int>& train_labels,
                                  const EmbeddingMatrix& test_a, const std::vector<int>& labels_a,
                                  const EmbeddingMatrix& test_b, const std::vector<int>& labels_b,
                                  int steps, double lr) {
    if (train.empty() || train.size() != train_labels.size())
        throw ConfigError("probe: bad training set");
    const int positives = static_cast<int>(
        std::count(train_labels.begin(), train_labels.end(), 1));
    if (positives == 0 || positives == static_cast<int>(train_labels.size()))
        throw ConfigError("probe: degenerate single-class training data");

    const size_t h = train[0].size();
    const double n = static_cast<double>(train.size());

    // standardize features with train-set statistics; raw pooled states can
    // sit at scales where a zero-init logistic head barely moves
    std::vector<double> mu(h, 0.0), sd(h, 0.0);
    for (const auto& row : train)
        for (size_t j = 0; j < h; ++j) mu[j] += row[j];
    for (size_t j = 0; j < h; ++j) mu[j] /= n;
    for (const auto& row : train)
        for (size_t j = 0; j < h; ++j) sd[j] += (row[j] - mu[j]) * (row[j] - mu[j]);
    for (size_t j = 0; j < h; ++j) sd[j] = std::sqrt(sd[j] / n) + 1e-8;
    auto standardize = [&](const EmbeddingMatrix& m) {
        EmbeddingMatrix out = m;
        for (auto& row : out)
            for (size_t j = 0; j < h; ++j) row[j] = (row[j] - mu[j]) / sd[j];
        return out;
    };
    const EmbeddingMatrix ztrain = standardize(train);
    const EmbeddingMatrix ztest_a = standardize(test_a);
    const EmbeddingMatrix ztest_b = standardize(test_b);

    std::vector<double> w(h, 0.0);
    double bias = 0.0;
    // full-batch logistic regression, deterministic from zero init
    for (int step = 0; step < steps; ++step) {
        std::vector<double> gw(h, 0.0);
        double gb = 0.0;
        for (size_t i = 0; i < ztrain.size(); ++i) {
            const double z = dot(w, ztrain[i]) + bias;
            const double p = 1.0 / (1.0 + std::exp(-z));
            const double d = (p - train_labels[i]) / n;
            for (size_t j = 0; j < h; ++j) gw[j] += d * ztrain[i][j];
            gb += d;
        }
        for (size_t j = 0; j < h; ++j) w[j] -= lr * gw[j];
        bias -= lr * gb;
    }
    ProbeReport report;
    report.acc_a = accuracy(w, bias, ztest_a, labels_a);
    report.acc_b = accuracy(w, bias, ztest_b, labels_b);
    report.gap = report.acc_a - report.acc_b;
    return report;
}

ProbeData generate_probe_data(const CorpusConfig& corpus_cfg, const ProbeConfig& probe_cfg) {
    corpus_cfg.validate();
    if (probe_cfg.classes < 1 || probe_cfg.classes > corpus_cfg.range_size / 2)
        throw ConfigError("probe: bad class-set size");
    if (probe_cfg.train_n < 4 || probe_cfg.test_n < 4) throw ConfigError("probe: sets too small");
    const Vocabulary vocab = corpus_cfg.vocab();
    const CipherSpec cipher = corpus_cipher(corpus_cfg, 1);

    ProbeData data;
    {
        Rng rng(hash_mix(probe_cfg.seed, 0xc1a5));
        std::set<int> chosen;
        while (static_cast<int>(chosen.size()) < probe_cfg.classes)
            chosen.insert(vocab.lang_begin(0) + static_cast<int>(rng.below(vocab.range_size)));
        data.class_tokens.assign(chosen.begin(), chosen.end());
    }
    const std::set<int> class_set(data.class_tokens.begin(), data.class_tokens.end());

    auto make_example = [&](uint64_t stream, int index) {
        MonoSentence s = gen_mono_sentence(vocab, 0, corpus_cfg.len_min, corpus_cfg.len_max,
                                           corpus_cfg.zipf_s,
                                           hash_mix(probe_cfg.seed, stream, index));
        Rng rng(hash_mix(probe_cfg.seed, stream + 100, index));
        // strip class tokens, then insert one for odd indices (label 1)
        for (int& t : s.tokens)
            while (class_set.count(t))
                t = vocab.lang_begin(0) + static_cast<int>(rng.below(vocab.range_size));
        const int label = index % 2;
        if (label == 1) {
            const size_t at = rng.below(s.tokens.size());
            s.tokens[at] =
                data.class_tokens[rng.below(data.class_tokens.size())];
        }
        return std::make_pair(s, label);
    };

    for (int i = 0; i < probe_cfg.train_n; ++i) {
        auto [s, label] = make_example(0xa0, i);
        data.train.push_back(std::move(s));
        data.train_labels.push_back(label);
    }
    for (int i = 0; i < probe_cfg.test_n; ++i) {
        auto [s, label] = make_example(0xb0, i);
        data.test_b.push_back(cipher_translate(s, cipher, vocab));
        data.labels_b.push_back(label);
        data.test_a.push_back(std::move(s));
        data.labels_a.push_back(label);
    }
    return data;
}

std::string hardware_context() {
    std::string cpu = "unknown cpu";
    std::ifstream in("/proc/cpuinfo");
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("model name", 0) == 0) {
            const size_t colon = line.find(':');
            if (colon != std::string::npos) {
                cpu = line.substr(colon + 1);
                while (!cpu.empty() && cpu.front() == ' ') cpu.erase(cpu.begin());
            }
            break;
        }
    }
#if defined(__clang__)
    const std::string compiler = "clang " __clang_version__;
#elif defined(__GNUC__)
    const std::string compiler =
        "gcc " + std::to_string(__GNUC__) + "." + std::to_string(__GNUC_MINOR__);
#else
    const std::string compiler = "unknown compiler";
#endif
    return cpu + " | single thread | " + compiler;
}

}  // namespace camlmlab
