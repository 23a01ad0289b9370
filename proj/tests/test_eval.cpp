#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "camlmlab/evalsuite.hpp"
#include "camlmlab/report.hpp"

using namespace camlmlab;

namespace {

CorpusConfig tiny_corpus_config() {
    CorpusConfig cfg;
    cfg.range_size = 24;
    cfg.len_min = 4;
    cfg.len_max = 8;
    cfg.swap_prob = 0.0;
    cfg.parallel_pairs = 150;
    cfg.mono_sentences = 100;
    cfg.heldout_pairs = 32;
    cfg.seed = 21;
    return cfg;
}

ModelConfig tiny_model_config(const CorpusConfig& corpus, int layers = 2) {
    ModelConfig cfg;
    cfg.layers = layers;
    cfg.hidden = 16;
    cfg.heads = 2;
    cfg.ffn = 32;
    cfg.vocab = corpus.vocab().size();
    cfg.max_positions = 32;
    return cfg;
}

TrainData make_data(const CorpusConfig& corpus_cfg) {
    const Vocabulary vocab = corpus_cfg.vocab();
    const CipherSpec cipher = corpus_cipher(corpus_cfg, 1);
    TrainData data;
    for (int i = 0; i < corpus_cfg.parallel_pairs; ++i) {
        SentencePair p;
        p.src = gen_mono_sentence(vocab, 0, corpus_cfg.len_min, corpus_cfg.len_max, 1.1,
                                  hash_mix(corpus_cfg.seed, 1, i));
        p.tgt = cipher_translate(p.src, cipher, vocab);
        data.pairs.push_back(std::move(p));
    }
    data.mono.resize(2);
    for (int lang = 0; lang < 2; ++lang)
        for (int i = 0; i < corpus_cfg.mono_sentences; ++i)
            data.mono[lang].push_back(gen_mono_sentence(vocab, lang, corpus_cfg.len_min,
                                                        corpus_cfg.len_max, 1.1,
                                                        hash_mix(corpus_cfg.seed, 2 + lang, i)));
    return data;
}

std::vector<SentencePair> heldout_pairs(const CorpusConfig& corpus_cfg, int count) {
    const Vocabulary vocab = corpus_cfg.vocab();
    const CipherSpec cipher = corpus_cipher(corpus_cfg, 1);
    std::vector<SentencePair> out;
    for (int i = 0; i < count; ++i) {
        SentencePair p;
        p.src = gen_mono_sentence(vocab, 0, corpus_cfg.len_min, corpus_cfg.len_max, 1.1,
                                  hash_mix(99, 7, i));
        p.tgt = cipher_translate(p.src, cipher, vocab);
        out.push_back(std::move(p));
    }
    return out;
}

EmbeddingMatrix orthogonal_embeddings(int n, int dim) {
    EmbeddingMatrix m(n, std::vector<double>(dim, 0.0));
    for (int i = 0; i < n; ++i) m[i][i % dim] = 1.0 + 0.01 * (i / dim);
    return m;
}

// Gram-Schmidt rotation from a seeded random square matrix.
std::vector<std::vector<double>> random_rotation(int dim, uint64_t seed) {
    Rng rng(seed);
    std::vector<std::vector<double>> q(dim, std::vector<double>(dim));
    for (auto& row : q)
        for (auto& v : row) v = rng.next_unit() * 2.0 - 1.0;
    for (int i = 0; i < dim; ++i) {
        for (int j = 0; j < i; ++j) {
            double d = 0.0;
            for (int k = 0; k < dim; ++k) d += q[i][k] * q[j][k];
            for (int k = 0; k < dim; ++k) q[i][k] -= d * q[j][k];
        }
        double norm = 0.0;
        for (int k = 0; k < dim; ++k) norm += q[i][k] * q[i][k];
        norm = std::sqrt(norm);
        for (int k = 0; k < dim; ++k) q[i][k] /= norm;
    }
    return q;
}

EmbeddingMatrix rotate(const EmbeddingMatrix& m, const std::vector<std::vector<double>>& q) {
    EmbeddingMatrix out(m.size(), std::vector<double>(q.size(), 0.0));
    for (size_t i = 0; i < m.size(); ++i)
        for (size_t a = 0; a < q.size(); ++a)
            for (size_t b = 0; b < q.size(); ++b) out[i][a] += m[i][b] * q[a][b];
    return out;
}

}  // namespace

TEST_CASE("retrieval: identical matched embeddings with orthogonal distractors") {
    const auto u = orthogonal_embeddings(8, 16);
    const auto report = retrieval_from_embeddings(u, u);
    CHECK(report.top1_src2tgt == 1.0);
    CHECK(report.top1_tgt2src == 1.0);
    CHECK(report.mrr == 1.0);
    CHECK(report.pairs == 8);
}

TEST_CASE("retrieval: all-identical embeddings hit only index 0 under the tie-break") {
    EmbeddingMatrix same(10, std::vector<double>(4, 0.3));
    const auto report = retrieval_from_embeddings(same, same);
    CHECK(report.top1_src2tgt == doctest::Approx(0.1));
    CHECK(report.top1_tgt2src == doctest::Approx(0.1));
}

TEST_CASE("retrieval is invariant under a common orthogonal rotation") {
    Rng rng(5);
    EmbeddingMatrix u(12, std::vector<double>(8)), v(12, std::vector<double>(8));
    for (auto& row : u)
        for (auto& x : row) x = rng.next_unit() * 2.0 - 1.0;
    for (auto& row : v)
        for (auto& x : row) x = rng.next_unit() * 2.0 - 1.0;
    const auto base = retrieval_from_embeddings(u, v);
    const auto q = random_rotation(8, 17);
    const auto rotated = retrieval_from_embeddings(rotate(u, q), rotate(v, q));
    CHECK(base.top1_src2tgt == doctest::Approx(rotated.top1_src2tgt));
    CHECK(base.top1_tgt2src == doctest::Approx(rotated.top1_tgt2src));
    CHECK(base.mrr == doctest::Approx(rotated.mrr).epsilon(1e-9));
}

TEST_CASE("retrieval names the zero-norm sentence") {
    EmbeddingMatrix u(3, std::vector<double>(4, 0.5));
    u[1] = {0, 0, 0, 0};
    try {
        retrieval_from_embeddings(u, u);
        FAIL("expected NumericsError");
    } catch (const NumericsError& e) {
        CHECK(std::string(e.what()).find("sentence 1") != std::string::npos);
    }
}

TEST_CASE("random-init retrieval sits at chance level on 256 pairs") {
    auto corpus_cfg = tiny_corpus_config();
    corpus_cfg.range_size = 64;
    auto params = init_params<float>(tiny_model_config(corpus_cfg), 5);
    const auto pairs = heldout_pairs(corpus_cfg, 256);
    const auto report = retrieval_eval(params, pairs);
    // binomial chance level 1/256 with 3-sigma headroom
    const double chance = 1.0 / 256;
    const double bound = chance + 3.0 * std::sqrt(chance * (1 - chance) / 256);
    CHECK(report.top1_src2tgt <= bound + 1e-9);
    CHECK(report.top1_tgt2src <= bound + 1e-9);
    CHECK(report.pairs == 256);
}

TEST_CASE("probe: identical embeddings give majority-rate accuracy and zero gap") {
    EmbeddingMatrix same(40, std::vector<double>(6, 0.2));
    std::vector<int> labels(40);
    for (int i = 0; i < 40; ++i) labels[i] = i % 2;
    const auto report = probe_from_embeddings(same, labels, same, labels, same, labels, 50, 0.5);
    CHECK(report.acc_a == doctest::Approx(0.5));
    CHECK(report.gap == doctest::Approx(0.0));
}

TEST_CASE("probe: label-encoding embeddings reach perfect accuracy, zero gap") {
    const int n = 60;
    EmbeddingMatrix emb(n, std::vector<double>(4, 0.0));
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
        labels[i] = i % 2;
        emb[i][0] = labels[i] ? 1.0 : -1.0;
        emb[i][2] = 0.3;  // constant nuisance coordinate
    }
    const auto report = probe_from_embeddings(emb, labels, emb, labels, emb, labels, 200, 0.8);
    CHECK(report.acc_a == 1.0);
    CHECK(report.acc_b == 1.0);
    CHECK(report.gap == 0.0);
}

TEST_CASE("probe rejects degenerate single-class data") {
    EmbeddingMatrix emb(10, std::vector<double>(4, 0.1));
    std::vector<int> ones(10, 1);
    CHECK_THROWS_AS(probe_from_embeddings(emb, ones, emb, ones, emb, ones, 10, 0.5), ConfigError);
}

TEST_CASE("probe data is balanced, deterministic, and label-invariant under the cipher") {
    const auto corpus_cfg = tiny_corpus_config();
    ProbeConfig probe_cfg;
    probe_cfg.train_n = 100;
    probe_cfg.test_n = 60;
    probe_cfg.classes = 6;
    const auto a = generate_probe_data(corpus_cfg, probe_cfg);
    const auto b = generate_probe_data(corpus_cfg, probe_cfg);
    CHECK(a.train_labels == b.train_labels);
    REQUIRE(a.train.size() == 100);
    CHECK(a.test_a.size() == 60);
    CHECK(a.test_b.size() == 60);

    int positives = 0;
    const std::set<int> class_set(a.class_tokens.begin(), a.class_tokens.end());
    for (size_t i = 0; i < a.train.size(); ++i) {
        bool has = false;
        for (int t : a.train[i].tokens) has = has || class_set.count(t);
        CHECK(static_cast<int>(has) == a.train_labels[i]);
        positives += a.train_labels[i];
    }
    CHECK(positives == 50);

    // translated test set carries the mapped class set at the same labels
    const auto cipher = corpus_cipher(corpus_cfg, 1);
    const auto vocab = corpus_cfg.vocab();
    std::set<int> mapped;
    for (int t : a.class_tokens) mapped.insert(cipher.map_token(t, vocab));
    for (size_t i = 0; i < a.test_b.size(); ++i) {
        bool has = false;
        for (int t : a.test_b[i].tokens) has = has || mapped.count(t);
        CHECK(static_cast<int>(has) == a.labels_b[i]);
        CHECK(a.labels_b[i] == a.labels_a[i]);
    }
}

TEST_CASE("transfer_probe runs end to end on a random-init model") {
    const auto corpus_cfg = tiny_corpus_config();
    auto params = init_params<float>(tiny_model_config(corpus_cfg), 6);
    ProbeConfig probe_cfg;
    probe_cfg.train_n = 60;
    probe_cfg.test_n = 40;
    probe_cfg.classes = 5;
    probe_cfg.head_steps = 80;
    const auto report = transfer_probe(params, corpus_cfg, probe_cfg);
    CHECK(report.acc_a >= 0.0);
    CHECK(report.acc_a <= 1.0);
    CHECK(report.gap == doctest::Approx(report.acc_a - report.acc_b));
}

TEST_CASE("hardest-negative fine-tuning descends on a fixed batch") {
    const auto corpus_cfg = tiny_corpus_config();
    auto params = init_params<double>(tiny_model_config(corpus_cfg, 1), 8);
    auto pairs = heldout_pairs(corpus_cfg, 8);
    FinetuneConfig cfg;
    cfg.steps = 10;
    cfg.batch = 8;  // equals the pair count: fixed batch
    cfg.lr = 5e-4;
    const auto curve = hardest_negative_finetune(params, pairs, cfg);
    REQUIRE(curve.size() == 10);
    CHECK(curve.back() < curve.front());
    for (double v : curve) CHECK(std::isfinite(v));
}

TEST_CASE("duplicate pairs keep the fine-tuning loss finite") {
    const auto corpus_cfg = tiny_corpus_config();
    auto params = init_params<double>(tiny_model_config(corpus_cfg, 1), 9);
    auto pairs = heldout_pairs(corpus_cfg, 3);
    pairs.push_back(pairs[0]);  // duplicate pair in batch
    FinetuneConfig cfg;
    cfg.steps = 3;
    cfg.batch = 4;
    const auto curve = hardest_negative_finetune(params, pairs, cfg);
    for (double v : curve) CHECK(std::isfinite(v));
    CHECK_THROWS_AS(hardest_negative_finetune(params, pairs, FinetuneConfig{3, 2}), ConfigError);
}

TEST_CASE("fine-tuning improves training-pair retrieval of a briefly trained model") {
    const auto corpus_cfg = tiny_corpus_config();
    const auto data = make_data(corpus_cfg);
    const Vocabulary vocab = corpus_cfg.vocab();
    auto params = init_params<double>(tiny_model_config(corpus_cfg, 1), 10);
    auto state = OptimizerState<double>::zeros_like(params);
    TrainConfig tcfg;
    tcfg.total_steps = 120;
    tcfg.warmup_steps = 12;
    tcfg.batch_size = 8;
    tcfg.peak_lr = 1e-3;
    tcfg.objective_weights = {1, 1, 1, 0};
    tcfg.checkpoint_interval = 1000;
    tcfg.seed = 4;
    run_training(params, state, tcfg, data, vocab);

    std::vector<SentencePair> train_subset(data.pairs.begin(), data.pairs.begin() + 64);
    const auto before = retrieval_eval(params, train_subset);
    FinetuneConfig fcfg;
    fcfg.steps = 60;
    fcfg.batch = 8;
    fcfg.lr = 2e-4;
    hardest_negative_finetune(params, train_subset, fcfg);
    const auto after = retrieval_eval(params, train_subset);
    CHECK(after.top1_src2tgt >= before.top1_src2tgt);
}

TEST_CASE("ppl_eval equals exp of the aggregated masked-LM loss") {
    const auto corpus_cfg = tiny_corpus_config();
    const Vocabulary vocab = corpus_cfg.vocab();
    auto params = init_params<double>(tiny_model_config(corpus_cfg), 11);
    std::vector<MonoSentence> heldout;
    for (int i = 0; i < 6; ++i)
        heldout.push_back(gen_mono_sentence(vocab, i % 2, 5, 8, 1.1, hash_mix(31, 0, i)));

    const double ppl = ppl_eval(params, heldout, 0.15, 77);

    MaskingPolicy policy;
    policy.mask_rate = 0.15;
    policy.frac_mask = 1.0;
    policy.frac_random = 0.0;
    policy.frac_keep = 0.0;
    double total_nll = 0.0;
    int64_t positions = 0;
    for (size_t i = 0; i < heldout.size(); ++i) {
        policy.seed = hash_mix(77, 0x991, i);
        const auto batch = build_mmlm_batch(heldout[i], policy, vocab, 32);
        Graph<double> g(false);
        total_nll += scalar_value(objective_loss(g, params, batch)) *
                     static_cast<double>(batch.predict_positions.size());
        positions += static_cast<int64_t>(batch.predict_positions.size());
    }
    CHECK(ppl == doctest::Approx(std::exp(total_nll / positions)).epsilon(1e-12));

    // untrained bound: near-uniform predictions put PPL near V
    const double v = static_cast<double>(vocab.size());
    CHECK(ppl > 0.5 * v);
    CHECK(ppl < 2.0 * v);
}

TEST_CASE("ppl_sweep emits one finite decreasing curve per proportion") {
    const auto corpus_cfg = tiny_corpus_config();
    const auto data = make_data(corpus_cfg);
    const Vocabulary vocab = corpus_cfg.vocab();
    std::vector<MonoSentence> heldout;
    for (int i = 0; i < 12; ++i)
        heldout.push_back(gen_mono_sentence(vocab, i % 2, 4, 8, 1.1, hash_mix(41, 0, i)));

    TrainConfig cfg;
    cfg.total_steps = 60;
    cfg.warmup_steps = 6;
    cfg.batch_size = 8;
    cfg.peak_lr = 1e-3;
    cfg.btmlm_start_step = 10;
    cfg.checkpoint_interval = 100;
    cfg.seed = 3;
    const auto rows = ppl_sweep<float>(tiny_model_config(corpus_cfg, 1), cfg, data, vocab,
                                       heldout, {0.1, 0.2}, 30, 5);
    REQUIRE(rows.size() == 2);
    for (const auto& row : rows) {
        REQUIRE(row.curve.size() >= 2);
        for (const auto& pt : row.curve) CHECK(std::isfinite(pt.ppl));
        CHECK(row.curve.back().ppl < row.curve.front().ppl);
    }
    CHECK_THROWS_AS(ppl_sweep<float>(tiny_model_config(corpus_cfg, 1), cfg, data, vocab, heldout,
                                     {0.7}, 30, 5),
                    ConfigError);
}

TEST_CASE("ablation grid: shared init checksum, six rows, baseline untrained") {
    const auto corpus_cfg = tiny_corpus_config();
    const auto data = make_data(corpus_cfg);
    const Vocabulary vocab = corpus_cfg.vocab();
    const auto heldout = heldout_pairs(corpus_cfg, 16);
    TrainConfig cfg;
    cfg.total_steps = 20;
    cfg.warmup_steps = 2;
    cfg.batch_size = 4;
    cfg.peak_lr = 1e-3;
    cfg.btmlm_start_step = 6;
    cfg.checkpoint_interval = 100;
    cfg.seed = 12;
    ProbeConfig probe_cfg;
    probe_cfg.train_n = 40;
    probe_cfg.test_n = 20;
    probe_cfg.classes = 5;
    probe_cfg.head_steps = 40;

    const auto rows = ablation_run<float>(tiny_model_config(corpus_cfg, 1), cfg, data, vocab,
                                          heldout, corpus_cfg, probe_cfg, 77);
    REQUIRE(rows.size() == 6);
    CHECK(rows[0].exp_id == "baseline");
    CHECK(!rows[0].trained);
    for (const auto& row : rows) CHECK(row.init_checksum == rows[0].init_checksum);
    for (size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].trained);

    // every row serializes and parses back
    for (const auto& row : rows) {
        const auto round = ablation_row_from_json(ablation_row_json(row));
        CHECK(round.exp_id == row.exp_id);
        CHECK(round.retrieval.top1_src2tgt == row.retrieval.top1_src2tgt);
        CHECK(round.probe.gap == row.probe.gap);
    }
}

TEST_CASE("overhead measurement reports a positive ratio and hardware context") {
    const auto corpus_cfg = tiny_corpus_config();
    const auto data = make_data(corpus_cfg);
    const auto report = measure_overhead<float>(tiny_model_config(corpus_cfg, 1), TrainConfig{},
                                                data, corpus_cfg.vocab(), 8, 3);
    CHECK(report.ms_full > 0.0);
    CHECK(report.ms_base > 0.0);
    CHECK(report.ratio > 0.0);
    CHECK(!report.hardware.empty());
}
