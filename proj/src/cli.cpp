#include "camlmlab/cli.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "camlmlab/evalsuite.hpp"
#include "camlmlab/masks.hpp"
#include "camlmlab/report.hpp"
#include "camlmlab/runconfig.hpp"

namespace camlmlab {

namespace {

namespace fs = std::filesystem;

struct SafetyRefusal {
    std::string message;
};

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << content;
    if (!out) throw IoError("write failed: " + path);
}

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;  // key=value
    std::optional<uint64_t> seed_flag;
};

// Precedence: --seed flag > CAMLMLAB_SEED env > config file. gen-corpus keys
// the corpus seed, everything else the train seed.
RunConfig resolve_config(const CommonOpts& opts, bool seed_is_corpus) {
    RunConfig cfg = opts.config_path.empty() ? RunConfig{} : load_run_config(opts.config_path);
    if (const char* env = std::getenv("CAMLMLAB_SEED")) {
        apply_override(cfg, seed_is_corpus ? "corpus.seed" : "train.seed", env);
    }
    for (const auto& kv : opts.overrides) {
        const size_t eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got: " + kv);
        apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (opts.seed_flag)
        apply_override(cfg, seed_is_corpus ? "corpus.seed" : "train.seed",
                       std::to_string(*opts.seed_flag));
    cfg.validate();
    return cfg;
}

ModelConfig model_config(const RunConfig& cfg) {
    ModelConfig m = cfg.model;
    m.vocab = cfg.corpus.vocab().size();
    return m;
}

std::string checkpoint_name(int step) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "step_%06d.ckpt", step);
    return buf;
}

// ---------------------------------------------------------------------------
// gen-corpus

int cmd_gen_corpus(const CommonOpts& opts, const std::string& out_dir, std::ostream& out) {
    const RunConfig cfg = resolve_config(opts, true);
    const CorpusPaths paths = gen_corpora(cfg.corpus, out_dir);
    out << "wrote " << paths.parallel << " (" << cfg.corpus.parallel_pairs << " pairs)\n";
    for (const auto& m : paths.mono)
        out << "wrote " << m << " (" << cfg.corpus.mono_sentences << " sentences)\n";
    out << "wrote " << paths.heldout << " (" << cfg.corpus.heldout_pairs << " pairs)\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train

template <typename S>
int cmd_train_impl(const RunConfig& cfg, const std::string& data_dir,
                   const std::string& run_dir, bool resume, std::ostream& out) {
    const ModelConfig mcfg = model_config(cfg);
    const Vocabulary vocab = cfg.corpus.vocab();
    const TrainData data = load_train_data(corpus_paths(cfg.corpus, data_dir));

    const fs::path root(run_dir);
    const fs::path ckpt_dir = root / "checkpoints";
    fs::create_directories(ckpt_dir);
    fs::create_directories(root / "reports");
    const std::string echo = serialize_run_config(cfg);
    write_text_file((root / "config.cfg").string(), echo);

    Params<S> params;
    OptimizerState<S> state;
    if (resume) {
        int latest = -1;
        for (const auto& entry : fs::directory_iterator(ckpt_dir)) {
            const std::string name = entry.path().filename().string();
            int step = 0;
            if (std::sscanf(name.c_str(), "step_%d.ckpt", &step) == 1)
                latest = std::max(latest, step);
        }
        if (latest < 0) throw IoError("resume: no checkpoints in " + ckpt_dir.string());
        auto ckpt = load_train_checkpoint<S>((ckpt_dir / checkpoint_name(latest)).string());
        params = std::move(ckpt.params);
        state = std::move(ckpt.state);
        out << "resuming from step " << state.step << "\n";
    } else {
        params = init_params<S>(mcfg, cfg.train.seed);
        state = OptimizerState<S>::zeros_like(params);
    }

    std::ofstream metrics((root / "metrics.jsonl").string(), std::ios::app | std::ios::binary);
    if (!metrics) throw IoError("cannot open metrics log");

    TrainHooks<S> hooks;
    hooks.on_metrics = [&](const MetricsRecord& rec) {
        metrics << rec.to_json_line() << "\n";
        metrics.flush();
    };
    hooks.on_checkpoint = [&](int step, Params<S>& p, OptimizerState<S>& st) {
        save_train_checkpoint((ckpt_dir / checkpoint_name(step)).string(), p, st, echo);
    };
    run_training(params, state, cfg.train, data, vocab, hooks);
    save_train_checkpoint((ckpt_dir / "final.ckpt").string(), params, state, echo);
    out << "finished " << cfg.train.total_steps << " steps; final checkpoint at "
        << (ckpt_dir / "final.ckpt").string() << "\n";
    return 0;
}

int cmd_train(const CommonOpts& opts, const std::string& data_dir, const std::string& run_dir,
              bool resume, std::ostream& out) {
    const RunConfig cfg = resolve_config(opts, false);
    const fs::path root(run_dir);
    if (!resume && fs::exists(root) && !fs::is_empty(root))
        throw SafetyRefusal{"run directory " + run_dir +
                            " is not empty; pass --resume to continue it"};
    if (cfg.train.numeric_mode == "f64")
        return cmd_train_impl<double>(cfg, data_dir, run_dir, resume, out);
    return cmd_train_impl<float>(cfg, data_dir, run_dir, resume, out);
}

// ---------------------------------------------------------------------------
// inspect-mask

std::vector<int> parse_index_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            out.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw ConfigError("bad index list entry: '" + item + "'");
        }
    }
    return out;
}

int cmd_inspect_mask(const std::string& objective, int src_len, int tgt_len, int pseudo,
                     const std::string& masked_src_text, const std::string& masked_tgt_text,
                     const std::string& mode_text, std::ostream& out) {
    if (src_len < 1) throw ConfigError("inspect-mask: --src-len must be >= 1");
    const std::vector<int> masked_src_1b = parse_index_list(masked_src_text);
    const std::vector<int> masked_tgt_1b = parse_index_list(masked_tgt_text);
    MaskMode mode;
    if (mode_text == "strict")
        mode = MaskMode::Strict;
    else if (mode_text == "figure")
        mode = MaskMode::Figure;
    else
        throw ConfigError("inspect-mask: --mode must be strict or figure");

    // positions are 1-based in the printed grid: x1..xs then y(s+1)..y(s+t)
    auto to_zero_based = [](const std::vector<int>& v, int lo, int hi, const char* what) {
        std::vector<int> out0;
        for (int i : v) {
            if (i < lo || i > hi)
                throw ConfigError(std::string("inspect-mask: ") + what + " index " +
                                  std::to_string(i) + " outside [" + std::to_string(lo) + "," +
                                  std::to_string(hi) + "]");
            out0.push_back(i - 1);
        }
        return out0;
    };

    BoolMatrix grid;
    std::vector<std::string> labels;
    auto is_masked = [&](int pos1b) {
        return std::find(masked_src_1b.begin(), masked_src_1b.end(), pos1b) !=
                   masked_src_1b.end() ||
               std::find(masked_tgt_1b.begin(), masked_tgt_1b.end(), pos1b) !=
                   masked_tgt_1b.end();
    };

    if (objective == "mmlm") {
        const int n = src_len;
        grid = BoolMatrix::ones(n);
        for (int i = 1; i <= n; ++i)
            labels.push_back((is_masked(i) ? "M" : "x") + std::to_string(i));
    } else if (objective == "tlm" || objective == "camlm") {
        if (tgt_len < 1) throw ConfigError("inspect-mask: --tgt-len must be >= 1");
        const int n = src_len + tgt_len;
        std::vector<int> src_idx, tgt_idx;
        for (int i = 0; i < src_len; ++i) src_idx.push_back(i);
        for (int i = src_len; i < n; ++i) tgt_idx.push_back(i);
        const auto masked_src = to_zero_based(masked_src_1b, 1, src_len, "masked-src");
        const auto masked_tgt = to_zero_based(masked_tgt_1b, src_len + 1, n, "masked-tgt");
        grid = objective == "tlm"
                   ? BoolMatrix::ones(n)
                   : camlm_attention_mask(n, src_idx, tgt_idx, masked_src, masked_tgt, mode);
        for (int i = 1; i <= src_len; ++i)
            labels.push_back((is_masked(i) ? "M" : "x") + std::to_string(i));
        for (int i = src_len + 1; i <= n; ++i)
            labels.push_back((is_masked(i) ? "M" : "y") + std::to_string(i));
    } else if (objective == "btmlm-stage1") {
        if (pseudo < 1) throw ConfigError("inspect-mask: --pseudo must be >= 1");
        const int n = src_len + pseudo;
        std::vector<int> src_idx, ph_idx;
        for (int i = 0; i < src_len; ++i) src_idx.push_back(i);
        for (int i = src_len; i < n; ++i) ph_idx.push_back(i);
        grid = btmlm_stage1_attention_mask(n, src_idx, ph_idx);
        for (int i = 1; i <= src_len; ++i) labels.push_back("x" + std::to_string(i));
        for (int i = src_len + 1; i <= n; ++i) labels.push_back("M" + std::to_string(i));
    } else {
        throw ConfigError("inspect-mask: unknown objective '" + objective +
                          "' (mmlm|tlm|camlm|btmlm-stage1)");
    }
    out << format_mask_grid(grid, labels);
    return 0;
}

// ---------------------------------------------------------------------------
// eval

template <typename S>
Params<S> load_or_init_params(const RunConfig& cfg, const std::string& checkpoint) {
    if (checkpoint.empty()) return init_params<S>(model_config(cfg), cfg.train.seed);
    return load_checkpoint<S>(checkpoint);
}

template <typename S>
int cmd_eval_impl(const RunConfig& cfg, const std::string& checkpoint, const std::string& suite,
                  const std::string& data_dir, const std::string& out_dir, std::ostream& out) {
    fs::create_directories(out_dir);
    const CorpusPaths paths = corpus_paths(cfg.corpus, data_dir);
    if (suite == "retrieval") {
        auto params = load_or_init_params<S>(cfg, checkpoint);
        const auto heldout = read_parallel_corpus(paths.heldout);
        const RetrievalReport report = retrieval_eval(params, heldout);
        write_text_file((fs::path(out_dir) / "retrieval.json").string(),
                        retrieval_json(report) + "\n");
        const std::string text = render_retrieval(report);
        write_text_file((fs::path(out_dir) / "retrieval.txt").string(), text);
        out << text;
        return 0;
    }
    if (suite == "probe") {
        auto params = load_or_init_params<S>(cfg, checkpoint);
        const ProbeReport report = transfer_probe(params, cfg.corpus, cfg.eval.probe);
        write_text_file((fs::path(out_dir) / "probe.json").string(), probe_json(report) + "\n");
        const std::string text = render_probe(report);
        write_text_file((fs::path(out_dir) / "probe.txt").string(), text);
        out << text;
        return 0;
    }
    if (suite == "ppl") {
        const TrainData data = load_train_data(paths);
        const auto heldout_pairs = read_parallel_corpus(paths.heldout);
        std::vector<MonoSentence> heldout_mono;
        for (const auto& p : heldout_pairs) {
            heldout_mono.push_back(p.src);
            heldout_mono.push_back(p.tgt);
        }
        TrainConfig sweep_cfg = cfg.train;
        sweep_cfg.total_steps = cfg.eval.sweep_steps;
        sweep_cfg.warmup_steps = std::min(cfg.train.warmup_steps, cfg.eval.sweep_steps / 10);
        sweep_cfg.btmlm_start_step = static_cast<int>(
            std::llround(static_cast<double>(cfg.train.btmlm_start_step) * cfg.eval.sweep_steps /
                         cfg.train.total_steps));
        sweep_cfg.checkpoint_interval = cfg.eval.sweep_steps + 1;
        const auto rows = ppl_sweep<S>(model_config(cfg), sweep_cfg, data, cfg.corpus.vocab(),
                                       heldout_mono, cfg.eval.sweep_proportions,
                                       cfg.eval.ppl_every, cfg.train.seed);
        write_text_file((fs::path(out_dir) / "ppl_sweep.tsv").string(), ppl_sweep_tsv(rows));
        const std::string text = render_ppl_sweep(rows);
        write_text_file((fs::path(out_dir) / "ppl_sweep.txt").string(), text);
        out << text;
        return 0;
    }
    throw ConfigError("eval: unknown suite '" + suite + "' (retrieval|probe|ppl)");
}

int cmd_eval(const CommonOpts& opts, const std::string& checkpoint, const std::string& suite,
             const std::string& data_dir, const std::string& out_dir, std::ostream& out) {
    const RunConfig cfg = resolve_config(opts, false);
    if (cfg.train.numeric_mode == "f64")
        return cmd_eval_impl<double>(cfg, checkpoint, suite, data_dir, out_dir, out);
    return cmd_eval_impl<float>(cfg, checkpoint, suite, data_dir, out_dir, out);
}

// ---------------------------------------------------------------------------
// ablate

template <typename S>
AblationRow run_ablation_row(const RunConfig& cfg, const std::string& exp_id,
                             const std::array<double, 4>& weights, const TrainData& data,
                             const std::vector<SentencePair>& heldout) {
    return ablation_train_row<S>(exp_id, weights, model_config(cfg), cfg.train, data,
                                 cfg.corpus.vocab(), heldout, cfg.corpus, cfg.eval.probe,
                                 cfg.train.seed);
}

int cmd_ablate(const CommonOpts& opts, const std::string& data_dir, const std::string& out_dir,
               int jobs, std::ostream& out) {
    const RunConfig cfg = resolve_config(opts, false);
    if (jobs < 1) throw ConfigError("ablate: --jobs must be >= 1");
    const CorpusPaths paths = corpus_paths(cfg.corpus, data_dir);
    const TrainData data = load_train_data(paths);
    const auto heldout = read_parallel_corpus(paths.heldout);
    const fs::path root(out_dir);
    const fs::path rows_dir = root / "rows";
    fs::create_directories(rows_dir);

    std::vector<std::pair<std::string, std::array<double, 4>>> grid_spec = {
        {"baseline", {0, 0, 0, 0}}};
    for (const auto& entry : ablation_objective_sets()) grid_spec.push_back(entry);

    auto run_row_to_file = [&](size_t idx) {
        const auto& [exp_id, weights] = grid_spec[idx];
        const AblationRow row = cfg.train.numeric_mode == "f64"
                                    ? run_ablation_row<double>(cfg, exp_id, weights, data, heldout)
                                    : run_ablation_row<float>(cfg, exp_id, weights, data, heldout);
        write_text_file((rows_dir / (exp_id + ".json")).string(), ablation_row_json(row) + "\n");
    };

    if (jobs == 1) {
        for (size_t i = 0; i < grid_spec.size(); ++i) run_row_to_file(i);
    } else {
        // one worker process per row, at most `jobs` alive at a time
        std::vector<pid_t> live;
        auto reap_one = [&]() {
            int status = 0;
            const pid_t done = waitpid(-1, &status, 0);
            live.erase(std::remove(live.begin(), live.end(), done), live.end());
            if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
                throw Error("ablate: worker process failed");
        };
        for (size_t i = 0; i < grid_spec.size(); ++i) {
            while (static_cast<int>(live.size()) >= jobs) reap_one();
            const pid_t pid = fork();
            if (pid < 0) throw Error("ablate: fork failed");
            if (pid == 0) {
                try {
                    run_row_to_file(i);
                    _exit(0);
                } catch (...) {
                    _exit(1);
                }
            }
            live.push_back(pid);
        }
        while (!live.empty()) reap_one();
    }

    std::vector<AblationRow> rows;
    std::string grid_jsonl;
    for (const auto& [exp_id, weights] : grid_spec) {
        const std::string text = read_text_file((rows_dir / (exp_id + ".json")).string());
        rows.push_back(ablation_row_from_json(text));
        grid_jsonl += ablation_row_json(rows.back()) + "\n";
    }
    write_text_file((root / "grid.jsonl").string(), grid_jsonl);

    const OverheadReport overhead = cfg.train.numeric_mode == "f64"
                                        ? measure_overhead<double>(model_config(cfg), cfg.train,
                                                                   data, cfg.corpus.vocab(), 24,
                                                                   cfg.train.seed)
                                        : measure_overhead<float>(model_config(cfg), cfg.train,
                                                                  data, cfg.corpus.vocab(), 24,
                                                                  cfg.train.seed);
    write_text_file((root / "overhead.json").string(), overhead_json(overhead) + "\n");

    const std::string table = render_ablation_table(rows) + "\n" + render_overhead(overhead);
    write_text_file((root / "grid.txt").string(), table);
    out << table;
    return 0;
}

// ---------------------------------------------------------------------------
// report

int cmd_report(const std::string& run_dir, std::ostream& out) {
    const fs::path root(run_dir);
    const fs::path metrics_path = root / "metrics.jsonl";
    if (!fs::exists(metrics_path)) throw IoError("report: no metrics log in " + run_dir);
    const auto records = parse_metrics_jsonl(read_text_file(metrics_path.string()));
    if (records.empty()) throw IoError("report: metrics log is empty");
    std::string text = render_metrics_summary(records);
    const fs::path overhead_path = root / "reports" / "overhead.json";
    if (fs::exists(overhead_path)) {
        nlohmann::json j = nlohmann::json::parse(read_text_file(overhead_path.string()));
        OverheadReport o;
        o.ms_full = j.at("ms_full").get<double>();
        o.ms_base = j.at("ms_mmlm_tlm").get<double>();
        o.ratio = j.at("ratio").get<double>();
        o.hardware = j.at("hardware").get<std::string>();
        text += "\n" + render_overhead(o);
    }
    fs::create_directories(root / "reports");
    write_text_file((root / "reports" / "summary.txt").string(), text);
    out << text;
    return 0;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"camlmlab: cross-lingual masked-LM objectives on cipher corpora"};
    app.require_subcommand(1);

    CommonOpts common;
    auto add_common = [&common](CLI::App* cmd, bool config_required) {
        auto* opt = cmd->add_option("--config", common.config_path, "configuration file");
        if (config_required) opt->required();
        cmd->add_option("--set", common.overrides, "override config values (section.key=value)");
        cmd->add_option("--seed", common.seed_flag, "override the primary seed");
    };

    std::string out_dir, data_dir, run_dir, checkpoint, suite;
    bool resume = false;
    int jobs = 1;

    auto* gen = app.add_subcommand("gen-corpus", "generate cipher-language corpora");
    add_common(gen, false);
    gen->add_option("--out", out_dir, "output directory")->required();

    auto* train = app.add_subcommand("train", "run pre-training");
    add_common(train, true);
    train->add_option("--data", data_dir, "corpus directory")->required();
    train->add_option("--run-dir", run_dir, "run directory")->required();
    train->add_flag("--resume", resume, "continue from the latest checkpoint");

    std::string objective = "camlm", mode_text = "strict";
    std::string masked_src_text, masked_tgt_text;
    int src_len = 0, tgt_len = 0, pseudo = 0;
    auto* inspect = app.add_subcommand("inspect-mask", "print a visibility matrix as a 0/1 grid");
    inspect->add_option("--objective", objective, "mmlm|tlm|camlm|btmlm-stage1")->required();
    inspect->add_option("--src-len", src_len, "source sentence length")->required();
    inspect->add_option("--tgt-len", tgt_len, "target sentence length");
    inspect->add_option("--pseudo", pseudo, "placeholder count (btmlm-stage1)");
    inspect->add_option("--masked-src", masked_src_text, "masked source positions, 1-based");
    inspect->add_option("--masked-tgt", masked_tgt_text, "masked target positions, 1-based");
    inspect->add_option("--mode", mode_text, "strict|figure");

    auto* eval_cmd = app.add_subcommand("eval", "run an evaluation suite");
    add_common(eval_cmd, true);
    eval_cmd->add_option("--checkpoint", checkpoint, "model checkpoint (omit for random init)");
    eval_cmd->add_option("--suite", suite, "retrieval|probe|ppl")->required();
    eval_cmd->add_option("--data", data_dir, "corpus directory")->required();
    eval_cmd->add_option("--out", out_dir, "report output directory")->required();

    auto* ablate = app.add_subcommand("ablate", "train and evaluate the objective-set grid");
    add_common(ablate, true);
    ablate->add_option("--data", data_dir, "corpus directory")->required();
    ablate->add_option("--out-dir", out_dir, "grid output directory")->required();
    ablate->add_option("--jobs", jobs, "worker processes");

    auto* report = app.add_subcommand("report", "render a run directory into a text summary");
    report->add_option("--run-dir", run_dir, "run directory")->required();

    std::vector<std::string> argv_rev(args.rbegin(), args.rend());
    try {
        app.parse(argv_rev);
    } catch (const CLI::ParseError& e) {
        std::ostringstream usage;
        const int code = app.exit(e, usage, usage);
        (code == 0 ? out : err) << usage.str();
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_corpus(common, out_dir, out);
        if (train->parsed()) return cmd_train(common, data_dir, run_dir, resume, out);
        if (inspect->parsed())
            return cmd_inspect_mask(objective, src_len, tgt_len, pseudo, masked_src_text,
                                    masked_tgt_text, mode_text, out);
        if (eval_cmd->parsed())
            return cmd_eval(common, checkpoint, suite, data_dir, out_dir, out);
        if (ablate->parsed()) return cmd_ablate(common, data_dir, out_dir, jobs, out);
        if (report->parsed()) return cmd_report(run_dir, out);
        err << "no subcommand\n";
        return 2;
    } catch (const SafetyRefusal& refusal) {
        err << "refused: " << refusal.message << "\n";
        return 4;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        err << "io error: " << e.what() << "\n";
        return 3;
    } catch (const ParseError& e) {
        err << "parse error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace camlmlab
