#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "camlmlab/cli.hpp"
#include "camlmlab/runconfig.hpp"

using namespace camlmlab;
namespace fs = std::filesystem;

namespace {

const char* kMicroConfig = R"cfg(
[corpus]
languages = 2
range_size = 24
zipf_s = 1.1
len_min = 4
len_max = 8
swap_prob = 0.1
parallel_pairs = 120
mono_sentences = 80
heldout_pairs = 16
seed = 5

[model]
layers = 1
hidden = 16
heads = 2
ffn = 32
max_positions = 32

[train]
total_steps = 24
warmup_steps = 4
batch_size = 4
peak_lr = 1e-3
btmlm_start_step = 8
checkpoint_interval = 12
seed = 3
numeric_mode = f32

[eval]
probe_train = 40
probe_test = 20
probe_classes = 5
probe_head_steps = 40
finetune_steps = 5
finetune_batch = 4
ppl_every = 10
sweep_steps = 20
sweep_proportions = 0.1,0.2
)cfg";

struct CliResult {
    int code;
    std::string out;
    std::string err;
};

CliResult run_cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli_main(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "camlmlab_cli" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string write_micro_config(const fs::path& dir) {
    const fs::path path = dir / "micro.cfg";
    std::ofstream(path) << kMicroConfig;
    return path.string();
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("run config round-trips through serialize/parse") {
    const RunConfig cfg = parse_run_config(kMicroConfig);
    const std::string echo = serialize_run_config(cfg);
    const RunConfig again = parse_run_config(echo);
    CHECK(serialize_run_config(again) == echo);
    CHECK(again.corpus.parallel_pairs == 120);
    CHECK(again.train.numeric_mode == "f32");
    CHECK(again.eval.sweep_proportions == std::vector<double>{0.1, 0.2});
    CHECK(again.model.vocab == 4 + 2 * 24);
}

TEST_CASE("run config rejects unknown keys and bad values") {
    CHECK_THROWS_AS(parse_run_config("[corpus]\nbogus_key = 3\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[nowhere]\nseed = 3\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("seed = 3\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[train]\ntotal_steps = banana\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[train]\nmask_mode = loose\n"), ConfigError);
    RunConfig cfg = parse_run_config(kMicroConfig);
    CHECK_THROWS_AS(apply_override(cfg, "train.missing", "1"), ConfigError);
    apply_override(cfg, "train.seed", "99");
    CHECK(cfg.train.seed == 99);
}

TEST_CASE("gen-corpus writes files, is rerun-identical, and fails without --out") {
    const auto dir = fresh_dir("gen");
    const auto config = write_micro_config(dir);

    const auto missing = run_cli({"gen-corpus", "--config", config});
    CHECK(missing.code == 2);
    CHECK((missing.err.find("--out") != std::string::npos ||
           missing.err.find("Usage") != std::string::npos));

    const auto res = run_cli({"gen-corpus", "--config", config,
                              "--out", (dir / "data").string()});
    CHECK(res.code == 0);
    CHECK(fs::exists(dir / "data" / "parallel.txt"));
    CHECK(fs::exists(dir / "data" / "mono_0.txt"));
    CHECK(fs::exists(dir / "data" / "mono_1.txt"));
    CHECK(fs::exists(dir / "data" / "heldout.txt"));

    const auto res2 = run_cli({"gen-corpus", "--config", config,
                               "--out", (dir / "data2").string()});
    REQUIRE(res2.code == 0);
    CHECK(slurp(dir / "data" / "parallel.txt") == slurp(dir / "data2" / "parallel.txt"));
    CHECK(slurp(dir / "data" / "heldout.txt") == slurp(dir / "data2" / "heldout.txt"));
}

TEST_CASE("CAMLMLAB_SEED env overrides the file seed, flags beat env") {
    const auto dir = fresh_dir("seeds");
    const auto config = write_micro_config(dir);

    setenv("CAMLMLAB_SEED", "777", 1);
    const auto env_run = run_cli({"gen-corpus", "--config", config,
                                  "--out", (dir / "env").string()});
    const auto flag_run = run_cli({"gen-corpus", "--config", config, "--seed", "5",
                                   "--out", (dir / "flag").string()});
    unsetenv("CAMLMLAB_SEED");
    const auto file_run = run_cli({"gen-corpus", "--config", config,
                                   "--out", (dir / "file").string()});
    REQUIRE(env_run.code == 0);
    REQUIRE(flag_run.code == 0);
    REQUIRE(file_run.code == 0);
    CHECK(slurp(dir / "env" / "parallel.txt") != slurp(dir / "file" / "parallel.txt"));
    CHECK(slurp(dir / "flag" / "parallel.txt") == slurp(dir / "file" / "parallel.txt"));
}

TEST_CASE("inspect-mask prints the worked-example grids") {
    const auto camlm = run_cli({"inspect-mask", "--objective", "camlm", "--src-len", "3",
                                "--tgt-len", "4", "--masked-src", "2", "--masked-tgt", "5,6",
                                "--mode", "figure"});
    REQUIRE(camlm.code == 0);
    // row M2 sees itself and all of y4..y7
    CHECK(camlm.out.find("M2") != std::string::npos);
    std::istringstream lines(camlm.out);
    std::string line;
    std::vector<std::string> rows;
    while (std::getline(lines, line)) rows.push_back(line);
    REQUIRE(rows.size() == 8);  // header + 7 rows
    CHECK(rows[2].substr(0, 2) == "M2");
    // columns: x1 M2 x3 y4 M5 M6 y7 -> M2 row = 0 1 0 1 1 1 1
    std::string cells;
    for (char c : rows[2].substr(3))
        if (c == '0' || c == '1') cells += c;
    CHECK(cells == "0101111");

    const auto strict = run_cli({"inspect-mask", "--objective", "camlm", "--src-len", "3",
                                 "--tgt-len", "4", "--masked-src", "2", "--masked-tgt", "5,6",
                                 "--mode", "strict"});
    std::istringstream slines(strict.out);
    std::vector<std::string> srows;
    while (std::getline(slines, line)) srows.push_back(line);
    std::string scells;
    for (char c : srows[2].substr(3))
        if (c == '0' || c == '1') scells += c;
    CHECK(scells == "0101001");  // {2,4,7} 1-based

    const auto mmlm = run_cli({"inspect-mask", "--objective", "mmlm", "--src-len", "4"});
    REQUIRE(mmlm.code == 0);
    CHECK(mmlm.out.find('0') == std::string::npos);

    const auto stage1 = run_cli({"inspect-mask", "--objective", "btmlm-stage1", "--src-len", "4",
                                 "--pseudo", "3"});
    REQUIRE(stage1.code == 0);
    std::istringstream plines(stage1.out);
    std::vector<std::string> prows;
    while (std::getline(plines, line)) prows.push_back(line);
    REQUIRE(prows.size() == 8);
    std::string row5;
    for (char c : prows[5].substr(3))
        if (c == '0' || c == '1') row5 += c;
    CHECK(row5 == "1111100");  // M5 sees x1..x4 and itself

    const auto bad = run_cli({"inspect-mask", "--objective", "camlm", "--src-len", "3",
                              "--tgt-len", "4", "--masked-src", "9"});
    CHECK(bad.code == 2);
}

TEST_CASE("train/eval/report round trip on a micro run") {
    const auto dir = fresh_dir("train");
    const auto config = write_micro_config(dir);
    const auto data_dir = (dir / "data").string();
    REQUIRE(run_cli({"gen-corpus", "--config", config, "--out", data_dir}).code == 0);

    const auto run_dir = (dir / "run").string();
    const auto trained = run_cli({"train", "--config", config, "--data", data_dir,
                                  "--run-dir", run_dir});
    REQUIRE(trained.code == 0);
    CHECK(fs::exists(fs::path(run_dir) / "config.cfg"));
    CHECK(fs::exists(fs::path(run_dir) / "metrics.jsonl"));
    CHECK(fs::exists(fs::path(run_dir) / "checkpoints" / "step_000012.ckpt"));
    CHECK(fs::exists(fs::path(run_dir) / "checkpoints" / "final.ckpt"));

    // config echo reparses to the identical canonical form
    const RunConfig echoed = load_run_config((fs::path(run_dir) / "config.cfg").string());
    CHECK(serialize_run_config(echoed) == slurp(fs::path(run_dir) / "config.cfg"));

    // a non-empty run dir without --resume is refused
    const auto refused = run_cli({"train", "--config", config, "--data", data_dir,
                                  "--run-dir", run_dir});
    CHECK(refused.code == 4);

    // eval on the final checkpoint and on random init
    const auto ckpt = (fs::path(run_dir) / "checkpoints" / "final.ckpt").string();
    const auto eval_dir = (dir / "eval").string();
    const auto ev = run_cli({"eval", "--config", config, "--checkpoint", ckpt, "--suite",
                             "retrieval", "--data", data_dir, "--out", eval_dir});
    REQUIRE(ev.code == 0);
    CHECK(fs::exists(fs::path(eval_dir) / "retrieval.json"));
    CHECK(ev.out.find("top-1") != std::string::npos);

    const auto chance = run_cli({"eval", "--config", config, "--suite", "retrieval", "--data",
                                 data_dir, "--out", (dir / "eval0").string()});
    REQUIRE(chance.code == 0);  // random init: chance-level report

    const auto probe = run_cli({"eval", "--config", config, "--checkpoint", ckpt, "--suite",
                                "probe", "--data", data_dir, "--out", eval_dir});
    REQUIRE(probe.code == 0);
    CHECK(fs::exists(fs::path(eval_dir) / "probe.json"));

    // report renders the metrics log
    const auto rep = run_cli({"report", "--run-dir", run_dir});
    REQUIRE(rep.code == 0);
    CHECK(rep.out.find("steps: 24") != std::string::npos);
    CHECK(fs::exists(fs::path(run_dir) / "reports" / "summary.txt"));

    const auto empty_rep = run_cli({"report", "--run-dir", (dir / "nothing").string()});
    CHECK(empty_rep.code == 3);
}

TEST_CASE("resumed CLI training reproduces the uninterrupted checkpoint") {
    const auto dir = fresh_dir("resume");
    const auto config = write_micro_config(dir);
    const auto data_dir = (dir / "data").string();
    REQUIRE(run_cli({"gen-corpus", "--config", config, "--out", data_dir}).code == 0);

    const auto full_dir = (dir / "full").string();
    REQUIRE(run_cli({"train", "--config", config, "--data", data_dir, "--run-dir", full_dir})
                .code == 0);

    // emulate an interrupted run: seed a fresh run dir with the step-12
    // checkpoint of the full run, then resume under the same config
    const auto part_dir = dir / "part";
    fs::create_directories(part_dir / "checkpoints");
    fs::copy_file(fs::path(full_dir) / "checkpoints" / "step_000012.ckpt",
                  part_dir / "checkpoints" / "step_000012.ckpt");
    const auto resumed = run_cli({"train", "--config", config, "--data", data_dir, "--run-dir",
                                  part_dir.string(), "--resume"});
    REQUIRE(resumed.code == 0);
    CHECK(resumed.out.find("resuming from step 12") != std::string::npos);
    CHECK(slurp(fs::path(full_dir) / "checkpoints" / "final.ckpt") ==
          slurp(part_dir / "checkpoints" / "final.ckpt"));
}

TEST_CASE("ablate produces the six-row grid with overhead, serial and forked") {
    const auto dir = fresh_dir("ablate");
    const auto config = write_micro_config(dir);
    const auto data_dir = (dir / "data").string();
    REQUIRE(run_cli({"gen-corpus", "--config", config, "--out", data_dir}).code == 0);

    const auto grid_dir = (dir / "grid").string();
    const auto res = run_cli({"ablate", "--config", config, "--data", data_dir, "--out-dir",
                              grid_dir, "--set", "train.total_steps=10", "--set",
                              "train.btmlm_start_step=3", "--set",
                              "train.checkpoint_interval=20"});
    REQUIRE(res.code == 0);
    const std::string grid = slurp(fs::path(grid_dir) / "grid.jsonl");
    CHECK(std::count(grid.begin(), grid.end(), '\n') == 6);
    CHECK(fs::exists(fs::path(grid_dir) / "grid.txt"));
    CHECK(fs::exists(fs::path(grid_dir) / "overhead.json"));
    CHECK(res.out.find("baseline") != std::string::npos);
    CHECK(res.out.find("ratio") != std::string::npos);

    const auto forked_dir = (dir / "grid2").string();
    const auto forked = run_cli({"ablate", "--config", config, "--data", data_dir, "--out-dir",
                                 forked_dir, "--jobs", "2", "--set", "train.total_steps=10",
                                 "--set", "train.btmlm_start_step=3", "--set",
                                 "train.checkpoint_interval=20"});
    REQUIRE(forked.code == 0);
    CHECK(slurp(fs::path(forked_dir) / "grid.jsonl") == grid);
}

TEST_CASE("bad config paths and malformed data map to exit codes") {
    const auto dir = fresh_dir("codes");
    const auto res = run_cli({"train", "--config", (dir / "missing.cfg").string(), "--data",
                              "nowhere", "--run-dir", (dir / "r").string()});
    CHECK(res.code == 3);  // unreadable config file

    const auto config = write_micro_config(dir);
    const auto res2 = run_cli({"train", "--config", config, "--data",
                               (dir / "nodata").string(), "--run-dir", (dir / "r2").string()});
    CHECK(res2.code == 3);  // missing corpus files

    const auto res3 = run_cli({"gen-corpus", "--config", config, "--set",
                               "corpus.swap_prob=0.9", "--out", (dir / "d").string()});
    CHECK(res3.code == 2);  // invalid configuration
}
