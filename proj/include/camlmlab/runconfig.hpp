#pragma once

// Flat `key = value` configuration with [corpus]/[model]/[train]/[eval]
// sections. Diff-able, echo-able, no parser dependency. The serialized echo
// round-trips exactly: rerunning from an echo reproduces the run.

#include <string>
#include <vector>

#include "camlmlab/corpus.hpp"
#include "camlmlab/evalsuite.hpp"
#include "camlmlab/model.hpp"
#include "camlmlab/trainer.hpp"

namespace camlmlab {

struct EvalConfig {
    ProbeConfig probe;
    FinetuneConfig finetune;
    int ppl_every = 150;
    int sweep_steps = 600;
    std::vector<double> sweep_proportions = {0.05, 0.10, 0.15, 0.20};
    int ablate_seeds = 3;
};

struct RunConfig {
    CorpusConfig corpus;
    ModelConfig model;  // vocab is derived from the corpus section
    TrainConfig train;
    EvalConfig eval;

    void validate() const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);
std::string serialize_run_config(const RunConfig& cfg);

// key is "section.name", e.g. "train.seed". Throws ConfigError for unknown
// keys or malformed values.
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

}  // namespace camlmlab
