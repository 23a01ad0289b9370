#pragma once

// Report serialization: line-delimited JSON records plus human-readable
// aligned-column text summaries, and the plot-ready TSV for the PPL sweep.

#include <string>
#include <vector>

#include "camlmlab/evalsuite.hpp"
#include "camlmlab/trainer.hpp"

namespace camlmlab {

std::vector<MetricsRecord> parse_metrics_jsonl(const std::string& text);
std::string render_metrics_summary(const std::vector<MetricsRecord>& records);

std::string retrieval_json(const RetrievalReport& r);
std::string render_retrieval(const RetrievalReport& r);

std::string probe_json(const ProbeReport& r);
std::string render_probe(const ProbeReport& r);

std::string ablation_row_json(const AblationRow& row);
AblationRow ablation_row_from_json(const std::string& text);
std::string render_ablation_table(const std::vector<AblationRow>& rows);

std::string ppl_sweep_tsv(const std::vector<PplSweepRow>& rows);
std::string render_ppl_sweep(const std::vector<PplSweepRow>& rows);

std::string overhead_json(const OverheadReport& r);
std::string render_overhead(const OverheadReport& r);

}  // namespace camlmlab
