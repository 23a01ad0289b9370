#include "camlmlab/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include <json.hpp>

namespace camlmlab {

namespace {

std::string fixed(double v, int digits) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

// left-justified cell padding
void put(std::string& line, const std::string& cell, size_t width) {
    line += cell;
    if (cell.size() < width) line.append(width - cell.size(), ' ');
    line += "  ";
}

ObjectiveKind objective_from_name(const std::string& name) {
    for (int i = 0; i < 4; ++i)
        if (name == objective_name(static_cast<ObjectiveKind>(i)))
            return static_cast<ObjectiveKind>(i);
    throw ParseError("metrics: unknown objective '" + name + "'");
}

}  // namespace

std::vector<MetricsRecord> parse_metrics_jsonl(const std::string& text) {
    std::vector<MetricsRecord> records;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("metrics line " + std::to_string(line_no) + ": " + e.what());
        }
        MetricsRecord r;
        r.step = j.at("step").get<int>();
        r.objective = objective_from_name(j.at("objective").get<std::string>());
        r.loss = j.at("loss").get<double>();
        r.lr = j.at("lr").get<double>();
        r.elapsed_ms = j.at("elapsed_ms").get<double>();
        r.tokens = j.at("tokens").get<int64_t>();
        records.push_back(r);
    }
    return records;
}

std::string render_metrics_summary(const std::vector<MetricsRecord>& records) {
    if (records.empty()) throw StateError("metrics: no records");
    struct Agg {
        int count = 0;
        double first_window = 0.0, last_window = 0.0;
        int first_n = 0, last_n = 0;
        double ms = 0.0;
        int64_t tokens = 0;
    };
    std::map<std::string, Agg> by_obj;
    const int window = std::max<int>(1, static_cast<int>(records.size()) / 10);
    for (size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        Agg& a = by_obj[objective_name(r.objective)];
        ++a.count;
        a.ms += r.elapsed_ms;
        a.tokens += r.tokens;
        if (static_cast<int>(i) < window) {
            a.first_window += r.loss;
            ++a.first_n;
        }
        if (i + static_cast<size_t>(window) >= records.size()) {
            a.last_window += r.loss;
            ++a.last_n;
        }
    }
    double total_ms = 0.0;
    int64_t total_tokens = 0;
    for (const auto& r : records) {
        total_ms += r.elapsed_ms;
        total_tokens += r.tokens;
    }

    std::string out;
    out += "steps: " + std::to_string(records.size()) + "   final step: " +
           std::to_string(records.back().step) + "\n";
    out += "wall time: " + fixed(total_ms / 1000.0, 1) + " s   tokens/s: " +
           fixed(total_tokens / (total_ms / 1000.0), 0) + "\n\n";
    std::string header;
    put(header, "objective", 10);
    put(header, "steps", 6);
    put(header, "loss(first 10%)", 16);
    put(header, "loss(last 10%)", 15);
    put(header, "ms/step", 8);
    out += header + "\n";
    for (const auto& [name, a] : by_obj) {
        std::string line;
        put(line, name, 10);
        put(line, std::to_string(a.count), 6);
        put(line, a.first_n ? fixed(a.first_window / a.first_n, 4) : "-", 16);
        put(line, a.last_n ? fixed(a.last_window / a.last_n, 4) : "-", 15);
        put(line, fixed(a.ms / a.count, 1), 8);
        out += line + "\n";
    }
    return out;
}

std::string retrieval_json(const RetrievalReport& r) {
    nlohmann::json j = {{"suite", "retrieval"},
                        {"top1_src2tgt", r.top1_src2tgt},
                        {"top1_tgt2src", r.top1_tgt2src},
                        {"mrr", r.mrr},
                        {"pairs", r.pairs}};
    return j.dump();
}

std::string render_retrieval(const RetrievalReport& r) {
    std::string out;
    out += "retrieval over " + std::to_string(r.pairs) + " held-out pairs\n";
    out += "  top-1 A->B: " + fixed(r.top1_src2tgt, 4) + "\n";
    out += "  top-1 B->A: " + fixed(r.top1_tgt2src, 4) + "\n";
    out += "  MRR:        " + fixed(r.mrr, 4) + "\n";
    return out;
}

std::string probe_json(const ProbeReport& r) {
    nlohmann::json j = {
        {"suite", "probe"}, {"acc_a", r.acc_a}, {"acc_b", r.acc_b}, {"gap", r.gap}};
    return j.dump();
}

std::string render_probe(const ProbeReport& r) {
    std::string out;
    out += "transfer probe (train on A, frozen embeddings)\n";
    out += "  acc A: " + fixed(r.acc_a, 4) + "\n";
    out += "  acc B: " + fixed(r.acc_b, 4) + "\n";
    out += "  gap:   " + fixed(r.gap, 4) + "\n";
    return out;
}

std::string ablation_row_json(const AblationRow& row) {
    nlohmann::json j = {{"exp", row.exp_id},
                        {"weights", row.weights},
                        {"trained", row.trained},
                        {"init_checksum", row.init_checksum},
                        {"top1_src2tgt", row.retrieval.top1_src2tgt},
                        {"top1_tgt2src", row.retrieval.top1_tgt2src},
                        {"mrr", row.retrieval.mrr},
                        {"pairs", row.retrieval.pairs},
                        {"acc_a", row.probe.acc_a},
                        {"acc_b", row.probe.acc_b},
                        {"gap", row.probe.gap}};
    return j.dump();
}

AblationRow ablation_row_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("ablation row: ") + e.what());
    }
    AblationRow row;
    row.exp_id = j.at("exp").get<std::string>();
    row.weights = j.at("weights").get<std::array<double, 4>>();
    row.trained = j.at("trained").get<bool>();
    row.init_checksum = j.at("init_checksum").get<std::string>();
    row.retrieval.top1_src2tgt = j.at("top1_src2tgt").get<double>();
    row.retrieval.top1_tgt2src = j.at("top1_tgt2src").get<double>();
    row.retrieval.mrr = j.at("mrr").get<double>();
    row.retrieval.pairs = j.at("pairs").get<int>();
    row.probe.acc_a = j.at("acc_a").get<double>();
    row.probe.acc_b = j.at("acc_b").get<double>();
    row.probe.gap = j.at("gap").get<double>();
    return row;
}

std::string render_ablation_table(const std::vector<AblationRow>& rows) {
    std::string out;
    std::string header;
    put(header, "exp", 18);
    put(header, "objectives", 22);
    put(header, "top1 A->B", 10);
    put(header, "top1 B->A", 10);
    put(header, "mrr", 7);
    put(header, "probe A", 8);
    put(header, "probe B", 8);
    put(header, "gap", 7);
    out += header + "\n";
    for (const auto& row : rows) {
        std::string objectives;
        static const char* names[4] = {"mmlm", "tlm", "camlm", "btmlm"};
        for (int i = 0; i < 4; ++i) {
            if (row.weights[i] > 0) {
                if (!objectives.empty()) objectives += "+";
                objectives += names[i];
            }
        }
        if (objectives.empty()) objectives = "(none)";
        std::string line;
        put(line, row.exp_id, 18);
        put(line, objectives, 22);
        put(line, fixed(row.retrieval.top1_src2tgt, 4), 10);
        put(line, fixed(row.retrieval.top1_tgt2src, 4), 10);
        put(line, fixed(row.retrieval.mrr, 4), 7);
        put(line, fixed(row.probe.acc_a, 4), 8);
        put(line, fixed(row.probe.acc_b, 4), 8);
        put(line, fixed(row.probe.gap, 4), 7);
        out += line + "\n";
    }
    return out;
}

std::string ppl_sweep_tsv(const std::vector<PplSweepRow>& rows) {
    std::string out = "prob\tstep\tppl\n";
    for (const auto& row : rows)
        for (const auto& pt : row.curve)
            out += fixed(row.proportion, 2) + "\t" + std::to_string(pt.step) + "\t" +
                   fixed(pt.ppl, 4) + "\n";
    return out;
}

std::string render_ppl_sweep(const std::vector<PplSweepRow>& rows) {
    std::string out = "held-out masked-LM perplexity by pseudo-token proportion\n";
    for (const auto& row : rows) {
        out += "  prob " + fixed(row.proportion, 2) + ": ";
        for (size_t i = 0; i < row.curve.size(); ++i) {
            if (i) out += " -> ";
            out += fixed(row.curve[i].ppl, 1);
        }
        out += "\n";
    }
    return out;
}

std::string overhead_json(const OverheadReport& r) {
    nlohmann::json j = {{"suite", "overhead"},
                        {"ms_full", r.ms_full},
                        {"ms_mmlm_tlm", r.ms_base},
                        {"ratio", r.ratio},
                        {"hardware", r.hardware}};
    return j.dump();
}

std::string render_overhead(const OverheadReport& r) {
    std::string out;
    out += "step-time overhead, full objectives vs MMLM+TLM\n";
    out += "  mean ms/step full:      " + fixed(r.ms_full, 2) + "\n";
    out += "  mean ms/step mmlm+tlm:  " + fixed(r.ms_base, 2) + "\n";
    out += "  ratio:                  " + fixed(r.ratio, 3) + "x\n";
    out += "  hardware: " + r.hardware + "\n";
    return out;
}

}  // namespace camlmlab
