#include "camlmlab/runconfig.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace camlmlab {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct Field {
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

template <typename T>
T parse_number(const std::string& raw, const std::string& key) {
    const std::string v = trim(raw);
    if constexpr (std::is_floating_point_v<T>) {
        try {
            size_t used = 0;
            const double d = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument("trailing");
            return static_cast<T>(d);
        } catch (const std::exception&) {
            throw ConfigError("config: bad numeric value for " + key + ": '" + v + "'");
        }
    } else {
        T out{};
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc() || p != v.data() + v.size())
            throw ConfigError("config: bad integer value for " + key + ": '" + v + "'");
        return out;
    }
}

std::vector<double> parse_double_list(const std::string& raw, const std::string& key) {
    std::vector<double> out;
    std::stringstream ss(raw);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        out.push_back(parse_number<double>(item, key));
    }
    if (out.empty()) throw ConfigError("config: empty list for " + key);
    return out;
}

std::string fmt_double_list(const std::vector<double>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += fmt_double(v[i]);
    }
    return s;
}

#define INT_FIELD(path)                                                             \
    Field{[](const RunConfig& c) { return std::to_string(c.path); },                \
          [](RunConfig& c, const std::string& v) {                                  \
              c.path = parse_number<int>(v, #path);                                 \
          }}
#define U64_FIELD(path)                                                             \
    Field{[](const RunConfig& c) { return std::to_string(c.path); },                \
          [](RunConfig& c, const std::string& v) {                                  \
              c.path = parse_number<uint64_t>(v, #path);                            \
          }}
#define DBL_FIELD(path)                                                             \
    Field{[](const RunConfig& c) { return fmt_double(c.path); },                    \
          [](RunConfig& c, const std::string& v) {                                  \
              c.path = parse_number<double>(v, #path);                              \
          }}

const std::vector<std::pair<std::string, Field>>& field_table() {
    static const std::vector<std::pair<std::string, Field>> table = {
        {"corpus.languages", INT_FIELD(corpus.languages)},
        {"corpus.range_size", INT_FIELD(corpus.range_size)},
        {"corpus.zipf_s", DBL_FIELD(corpus.zipf_s)},
        {"corpus.len_min", INT_FIELD(corpus.len_min)},
        {"corpus.len_max", INT_FIELD(corpus.len_max)},
        {"corpus.swap_prob", DBL_FIELD(corpus.swap_prob)},
        {"corpus.parallel_pairs", INT_FIELD(corpus.parallel_pairs)},
        {"corpus.mono_sentences", INT_FIELD(corpus.mono_sentences)},
        {"corpus.heldout_pairs", INT_FIELD(corpus.heldout_pairs)},
        {"corpus.seed", U64_FIELD(corpus.seed)},
        {"model.layers", INT_FIELD(model.layers)},
        {"model.hidden", INT_FIELD(model.hidden)},
        {"model.heads", INT_FIELD(model.heads)},
        {"model.ffn", INT_FIELD(model.ffn)},
        {"model.max_positions", INT_FIELD(model.max_positions)},
        {"model.dropout", DBL_FIELD(model.dropout)},
        {"model.attn_dropout", DBL_FIELD(model.attn_dropout)},
        {"train.total_steps", INT_FIELD(train.total_steps)},
        {"train.warmup_steps", INT_FIELD(train.warmup_steps)},
        {"train.batch_size", INT_FIELD(train.batch_size)},
        {"train.peak_lr", DBL_FIELD(train.peak_lr)},
        {"train.adam_beta1", DBL_FIELD(train.beta1)},
        {"train.adam_beta2", DBL_FIELD(train.beta2)},
        {"train.adam_eps", DBL_FIELD(train.eps)},
        {"train.weight_decay", DBL_FIELD(train.weight_decay)},
        {"train.clip_norm", DBL_FIELD(train.clip_norm)},
        {"train.w_mmlm", DBL_FIELD(train.objective_weights[0])},
        {"train.w_tlm", DBL_FIELD(train.objective_weights[1])},
        {"train.w_camlm", DBL_FIELD(train.objective_weights[2])},
        {"train.w_btmlm", DBL_FIELD(train.objective_weights[3])},
        {"train.btmlm_start_step", INT_FIELD(train.btmlm_start_step)},
        {"train.pseudo_prob", DBL_FIELD(train.pseudo_prob)},
        {"train.mask_rate", DBL_FIELD(train.mask_rate)},
        {"train.mask_mode",
         Field{[](const RunConfig& c) {
                   return std::string(c.train.mask_mode == MaskMode::Strict ? "strict" : "figure");
               },
               [](RunConfig& c, const std::string& v) {
                   const std::string t = trim(v);
                   if (t == "strict")
                       c.train.mask_mode = MaskMode::Strict;
                   else if (t == "figure")
                       c.train.mask_mode = MaskMode::Figure;
                   else
                       throw ConfigError("config: mask_mode must be strict or figure");
               }}},
        {"train.checkpoint_interval", INT_FIELD(train.checkpoint_interval)},
        {"train.seed", U64_FIELD(train.seed)},
        {"train.numeric_mode",
         Field{[](const RunConfig& c) { return c.train.numeric_mode; },
               [](RunConfig& c, const std::string& v) {
                   const std::string t = trim(v);
                   if (t != "f32" && t != "f64")
                       throw ConfigError("config: numeric_mode must be f32 or f64");
                   c.train.numeric_mode = t;
               }}},
        {"eval.probe_train", INT_FIELD(eval.probe.train_n)},
        {"eval.probe_test", INT_FIELD(eval.probe.test_n)},
        {"eval.probe_classes", INT_FIELD(eval.probe.classes)},
        {"eval.probe_head_steps", INT_FIELD(eval.probe.head_steps)},
        {"eval.probe_head_lr", DBL_FIELD(eval.probe.head_lr)},
        {"eval.probe_seed", U64_FIELD(eval.probe.seed)},
        {"eval.finetune_steps", INT_FIELD(eval.finetune.steps)},
        {"eval.finetune_batch", INT_FIELD(eval.finetune.batch)},
        {"eval.finetune_lr", DBL_FIELD(eval.finetune.lr)},
        {"eval.finetune_tau", DBL_FIELD(eval.finetune.tau)},
        {"eval.finetune_seed", U64_FIELD(eval.finetune.seed)},
        {"eval.ppl_every", INT_FIELD(eval.ppl_every)},
        {"eval.sweep_steps", INT_FIELD(eval.sweep_steps)},
        {"eval.sweep_proportions",
         Field{[](const RunConfig& c) { return fmt_double_list(c.eval.sweep_proportions); },
               [](RunConfig& c, const std::string& v) {
                   c.eval.sweep_proportions = parse_double_list(v, "eval.sweep_proportions");
               }}},
        {"eval.ablate_seeds", INT_FIELD(eval.ablate_seeds)},
    };
    return table;
}

#undef INT_FIELD
#undef U64_FIELD
#undef DBL_FIELD

const Field* find_field(const std::string& key) {
    for (const auto& [name, field] : field_table())
        if (name == key) return &field;
    return nullptr;
}

}  // namespace

void RunConfig::validate() const {
    corpus.validate();
    ModelConfig m = model;
    m.vocab = corpus.vocab().size();
    m.validate();
    train.validate();
    if (corpus.len_max + 2 > model.max_positions)
        throw ConfigError("config: len_max does not fit max_positions with [CLS]/[SEP]");
    // BTMLM stage 2 needs room for sentence + pseudo tokens + 3 specials.
    const int pseudo_max = std::max(
        1, static_cast<int>(std::llround(train.pseudo_prob * corpus.len_max)));
    if (corpus.len_max + pseudo_max + 3 > model.max_positions)
        throw ConfigError("config: pseudo tokens do not fit max_positions");
    if (eval.ppl_every <= 0 || eval.sweep_steps <= 0 || eval.ablate_seeds <= 0)
        throw ConfigError("config: eval intervals must be positive");
}

RunConfig parse_run_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[' && t.back() == ']') {
            section = trim(t.substr(1, t.size() - 2));
            if (section != "corpus" && section != "model" && section != "train" &&
                section != "eval")
                throw ConfigError("config line " + std::to_string(line_no) +
                                  ": unknown section [" + section + "]");
            continue;
        }
        const size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ParseError("config line " + std::to_string(line_no) + ": expected key = value");
        if (section.empty())
            throw ConfigError("config line " + std::to_string(line_no) + ": key outside section");
        const std::string key = section + "." + trim(t.substr(0, eq));
        const Field* field = find_field(key);
        if (!field)
            throw ConfigError("config line " + std::to_string(line_no) + ": unknown key " + key);
        field->set(cfg, t.substr(eq + 1));
    }
    cfg.model.vocab = cfg.corpus.vocab().size();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str());
}

std::string serialize_run_config(const RunConfig& cfg) {
    std::string out;
    std::string current_section;
    for (const auto& [name, field] : field_table()) {
        const size_t dot = name.find('.');
        const std::string section = name.substr(0, dot);
        if (section != current_section) {
            if (!current_section.empty()) out += "\n";
            out += "[" + section + "]\n";
            current_section = section;
        }
        out += name.substr(dot + 1) + " = " + field.get(cfg) + "\n";
    }
    return out;
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
    const Field* field = find_field(key);
    if (!field) throw ConfigError("config: unknown key " + key);
    field->set(cfg, value);
    cfg.model.vocab = cfg.corpus.vocab().size();
}

}  // namespace camlmlab
