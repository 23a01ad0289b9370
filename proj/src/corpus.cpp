#include "camlmlab/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace camlmlab {

namespace {

// Inverse-CDF sampler over ranks 1..n with weight rank^-s. s = 0 is uniform.
struct ZipfTable {
    std::vector<double> cum;

    ZipfTable(int n, double s) : cum(n) {
        double acc = 0.0;
        for (int r = 1; r <= n; ++r) {
            acc += std::pow(static_cast<double>(r), -s);
            cum[r - 1] = acc;
        }
    }

    // 0-based rank
    int sample(Rng& rng) const {
        const double u = rng.next_unit() * cum.back();
        return static_cast<int>(std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
    }
};

uint64_t stream_seed(uint64_t master, uint64_t stream, uint64_t index) {
    return hash_mix(master, stream, index);
}

constexpr uint64_t kStreamParallel = 1;
constexpr uint64_t kStreamMono = 2;
constexpr uint64_t kStreamHeldout = 3;
constexpr uint64_t kStreamCipher = 4;

MonoSentence gen_with_table(const Vocabulary& vocab, const ZipfTable& table, int lang,
                            int len_min, int len_max, uint64_t seed) {
    Rng rng(seed);
    const int len = rng.range_int(len_min, len_max);
    MonoSentence s;
    s.lang = lang;
    s.tokens.resize(len);
    const int base = vocab.lang_begin(lang);
    for (int i = 0; i < len; ++i) s.tokens[i] = base + table.sample(rng);
    return s;
}

void append_ids(std::string& out, const std::vector<int>& ids) {
    char buf[16];
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), ids[i]);
        out.append(buf, p);
    }
}

std::vector<int> parse_ids(const std::string& text, int line_no) {
    std::vector<int> ids;
    size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && text[i] == ' ') ++i;
        if (i >= text.size()) break;
        int value = 0;
        auto [p, ec] = std::from_chars(text.data() + i, text.data() + text.size(), value);
        if (ec != std::errc() || (p != text.data() + text.size() && *p != ' '))
            throw ParseError("line " + std::to_string(line_no) + ": non-integer token id");
        ids.push_back(value);
        i = static_cast<size_t>(p - text.data());
    }
    return ids;
}

int parse_lang_field(const std::string& field, int line_no) {
    if (field.rfind("lang=", 0) != 0)
        throw ParseError("line " + std::to_string(line_no) + ": expected lang=<id> field");
    int lang = 0;
    const char* begin = field.data() + 5;
    auto [p, ec] = std::from_chars(begin, field.data() + field.size(), lang);
    if (ec != std::errc() || p != field.data() + field.size())
        throw ParseError("line " + std::to_string(line_no) + ": bad language id");
    return lang;
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    size_t start = 0;
    while (true) {
        const size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
    return fields;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    return out;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    return in;
}

}  // namespace

void CorpusConfig::validate() const {
    vocab().validate();
    if (languages < 2) throw ConfigError("corpus: need at least 2 languages");
    if (len_min < 1 || len_max < len_min) throw ConfigError("corpus: bad length range");
    if (swap_prob < 0.0 || swap_prob > 0.5) throw ConfigError("corpus: swap_prob must be in [0,0.5]");
    if (zipf_s < 0.0) throw ConfigError("corpus: zipf_s must be >= 0");
    if (parallel_pairs <= 0 || mono_sentences <= 0 || heldout_pairs <= 0)
        throw ConfigError("corpus: sizes must be positive");
}

CipherSpec make_cipher(const Vocabulary& vocab, int src_lang, int tgt_lang, double swap_prob,
                       uint64_t seed) {
    vocab.validate();
    if (src_lang == tgt_lang) throw ConfigError("cipher: source and target language coincide");
    if (src_lang < 0 || src_lang >= vocab.languages || tgt_lang < 0 || tgt_lang >= vocab.languages)
        throw ConfigError("cipher: language id out of range");
    if (swap_prob < 0.0 || swap_prob > 0.5) throw ConfigError("cipher: swap_prob must be in [0,0.5]");
    CipherSpec spec;
    spec.src_lang = src_lang;
    spec.tgt_lang = tgt_lang;
    spec.swap_prob = swap_prob;
    spec.seed = seed;
    const int n = vocab.range_size;
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(hash_mix(seed, kStreamCipher, static_cast<uint64_t>(src_lang * 16 + tgt_lang)));
    for (int i = n - 1; i > 0; --i)
        std::swap(perm[i], perm[static_cast<int>(rng.below(static_cast<uint64_t>(i) + 1))]);
    spec.image.resize(n);
    const int tgt_base = vocab.lang_begin(tgt_lang);
    for (int i = 0; i < n; ++i) spec.image[i] = tgt_base + perm[i];
    return spec;
}

CipherSpec make_chain_cipher(const Vocabulary& vocab, int src_lang, int tgt_lang,
                             double swap_prob, uint64_t seed) {
    if (src_lang == tgt_lang) throw ConfigError("cipher: source and target language coincide");
    const int step = src_lang < tgt_lang ? 1 : -1;
    CipherSpec chain = make_cipher(vocab, src_lang, src_lang + step, swap_prob, seed);
    for (int lang = src_lang + step; lang != tgt_lang; lang += step) {
        const CipherSpec link = make_cipher(vocab, lang, lang + step, swap_prob, seed);
        for (int& token : chain.image) token = link.map_token(token, vocab);
        chain.tgt_lang = lang + step;
    }
    return chain;
}

MonoSentence gen_mono_sentence(const Vocabulary& vocab, int lang, int len_min, int len_max,
                               double zipf_s, uint64_t seed) {
    vocab.validate();
    if (lang < 0 || lang >= vocab.languages) throw ConfigError("gen_mono_sentence: bad language");
    if (len_min < 1 || len_max < len_min) throw ConfigError("gen_mono_sentence: bad length range");
    const ZipfTable table(vocab.range_size, zipf_s);
    return gen_with_table(vocab, table, lang, len_min, len_max, seed);
}

MonoSentence cipher_translate(const MonoSentence& s, const CipherSpec& spec,
                              const Vocabulary& vocab) {
    if (s.lang != spec.src_lang)
        throw LabelError("cipher_translate: sentence language " + std::to_string(s.lang) +
                         " does not match cipher source " + std::to_string(spec.src_lang));
    MonoSentence out;
    out.lang = spec.tgt_lang;
    out.tokens.reserve(s.tokens.size());
    for (int token : s.tokens) out.tokens.push_back(spec.map_token(token, vocab));
    Rng rng(hash_mix(spec.seed, hash_tokens(0x5a71, s.tokens)));
    for (size_t i = 0; i + 1 < out.tokens.size(); i += 2)
        if (rng.bernoulli(spec.swap_prob)) std::swap(out.tokens[i], out.tokens[i + 1]);
    return out;
}

CipherSpec corpus_cipher(const CorpusConfig& config, int tgt_lang) {
    return make_chain_cipher(config.vocab(), 0, tgt_lang, config.swap_prob, config.seed);
}

CorpusPaths corpus_paths(const CorpusConfig& config, const std::string& dir) {
    CorpusPaths paths;
    const std::filesystem::path root(dir);
    paths.parallel = (root / "parallel.txt").string();
    for (int lang = 0; lang < config.languages; ++lang)
        paths.mono.push_back((root / ("mono_" + std::to_string(lang) + ".txt")).string());
    paths.heldout = (root / "heldout.txt").string();
    return paths;
}

void write_mono_corpus(const std::string& path, const std::vector<MonoSentence>& sentences) {
    auto out = open_out(path);
    std::string line;
    for (const auto& s : sentences) {
        line.clear();
        line += "lang=" + std::to_string(s.lang) + "\t";
        append_ids(line, s.tokens);
        line += '\n';
        out << line;
    }
    if (!out) throw IoError("write failed: " + path);
}

void write_parallel_corpus(const std::string& path, const std::vector<SentencePair>& pairs) {
    auto out = open_out(path);
    std::string line;
    for (const auto& p : pairs) {
        line.clear();
        line += "lang=" + std::to_string(p.src.lang) + "\t";
        append_ids(line, p.src.tokens);
        line += "\tlang=" + std::to_string(p.tgt.lang) + "\t";
        append_ids(line, p.tgt.tokens);
        line += '\n';
        out << line;
    }
    if (!out) throw IoError("write failed: " + path);
}

std::vector<MonoSentence> read_mono_corpus(const std::string& path) {
    auto in = open_in(path);
    std::vector<MonoSentence> sentences;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto fields = split_tabs(line);
        if (fields.size() != 2)
            throw ParseError("line " + std::to_string(line_no) + ": expected 2 tab fields");
        MonoSentence s;
        s.lang = parse_lang_field(fields[0], line_no);
        s.tokens = parse_ids(fields[1], line_no);
        if (s.tokens.empty())
            throw ParseError("line " + std::to_string(line_no) + ": empty sentence");
        sentences.push_back(std::move(s));
    }
    return sentences;
}

std::vector<SentencePair> read_parallel_corpus(const std::string& path) {
    auto in = open_in(path);
    std::vector<SentencePair> pairs;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto fields = split_tabs(line);
        if (fields.size() != 4)
            throw ParseError("line " + std::to_string(line_no) + ": expected 4 tab fields");
        SentencePair p;
        p.src.lang = parse_lang_field(fields[0], line_no);
        p.src.tokens = parse_ids(fields[1], line_no);
        p.tgt.lang = parse_lang_field(fields[2], line_no);
        p.tgt.tokens = parse_ids(fields[3], line_no);
        if (p.src.tokens.empty() || p.tgt.tokens.empty())
            throw ParseError("line " + std::to_string(line_no) + ": empty sentence");
        pairs.push_back(std::move(p));
    }
    return pairs;
}

CorpusPaths gen_corpora(const CorpusConfig& config, const std::string& out_dir) {
    config.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory: " + out_dir);
    const CorpusPaths paths = corpus_paths(config, out_dir);
    {
        std::set<std::string> all(paths.mono.begin(), paths.mono.end());
        all.insert(paths.parallel);
        all.insert(paths.heldout);
        if (all.size() != paths.mono.size() + 2)
            throw ConfigError("gen_corpora: overlapping output paths");
    }
    const Vocabulary vocab = config.vocab();
    const ZipfTable table(config.range_size, config.zipf_s);

    std::vector<CipherSpec> ciphers;  // lang 0 -> k
    for (int lang = 1; lang < config.languages; ++lang)
        ciphers.push_back(corpus_cipher(config, lang));

    // Training pairs: src in lang 0, tgt cycling over the other languages.
    std::vector<SentencePair> train_pairs;
    std::set<std::vector<int>> train_src;
    train_pairs.reserve(config.parallel_pairs);
    for (int i = 0; i < config.parallel_pairs; ++i) {
        SentencePair p;
        p.src = gen_with_table(vocab, table, 0, config.len_min, config.len_max,
                               stream_seed(config.seed, kStreamParallel, i));
        const auto& cipher = ciphers[i % ciphers.size()];
        p.tgt = cipher_translate(p.src, cipher, vocab);
        p.aligned = true;
        train_src.insert(p.src.tokens);
        train_pairs.push_back(std::move(p));
    }
    write_parallel_corpus(paths.parallel, train_pairs);

    for (int lang = 0; lang < config.languages; ++lang) {
        std::vector<MonoSentence> mono;
        mono.reserve(config.mono_sentences);
        for (int i = 0; i < config.mono_sentences; ++i)
            mono.push_back(gen_with_table(
                vocab, table, lang, config.len_min, config.len_max,
                stream_seed(config.seed, kStreamMono, static_cast<uint64_t>(lang) << 32 | i)));
        write_mono_corpus(paths.mono[lang], mono);
    }

    // Held-out pairs are generated from a separate stream and skipped if the
    // source sentence collides with any training source.
    std::vector<SentencePair> heldout;
    std::set<std::vector<int>> heldout_src;
    uint64_t candidate = 0;
    while (static_cast<int>(heldout.size()) < config.heldout_pairs) {
        SentencePair p;
        p.src = gen_with_table(vocab, table, 0, config.len_min, config.len_max,
                               stream_seed(config.seed, kStreamHeldout, candidate++));
        if (train_src.count(p.src.tokens) || heldout_src.count(p.src.tokens)) continue;
        const auto& cipher = ciphers[heldout.size() % ciphers.size()];
        p.tgt = cipher_translate(p.src, cipher, vocab);
        heldout_src.insert(p.src.tokens);
        heldout.push_back(std::move(p));
    }
    write_parallel_corpus(paths.heldout, heldout);
    return paths;
}

}  // namespace camlmlab
