#pragma once

// Synthetic cipher-language corpora with known ground-truth alignment.
// Language B is a token-level bijection of language A (plus optional local
// reordering), so every parallel pair carries an exact reference translation.

#include <cstdint>
#include <string>
#include <vector>

#include "camlmlab/errors.hpp"
#include "camlmlab/rng.hpp"

namespace camlmlab {

struct Vocabulary {
    static constexpr int kPad = 0;
    static constexpr int kMask = 1;
    static constexpr int kCls = 2;
    static constexpr int kSep = 3;
    static constexpr int kNumSpecials = 4;

    int languages = 2;
    int range_size = 258;  // content tokens per language

    int size() const { return kNumSpecials + languages * range_size; }
    int lang_begin(int lang) const { return kNumSpecials + lang * range_size; }
    int lang_end(int lang) const { return lang_begin(lang) + range_size; }
    bool is_special(int token) const { return token >= 0 && token < kNumSpecials; }
    // -1 for specials.
    int lang_of(int token) const {
        if (token < kNumSpecials || token >= size()) return -1;
        return (token - kNumSpecials) / range_size;
    }
    void validate() const {
        if (languages < 1 || languages > 8) throw ConfigError("vocabulary: languages must be 1..8");
        if (range_size < 1) throw ConfigError("vocabulary: empty content range");
    }
};

struct MonoSentence {
    std::vector<int> tokens;
    int lang = 0;
};

struct SentencePair {
    MonoSentence src;
    MonoSentence tgt;
    bool aligned = true;  // tgt is the cipher translation of src
};

// Token-level bijection src range -> tgt range. image[i] is the target token
// for source token lang_begin(src_lang) + i.
struct CipherSpec {
    int src_lang = 0;
    int tgt_lang = 1;
    std::vector<int> image;
    double swap_prob = 0.0;
    uint64_t seed = 0;

    int map_token(int token, const Vocabulary& vocab) const {
        const int base = vocab.lang_begin(src_lang);
        const int idx = token - base;
        if (idx < 0 || idx >= static_cast<int>(image.size()))
            throw LabelError("cipher: token " + std::to_string(token) +
                             " outside source language range");
        return image[idx];
    }
};

// Seeded random bijection between two equal-sized language ranges.
CipherSpec make_cipher(const Vocabulary& vocab, int src_lang, int tgt_lang, double swap_prob,
                       uint64_t seed);

// Bijection lang 0 -> lang k obtained by chaining adjacent-language ciphers.
CipherSpec make_chain_cipher(const Vocabulary& vocab, int src_lang, int tgt_lang,
                             double swap_prob, uint64_t seed);

MonoSentence gen_mono_sentence(const Vocabulary& vocab, int lang, int len_min, int len_max,
                               double zipf_s, uint64_t seed);

// Applies the bijection, then swaps adjacent disjoint token pairs each with
// probability swap_prob. Deterministic in (sentence, spec.seed).
MonoSentence cipher_translate(const MonoSentence& s, const CipherSpec& spec,
                              const Vocabulary& vocab);

struct CorpusConfig {
    int languages = 2;
    int range_size = 258;
    double zipf_s = 1.1;
    int len_min = 5;
    int len_max = 12;
    double swap_prob = 0.1;
    int parallel_pairs = 20000;
    int mono_sentences = 40000;  // per language
    int heldout_pairs = 256;
    uint64_t seed = 42;

    Vocabulary vocab() const { return Vocabulary{languages, range_size}; }
    void validate() const;
};

struct CorpusPaths {
    std::string parallel;
    std::vector<std::string> mono;  // one per language
    std::string heldout;
};

// Writes parallel, per-language monolingual, and held-out parallel corpus
// files under out_dir. Held-out pairs are disjoint from training pairs.
// Byte-identical for identical (config, seed).
CorpusPaths gen_corpora(const CorpusConfig& config, const std::string& out_dir);

// Names the files gen_corpora would produce (without generating).
CorpusPaths corpus_paths(const CorpusConfig& config, const std::string& dir);

std::vector<MonoSentence> read_mono_corpus(const std::string& path);
std::vector<SentencePair> read_parallel_corpus(const std::string& path);
void write_mono_corpus(const std::string& path, const std::vector<MonoSentence>& sentences);
void write_parallel_corpus(const std::string& path, const std::vector<SentencePair>& pairs);

// Cipher used by a corpus config for languages (0 -> lang); derived from the
// master seed so evaluation code can rebuild ground truth without files.
CipherSpec corpus_cipher(const CorpusConfig& config, int tgt_lang);

}  // namespace camlmlab
