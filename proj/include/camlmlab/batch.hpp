#pragma once

#include <cstdint>
#include <vector>

#include "camlmlab/errors.hpp"
#include "camlmlab/tensor.hpp"

namespace camlmlab {

enum class Segment : uint8_t { SRC, TGT, PSEUDO, SPECIAL };

enum class ObjectiveKind : uint8_t { MMLM = 0, TLM = 1, CAMLM = 2, BTMLM = 3 };

inline const char* objective_name(ObjectiveKind k) {
    switch (k) {
        case ObjectiveKind::MMLM: return "mmlm";
        case ObjectiveKind::TLM: return "tlm";
        case ObjectiveKind::CAMLM: return "camlm";
        case ObjectiveKind::BTMLM: return "btmlm";
    }
    return "?";
}

// strict: masked rows see only the opposite segment's non-masked positions
// plus themselves; non-masked rows stay within their own segment's non-masked
// positions. This keeps the conditional-independence factorization exact at
// any attention depth.
// figure: the worked-example form; masked rows see the full opposite segment
// plus themselves, non-masked rows see their full own segment.
enum class MaskMode : uint8_t { Strict, Figure };

// One training sequence: tokens, ids, visibility matrix, prediction set.
struct MaskedBatch {
    std::vector<int> tokens;
    std::vector<int> pos_ids;
    std::vector<int> lang_ids;
    BoolMatrix allowed;
    std::vector<int> predict_positions;  // ascending indices into tokens
    std::vector<int> labels;             // original token per predict position; empty
                                         // for stage-1 generation batches
    std::vector<Segment> segment;

    int n() const { return static_cast<int>(tokens.size()); }
    bool has_labels() const { return !labels.empty(); }
};

struct MaskingPolicy {
    double mask_rate = 0.15;
    double frac_mask = 0.8;
    double frac_random = 0.1;
    double frac_keep = 0.1;
    uint64_t seed = 0;

    void validate() const {
        if (mask_rate < 0.0 || mask_rate > 1.0)
            throw ConfigError("masking: mask_rate must be in [0,1]");
        const double s = frac_mask + frac_random + frac_keep;
        if (s < 1.0 - 1e-9 || s > 1.0 + 1e-9)
            throw ConfigError("masking: replace fractions must sum to 1");
        if (frac_mask < 0.0 || frac_random < 0.0 || frac_keep < 0.0)
            throw ConfigError("masking: negative replace fraction");
    }

    MaskingPolicy with_seed(uint64_t s) const {
        MaskingPolicy p = *this;
        p.seed = s;
        return p;
    }
};

}  // namespace camlmlab
