#pragma once

// Visibility-matrix construction for the cross-lingual objectives. These work
// on bare position-index sets so the same code serves batch builders, the
// inspect-mask command, and the golden tests on the worked examples.

#include <vector>

#include "camlmlab/batch.hpp"

namespace camlmlab {

// Builds the n x n visibility matrix for a parallel pair split into a source
// segment and a target segment (specials count as non-masked members of the
// segment they are assigned to). masked_* must be subsets of their segments.
BoolMatrix camlm_attention_mask(int n, const std::vector<int>& src_idx,
                                const std::vector<int>& tgt_idx,
                                const std::vector<int>& masked_src,
                                const std::vector<int>& masked_tgt, MaskMode mode);

// Stage-1 matrix: source rows see all source positions; placeholder row i
// sees all source positions plus itself only.
BoolMatrix btmlm_stage1_attention_mask(int n, const std::vector<int>& src_idx,
                                       const std::vector<int>& placeholder_idx);

// Transitive closure of the visibility relation within `hops` attention
// layers (row -> column reachability, self always included). Oracle for the
// multi-layer leakage checks.
BoolMatrix reachability(const BoolMatrix& allowed, int hops);

// Renders the matrix as a 0/1 grid with per-position labels.
std::string format_mask_grid(const BoolMatrix& m, const std::vector<std::string>& labels);

}  // namespace camlmlab
