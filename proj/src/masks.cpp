#include "camlmlab/masks.hpp"

#include <algorithm>
#include <string>

namespace camlmlab {

namespace {

void check_segments(int n, const std::vector<int>& src_idx, const std::vector<int>& tgt_idx,
                    const std::vector<int>& masked_src, const std::vector<int>& masked_tgt) {
    std::vector<int> tag(n, -1);
    for (int i : src_idx) {
        if (i < 0 || i >= n) throw ConfigError("mask: source index out of range");
        if (tag[i] != -1) throw ConfigError("mask: duplicate index in segments");
        tag[i] = 0;
    }
    for (int i : tgt_idx) {
        if (i < 0 || i >= n) throw ConfigError("mask: target index out of range");
        if (tag[i] != -1) throw ConfigError("mask: segments overlap at position " + std::to_string(i));
        tag[i] = 1;
    }
    for (int i = 0; i < n; ++i)
        if (tag[i] == -1) throw ConfigError("mask: position " + std::to_string(i) + " unassigned");
    for (int i : masked_src)
        if (i < 0 || i >= n || tag[i] != 0)
            throw ConfigError("mask: masked-src index " + std::to_string(i) + " not in source segment");
    for (int i : masked_tgt)
        if (i < 0 || i >= n || tag[i] != 1)
            throw ConfigError("mask: masked-tgt index " + std::to_string(i) + " not in target segment");
}

}  // namespace

BoolMatrix camlm_attention_mask(int n, const std::vector<int>& src_idx,
                                const std::vector<int>& tgt_idx,
                                const std::vector<int>& masked_src,
                                const std::vector<int>& masked_tgt, MaskMode mode) {
    check_segments(n, src_idx, tgt_idx, masked_src, masked_tgt);
    std::vector<uint8_t> is_masked(n, 0);
    for (int i : masked_src) is_masked[i] = 1;
    for (int i : masked_tgt) is_masked[i] = 1;

    BoolMatrix m(n);
    auto allow_set = [&](int row, const std::vector<int>& cols, bool skip_masked) {
        for (int c : cols)
            if (!skip_masked || !is_masked[c]) m.at(row, c) = 1;
    };
    const bool strict = mode == MaskMode::Strict;
    for (int r : src_idx) {
        if (is_masked[r]) {
            allow_set(r, tgt_idx, strict);
            m.at(r, r) = 1;
        } else {
            allow_set(r, src_idx, strict);
        }
    }
    for (int r : tgt_idx) {
        if (is_masked[r]) {
            allow_set(r, src_idx, strict);
            m.at(r, r) = 1;
        } else {
            allow_set(r, tgt_idx, strict);
        }
    }
    return m;
}

BoolMatrix btmlm_stage1_attention_mask(int n, const std::vector<int>& src_idx,
                                       const std::vector<int>& placeholder_idx) {
    std::vector<int> tag(n, -1);
    for (int i : src_idx) {
        if (i < 0 || i >= n) throw ConfigError("mask: source index out of range");
        tag[i] = 0;
    }
    for (int i : placeholder_idx) {
        if (i < 0 || i >= n) throw ConfigError("mask: placeholder index out of range");
        if (tag[i] == 0) throw ConfigError("mask: placeholder overlaps source");
        tag[i] = 1;
    }
    for (int i = 0; i < n; ++i)
        if (tag[i] == -1) throw ConfigError("mask: position " + std::to_string(i) + " unassigned");

    BoolMatrix m(n);
    for (int r : src_idx)
        for (int c : src_idx) m.at(r, c) = 1;
    for (int r : placeholder_idx) {
        for (int c : src_idx) m.at(r, c) = 1;
        m.at(r, r) = 1;
    }
    return m;
}

BoolMatrix reachability(const BoolMatrix& allowed, int hops) {
    const int n = allowed.n;
    // reach = union of allowed^k for k = 1..hops, with self included.
    BoolMatrix reach = allowed;
    for (int i = 0; i < n; ++i) reach.at(i, i) = 1;
    BoolMatrix frontier = reach;
    for (int h = 1; h < hops; ++h) {
        BoolMatrix next(n);
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < n; ++k)
                if (frontier.at(i, k))
                    for (int j = 0; j < n; ++j)
                        if (allowed.at(k, j)) next.at(i, j) = 1;
        bool changed = false;
        for (size_t i = 0; i < reach.cells.size(); ++i) {
            if (next.cells[i] && !reach.cells[i]) {
                reach.cells[i] = 1;
                changed = true;
            }
        }
        if (!changed) break;
        frontier = next;
    }
    return reach;
}

std::string format_mask_grid(const BoolMatrix& m, const std::vector<std::string>& labels) {
    size_t width = 1;
    for (const auto& l : labels) width = std::max(width, l.size());
    std::string out;
    out.append(width + 1, ' ');
    for (int c = 0; c < m.n; ++c) {
        std::string l = labels[c];
        out += l;
        out.append(width + 1 - l.size(), ' ');
    }
    out += '\n';
    for (int r = 0; r < m.n; ++r) {
        out += labels[r];
        out.append(width + 1 - labels[r].size(), ' ');
        for (int c = 0; c < m.n; ++c) {
            out += m.at(r, c) ? '1' : '0';
            out.append(width, ' ');
        }
        while (!out.empty() && out.back() == ' ') out.pop_back();
        out += '\n';
    }
    return out;
}

}  // namespace camlmlab
