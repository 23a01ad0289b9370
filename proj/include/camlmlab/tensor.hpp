#pragma once

// Dense tensors with reverse-mode automatic differentiation. Scalar type is a
// template parameter: double is the default for tests and gradient checks,
// float is selectable for training speed. All reductions run in a fixed
// sequential row-major order so reruns are bit-identical.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "camlmlab/errors.hpp"
#include "camlmlab/rng.hpp"

namespace camlmlab {

// n x n attention visibility matrix: cell (r, c) == 1 means query row r may
// attend to key column c.
struct BoolMatrix {
    int n = 0;
    std::vector<uint8_t> cells;

    BoolMatrix() = default;
    explicit BoolMatrix(int n_, bool fill = false)
        : n(n_), cells(static_cast<size_t>(n_) * static_cast<size_t>(n_), fill ? 1 : 0) {}

    static BoolMatrix ones(int n) { return BoolMatrix(n, true); }

    uint8_t& at(int r, int c) { return cells[static_cast<size_t>(r) * n + c]; }
    uint8_t at(int r, int c) const { return cells[static_cast<size_t>(r) * n + c]; }

    bool operator==(const BoolMatrix& o) const { return n == o.n && cells == o.cells; }
};

template <typename S>
struct TensorData {
    std::vector<int> shape;
    std::vector<S> value;  // row-major
    std::vector<S> grad;   // empty until first accumulation
    bool requires_grad = false;
    uint64_t graph_id = 0;  // id of the creating graph, 0 for leaves

    size_t size() const { return value.size(); }
    int rank() const { return static_cast<int>(shape.size()); }
    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    S& at(int i, int j) { return value[static_cast<size_t>(i) * shape[1] + j]; }
    S at(int i, int j) const { return value[static_cast<size_t>(i) * shape[1] + j]; }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), S(0));
    }
    void zero_grad() { grad.assign(value.size(), S(0)); }
};

template <typename S>
using Tensor = std::shared_ptr<TensorData<S>>;

namespace detail {
inline size_t shape_numel(const std::vector<int>& shape) {
    size_t n = 1;
    for (int e : shape) {
        if (e < 0) throw ShapeError("negative extent in tensor shape");
        n *= static_cast<size_t>(e);
    }
    return n;
}
inline std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}
}  // namespace detail

template <typename S>
Tensor<S> make_tensor(std::vector<int> shape, bool requires_grad = false) {
    auto t = std::make_shared<TensorData<S>>();
    t->value.assign(detail::shape_numel(shape), S(0));
    t->shape = std::move(shape);
    t->requires_grad = requires_grad;
    return t;
}

template <typename S>
Tensor<S> tensor_from(std::vector<int> shape, std::vector<S> data, bool requires_grad = false) {
    if (detail::shape_numel(shape) != data.size())
        throw ShapeError("data length does not match shape " + detail::shape_str(shape));
    auto t = std::make_shared<TensorData<S>>();
    t->shape = std::move(shape);
    t->value = std::move(data);
    t->requires_grad = requires_grad;
    return t;
}

template <typename S>
S scalar_value(const Tensor<S>& t) {
    if (t->size() != 1) throw ShapeError("tensor is not a scalar");
    return t->value[0];
}

// ---------------------------------------------------------------------------
// gemm kernels (accumulating, raw pointers, fixed loop order)

namespace detail {

// C[m,n] += A[m,k] @ B[k,n]
template <typename S>
void gemm_nn_acc(int m, int k, int n, const S* A, const S* B, S* C) {
    for (int i = 0; i < m; ++i) {
        S* crow = C + static_cast<size_t>(i) * n;
        const S* arow = A + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const S a = arow[p];
            if (a == S(0)) continue;
            const S* brow = B + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

// C[m,n] += A[m,k] @ B[n,k]^T
template <typename S>
void gemm_nt_acc(int m, int k, int n, const S* A, const S* B, S* C) {
    for (int i = 0; i < m; ++i) {
        const S* arow = A + static_cast<size_t>(i) * k;
        S* crow = C + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const S* brow = B + static_cast<size_t>(j) * k;
            S acc = S(0);
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// C[m,n] += A[p,m]^T @ B[p,n]
template <typename S>
void gemm_tn_acc(int p_extent, int m, int n, const S* A, const S* B, S* C) {
    for (int p = 0; p < p_extent; ++p) {
        const S* arow = A + static_cast<size_t>(p) * m;
        const S* brow = B + static_cast<size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const S a = arow[i];
            if (a == S(0)) continue;
            S* crow = C + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Graph: topologically ordered tape of executed ops.

template <typename S>
class Graph {
public:
    explicit Graph(bool recording = true) : recording_(recording), id_(next_id()++) {}

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool recording() const { return recording_; }
    uint64_t id() const { return id_; }
    size_t node_count() const { return tape_.size(); }

    // Creates an op output. requires_grad is inherited from the inputs so the
    // backward pass knows which subgraphs to visit.
    Tensor<S> fresh(std::vector<int> shape, bool needs_grad) {
        auto t = make_tensor<S>(std::move(shape), recording_ && needs_grad);
        t->graph_id = id_;
        return t;
    }

    void record(const Tensor<S>& out, std::function<void()> backward_fn) {
        if (recording_ && out->requires_grad) tape_.push_back(std::move(backward_fn));
    }

    // Populates gradients on every requires_grad tensor reachable from loss,
    // visiting nodes in exact reverse execution (= topological) order.
    void backward(const Tensor<S>& loss) {
        if (loss->size() != 1) throw ShapeError("backward requires a scalar loss");
        if (loss->graph_id != id_)
            throw StateError("backward called on a loss detached from this graph");
        if (!recording_) throw StateError("backward called on a non-recording graph");
        if (backward_done_) throw StateError("backward called twice without reset");
        backward_done_ = true;
        loss->ensure_grad();
        loss->grad[0] = S(1);
        for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
    }

private:
    static std::atomic<uint64_t>& next_id() {
        static std::atomic<uint64_t> counter{1};
        return counter;
    }

    std::vector<std::function<void()>> tape_;
    bool recording_;
    bool backward_done_ = false;
    uint64_t id_;
};

namespace detail {

template <typename S>
void check_finite(const Tensor<S>& t, const char* op) {
    for (const S v : t->value) {
        if (!std::isfinite(static_cast<double>(v)))
            throw NumericsError(std::string(op) + " produced a non-finite value");
    }
}

template <typename S>
bool needs(const Tensor<S>& t) {
    return t->requires_grad;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops

template <typename S>
Tensor<S> add(Graph<S>& g, const Tensor<S>& a, const Tensor<S>& b) {
    if (a->shape != b->shape)
        throw ShapeError("add: shape mismatch " + detail::shape_str(a->shape) + " vs " +
                         detail::shape_str(b->shape));
    auto out = g.fresh(a->shape, detail::needs(a) || detail::needs(b));
    for (size_t i = 0; i < a->size(); ++i) out->value[i] = a->value[i] + b->value[i];
    detail::check_finite(out, "add");
    g.record(out, [a, b, out] {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (size_t i = 0; i < b->size(); ++i) b->grad[i] += out->grad[i];
        }
    });
    return out;
}

template <typename S>
Tensor<S> mul(Graph<S>& g, const Tensor<S>& a, const Tensor<S>& b) {
    if (a->shape != b->shape) throw ShapeError("mul: shape mismatch");
    auto out = g.fresh(a->shape, detail::needs(a) || detail::needs(b));
    for (size_t i = 0; i < a->size(); ++i) out->value[i] = a->value[i] * b->value[i];
    detail::check_finite(out, "mul");
    g.record(out, [a, b, out] {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i] * b->value[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (size_t i = 0; i < b->size(); ++i) b->grad[i] += out->grad[i] * a->value[i];
        }
    });
    return out;
}

template <typename S>
Tensor<S> scale(Graph<S>& g, const Tensor<S>& a, S c) {
    auto out = g.fresh(a->shape, detail::needs(a));
    for (size_t i = 0; i < a->size(); ++i) out->value[i] = a->value[i] * c;
    detail::check_finite(out, "scale");
    g.record(out, [a, out, c] {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i] * c;
    });
    return out;
}

// x[m,n] + row vector b[n], broadcast over rows.
template <typename S>
Tensor<S> add_rowvec(Graph<S>& g, const Tensor<S>& x, const Tensor<S>& b) {
    if (x->rank() != 2 || b->rank() != 1 || x->shape[1] != b->shape[0])
        throw ShapeError("add_rowvec: expected [m,n] + [n]");
    const int m = x->shape[0], n = x->shape[1];
    auto out = g.fresh(x->shape, detail::needs(x) || detail::needs(b));
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out->at(i, j) = x->at(i, j) + b->value[j];
    detail::check_finite(out, "add_rowvec");
    g.record(out, [x, b, out, m, n] {
        if (x->requires_grad) {
            x->ensure_grad();
            for (size_t i = 0; i < x->size(); ++i) x->grad[i] += out->grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    b->grad[j] += out->grad[static_cast<size_t>(i) * n + j];
        }
    });
    return out;
}

template <typename S>
Tensor<S> matmul(Graph<S>& g, const Tensor<S>& a, const Tensor<S>& b) {
    if (a->rank() != 2 || b->rank() != 2 || a->shape[1] != b->shape[0])
        throw ShapeError("matmul: inner extents do not match: " + detail::shape_str(a->shape) +
                         " @ " + detail::shape_str(b->shape));
    const int m = a->shape[0], k = a->shape[1], n = b->shape[1];
    auto out = g.fresh({m, n}, detail::needs(a) || detail::needs(b));
    detail::gemm_nn_acc(m, k, n, a->value.data(), b->value.data(), out->value.data());
    detail::check_finite(out, "matmul");
    g.record(out, [a, b, out, m, k, n] {
        if (a->requires_grad) {  // dA += dC @ B^T
            a->ensure_grad();
            detail::gemm_nt_acc(m, n, k, out->grad.data(), b->value.data(), a->grad.data());
        }
        if (b->requires_grad) {  // dB += A^T @ dC
            b->ensure_grad();
            detail::gemm_tn_acc(m, k, n, a->value.data(), out->grad.data(), b->grad.data());
        }
    });
    return out;
}

// a[m,k] @ b[n,k]^T -> [m,n]
template <typename S>
Tensor<S> matmul_nt(Graph<S>& g, const Tensor<S>& a, const Tensor<S>& b) {
    if (a->rank() != 2 || b->rank() != 2 || a->shape[1] != b->shape[1])
        throw ShapeError("matmul_nt: inner extents do not match");
    const int m = a->shape[0], k = a->shape[1], n = b->shape[0];
    auto out = g.fresh({m, n}, detail::needs(a) || detail::needs(b));
    detail::gemm_nt_acc(m, k, n, a->value.data(), b->value.data(), out->value.data());
    detail::check_finite(out, "matmul_nt");
    g.record(out, [a, b, out, m, k, n] {
        if (a->requires_grad) {  // dA += dC @ B
            a->ensure_grad();
            detail::gemm_nn_acc(m, n, k, out->grad.data(), b->value.data(), a->grad.data());
        }
        if (b->requires_grad) {  // dB += dC^T @ A
            b->ensure_grad();
            detail::gemm_tn_acc(m, n, k, out->grad.data(), a->value.data(), b->grad.data());
        }
    });
    return out;
}

template <typename S>
Tensor<S> slice_cols(Graph<S>& g, const Tensor<S>& x, int c0, int c1) {
    if (x->rank() != 2 || c0 < 0 || c1 > x->shape[1] || c0 >= c1)
        throw ShapeError("slice_cols: bad column range");
    const int m = x->shape[0], n = x->shape[1], w = c1 - c0;
    auto out = g.fresh({m, w}, detail::needs(x));
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j) out->at(i, j) = x->at(i, c0 + j);
    g.record(out, [x, out, m, w, n, c0] {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
                x->grad[static_cast<size_t>(i) * n + c0 + j] +=
                    out->grad[static_cast<size_t>(i) * w + j];
    });
    return out;
}

template <typename S>
Tensor<S> concat_cols(Graph<S>& g, const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts");
    const int m = parts[0]->shape[0];
    int total = 0;
    bool needs_grad = false;
    for (const auto& p : parts) {
        if (p->rank() != 2 || p->shape[0] != m) throw ShapeError("concat_cols: row mismatch");
        total += p->shape[1];
        needs_grad = needs_grad || detail::needs(p);
    }
    auto out = g.fresh({m, total}, needs_grad);
    int off = 0;
    for (const auto& p : parts) {
        const int w = p->shape[1];
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j) out->at(i, off + j) = p->at(i, j);
        off += w;
    }
    g.record(out, [parts, out, m, total] {
        int off2 = 0;
        for (const auto& p : parts) {
            const int w = p->shape[1];
            if (p->requires_grad) {
                p->ensure_grad();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < w; ++j)
                        p->grad[static_cast<size_t>(i) * w + j] +=
                            out->grad[static_cast<size_t>(i) * total + off2 + j];
            }
            off2 += w;
        }
    });
    return out;
}

// Selects rows x[idx[0]], x[idx[1]], ... Duplicate indices accumulate
// additively in the backward pass.
template <typename S>
Tensor<S> gather_rows(Graph<S>& g, const Tensor<S>& x, const std::vector<int>& idx) {
    if (x->rank() != 2) throw ShapeError("gather_rows: expected rank-2 input");
    const int rows = x->shape[0], n = x->shape[1];
    for (int r : idx)
        if (r < 0 || r >= rows) throw LabelError("gather_rows: row index out of range");
    auto out = g.fresh({static_cast<int>(idx.size()), n}, detail::needs(x));
    for (size_t i = 0; i < idx.size(); ++i)
        for (int j = 0; j < n; ++j) out->value[i * n + j] = x->at(idx[i], j);
    g.record(out, [x, out, idx, n] {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (size_t i = 0; i < idx.size(); ++i)
            for (int j = 0; j < n; ++j)
                x->grad[static_cast<size_t>(idx[i]) * n + j] += out->grad[i * n + j];
    });
    return out;
}

template <typename S>
Tensor<S> gather_elems(Graph<S>& g, const Tensor<S>& x,
                       const std::vector<std::pair<int, int>>& at) {
    if (x->rank() != 2) throw ShapeError("gather_elems: expected rank-2 input");
    const int m = x->shape[0], n = x->shape[1];
    for (auto [i, j] : at)
        if (i < 0 || i >= m || j < 0 || j >= n)
            throw LabelError("gather_elems: index out of range");
    auto out = g.fresh({static_cast<int>(at.size())}, detail::needs(x));
    for (size_t k = 0; k < at.size(); ++k) out->value[k] = x->at(at[k].first, at[k].second);
    g.record(out, [x, out, at, n] {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (size_t k = 0; k < at.size(); ++k)
            x->grad[static_cast<size_t>(at[k].first) * n + at[k].second] += out->grad[k];
    });
    return out;
}

// Stacks k vectors of identical length into a [k, n] matrix.
template <typename S>
Tensor<S> stack_rows(Graph<S>& g, const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw ShapeError("stack_rows: no parts");
    const int n = static_cast<int>(parts[0]->size());
    bool needs_grad = false;
    for (const auto& p : parts) {
        if (p->rank() != 1 || static_cast<int>(p->size()) != n)
            throw ShapeError("stack_rows: length mismatch");
        needs_grad = needs_grad || detail::needs(p);
    }
    auto out = g.fresh({static_cast<int>(parts.size()), n}, needs_grad);
    for (size_t i = 0; i < parts.size(); ++i)
        for (int j = 0; j < n; ++j) out->value[i * n + j] = parts[i]->value[j];
    g.record(out, [parts, out, n] {
        for (size_t i = 0; i < parts.size(); ++i) {
            if (!parts[i]->requires_grad) continue;
            parts[i]->ensure_grad();
            for (int j = 0; j < n; ++j) parts[i]->grad[j] += out->grad[i * n + j];
        }
    });
    return out;
}

// Row-wise softmax restricted to the allowed set; disallowed entries are
// exactly zero. A fully-disallowed row is a hard error, never a silent
// uniform fallback.
template <typename S>
Tensor<S> masked_softmax(Graph<S>& g, const Tensor<S>& scores, const BoolMatrix& allowed) {
    if (scores->rank() != 2 || scores->shape[0] != scores->shape[1])
        throw ShapeError("masked_softmax: expected square scores");
    const int n = scores->shape[0];
    if (allowed.n != n) throw ShapeError("masked_softmax: allowed-matrix extent mismatch");
    auto out = g.fresh(scores->shape, detail::needs(scores));
    for (int i = 0; i < n; ++i) {
        S maxv = S(0);
        bool any = false;
        for (int j = 0; j < n; ++j) {
            if (!allowed.at(i, j)) continue;
            const S v = scores->at(i, j);
            if (!any || v > maxv) maxv = v;
            any = true;
        }
        if (!any)
            throw DegenerateRowError("masked_softmax: row " + std::to_string(i) +
                                     " has no allowed entries");
        S sum = S(0);
        for (int j = 0; j < n; ++j) {
            if (allowed.at(i, j)) {
                const S e = std::exp(scores->at(i, j) - maxv);
                out->at(i, j) = e;
                sum += e;
            } else {
                out->at(i, j) = S(0);
            }
        }
        for (int j = 0; j < n; ++j)
            if (allowed.at(i, j)) out->at(i, j) /= sum;
    }
    detail::check_finite(out, "masked_softmax");
    g.record(out, [scores, out, allowed, n] {
        if (!scores->requires_grad) return;
        scores->ensure_grad();
        for (int i = 0; i < n; ++i) {
            S dot = S(0);
            for (int j = 0; j < n; ++j)
                if (allowed.at(i, j))
                    dot += out->grad[static_cast<size_t>(i) * n + j] * out->at(i, j);
            for (int j = 0; j < n; ++j) {
                if (!allowed.at(i, j)) continue;
                const size_t k = static_cast<size_t>(i) * n + j;
                scores->grad[k] += out->at(i, j) * (out->grad[k] - dot);
            }
        }
    });
    return out;
}

// tanh-approximation form with constant 0.044715.
template <typename S>
Tensor<S> gelu(Graph<S>& g, const Tensor<S>& x) {
    constexpr double kSqrt2OverPi = 0.7978845608028653558798921198687;
    constexpr double kCubic = 0.044715;
    auto out = g.fresh(x->shape, detail::needs(x));
    for (size_t i = 0; i < x->size(); ++i) {
        const double v = static_cast<double>(x->value[i]);
        const double u = kSqrt2OverPi * (v + kCubic * v * v * v);
        out->value[i] = static_cast<S>(0.5 * v * (1.0 + std::tanh(u)));
    }
    detail::check_finite(out, "gelu");
    g.record(out, [x, out] {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (size_t i = 0; i < x->size(); ++i) {
            const double v = static_cast<double>(x->value[i]);
            const double u = kSqrt2OverPi * (v + kCubic * v * v * v);
            const double t = std::tanh(u);
            const double du = kSqrt2OverPi * (1.0 + 3.0 * kCubic * v * v);
            const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
            x->grad[i] += out->grad[i] * static_cast<S>(d);
        }
    });
    return out;
}

// Per-last-axis normalization with epsilon 1e-6, then affine gain/bias.
template <typename S>
Tensor<S> layer_norm(Graph<S>& g, const Tensor<S>& x, const Tensor<S>& gain,
                     const Tensor<S>& bias) {
    if (x->rank() < 1) throw ShapeError("layer_norm: scalar input");
    const int h = x->shape.back();
    if (gain->rank() != 1 || gain->shape[0] != h || bias->rank() != 1 || bias->shape[0] != h)
        throw ShapeError("layer_norm: gain/bias extent must equal last axis");
    const int rows = static_cast<int>(x->size()) / h;
    constexpr double kEps = 1e-6;
    auto out = g.fresh(x->shape, detail::needs(x) || detail::needs(gain) || detail::needs(bias));
    std::vector<S> inv_std(rows), mean(rows);
    for (int r = 0; r < rows; ++r) {
        const S* row = x->value.data() + static_cast<size_t>(r) * h;
        S mu = S(0);
        for (int j = 0; j < h; ++j) mu += row[j];
        mu /= S(h);
        S var = S(0);
        for (int j = 0; j < h; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= S(h);
        const S is = S(1) / std::sqrt(var + S(kEps));
        mean[r] = mu;
        inv_std[r] = is;
        S* orow = out->value.data() + static_cast<size_t>(r) * h;
        for (int j = 0; j < h; ++j)
            orow[j] = (row[j] - mu) * is * gain->value[j] + bias->value[j];
    }
    detail::check_finite(out, "layer_norm");
    g.record(out, [x, gain, bias, out, mean, inv_std, rows, h] {
        for (int r = 0; r < rows; ++r) {
            const S* row = x->value.data() + static_cast<size_t>(r) * h;
            const S* dout = out->grad.data() + static_cast<size_t>(r) * h;
            const S mu = mean[r], is = inv_std[r];
            if (gain->requires_grad || bias->requires_grad) {
                gain->ensure_grad();
                bias->ensure_grad();
                for (int j = 0; j < h; ++j) {
                    gain->grad[j] += dout[j] * (row[j] - mu) * is;
                    bias->grad[j] += dout[j];
                }
            }
            if (x->requires_grad) {
                x->ensure_grad();
                // dxhat = dout * gain; dx = is * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
                S sum_dxhat = S(0), sum_dxhat_xhat = S(0);
                for (int j = 0; j < h; ++j) {
                    const S dxh = dout[j] * gain->value[j];
                    const S xh = (row[j] - mu) * is;
                    sum_dxhat += dxh;
                    sum_dxhat_xhat += dxh * xh;
                }
                S* dx = x->grad.data() + static_cast<size_t>(r) * h;
                for (int j = 0; j < h; ++j) {
                    const S dxh = dout[j] * gain->value[j];
                    const S xh = (row[j] - mu) * is;
                    dx[j] += is * (dxh - sum_dxhat / S(h) - xh * sum_dxhat_xhat / S(h));
                }
            }
        }
    });
    return out;
}

// Mean over rows of -log softmax(logits)[label], max-subtraction stabilized.
template <typename S>
Tensor<S> cross_entropy_logits(Graph<S>& g, const Tensor<S>& logits,
                               const std::vector<int>& labels) {
    if (logits->rank() != 2) throw ShapeError("cross_entropy_logits: expected [n,V] logits");
    const int n = logits->shape[0], v = logits->shape[1];
    if (static_cast<int>(labels.size()) != n)
        throw ShapeError("cross_entropy_logits: label count mismatch");
    if (n == 0) throw ShapeError("cross_entropy_logits: empty batch");
    for (int lab : labels)
        if (lab < 0 || lab >= v)
            throw LabelError("cross_entropy_logits: label " + std::to_string(lab) +
                             " outside [0," + std::to_string(v) + ")");
    auto probs = std::make_shared<std::vector<S>>(logits->value.size());
    S total = S(0);
    for (int i = 0; i < n; ++i) {
        const S* row = logits->value.data() + static_cast<size_t>(i) * v;
        S maxv = row[0];
        for (int j = 1; j < v; ++j) maxv = std::max(maxv, row[j]);
        S sum = S(0);
        for (int j = 0; j < v; ++j) {
            const S e = std::exp(row[j] - maxv);
            (*probs)[static_cast<size_t>(i) * v + j] = e;
            sum += e;
        }
        for (int j = 0; j < v; ++j) (*probs)[static_cast<size_t>(i) * v + j] /= sum;
        total += std::log(sum) - (row[labels[i]] - maxv);
    }
    auto out = g.fresh({1}, detail::needs(logits));
    out->value[0] = total / S(n);
    detail::check_finite(out, "cross_entropy_logits");
    g.record(out, [logits, out, probs, labels, n, v] {
        if (!logits->requires_grad) return;
        logits->ensure_grad();
        const S d = out->grad[0] / S(n);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < v; ++j) {
                const size_t k = static_cast<size_t>(i) * v + j;
                logits->grad[k] += d * ((*probs)[k] - (j == labels[i] ? S(1) : S(0)));
            }
        }
    });
    return out;
}

template <typename S>
Tensor<S> sum(Graph<S>& g, const Tensor<S>& x) {
    auto out = g.fresh({1}, detail::needs(x));
    S acc = S(0);
    for (const S v : x->value) acc += v;
    out->value[0] = acc;
    detail::check_finite(out, "sum");
    g.record(out, [x, out] {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (size_t i = 0; i < x->size(); ++i) x->grad[i] += out->grad[0];
    });
    return out;
}

// Column means of a [m,n] matrix -> [n].
template <typename S>
Tensor<S> mean_axis0(Graph<S>& g, const Tensor<S>& x) {
    if (x->rank() != 2 || x->shape[0] == 0) throw ShapeError("mean_axis0: expected nonempty [m,n]");
    const int m = x->shape[0], n = x->shape[1];
    auto out = g.fresh({n}, detail::needs(x));
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out->value[j] += x->at(i, j);
    for (int j = 0; j < n; ++j) out->value[j] /= S(m);
    detail::check_finite(out, "mean_axis0");
    g.record(out, [x, out, m, n] {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                x->grad[static_cast<size_t>(i) * n + j] += out->grad[j] / S(m);
    });
    return out;
}

// Mean of scalar inputs -> scalar. Used to average per-sentence losses.
template <typename S>
Tensor<S> mean_scalars(Graph<S>& g, const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw ShapeError("mean_scalars: no parts");
    bool needs_grad = false;
    S acc = S(0);
    for (const auto& p : parts) {
        if (p->size() != 1) throw ShapeError("mean_scalars: non-scalar part");
        acc += p->value[0];
        needs_grad = needs_grad || detail::needs(p);
    }
    auto out = g.fresh({1}, needs_grad);
    out->value[0] = acc / S(parts.size());
    detail::check_finite(out, "mean_scalars");
    g.record(out, [parts, out] {
        const S d = out->grad[0] / S(parts.size());
        for (const auto& p : parts) {
            if (!p->requires_grad) continue;
            p->ensure_grad();
            p->grad[0] += d;
        }
    });
    return out;
}

template <typename S>
Tensor<S> softplus(Graph<S>& g, const Tensor<S>& x) {
    auto out = g.fresh(x->shape, detail::needs(x));
    for (size_t i = 0; i < x->size(); ++i) {
        const double v = static_cast<double>(x->value[i]);
        out->value[i] = static_cast<S>(std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))));
    }
    detail::check_finite(out, "softplus");
    g.record(out, [x, out] {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (size_t i = 0; i < x->size(); ++i) {
            const double v = static_cast<double>(x->value[i]);
            x->grad[i] += out->grad[i] * static_cast<S>(1.0 / (1.0 + std::exp(-v)));
        }
    });
    return out;
}

// Divides each row by its L2 norm. Zero-norm rows are a hard error.
template <typename S>
Tensor<S> row_l2_normalize(Graph<S>& g, const Tensor<S>& x) {
    if (x->rank() != 2) throw ShapeError("row_l2_normalize: expected [m,n]");
    const int m = x->shape[0], n = x->shape[1];
    auto norms = std::make_shared<std::vector<S>>(m);
    auto out = g.fresh(x->shape, detail::needs(x));
    for (int i = 0; i < m; ++i) {
        S sq = S(0);
        for (int j = 0; j < n; ++j) sq += x->at(i, j) * x->at(i, j);
        const S nr = std::sqrt(sq);
        if (!(nr > S(0)))
            throw NumericsError("row_l2_normalize: zero-norm row " + std::to_string(i));
        (*norms)[i] = nr;
        for (int j = 0; j < n; ++j) out->at(i, j) = x->at(i, j) / nr;
    }
    detail::check_finite(out, "row_l2_normalize");
    g.record(out, [x, out, norms, m, n] {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int i = 0; i < m; ++i) {
            S dot = S(0);
            for (int j = 0; j < n; ++j)
                dot += out->grad[static_cast<size_t>(i) * n + j] * out->at(i, j);
            for (int j = 0; j < n; ++j) {
                const size_t k = static_cast<size_t>(i) * n + j;
                x->grad[k] += (out->grad[k] - dot * out->at(i, j)) / (*norms)[i];
            }
        }
    });
    return out;
}

// Inverted dropout; identity when rate == 0 (no graph node recorded).
template <typename S>
Tensor<S> dropout(Graph<S>& g, const Tensor<S>& x, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must be in [0,1)");
    if (rate == 0.0) return x;
    auto mask = std::make_shared<std::vector<S>>(x->size());
    const S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
    auto out = g.fresh(x->shape, detail::needs(x));
    for (size_t i = 0; i < x->size(); ++i) {
        (*mask)[i] = rng.bernoulli(rate) ? S(0) : keep_scale;
        out->value[i] = x->value[i] * (*mask)[i];
    }
    detail::check_finite(out, "dropout");
    g.record(out, [x, out, mask] {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (size_t i = 0; i < x->size(); ++i) x->grad[i] += out->grad[i] * (*mask)[i];
    });
    return out;
}

// ---------------------------------------------------------------------------
// Central finite-difference gradient verification.
//
// f is evaluated first under a recording graph (autodiff gradient on x), then
// repeatedly with x perturbed elementwise under non-recording graphs. Returns
// the max relative error with denominator max(|autodiff|, |central|, 1e-8).
template <typename S>
S finite_diff_check(const std::function<Tensor<S>(Graph<S>&)>& f, const Tensor<S>& x, S step) {
    if (!x->requires_grad) throw StateError("finite_diff_check: x must require grad");
    x->zero_grad();
    {
        Graph<S> g(true);
        auto loss = f(g);
        g.backward(loss);
    }
    std::vector<S> autograd = x->grad;
    if (autograd.empty()) autograd.assign(x->size(), S(0));

    S max_rel = S(0);
    for (size_t i = 0; i < x->size(); ++i) {
        const S saved = x->value[i];
        x->value[i] = saved + step;
        S up, down;
        {
            Graph<S> g(false);
            up = scalar_value(f(g));
        }
        x->value[i] = saved - step;
        {
            Graph<S> g(false);
            down = scalar_value(f(g));
        }
        x->value[i] = saved;
        const S fd = (up - down) / (S(2) * step);
        const S denom = std::max({std::abs(fd), std::abs(autograd[i]), S(1e-8)});
        max_rel = std::max(max_rel, std::abs(fd - autograd[i]) / denom);
    }
    return max_rel;
}

}  // namespace camlmlab
