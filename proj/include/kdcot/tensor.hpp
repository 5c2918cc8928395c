#pragma once

// Dense tensors with reverse-mode automatic differentiation. The tape owns
// every node created during a forward pass; backward walks the tape in
// reverse creation order, which is a valid topological order because a node
// can only consume previously created nodes.
//
// The scalar type is a template parameter: training runs on float, gradient
// checking runs the same code on double.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "kdcot/common.hpp"

namespace kdcot {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Row-major dense tensor.
template <typename T>
struct TensorData {
    Shape shape;
    std::vector<T> data;

    TensorData() = default;
    TensorData(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (shape_numel(shape) != static_cast<int64_t>(data.size()))
            throw ValidationError("TensorData: shape " + shape_str(shape) +
                                  " does not match data length " + std::to_string(data.size()));
    }

    static TensorData zeros(Shape s) {
        auto n = shape_numel(s);
        return TensorData(std::move(s), std::vector<T>(static_cast<size_t>(n), T(0)));
    }
    static TensorData full(Shape s, T v) {
        auto n = shape_numel(s);
        return TensorData(std::move(s), std::vector<T>(static_cast<size_t>(n), v));
    }
    static TensorData scalar(T v) { return TensorData({}, {v}); }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t rows() const { return shape.size() >= 2 ? shape[shape.size() - 2] : 1; }
    int64_t cols() const { return shape.empty() ? 1 : shape.back(); }

    template <typename U>
    TensorData<U> cast() const {
        std::vector<U> d(data.size());
        for (size_t i = 0; i < data.size(); ++i) d[i] = static_cast<U>(data[i]);
        return TensorData<U>(shape, std::move(d));
    }
};

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename T>
class Tape {
public:
    using NodeId = int;

    struct Node {
        TensorData<T> value;
        std::vector<T> grad;  // allocated on first use during backward
        bool requires_grad = false;
        std::function<void(Tape&)> backprop;  // empty for leaves/constants
    };

    // ---- graph construction -------------------------------------------------

    NodeId leaf(TensorData<T> v, bool requires_grad) {
        check_finite(v, "leaf");
        return push(std::move(v), requires_grad, {});
    }

    NodeId constant(TensorData<T> v) { return leaf(std::move(v), false); }

    const TensorData<T>& value(NodeId id) const { return nodes_.at(id).value; }
    bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
    size_t size() const { return nodes_.size(); }

    // Gradient of the last backward() call w.r.t. node `id`. Untouched
    // requires_grad leaves hold zeros.
    const std::vector<T>& grad(NodeId id) const {
        const Node& n = nodes_.at(id);
        if (!n.requires_grad) throw ValidationError("grad: node does not require gradients");
        if (n.grad.empty()) {
            grad_scratch_.assign(static_cast<size_t>(n.value.numel()), T(0));
            return grad_scratch_;
        }
        return n.grad;
    }

    // ---- primitives ----------------------------------------------------------

    // a: [m,k], b: [k,n] -> [m,n]
    NodeId matmul(NodeId a, NodeId b) {
        const auto& av = value(a);
        const auto& bv = value(b);
        if (av.shape.size() != 2 || bv.shape.size() != 2 || av.shape[1] != bv.shape[0])
            throw ValidationError("matmul: incompatible shapes " + shape_str(av.shape) + " x " +
                                  shape_str(bv.shape));
        const int64_t m = av.shape[0], k = av.shape[1], n = bv.shape[1];
        TensorData<T> out = TensorData<T>::zeros({m, n});
        MatMap<T>(out.data.data(), m, n).noalias() =
            ConstMatMap<T>(av.data.data(), m, k) * ConstMatMap<T>(bv.data.data(), k, n);
        check_finite(out, "matmul");
        return push(std::move(out), requires_grad(a) || requires_grad(b),
                    [a, b, m, k, n](Tape& t) {
                        auto& self = t.nodes_.back_node();
                        const T* g = self.grad.data();
                        ConstMatMap<T> gm(g, m, n);
                        if (t.requires_grad(a)) {
                            ConstMatMap<T> bm(t.value(b).data.data(), k, n);
                            MatMap<T>(t.grad_buf(a), m, k).noalias() += gm * bm.transpose();
                        }
                        if (t.requires_grad(b)) {
                            ConstMatMap<T> am(t.value(a).data.data(), m, k);
                            MatMap<T>(t.grad_buf(b), k, n).noalias() += am.transpose() * gm;
                        }
                    });
    }

    NodeId add(NodeId a, NodeId b) { return binary_elementwise(a, b, /*mul=*/false); }
    NodeId mul(NodeId a, NodeId b) { return binary_elementwise(a, b, /*mul=*/true); }

    // x: [m,n] + v: [n] broadcast over rows.
    NodeId add_rowvec(NodeId a, NodeId v) {
        const auto& av = value(a);
        const auto& vv = value(v);
        if (av.shape.size() != 2 || vv.shape.size() != 1 || av.shape[1] != vv.shape[0])
            throw ValidationError("add_rowvec: incompatible shapes");
        const int64_t m = av.shape[0], n = av.shape[1];
        TensorData<T> out = av;
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) out.data[i * n + j] += vv.data[j];
        check_finite(out, "add_rowvec");
        return push(std::move(out), requires_grad(a) || requires_grad(v),
                    [a, v, m, n](Tape& t) {
                        auto& self = t.nodes_.back_node();
                        const T* g = self.grad.data();
                        if (t.requires_grad(a)) {
                            T* ga = t.grad_buf(a);
                            for (int64_t i = 0; i < m * n; ++i) ga[i] += g[i];
                        }
                        if (t.requires_grad(v)) {
                            T* gv = t.grad_buf(v);
                            for (int64_t i = 0; i < m; ++i)
                                for (int64_t j = 0; j < n; ++j) gv[j] += g[i * n + j];
                        }
                    });
    }

    NodeId scale(NodeId a, T s) {
        TensorData<T> out = value(a);
        for (auto& x : out.data) x *= s;
        check_finite(out, "scale");
        return push(std::move(out), requires_grad(a), [a, s](Tape& t) {
            auto& self = t.nodes_.back_node();
            if (!t.requires_grad(a)) return;
            T* ga = t.grad_buf(a);
            for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += s * self.grad[i];
        });
    }

    NodeId add_scalar(NodeId a, T c) {
        TensorData<T> out = value(a);
        for (auto& x : out.data) x += c;
        check_finite(out, "add_scalar");
        return push(std::move(out), requires_grad(a), [a](Tape& t) {
            auto& self = t.nodes_.back_node();
            if (!t.requires_grad(a)) return;
            T* ga = t.grad_buf(a);
            for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
        });
    }

    // Elementwise multiply by a constant tensor (masking).
    NodeId mul_const(NodeId a, TensorData<T> c) {
        const auto& av = value(a);
        if (c.shape != av.shape) throw ValidationError("mul_const: shape mismatch");
        TensorData<T> out = av;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= c.data[i];
        check_finite(out, "mul_const");
        auto cd = std::make_shared<std::vector<T>>(std::move(c.data));
        return push(std::move(out), requires_grad(a), [a, cd](Tape& t) {
            auto& self = t.nodes_.back_node();
            if (!t.requires_grad(a)) return;
            T* ga = t.grad_buf(a);
            for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += (*cd)[i] * self.grad[i];
        });
    }

    // Elementwise add of a constant tensor (additive attention masks).
    NodeId add_const(NodeId a, const TensorData<T>& c) {
        const auto& av = value(a);
        if (c.shape != av.shape) throw ValidationError("add_const: shape mismatch");
        TensorData<T> out = av;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += c.data[i];
        check_finite(out, "add_const");
        return push(std::move(out), requires_grad(a), [a](Tape& t) {
            auto& self = t.nodes_.back_node();
            if (!t.requires_grad(a)) return;
            T* ga = t.grad_buf(a);
            for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
        });
    }

    NodeId relu(NodeId a) {
        TensorData<T> out = value(a);
        for (auto& x : out.data) x = x > T(0) ? x : T(0);
        return push(std::move(out), requires_grad(a), [a](Tape& t) {
            auto& self = t.nodes_.back_node();
            if (!t.requires_grad(a)) return;
            const auto& in = t.value(a).data;
            T* ga = t.grad_buf(a);
            for (size_t i = 0; i < self.grad.size(); ++i)
                if (in[i] > T(0)) ga[i] += self.grad[i];
        });
    }

    // tanh-approximation GELU; the backward uses the analytic derivative of
    // the same approximation, so the pair is self-consistent.
    NodeId gelu(NodeId a) {
        TensorData<T> out = value(a);
        for (auto& x : out.data) x = gelu_fwd(x);
        check_finite(out, "gelu");
        return push(std::move(out), requires_grad(a), [a](Tape& t) {
            auto& self = t.nodes_.back_node();
            if (!t.requires_grad(a)) return;
            const auto& in = t.value(a).data;
            T* ga = t.grad_buf(a);
            for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += gelu_bwd(in[i]) * self.grad[i];
        });
    }

    // Softmax over the last axis, computed with max-subtraction.
    NodeId softmax_rows(NodeId a) { return softmax_impl(a, /*log=*/false); }
    NodeId log_softmax_rows(NodeId a) { return softmax_impl(a, /*log=*/true); }

    // Per-row layer normalization with affine parameters gamma/beta of shape
    // [cols]. Epsilon is added to the variance.
    NodeId layer_norm(NodeId x, NodeId gamma, NodeId beta, T eps) {
        const auto& xv = value(x);
        const auto& gv = value(gamma);
        const auto& bv = value(beta);
        const int64_t n = xv.cols();
        const int64_t m = xv.numel() / n;
        if (gv.numel() != n || bv.numel() != n)
            throw ValidationError("layer_norm: gamma/beta must match the last axis");
        TensorData<T> out = TensorData<T>::zeros(xv.shape);
        auto xhat = std::make_shared<std::vector<T>>(xv.data.size());
        auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(m));
        for (int64_t i = 0; i < m; ++i) {
            const T* row = xv.data.data() + i * n;
            T mean = std::accumulate(row, row + n, T(0)) / T(n);
            T var = T(0);
            for (int64_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
            var /= T(n);
            const T is = T(1) / std::sqrt(var + eps);
            (*inv_std)[static_cast<size_t>(i)] = is;
            for (int64_t j = 0; j < n; ++j) {
                const T h = (row[j] - mean) * is;
                (*xhat)[static_cast<size_t>(i * n + j)] = h;
                out.data[static_cast<size_t>(i * n + j)] = h * gv.data[j] + bv.data[j];
            }
        }
        check_finite(out, "layer_norm");
        return push(std::move(out),
                    requires_grad(x) || requires_grad(gamma) || requires_grad(beta),
                    [x, gamma, beta, xhat, inv_std, m, n](Tape& t) {
                        auto& self = t.nodes_.back_node();
                        const T* g = self.grad.data();
                        const auto& gv = t.value(gamma).data;
                        if (t.requires_grad(gamma)) {
                            T* gg = t.grad_buf(gamma);
                            for (int64_t i = 0; i < m; ++i)
                                for (int64_t j = 0; j < n; ++j)
                                    gg[j] += g[i * n + j] * (*xhat)[static_cast<size_t>(i * n + j)];
                        }
                        if (t.requires_grad(beta)) {
                            T* gb = t.grad_buf(beta);
                            for (int64_t i = 0; i < m; ++i)
                                for (int64_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                        }
                        if (t.requires_grad(x)) {
                            T* gx = t.grad_buf(x);
                            for (int64_t i = 0; i < m; ++i) {
                                // dL/dxhat_j = g_j * gamma_j; then the usual
                                // layer-norm Jacobian applied row-wise.
                                T sum_gh = T(0), sum_gh_h = T(0);
                                for (int64_t j = 0; j < n; ++j) {
                                    const T gh = g[i * n + j] * gv[j];
                                    sum_gh += gh;
                                    sum_gh_h += gh * (*xhat)[static_cast<size_t>(i * n + j)];
                                }
                                const T is = (*inv_std)[static_cast<size_t>(i)];
                                for (int64_t j = 0; j < n; ++j) {
                                    const T gh = g[i * n + j] * gv[j];
                                    const T h = (*xhat)[static_cast<size_t>(i * n + j)];
                                    gx[i * n + j] +=
                                        is * (gh - sum_gh / T(n) - h * sum_gh_h / T(n));
                                }
                            }
                        }
                    });
    }

    // table: [N,d]; ids select rows -> [T,d].
    NodeId embedding(NodeId table, const std::vector<int>& ids) {
        const auto& tv = value(table);
        if (tv.shape.size() != 2) throw ValidationError("embedding: table must be 2-D");
        const int64_t vocab = tv.shape[0], d = tv.shape[1];
        for (int id : ids)
            if (id < 0 || id >= vocab)
                throw ValidationError("embedding: id " + std::to_string(id) + " out of range");
        TensorData<T> out = TensorData<T>::zeros({static_cast<int64_t>(ids.size()), d});
        for (size_t i = 0; i < ids.size(); ++i)
            std::copy_n(tv.data.data() + int64_t(ids[i]) * d, d, out.data.data() + int64_t(i) * d);
        auto ids_copy = std::make_shared<std::vector<int>>(ids);
        return push(std::move(out), requires_grad(table), [table, ids_copy, d](Tape& t) {
            auto& self = t.nodes_.back_node();
            if (!t.requires_grad(table)) return;
            T* gt = t.grad_buf(table);
            for (size_t i = 0; i < ids_copy->size(); ++i) {
                const T* g = self.grad.data() + int64_t(i) * d;
                T* dst = gt + int64_t((*ids_copy)[i]) * d;
                for (int64_t j = 0; j < d; ++j) dst[j] += g[j];
            }
        });
    }

    NodeId reshape(NodeId a, Shape s) {
        const auto& av = value(a);
        if (shape_numel(s) != av.numel()) throw ValidationError("reshape: element count mismatch");
        TensorData<T> out(std::move(s), av.data);
        return push(std::move(out), requires_grad(a), [a](Tape& t) {
            auto& self = t.nodes_.back_node();
            if (!t.requires_grad(a)) return;
            T* ga = t.grad_buf(a);
            for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
        });
    }

    NodeId transpose2d(NodeId a) {
        const auto& av = value(a);
        if (av.shape.size() != 2) throw ValidationError("transpose2d: expects a matrix");
        const int64_t m = av.shape[0], n = av.shape[1];
        TensorData<T> out = TensorData<T>::zeros({n, m});
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) out.data[j * m + i] = av.data[i * n + j];
        return push(std::move(out), requires_grad(a), [a, m, n](Tape& t) {
            auto& self = t.nodes_.back_node();
            if (!t.requires_grad(a)) return;
            T* ga = t.grad_buf(a);
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j * m + i];
        });
    }

    // Columns [start, start+len) of a matrix.
    NodeId col_slice(NodeId a, int64_t start, int64_t len) {
        const auto& av = value(a);
        if (av.shape.size() != 2 || start < 0 || start + len > av.shape[1])
            throw ValidationError("col_slice: out of bounds");
        const int64_t m = av.shape[0], n = av.shape[1];
        TensorData<T> out = TensorData<T>::zeros({m, len});
        for (int64_t i = 0; i < m; ++i)
            std::copy_n(av.data.data() + i * n + start, len, out.data.data() + i * len);
        return push(std::move(out), requires_grad(a), [a, start, len, m, n](Tape& t) {
            auto& self = t.nodes_.back_node();
            if (!t.requires_grad(a)) return;
            T* ga = t.grad_buf(a);
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < len; ++j)
                    ga[i * n + start + j] += self.grad[i * len + j];
        });
    }

    NodeId concat_cols(const std::vector<NodeId>& parts) {
        if (parts.empty()) throw ValidationError("concat_cols: no inputs");
        const int64_t m = value(parts[0]).shape[0];
        int64_t total = 0;
        for (NodeId p : parts) {
            const auto& pv = value(p);
            if (pv.shape.size() != 2 || pv.shape[0] != m)
                throw ValidationError("concat_cols: row mismatch");
            total += pv.shape[1];
        }
        TensorData<T> out = TensorData<T>::zeros({m, total});
        int64_t off = 0;
        bool rg = false;
        for (NodeId p : parts) {
            const auto& pv = value(p);
            const int64_t w = pv.shape[1];
            for (int64_t i = 0; i < m; ++i)
                std::copy_n(pv.data.data() + i * w, w, out.data.data() + i * total + off);
            off += w;
            rg = rg || requires_grad(p);
        }
        auto parts_copy = std::make_shared<std::vector<NodeId>>(parts);
        return push(std::move(out), rg, [parts_copy, m, total](Tape& t) {
            auto& self = t.nodes_.back_node();
            int64_t off = 0;
            for (NodeId p : *parts_copy) {
                const int64_t w = t.value(p).shape[1];
                if (t.requires_grad(p)) {
                    T* gp = t.grad_buf(p);
                    for (int64_t i = 0; i < m; ++i)
                        for (int64_t j = 0; j < w; ++j)
                            gp[i * w + j] += self.grad[i * total + off + j];
                }
                off += w;
            }
        });
    }

    NodeId sum_all(NodeId a) {
        const auto& av = value(a);
        T s = std::accumulate(av.data.begin(), av.data.end(), T(0));
        TensorData<T> out = TensorData<T>::scalar(s);
        check_finite(out, "sum_all");
        return push(std::move(out), requires_grad(a), [a](Tape& t) {
            auto& self = t.nodes_.back_node();
            if (!t.requires_grad(a)) return;
            T* ga = t.grad_buf(a);
            const T g = self.grad[0];
            const int64_t n = t.value(a).numel();
            for (int64_t i = 0; i < n; ++i) ga[i] += g;
        });
    }

    // Scalar dot product with a constant weight tensor of the same shape.
    NodeId weighted_sum(NodeId a, TensorData<T> w) {
        const auto& av = value(a);
        if (w.shape != av.shape) throw ValidationError("weighted_sum: shape mismatch");
        T s = T(0);
        for (size_t i = 0; i < av.data.size(); ++i) s += av.data[i] * w.data[i];
        TensorData<T> out = TensorData<T>::scalar(s);
        check_finite(out, "weighted_sum");
        auto wd = std::make_shared<std::vector<T>>(std::move(w.data));
        return push(std::move(out), requires_grad(a), [a, wd](Tape& t) {
            auto& self = t.nodes_.back_node();
            if (!t.requires_grad(a)) return;
            T* ga = t.grad_buf(a);
            const T g = self.grad[0];
            for (size_t i = 0; i < wd->size(); ++i) ga[i] += g * (*wd)[i];
        });
    }

    // out[i] = a[rows[i], cols[i]] for a matrix a.
    NodeId gather2d(NodeId a, const std::vector<int64_t>& rows, const std::vector<int64_t>& cols) {
        const auto& av = value(a);
        if (av.shape.size() != 2 || rows.size() != cols.size())
            throw ValidationError("gather2d: bad arguments");
        const int64_t n = av.shape[1];
        TensorData<T> out = TensorData<T>::zeros({static_cast<int64_t>(rows.size())});
        for (size_t i = 0; i < rows.size(); ++i) {
            if (rows[i] < 0 || rows[i] >= av.shape[0] || cols[i] < 0 || cols[i] >= n)
                throw ValidationError("gather2d: index out of range");
            out.data[i] = av.data[rows[i] * n + cols[i]];
        }
        auto r = std::make_shared<std::vector<int64_t>>(rows);
        auto c = std::make_shared<std::vector<int64_t>>(cols);
        return push(std::move(out), requires_grad(a), [a, r, c, n](Tape& t) {
            auto& self = t.nodes_.back_node();
            if (!t.requires_grad(a)) return;
            T* ga = t.grad_buf(a);
            for (size_t i = 0; i < r->size(); ++i)
                ga[(*r)[i] * n + (*c)[i]] += self.grad[i];
        });
    }

    // Inverted dropout. Deterministic given the rng state; identity when
    // rate == 0. Only used on training paths.
    NodeId dropout(NodeId a, double rate, Rng& rng) {
        if (rate < 0.0 || rate >= 1.0) throw ValidationError("dropout: rate must be in [0,1)");
        if (rate == 0.0) return a;
        const auto& av = value(a);
        auto keep = std::make_shared<std::vector<T>>(av.data.size());
        const T inv = T(1.0 / (1.0 - rate));
        TensorData<T> out = av;
        for (size_t i = 0; i < out.data.size(); ++i) {
            const T k = rng.uniform() >= rate ? inv : T(0);
            (*keep)[i] = k;
            out.data[i] *= k;
        }
        return push(std::move(out), requires_grad(a), [a, keep](Tape& t) {
            auto& self = t.nodes_.back_node();
            if (!t.requires_grad(a)) return;
            T* ga = t.grad_buf(a);
            for (size_t i = 0; i < keep->size(); ++i) ga[i] += (*keep)[i] * self.grad[i];
        });
    }

    // ---- backward ------------------------------------------------------------

    // Backward from a rank-0 output. May be called for several scalar outputs
    // on the same tape; gradients accumulate (linearity).
    void backward(NodeId output) {
        Node& out = nodes_.at(output);
        if (!out.value.shape.empty())
            throw ValidationError("backward: output must be a scalar (rank 0)");
        if (!out.requires_grad) return;
        ensure_grad(output);
        nodes_.at(output).grad[0] += T(1);
        for (int i = output; i >= 0; --i) {
            Node& n = nodes_.at(i);
            if (!n.requires_grad || n.grad.empty() || !n.backprop) continue;
            cursor_ = i;
            n.backprop(*this);
        }
    }

    void zero_grads() {
        for (auto& n : nodes_.raw()) n.grad.clear();
    }

private:
    // Nodes are stored in a plain vector; `cursor_` identifies the node whose
    // backprop closure is currently running (its grad buffer is read there).
    struct NodeStore {
        std::vector<Node> v;
        Tape* owner = nullptr;
        Node& back_node() { return v[static_cast<size_t>(owner->cursor_)]; }
        std::vector<Node>& raw() { return v; }
        Node& at(int i) { return v.at(static_cast<size_t>(i)); }
        const Node& at(int i) const { return v.at(static_cast<size_t>(i)); }
        size_t size() const { return v.size(); }
    };

    NodeId push(TensorData<T> v, bool requires_grad, std::function<void(Tape&)> backprop) {
        nodes_.owner = this;
        Node n;
        n.value = std::move(v);
        n.requires_grad = requires_grad;
        n.backprop = requires_grad ? std::move(backprop) : std::function<void(Tape&)>{};
        nodes_.raw().push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size()) - 1;
    }

    void ensure_grad(NodeId id) {
        Node& n = nodes_.at(id);
        if (n.grad.empty()) n.grad.assign(static_cast<size_t>(n.value.numel()), T(0));
    }

    T* grad_buf(NodeId id) {
        ensure_grad(id);
        return nodes_.at(id).grad.data();
    }

    NodeId binary_elementwise(NodeId a, NodeId b, bool is_mul) {
        const auto& av = value(a);
        const auto& bv = value(b);
        if (av.shape != bv.shape)
            throw ValidationError("elementwise op: shape mismatch " + shape_str(av.shape) +
                                  " vs " + shape_str(bv.shape));
        TensorData<T> out = av;
        if (is_mul)
            for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv.data[i];
        else
            for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];
        check_finite(out, is_mul ? "mul" : "add");
        return push(std::move(out), requires_grad(a) || requires_grad(b),
                    [a, b, is_mul](Tape& t) {
                        auto& self = t.nodes_.back_node();
                        const size_t n = self.grad.size();
                        if (t.requires_grad(a)) {
                            T* ga = t.grad_buf(a);
                            if (is_mul) {
                                const auto& bd = t.value(b).data;
                                for (size_t i = 0; i < n; ++i) ga[i] += bd[i] * self.grad[i];
                            } else {
                                for (size_t i = 0; i < n; ++i) ga[i] += self.grad[i];
                            }
                        }
                        if (t.requires_grad(b)) {
                            T* gb = t.grad_buf(b);
                            if (is_mul) {
                                const auto& ad = t.value(a).data;
                                for (size_t i = 0; i < n; ++i) gb[i] += ad[i] * self.grad[i];
                            } else {
                                for (size_t i = 0; i < n; ++i) gb[i] += self.grad[i];
                            }
                        }
                    });
    }

    NodeId softmax_impl(NodeId a, bool log) {
        const auto& av = value(a);
        const int64_t n = av.cols();
        const int64_t m = av.numel() / n;
        for (T x : av.data)
            if (!std::isfinite(static_cast<double>(x)))
                throw RuntimeFailure("softmax: non-finite input");
        TensorData<T> out = TensorData<T>::zeros(av.shape);
        for (int64_t i = 0; i < m; ++i) {
            const T* row = av.data.data() + i * n;
            T* orow = out.data.data() + i * n;
            const T mx = *std::max_element(row, row + n);
            T z = T(0);
            for (int64_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
            if (log) {
                const T lz = std::log(z);
                for (int64_t j = 0; j < n; ++j) orow[j] = row[j] - mx - lz;
            } else {
                for (int64_t j = 0; j < n; ++j) orow[j] = std::exp(row[j] - mx) / z;
            }
        }
        check_finite(out, log ? "log_softmax" : "softmax");
        return push(std::move(out), requires_grad(a), [a, log, m, n](Tape& t) {
            auto& self = t.nodes_.back_node();
            if (!t.requires_grad(a)) return;
            T* ga = t.grad_buf(a);
            const T* g = self.grad.data();
            const T* y = self.value.data.data();
            for (int64_t i = 0; i < m; ++i) {
                if (log) {
                    // d log_softmax: ga = g - softmax * sum(g)
                    T sg = T(0);
                    for (int64_t j = 0; j < n; ++j) sg += g[i * n + j];
                    for (int64_t j = 0; j < n; ++j)
                        ga[i * n + j] += g[i * n + j] - std::exp(y[i * n + j]) * sg;
                } else {
                    T dot = T(0);
                    for (int64_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
                    for (int64_t j = 0; j < n; ++j)
                        ga[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
                }
            }
        });
    }

    static T gelu_fwd(T x) {
        const T c = T(0.7978845608028654);  // sqrt(2/pi)
        const T u = c * (x + T(0.044715) * x * x * x);
        return T(0.5) * x * (T(1) + std::tanh(u));
    }
    static T gelu_bwd(T x) {
        const T c = T(0.7978845608028654);
        const T u = c * (x + T(0.044715) * x * x * x);
        const T th = std::tanh(u);
        const T du = c * (T(1) + T(0.134145) * x * x);
        return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
    }

    static void check_finite(const TensorData<T>& t, const char* op) {
        for (T x : t.data)
            if (!std::isfinite(static_cast<double>(x)))
                throw RuntimeFailure(std::string(op) + ": non-finite value produced");
    }

    NodeStore nodes_;
    int cursor_ = -1;
    mutable std::vector<T> grad_scratch_;
};

// ---- gradient checking --------------------------------------------------

// A scalar-valued differentiable function of a set of leaf tensors, expressed
// as tape construction. Used both by tests and by the acceptance suite.
using GradCheckFn =
    std::function<Tape<double>::NodeId(Tape<double>&, const std::vector<Tape<double>::NodeId>&)>;

// Compares analytic gradients against central finite differences on a 64-bit
// path. Uses the 4th-order five-point stencil so truncation error stays below
// roundoff even for coordinates whose gradient is orders of magnitude smaller
// than the rest. Returns max over coordinates of |analytic - numeric| /
// max(1e-8, |analytic| + |numeric|).
inline double grad_check(const GradCheckFn& fn, std::vector<TensorData<double>> point,
                         double step = 1e-3) {
    // Analytic gradients.
    Tape<double> tape;
    std::vector<Tape<double>::NodeId> leaves;
    leaves.reserve(point.size());
    for (const auto& p : point) leaves.push_back(tape.leaf(p, true));
    auto out = fn(tape, leaves);
    if (!tape.value(out).shape.empty())
        throw ValidationError("grad_check: function must be scalar-valued");
    tape.backward(out);

    auto eval = [&](const std::vector<TensorData<double>>& pt) {
        Tape<double> t;
        std::vector<Tape<double>::NodeId> ls;
        for (const auto& p : pt) ls.push_back(t.leaf(p, false));
        auto o = fn(t, ls);
        return t.value(o).data[0];
    };

    double max_err = 0.0;
    for (size_t li = 0; li < point.size(); ++li) {
        const auto& analytic = tape.grad(leaves[li]);
        for (size_t i = 0; i < point[li].data.size(); ++i) {
            auto at = [&](double offset) {
                auto shifted = point;
                shifted[li].data[i] += offset;
                return eval(shifted);
            };
            const double numeric =
                (at(-2 * step) - 8.0 * at(-step) + 8.0 * at(step) - at(2 * step)) / (12.0 * step);
            const double a = analytic[i];
            const double err =
                std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

}  // namespace kdcot
