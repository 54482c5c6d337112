#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Dense>

#include "icdlaat/errors.hpp"

namespace icdlaat::ad {

class ShapeMismatch : public Error {
public:
    using Error::Error;
};
class NonScalarRoot : public Error {
public:
    using Error::Error;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) {
            out += "x";
        }
        out += std::to_string(s[i]);
    }
    return out + ")";
}

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) {
        n *= d;
    }
    return n;
}

/// One operation record in the reverse-mode graph. `backward` accumulates
/// this node's gradient into its parents' gradients; it is only registered
/// when some parent requires grad.
template <typename S>
struct Node {
    Shape shape;
    std::vector<S> values;
    std::vector<S> grad; // lazily allocated, same size as values
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node<S>>> parents;
    std::function<void(Node<S>&)> backward;

    void ensure_grad() {
        if (grad.empty()) {
            grad.assign(values.size(), S(0));
        }
    }
};

/// Handle to a graph node. Copies share the node; tensors with finalized
/// values are treated as immutable except for leaf value updates between
/// training steps (values_mut) and gradient clearing.
template <typename S>
class Tensor {
public:
    Tensor() = default;

    static Tensor leaf(Shape shape, std::vector<S> values, bool requires_grad = false) {
        if (shape_numel(shape) != values.size()) {
            throw ShapeMismatch("leaf tensor shape " + shape_str(shape) + " expects " +
                                std::to_string(shape_numel(shape)) + " values, got " +
                                std::to_string(values.size()));
        }
        auto n = std::make_shared<Node<S>>();
        n->shape = std::move(shape);
        n->values = std::move(values);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::vector<S> v(shape_numel(shape), S(0));
        return leaf(std::move(shape), std::move(v), requires_grad);
    }

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    std::size_t numel() const { return n_->values.size(); }
    std::size_t rank() const { return n_->shape.size(); }
    std::size_t dim(std::size_t i) const { return n_->shape.at(i); }

    const std::vector<S>& values() const { return n_->values; }
    /// Leaf-value mutation (optimizer steps, finite-difference probes). Never
    /// mutate a tensor that participates in a live graph.
    std::vector<S>& values_mut() { return n_->values; }

    bool requires_grad() const { return n_->requires_grad; }
    const std::vector<S>& grad() const { return n_->grad; }
    void zero_grad() {
        if (n_->requires_grad) {
            n_->grad.assign(n_->values.size(), S(0));
        }
    }

    S item() const {
        if (numel() != 1) {
            throw ShapeMismatch("item() on tensor of shape " + shape_str(shape()));
        }
        return n_->values[0];
    }

    std::shared_ptr<Node<S>> node() const { return n_; }

private:
    explicit Tensor(std::shared_ptr<Node<S>> n) : n_(std::move(n)) {}
    std::shared_ptr<Node<S>> n_;

    template <typename T>
    friend Tensor<T> custom_op(Shape, std::vector<T>, std::vector<Tensor<T>>,
                               std::function<void(Node<T>&)>);
};

/// Build an operation node from precomputed forward values. The backward
/// callback is dropped when no parent requires grad.
template <typename S>
Tensor<S> custom_op(Shape shape, std::vector<S> values, std::vector<Tensor<S>> parents,
                    std::function<void(Node<S>&)> backward) {
    if (shape_numel(shape) != values.size()) {
        throw ShapeMismatch("op output shape " + shape_str(shape) + " expects " +
                            std::to_string(shape_numel(shape)) + " values, got " +
                            std::to_string(values.size()));
    }
    auto n = std::make_shared<Node<S>>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    bool rg = false;
    for (const auto& p : parents) {
        n->parents.push_back(p.node());
        rg = rg || p.requires_grad();
    }
    n->requires_grad = rg;
    if (rg) {
        n->backward = std::move(backward);
    }
    return Tensor<S>(std::move(n));
}

// --- Eigen views -----------------------------------------------------------

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<RowMat<S>>;
template <typename S>
using CMatMap = Eigen::Map<const RowMat<S>>;

// --- primitives ------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeMismatch("matmul shapes " + shape_str(a.shape()) + " and " +
                            shape_str(b.shape()) + " are incompatible");
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<S> out(m * n);
    if (m == 1 || n == 1) {
        // Vector products use a plain ascending-k loop so that algebraically
        // identical reductions elsewhere produce bit-identical sums.
        const S* av = a.values().data();
        const S* bv = b.values().data();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                S acc = S(0);
                for (std::size_t kk = 0; kk < k; ++kk) {
                    acc += av[i * k + kk] * bv[kk * n + j];
                }
                out[i * n + j] = acc;
            }
        }
    } else {
        CMatMap<S> am(a.values().data(), m, k);
        CMatMap<S> bm(b.values().data(), k, n);
        MatMap<S> om(out.data(), m, n);
        om.noalias() = am * bm;
    }
    return custom_op<S>(
        {m, n}, std::move(out), {a, b}, [m, k, n](Node<S>& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            CMatMap<S> dc(self.grad.data(), m, n);
            if (pa.requires_grad) {
                pa.ensure_grad();
                MatMap<S> da(pa.grad.data(), m, k);
                CMatMap<S> bm(pb.values.data(), k, n);
                da.noalias() += dc * bm.transpose();
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                MatMap<S> db(pb.grad.data(), k, n);
                CMatMap<S> am(pa.values.data(), m, k);
                db.noalias() += am.transpose() * dc;
            }
        });
}

namespace detail {

inline Shape strip_leading_ones(const Shape& s) {
    std::size_t i = 0;
    while (i + 1 < s.size() && s[i] == 1) {
        ++i;
    }
    return Shape(s.begin() + static_cast<std::ptrdiff_t>(i), s.end());
}

/// True when `small` equals a trailing suffix of `big`.
inline bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) {
        return false;
    }
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

} // namespace detail

/// Elementwise add with broadcasting of the smaller operand over the leading
/// axes of the larger one (bias rows, attention masks).
template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    const Shape sa = detail::strip_leading_ones(a.shape());
    const Shape sb = detail::strip_leading_ones(b.shape());
    const bool b_small = detail::is_suffix(sb, sa);
    const bool a_small = detail::is_suffix(sa, sb);
    if (!b_small && !a_small) {
        throw ShapeMismatch("add shapes " + shape_str(a.shape()) + " and " +
                            shape_str(b.shape()) + " are not broadcast-compatible");
    }
    const Tensor<S>& big = b_small ? a : b;
    const Tensor<S>& small = b_small ? b : a;
    const std::size_t bn = small.numel();
    const std::size_t rep = big.numel() / bn;
    std::vector<S> out(big.numel());
    const S* bigv = big.values().data();
    const S* smallv = small.values().data();
    for (std::size_t r = 0; r < rep; ++r) {
        for (std::size_t j = 0; j < bn; ++j) {
            out[r * bn + j] = bigv[r * bn + j] + smallv[j];
        }
    }
    const bool big_is_a = b_small;
    return custom_op<S>(
        big.shape(), std::move(out), {a, b}, [rep, bn, big_is_a](Node<S>& self) {
            auto& pbig = *self.parents[big_is_a ? 0 : 1];
            auto& psmall = *self.parents[big_is_a ? 1 : 0];
            if (pbig.requires_grad) {
                pbig.ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) {
                    pbig.grad[i] += self.grad[i];
                }
            }
            if (psmall.requires_grad) {
                psmall.ensure_grad();
                for (std::size_t r = 0; r < rep; ++r) {
                    for (std::size_t j = 0; j < bn; ++j) {
                        psmall.grad[j] += self.grad[r * bn + j];
                    }
                }
            }
        });
}

template <typename S>
Tensor<S> mul_scalar(const Tensor<S>& a, S c) {
    std::vector<S> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.values()[i] * c;
    }
    return custom_op<S>(a.shape(), std::move(out), {a}, [c](Node<S>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            p.grad[i] += self.grad[i] * c;
        }
    });
}

/// Hadamard product, equal shapes.
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape()) {
        throw ShapeMismatch("mul shapes " + shape_str(a.shape()) + " and " +
                            shape_str(b.shape()) + " differ");
    }
    std::vector<S> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.values()[i] * b.values()[i];
    }
    return custom_op<S>(a.shape(), std::move(out), {a, b}, [](Node<S>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                pa.grad[i] += self.grad[i] * pb.values[i];
            }
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                pb.grad[i] += self.grad[i] * pa.values[i];
            }
        }
    });
}

namespace detail {

/// Elementwise libm-style kernels routed through an aligned scratch buffer:
/// Eigen vectorizes exp/tanh, and the fixed buffer alignment keeps the
/// SIMD grouping (hence the rounded bits) independent of input addresses.
template <typename S, typename F>
void vectorized_unary(const S* in, S* out, std::size_t n, F&& expr) {
    using Arr = Eigen::Array<S, Eigen::Dynamic, 1>;
    thread_local Arr scratch;
    const auto en = static_cast<Eigen::Index>(n);
    if (scratch.size() < en) {
        scratch.resize(en);
    }
    scratch.head(en) = expr(Eigen::Map<const Arr>(in, en));
    std::copy_n(scratch.data(), n, out);
}

} // namespace detail

template <typename S>
Tensor<S> tanh(const Tensor<S>& a) {
    std::vector<S> out(a.numel());
    detail::vectorized_unary(a.values().data(), out.data(), a.numel(),
                             [](const auto& x) { return x.tanh(); });
    return custom_op<S>(a.shape(), std::move(out), {a}, [](Node<S>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const S y = self.values[i];
            p.grad[i] += self.grad[i] * (S(1) - y * y);
        }
    });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
    std::vector<S> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.values()[i] > S(0) ? a.values()[i] : S(0);
    }
    return custom_op<S>(a.shape(), std::move(out), {a}, [](Node<S>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (p.values[i] > S(0)) {
                p.grad[i] += self.grad[i];
            }
        }
    });
}

template <typename S>
S stable_sigmoid(S z) {
    if (z >= S(0)) {
        return S(1) / (S(1) + std::exp(-z));
    }
    const S e = std::exp(z);
    return e / (S(1) + e);
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
    std::vector<S> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = stable_sigmoid(a.values()[i]);
    }
    return custom_op<S>(a.shape(), std::move(out), {a}, [](Node<S>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const S y = self.values[i];
            p.grad[i] += self.grad[i] * y * (S(1) - y);
        }
    });
}

/// Row (axis=1) or column (axis=0) softmax of a rank-2 tensor, computed with
/// max subtraction.
template <typename S>
Tensor<S> softmax_axis(const Tensor<S>& a, int axis) {
    if (a.rank() != 2 || (axis != 0 && axis != 1)) {
        throw ShapeMismatch("softmax_axis expects a rank-2 tensor and axis 0|1, got " +
                            shape_str(a.shape()) + " axis " + std::to_string(axis));
    }
    const std::size_t m = a.dim(0), n = a.dim(1);
    const std::size_t slices = axis == 1 ? m : n;
    const std::size_t len = axis == 1 ? n : m;
    const std::size_t stride = axis == 1 ? 1 : n;
    const std::size_t base_step = axis == 1 ? n : 1;
    // deltas at least this far under the row max underflow to an exact zero
    // weight (mask bias entries rely on this)
    const S underflow = std::log(std::numeric_limits<S>::denorm_min());
    std::vector<S> out(a.numel());
    const S* v = a.values().data();
    if (axis == 1) {
        // vectorized exp; reductions stay scalar in index order so results do
        // not depend on buffer addresses
        for (std::size_t s = 0; s < slices; ++s) {
            const S* in = v + s * n;
            S* o = out.data() + s * n;
            S mx = in[0];
            for (std::size_t i = 1; i < n; ++i) {
                mx = std::max(mx, in[i]);
            }
            detail::vectorized_unary(in, o, n,
                                     [mx](const auto& x) { return (x - mx).exp(); });
            S sum = S(0);
            for (std::size_t i = 0; i < n; ++i) {
                if (in[i] - mx < underflow) {
                    o[i] = S(0);
                }
                sum += o[i];
            }
            for (std::size_t i = 0; i < n; ++i) {
                o[i] /= sum;
            }
        }
    } else {
        for (std::size_t s = 0; s < slices; ++s) {
            const std::size_t base = s * base_step;
            S mx = v[base];
            for (std::size_t i = 1; i < len; ++i) {
                mx = std::max(mx, v[base + i * stride]);
            }
            S sum = S(0);
            for (std::size_t i = 0; i < len; ++i) {
                const S d = v[base + i * stride] - mx;
                const S e = d < underflow ? S(0) : std::exp(d);
                out[base + i * stride] = e;
                sum += e;
            }
            for (std::size_t i = 0; i < len; ++i) {
                out[base + i * stride] /= sum;
            }
        }
    }
    return custom_op<S>(
        a.shape(), std::move(out), {a},
        [slices, len, stride, base_step](Node<S>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            if (stride == 1) {
                for (std::size_t s = 0; s < slices; ++s) {
                    const S* g = self.grad.data() + s * len;
                    const S* y = self.values.data() + s * len;
                    S* pg = p.grad.data() + s * len;
                    S dot = S(0);
                    for (std::size_t i = 0; i < len; ++i) {
                        dot += g[i] * y[i];
                    }
                    for (std::size_t i = 0; i < len; ++i) {
                        pg[i] += y[i] * (g[i] - dot);
                    }
                }
                return;
            }
            for (std::size_t s = 0; s < slices; ++s) {
                const std::size_t base = s * base_step;
                S dot = S(0);
                for (std::size_t i = 0; i < len; ++i) {
                    const std::size_t idx = base + i * stride;
                    dot += self.grad[idx] * self.values[idx];
                }
                for (std::size_t i = 0; i < len; ++i) {
                    const std::size_t idx = base + i * stride;
                    p.grad[idx] += self.values[idx] * (self.grad[idx] - dot);
                }
            }
        });
}

/// Row-wise layer normalization: y = (x - mean) / sqrt(var + eps) * gain + bias,
/// with biased variance over the last axis.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& a, const Tensor<S>& gain, const Tensor<S>& bias,
                     S eps) {
    const std::size_t d = a.rank() == 2 ? a.dim(1) : a.dim(0);
    const std::size_t rows = a.rank() == 2 ? a.dim(0) : 1;
    if (gain.numel() != d || bias.numel() != d) {
        throw ShapeMismatch("layer_norm gain/bias " + shape_str(gain.shape()) + "/" +
                            shape_str(bias.shape()) + " do not match last axis of " +
                            shape_str(a.shape()));
    }
    std::vector<S> out(a.numel());
    std::vector<S> xhat(a.numel());
    std::vector<S> inv_std(rows);
    const S* v = a.values().data();
    const S* g = gain.values().data();
    const S* b = bias.values().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const S* x = v + r * d;
        S mean = S(0);
        for (std::size_t i = 0; i < d; ++i) {
            mean += x[i];
        }
        mean /= static_cast<S>(d);
        S var = S(0);
        for (std::size_t i = 0; i < d; ++i) {
            const S c = x[i] - mean;
            var += c * c;
        }
        var /= static_cast<S>(d);
        const S inv = S(1) / std::sqrt(var + eps);
        inv_std[r] = inv;
        for (std::size_t i = 0; i < d; ++i) {
            const S xh = (x[i] - mean) * inv;
            xhat[r * d + i] = xh;
            out[r * d + i] = xh * g[i] + b[i];
        }
    }
    return custom_op<S>(
        a.shape(), std::move(out), {a, gain, bias},
        [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<S>& self) {
            auto& px = *self.parents[0];
            auto& pg = *self.parents[1];
            auto& pb = *self.parents[2];
            const S* g = pg.values.data();
            for (std::size_t r = 0; r < rows; ++r) {
                const S* dy = self.grad.data() + r * d;
                const S* xh = xhat.data() + r * d;
                if (pg.requires_grad) {
                    pg.ensure_grad();
                    for (std::size_t i = 0; i < d; ++i) {
                        pg.grad[i] += dy[i] * xh[i];
                    }
                }
                if (pb.requires_grad) {
                    pb.ensure_grad();
                    for (std::size_t i = 0; i < d; ++i) {
                        pb.grad[i] += dy[i];
                    }
                }
                if (px.requires_grad) {
                    px.ensure_grad();
                    S mean_dxhat = S(0), mean_dxhat_xhat = S(0);
                    for (std::size_t i = 0; i < d; ++i) {
                        const S dxh = dy[i] * g[i];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xh[i];
                    }
                    mean_dxhat /= static_cast<S>(d);
                    mean_dxhat_xhat /= static_cast<S>(d);
                    for (std::size_t i = 0; i < d; ++i) {
                        const S dxh = dy[i] * g[i];
                        px.grad[r * d + i] +=
                            inv_std[r] * (dxh - mean_dxhat - xh[i] * mean_dxhat_xhat);
                    }
                }
            }
        });
}

/// Gather rows of `table` (V x d) by id; backward scatter-adds into the table.
template <typename S>
Tensor<S> embedding_lookup(const Tensor<S>& table, std::vector<int> ids) {
    if (table.rank() != 2) {
        throw ShapeMismatch("embedding table must be rank-2, got " +
                            shape_str(table.shape()));
    }
    const std::size_t vocab = table.dim(0), d = table.dim(1);
    std::vector<S> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const int id = ids[i];
        if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
            throw ShapeMismatch("embedding id " + std::to_string(id) +
                                " out of range for table " + shape_str(table.shape()));
        }
        std::copy_n(table.values().data() + static_cast<std::size_t>(id) * d, d,
                    out.data() + i * d);
    }
    const std::size_t n = ids.size();
    return custom_op<S>(
        {n, d}, std::move(out), {table}, [d, ids = std::move(ids)](Node<S>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (std::size_t i = 0; i < ids.size(); ++i) {
                S* dst = p.grad.data() + static_cast<std::size_t>(ids[i]) * d;
                const S* src = self.grad.data() + i * d;
                for (std::size_t j = 0; j < d; ++j) {
                    dst[j] += src[j];
                }
            }
        });
}

/// Concatenate rank-2 tensors along axis 0 (rows) or 1 (columns).
template <typename S>
Tensor<S> concat(std::span<const Tensor<S>> tensors, int axis) {
    if (tensors.empty() || (axis != 0 && axis != 1)) {
        throw ShapeMismatch("concat requires tensors and axis 0|1");
    }
    const std::size_t other_axis = axis == 0 ? 1 : 0;
    const std::size_t fixed = tensors[0].dim(other_axis);
    std::size_t total = 0;
    for (const auto& t : tensors) {
        if (t.rank() != 2 || t.dim(other_axis) != fixed) {
            throw ShapeMismatch("concat mismatch: " + shape_str(tensors[0].shape()) +
                                " vs " + shape_str(t.shape()));
        }
        total += t.dim(static_cast<std::size_t>(axis));
    }
    Shape out_shape = axis == 0 ? Shape{total, fixed} : Shape{fixed, total};
    std::vector<S> out(shape_numel(out_shape));
    std::vector<std::size_t> extents;
    if (axis == 0) {
        std::size_t row = 0;
        for (const auto& t : tensors) {
            std::copy(t.values().begin(), t.values().end(), out.begin() + row * fixed);
            row += t.dim(0);
            extents.push_back(t.dim(0));
        }
    } else {
        std::size_t col = 0;
        for (const auto& t : tensors) {
            const std::size_t w = t.dim(1);
            for (std::size_t r = 0; r < fixed; ++r) {
                std::copy_n(t.values().data() + r * w, w, out.data() + r * total + col);
            }
            col += w;
            extents.push_back(w);
        }
    }
    std::vector<Tensor<S>> parents(tensors.begin(), tensors.end());
    return custom_op<S>(
        std::move(out_shape), std::move(out), std::move(parents),
        [axis, fixed, total, extents = std::move(extents)](Node<S>& self) {
            std::size_t offset = 0;
            for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
                auto& p = *self.parents[pi];
                const std::size_t ext = extents[pi];
                if (p.requires_grad) {
                    p.ensure_grad();
                    if (axis == 0) {
                        for (std::size_t i = 0; i < ext * fixed; ++i) {
                            p.grad[i] += self.grad[offset * fixed + i];
                        }
                    } else {
                        for (std::size_t r = 0; r < fixed; ++r) {
                            for (std::size_t c = 0; c < ext; ++c) {
                                p.grad[r * ext + c] += self.grad[r * total + offset + c];
                            }
                        }
                    }
                }
                offset += ext;
            }
        });
}

inline constexpr int kAxisRows = 0;
inline constexpr int kAxisCols = 1;

/// Contiguous slice along one axis of a rank-1 or rank-2 tensor.
template <typename S>
Tensor<S> slice(const Tensor<S>& a, int axis, std::size_t start, std::size_t len) {
    if (a.rank() == 1) {
        if (axis != 0 || start + len > a.dim(0)) {
            throw ShapeMismatch("slice [" + std::to_string(start) + ", " +
                                std::to_string(start + len) + ") out of range for " +
                                shape_str(a.shape()));
        }
        std::vector<S> out(a.values().begin() + start, a.values().begin() + start + len);
        return custom_op<S>({len}, std::move(out), {a}, [start, len](Node<S>& self) {
            auto& p = *self.parents[0];
            p.ensure_grad();
            for (std::size_t i = 0; i < len; ++i) {
                p.grad[start + i] += self.grad[i];
            }
        });
    }
    if (a.rank() != 2 || (axis != 0 && axis != 1) ||
        start + len > a.dim(static_cast<std::size_t>(axis))) {
        throw ShapeMismatch("slice axis " + std::to_string(axis) + " [" +
                            std::to_string(start) + ", " + std::to_string(start + len) +
                            ") out of range for " + shape_str(a.shape()));
    }
    const std::size_t rows = a.dim(0), cols = a.dim(1);
    if (axis == 0) {
        std::vector<S> out(a.values().begin() + start * cols,
                           a.values().begin() + (start + len) * cols);
        return custom_op<S>({len, cols}, std::move(out), {a},
                            [start, len, cols](Node<S>& self) {
                                auto& p = *self.parents[0];
                                p.ensure_grad();
                                for (std::size_t i = 0; i < len * cols; ++i) {
                                    p.grad[start * cols + i] += self.grad[i];
                                }
                            });
    }
    std::vector<S> out(rows * len);
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(a.values().data() + r * cols + start, len, out.data() + r * len);
    }
    return custom_op<S>({rows, len}, std::move(out), {a},
                        [start, len, rows, cols](Node<S>& self) {
                            auto& p = *self.parents[0];
                            p.ensure_grad();
                            for (std::size_t r = 0; r < rows; ++r) {
                                for (std::size_t c = 0; c < len; ++c) {
                                    p.grad[r * cols + start + c] += self.grad[r * len + c];
                                }
                            }
                        });
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& a) {
    if (a.rank() != 2) {
        throw ShapeMismatch("transpose expects rank-2, got " + shape_str(a.shape()));
    }
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<S> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[j * m + i] = a.values()[i * n + j];
        }
    }
    return custom_op<S>({n, m}, std::move(out), {a}, [m, n](Node<S>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                p.grad[i * n + j] += self.grad[j * m + i];
            }
        }
    });
}

/// Same data, new shape (numel must match).
template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ShapeMismatch("reshape " + shape_str(a.shape()) + " to " +
                            shape_str(shape) + " changes element count");
    }
    std::vector<S> out = a.values();
    return custom_op<S>(std::move(shape), std::move(out), {a}, [](Node<S>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            p.grad[i] += self.grad[i];
        }
    });
}

namespace detail {

template <typename S>
void check_reduce_args(const Tensor<S>& a, int axis) {
    if (a.rank() != 2 || (axis != 0 && axis != 1)) {
        throw ShapeMismatch("axis reduction expects rank-2 and axis 0|1, got " +
                            shape_str(a.shape()) + " axis " + std::to_string(axis));
    }
}

} // namespace detail

template <typename S>
Tensor<S> reduce_sum(const Tensor<S>& a, int axis) {
    detail::check_reduce_args(a, axis);
    const std::size_t m = a.dim(0), n = a.dim(1);
    const std::size_t out_len = axis == 0 ? n : m;
    const std::size_t red_len = axis == 0 ? m : n;
    std::vector<S> out(out_len, S(0));
    const S* v = a.values().data();
    for (std::size_t o = 0; o < out_len; ++o) {
        S acc = S(0);
        for (std::size_t r = 0; r < red_len; ++r) {
            acc += axis == 0 ? v[r * n + o] : v[o * n + r];
        }
        out[o] = acc;
    }
    return custom_op<S>({out_len}, std::move(out), {a},
                        [axis, m, n, out_len, red_len](Node<S>& self) {
                            auto& p = *self.parents[0];
                            p.ensure_grad();
                            for (std::size_t o = 0; o < out_len; ++o) {
                                for (std::size_t r = 0; r < red_len; ++r) {
                                    const std::size_t idx =
                                        axis == 0 ? r * n + o : o * n + r;
                                    p.grad[idx] += self.grad[o];
                                }
                            }
                        });
}

template <typename S>
Tensor<S> reduce_mean(const Tensor<S>& a, int axis) {
    detail::check_reduce_args(a, axis);
    const std::size_t red_len = axis == 0 ? a.dim(0) : a.dim(1);
    return mul_scalar(reduce_sum(a, axis), S(1) / static_cast<S>(red_len));
}

/// Axis max; ties route the gradient to the first maximal element.
template <typename S>
Tensor<S> reduce_max(const Tensor<S>& a, int axis) {
    detail::check_reduce_args(a, axis);
    const std::size_t m = a.dim(0), n = a.dim(1);
    const std::size_t out_len = axis == 0 ? n : m;
    const std::size_t red_len = axis == 0 ? m : n;
    std::vector<S> out(out_len);
    std::vector<std::size_t> arg(out_len);
    const S* v = a.values().data();
    for (std::size_t o = 0; o < out_len; ++o) {
        std::size_t best = 0;
        S bv = axis == 0 ? v[o] : v[o * n];
        for (std::size_t r = 1; r < red_len; ++r) {
            const S cur = axis == 0 ? v[r * n + o] : v[o * n + r];
            if (cur > bv) {
                bv = cur;
                best = r;
            }
        }
        out[o] = bv;
        arg[o] = best;
    }
    return custom_op<S>({out_len}, std::move(out), {a},
                        [axis, n, out_len, arg = std::move(arg)](Node<S>& self) {
                            auto& p = *self.parents[0];
                            p.ensure_grad();
                            for (std::size_t o = 0; o < out_len; ++o) {
                                const std::size_t idx =
                                    axis == 0 ? arg[o] * n + o : o * n + arg[o];
                                p.grad[idx] += self.grad[o];
                            }
                        });
}

/// Stack rank-1 tensors of equal length as the rows of a rank-2 tensor.
template <typename S>
Tensor<S> stack_rows(std::span<const Tensor<S>> rows) {
    if (rows.empty()) {
        throw ShapeMismatch("stack_rows requires at least one tensor");
    }
    const std::size_t d = rows[0].numel();
    std::vector<S> out;
    out.reserve(rows.size() * d);
    std::vector<Tensor<S>> parents;
    for (const auto& r : rows) {
        if (r.rank() != 1 || r.numel() != d) {
            throw ShapeMismatch("stack_rows mismatch: " + shape_str(rows[0].shape()) +
                                " vs " + shape_str(r.shape()));
        }
        out.insert(out.end(), r.values().begin(), r.values().end());
        parents.push_back(r);
    }
    const std::size_t nrows = rows.size();
    return custom_op<S>({nrows, d}, std::move(out), std::move(parents),
                        [d](Node<S>& self) {
                            for (std::size_t i = 0; i < self.parents.size(); ++i) {
                                auto& p = *self.parents[i];
                                if (!p.requires_grad) {
                                    continue;
                                }
                                p.ensure_grad();
                                for (std::size_t j = 0; j < d; ++j) {
                                    p.grad[j] += self.grad[i * d + j];
                                }
                            }
                        });
}

/// Sum of all entries, as a scalar (shape {1}) tensor.
template <typename S>
Tensor<S> sum_all(const Tensor<S>& a) {
    S acc = S(0);
    for (S v : a.values()) {
        acc += v;
    }
    return custom_op<S>({1}, {acc}, {a}, [](Node<S>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < p.grad.size(); ++i) {
            p.grad[i] += self.grad[0];
        }
    });
}

// --- backward & checking ---------------------------------------------------

/// Reverse-mode sweep from a scalar root. Every requires-grad tensor
/// reachable from the root accumulates d(root)/d(tensor) additively.
template <typename S>
void backward(const Tensor<S>& root) {
    if (root.numel() != 1) {
        throw NonScalarRoot("backward root must be scalar, got shape " +
                            shape_str(root.shape()));
    }
    if (!root.requires_grad()) {
        return;
    }
    // Post-order DFS over parent edges; the reversed order visits every node
    // after all of its consumers.
    std::vector<Node<S>*> order;
    std::unordered_set<Node<S>*> visited;
    std::vector<std::pair<Node<S>*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<S>* p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root.node()->ensure_grad();
    root.node()->grad[0] = S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<S>* node = *it;
        if (node->backward) {
            node->ensure_grad();
            node->backward(*node);
        }
    }
}

/// Compare analytic gradients against central finite differences. Returns the
/// maximum over all parameter entries of
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
template <typename S>
double grad_check(const std::function<Tensor<S>()>& f, std::span<Tensor<S>> params,
                  double eps) {
    for (auto& p : params) {
        p.zero_grad();
    }
    Tensor<S> y = f();
    backward(y);
    std::vector<std::vector<S>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) {
        analytic.push_back(p.grad().empty() ? std::vector<S>(p.numel(), S(0)) : p.grad());
    }

    double max_rel = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& vals = params[pi].values_mut();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const S orig = vals[i];
            vals[i] = orig + static_cast<S>(eps);
            const double up = static_cast<double>(f().item());
            vals[i] = orig - static_cast<S>(eps);
            const double down = static_cast<double>(f().item());
            vals[i] = orig;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = static_cast<double>(analytic[pi][i]);
            const double rel =
                std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
            max_rel = std::max(max_rel, rel);
        }
    }
    for (auto& p : params) {
        p.zero_grad();
    }
    return max_rel;
}

} // namespace icdlaat::ad
