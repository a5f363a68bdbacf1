#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "autodiff.hpp"

namespace pedformer {

namespace detail {

inline Tape& same_tape(Var a, Var b) {
    if (&a.tape() != &b.tape()) throw ContractError("operands recorded on different tapes");
    return a.tape();
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank)
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                             shape_str(t.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
}

/// Splits a shape around `axis` into (outer, extent, inner) strides.
struct AxisSplit {
    std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
    AxisSplit r;
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    r.extent = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

template <class F, class DF>
Var unary(Var x, std::string_view op, F f, DF df) {
    Tensor out(x.shape());
    const auto& in = x.value().values();
    auto& o = out.values();
    for (std::size_t i = 0; i < in.size(); ++i) o[i] = f(in[i]);
    const auto ix = x.id();
    return x.tape().record(op, std::move(out), {ix}, [ix, df](Tape& t, std::size_t self) {
        const auto& n = t.node(self);
        const auto& xv = t.value(ix).values();
        const auto& yv = n.value.values();
        auto gx = t.grad(ix);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += n.grad[i] * df(xv[i], yv[i]);
    });
}

inline double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace detail

/// log(cosh(d)) without overflow for large |d|.
inline double log_cosh(double d) {
    const double a = std::abs(d);
    return a + std::log1p(std::exp(-2.0 * a)) - std::numbers::ln2;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Var matmul(Var a, Var b) {
    Tape& t = detail::same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0))
        throw DimensionError("matmul: cannot multiply " + shape_str(A.shape()) + " by " + shape_str(B.shape()));
    const std::size_t n = A.dim(0), k = A.dim(1), m = B.dim(1);
    Tensor out({n, m});
    const double* pa = A.data().data();
    const double* pb = B.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            if (av == 0.0) continue;
            const double* brow = pb + p * m;
            double* orow = po + i * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    const auto ia = a.id(), ib = b.id();
    return t.record("matmul", std::move(out), {ia, ib}, [=](Tape& t, std::size_t self) {
        const double* g = t.node(self).grad.data();
        if (t.requires_grad(ia)) {
            const double* pb = t.value(ib).data().data();
            double* ga = t.grad(ia).data();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < m; ++j) s += g[i * m + j] * pb[p * m + j];
                    ga[i * k + p] += s;
                }
        }
        if (t.requires_grad(ib)) {
            const double* pa = t.value(ia).data().data();
            double* gb = t.grad(ib).data();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = pa[i * k + p];
                    if (av == 0.0) continue;
                    for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += av * g[i * m + j];
                }
        }
    });
}

inline Var transpose(Var x) {
    const Tensor& X = x.value();
    detail::require_rank(X, 2, "transpose");
    const std::size_t r = X.dim(0), c = X.dim(1);
    Tensor out({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.at(j, i) = X.at(i, j);
    const auto ix = x.id();
    return x.tape().record("transpose", std::move(out), {ix}, [=](Tape& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        auto gx = t.grad(ix);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
    });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

inline Var add(Var a, Var b) {
    Tape& t = detail::same_tape(a, b);
    detail::require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    const auto& bv = b.value().values();
    for (std::size_t i = 0; i < bv.size(); ++i) out[i] += bv[i];
    const auto ia = a.id(), ib = b.id();
    return t.record("add", std::move(out), {ia, ib}, [=](Tape& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        for (auto id : {ia, ib}) {
            if (!t.requires_grad(id)) continue;
            auto gi = t.grad(id);
            for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
        }
    });
}

inline Var sub(Var a, Var b) {
    Tape& t = detail::same_tape(a, b);
    detail::require_same_shape(a.value(), b.value(), "sub");
    Tensor out = a.value();
    const auto& bv = b.value().values();
    for (std::size_t i = 0; i < bv.size(); ++i) out[i] -= bv[i];
    const auto ia = a.id(), ib = b.id();
    return t.record("sub", std::move(out), {ia, ib}, [=](Tape& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        if (t.requires_grad(ia)) {
            auto ga = t.grad(ia);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.requires_grad(ib)) {
            auto gb = t.grad(ib);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

inline Var mul(Var a, Var b) {
    Tape& t = detail::same_tape(a, b);
    detail::require_same_shape(a.value(), b.value(), "mul");
    Tensor out = a.value();
    const auto& bv = b.value().values();
    for (std::size_t i = 0; i < bv.size(); ++i) out[i] *= bv[i];
    const auto ia = a.id(), ib = b.id();
    return t.record("mul", std::move(out), {ia, ib}, [=](Tape& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        if (t.requires_grad(ia)) {
            const auto& bv = t.value(ib).values();
            auto ga = t.grad(ia);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (t.requires_grad(ib)) {
            const auto& av = t.value(ia).values();
            auto gb = t.grad(ib);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
    });
}

/// scale * x + shift.
inline Var affine(Var x, double scale, double shift = 0.0) {
    Tensor out = x.value();
    for (auto& v : out.values()) v = scale * v + shift;
    const auto ix = x.id();
    return x.tape().record("affine", std::move(out), {ix}, [=](Tape& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        auto gx = t.grad(ix);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += scale * g[i];
    });
}

/// Adds a row vector (shape [m] or [1 x m]) to every row of an [n x m] matrix.
inline Var add_row(Var x, Var bias) {
    Tape& t = detail::same_tape(x, bias);
    const Tensor& X = x.value();
    detail::require_rank(X, 2, "add_row");
    const std::size_t n = X.dim(0), m = X.dim(1);
    if (bias.value().size() != m)
        throw DimensionError("add_row: bias " + shape_str(bias.value().shape()) + " does not fit rows of " +
                             shape_str(X.shape()));
    Tensor out = X;
    const auto& bv = bias.value().values();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out[i * m + j] += bv[j];
    const auto ix = x.id(), ib = bias.id();
    return t.record("add_row", std::move(out), {ix, ib}, [=](Tape& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        if (t.requires_grad(ix)) {
            auto gx = t.grad(ix);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (t.requires_grad(ib)) {
            auto gb = t.grad(ib);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) gb[j] += g[i * m + j];
        }
    });
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities
// ---------------------------------------------------------------------------

inline Var tanh(Var x) {
    return detail::unary(
        x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(Var x) {
    return detail::unary(x, "sigmoid", detail::stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

/// x / (1 + |x|).
inline Var softsign(Var x) {
    return detail::unary(
        x, "softsign", [](double v) { return v / (1.0 + std::abs(v)); },
        [](double v, double) {
            const double d = 1.0 + std::abs(v);
            return 1.0 / (d * d);
        });
}

inline Var relu(Var x) {
    return detail::unary(
        x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Var exp(Var x) {
    return detail::unary(
        x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Var log(Var x) {
    return detail::unary(
        x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Var log_cosh(Var x) {
    return detail::unary(
        x, "log_cosh", [](double v) { return log_cosh(v); }, [](double v, double) { return std::tanh(v); });
}

/// Clamps into [lo, hi]; the gradient is zero where clamping is active.
inline Var clamp(Var x, double lo, double hi) {
    return detail::unary(
        x, "clamp", [=](double v) { return std::clamp(v, lo, hi); },
        [=](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Softmax along `axis`, shifted by the slice maximum.
inline Var softmax(Var x, std::size_t axis) {
    const Tensor& X = x.value();
    if (axis >= X.rank()) throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(X.shape()));
    const auto sp = detail::split_axis(X.shape(), axis);
    Tensor out(X.shape());
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t in = 0; in < sp.inner; ++in) {
            const std::size_t base = o * sp.extent * sp.inner + in;
            double mx = X[base];
            for (std::size_t k = 1; k < sp.extent; ++k) mx = std::max(mx, X[base + k * sp.inner]);
            double sum = 0.0;
            for (std::size_t k = 0; k < sp.extent; ++k) {
                const double e = std::exp(X[base + k * sp.inner] - mx);
                out[base + k * sp.inner] = e;
                sum += e;
            }
            for (std::size_t k = 0; k < sp.extent; ++k) out[base + k * sp.inner] /= sum;
        }
    const auto ix = x.id();
    return x.tape().record("softmax", std::move(out), {ix}, [=](Tape& t, std::size_t self) {
        const auto& n = t.node(self);
        const auto& y = n.value.values();
        const auto& g = n.grad;
        auto gx = t.grad(ix);
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t in = 0; in < sp.inner; ++in) {
                const std::size_t base = o * sp.extent * sp.inner + in;
                double dot = 0.0;
                for (std::size_t k = 0; k < sp.extent; ++k) dot += g[base + k * sp.inner] * y[base + k * sp.inner];
                for (std::size_t k = 0; k < sp.extent; ++k) {
                    const std::size_t i = base + k * sp.inner;
                    gx[i] += y[i] * (g[i] - dot);
                }
            }
    });
}

inline constexpr double kLayerNormEps = 1e-5;

/// Normalizes each row over the last axis, then applies gain and bias.
inline Var layer_norm(Var x, Var gain, Var bias) {
    Tape& t = detail::same_tape(x, gain);
    detail::same_tape(x, bias);
    const Tensor& X = x.value();
    const std::size_t len = X.shape().back();
    if (gain.value().size() != len || bias.value().size() != len)
        throw DimensionError("layer_norm: gain/bias length must be " + std::to_string(len));
    const std::size_t rows = X.size() / len;
    Tensor out(X.shape());
    std::vector<double> xhat(X.size());
    std::vector<double> inv_std(rows);
    const auto& gv = gain.value().values();
    const auto& bv = bias.value().values();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = X.data().data() + r * len;
        double mean = 0.0;
        for (std::size_t j = 0; j < len; ++j) mean += row[j];
        mean /= static_cast<double>(len);
        double var = 0.0;
        for (std::size_t j = 0; j < len; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(len);
        inv_std[r] = 1.0 / std::sqrt(var + kLayerNormEps);
        for (std::size_t j = 0; j < len; ++j) {
            const double h = (row[j] - mean) * inv_std[r];
            xhat[r * len + j] = h;
            out[r * len + j] = gv[j] * h + bv[j];
        }
    }
    const auto ix = x.id(), ig = gain.id(), ib = bias.id();
    return t.record("layer_norm", std::move(out), {ix, ig, ib},
                    [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
                        const auto& g = t.node(self).grad;
                        const auto& gv = t.value(ig).values();
                        if (t.requires_grad(ig)) {
                            auto gg = t.grad(ig);
                            for (std::size_t i = 0; i < g.size(); ++i) gg[i % len] += g[i] * xhat[i];
                        }
                        if (t.requires_grad(ib)) {
                            auto gb = t.grad(ib);
                            for (std::size_t i = 0; i < g.size(); ++i) gb[i % len] += g[i];
                        }
                        if (t.requires_grad(ix)) {
                            auto gx = t.grad(ix);
                            const double inv_len = 1.0 / static_cast<double>(len);
                            for (std::size_t r = 0; r < rows; ++r) {
                                double mean_d = 0.0, mean_dh = 0.0;
                                for (std::size_t j = 0; j < len; ++j) {
                                    const double d = g[r * len + j] * gv[j];
                                    mean_d += d;
                                    mean_dh += d * xhat[r * len + j];
                                }
                                mean_d *= inv_len;
                                mean_dh *= inv_len;
                                for (std::size_t j = 0; j < len; ++j) {
                                    const double d = g[r * len + j] * gv[j];
                                    gx[r * len + j] += inv_std[r] * (d - mean_d - xhat[r * len + j] * mean_dh);
                                }
                            }
                        }
                    });
}

// ---------------------------------------------------------------------------
// Structural
// ---------------------------------------------------------------------------

inline Var concat(std::span<const Var> parts, std::size_t axis) {
    if (parts.empty()) throw ContractError("concat: no inputs");
    Tape& t = parts[0].tape();
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size()) throw DimensionError("concat: axis out of range for " + shape_str(s0));
    std::size_t total = 0;
    std::vector<std::size_t> ids, extents;
    for (const auto& p : parts) {
        detail::same_tape(parts[0], p);
        const Shape& s = p.shape();
        if (s.size() != s0.size()) throw DimensionError("concat: rank mismatch " + shape_str(s0) + " vs " + shape_str(s));
        for (std::size_t d = 0; d < s.size(); ++d)
            if (d != axis && s[d] != s0[d])
                throw DimensionError("concat: shape mismatch " + shape_str(s0) + " vs " + shape_str(s) +
                                     " off axis " + std::to_string(axis));
        total += s[axis];
        ids.push_back(p.id());
        extents.push_back(s[axis]);
    }
    Shape out_shape = s0;
    out_shape[axis] = total;
    const auto sp = detail::split_axis(out_shape, axis);
    Tensor out(out_shape);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& v = parts[k].value().values();
        const std::size_t chunk = extents[k] * sp.inner;
        for (std::size_t o = 0; o < sp.outer; ++o)
            std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk,
                        out.values().begin() + static_cast<std::ptrdiff_t>(o * total * sp.inner + offset * sp.inner));
        offset += extents[k];
    }
    return t.record("concat", std::move(out), ids, [=](Tape& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        std::size_t offset = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            const std::size_t chunk = extents[k] * sp.inner;
            if (t.requires_grad(ids[k])) {
                auto gk = t.grad(ids[k]);
                for (std::size_t o = 0; o < sp.outer; ++o) {
                    const std::size_t src = o * total * sp.inner + offset * sp.inner;
                    for (std::size_t i = 0; i < chunk; ++i) gk[o * chunk + i] += g[src + i];
                }
            }
            offset += extents[k];
        }
    });
}

inline Var concat(std::initializer_list<Var> parts, std::size_t axis) {
    return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

/// Takes `length` entries starting at `begin` along `axis`.
inline Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t length) {
    const Shape& s = x.shape();
    if (axis >= s.size() || length == 0 || begin + length > s[axis])
        throw DimensionError("slice: [" + std::to_string(begin) + ", " + std::to_string(begin + length) +
                             ") on axis " + std::to_string(axis) + " of " + shape_str(s));
    const auto sp = detail::split_axis(s, axis);
    Shape out_shape = s;
    out_shape[axis] = length;
    Tensor out(out_shape);
    const auto& v = x.value().values();
    const std::size_t chunk = length * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o)
        std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(o * sp.extent * sp.inner + begin * sp.inner), chunk,
                    out.values().begin() + static_cast<std::ptrdiff_t>(o * chunk));
    const auto ix = x.id();
    return x.tape().record("slice", std::move(out), {ix}, [=](Tape& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        auto gx = t.grad(ix);
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t i = 0; i < chunk; ++i) gx[o * sp.extent * sp.inner + begin * sp.inner + i] += g[o * chunk + i];
    });
}

/// Row `r` of a matrix as a [1 x m] matrix.
inline Var row(Var x, std::size_t r) { return slice(x, 0, r, 1); }

inline Var reshape(Var x, Shape shape) {
    if (shape_size(shape) != x.value().size())
        throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
    Tensor out(std::move(shape), x.value().values());
    const auto ix = x.id();
    return x.tape().record("reshape", std::move(out), {ix}, [=](Tape& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        auto gx = t.grad(ix);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

/// Selects rows of `table` by index.
inline Var embedding(Var table, std::span<const std::size_t> indices) {
    const Tensor& T = table.value();
    detail::require_rank(T, 2, "embedding");
    const std::size_t n = T.dim(0), d = T.dim(1);
    if (indices.empty()) throw ContractError("embedding: no indices");
    Tensor out({indices.size(), d});
    for (std::size_t r = 0; r < indices.size(); ++r) {
        if (indices[r] >= n)
            throw ContractError("embedding: index " + std::to_string(indices[r]) + " outside table of " +
                                std::to_string(n) + " rows");
        std::copy_n(T.values().begin() + static_cast<std::ptrdiff_t>(indices[r] * d), d,
                    out.values().begin() + static_cast<std::ptrdiff_t>(r * d));
    }
    const auto it = table.id();
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    return table.tape().record("embedding", std::move(out), {it}, [=](Tape& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        auto gt = t.grad(it);
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t j = 0; j < d; ++j) gt[idx[r] * d + j] += g[r * d + j];
    });
}

/// Single entry (flat index) as a scalar.
inline Var pick(Var x, std::size_t index) {
    if (index >= x.value().size())
        throw ContractError("pick: index " + std::to_string(index) + " outside " + shape_str(x.shape()));
    const auto ix = x.id();
    return x.tape().record("pick", Tensor::scalar(x.value()[index]), {ix}, [=](Tape& t, std::size_t self) {
        t.grad(ix)[index] += t.node(self).grad[0];
    });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Var sum(Var x) {
    double s = 0.0;
    for (double v : x.value().values()) s += v;
    const auto ix = x.id();
    return x.tape().record("sum", Tensor::scalar(s), {ix}, [=](Tape& t, std::size_t self) {
        const double g = t.node(self).grad[0];
        for (auto& v : t.grad(ix)) v += g;
    });
}

inline Var mean(Var x) {
    const double n = static_cast<double>(x.value().size());
    double s = 0.0;
    for (double v : x.value().values()) s += v;
    const auto ix = x.id();
    return x.tape().record("mean", Tensor::scalar(s / n), {ix}, [=](Tape& t, std::size_t self) {
        const double g = t.node(self).grad[0] / n;
        for (auto& v : t.grad(ix)) v += g;
    });
}

/// Column means of an [n x m] matrix, as [1 x m].
inline Var mean_rows(Var x) {
    const Tensor& X = x.value();
    detail::require_rank(X, 2, "mean_rows");
    const std::size_t n = X.dim(0), m = X.dim(1);
    Tensor out({1, m});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out[j] += X[i * m + j];
    for (auto& v : out.values()) v /= static_cast<double>(n);
    const auto ix = x.id();
    return x.tape().record("mean_rows", std::move(out), {ix}, [=](Tape& t, std::size_t self) {
        const auto& g = t.node(self).grad;
        auto gx = t.grad(ix);
        const double inv = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += g[j] * inv;
    });
}

// ---------------------------------------------------------------------------
// Composites
// ---------------------------------------------------------------------------

/// x W + b, with b optional.
inline Var linear(Var x, Var weight, const Var* bias = nullptr) {
    Var y = matmul(x, weight);
    return bias ? add_row(y, *bias) : y;
}

/// sigma(h) * h, elementwise.
inline Var self_gate(Var h) { return mul(sigmoid(h), h); }

}  // namespace pedformer
