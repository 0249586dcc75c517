#pragma once

// Differentiable ops. Each backward rule is written in terms of other ops in
// this file, which is what makes second-order gradients available.

#include <Eigen/Core>

#include <cstring>
#include <string>
#include <vector>

#include "dmm/nn/tensor.hpp"

namespace dmm::nn {

// clang-format off
template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> neg(const Tensor<T>& x);
template <class T> Tensor<T> scale(const Tensor<T>& x, double c);
template <class T> Tensor<T> add_scalar(const Tensor<T>& x, double c);
template <class T> Tensor<T> exp(const Tensor<T>& x);
template <class T> Tensor<T> log(const Tensor<T>& x);
template <class T> Tensor<T> tanh(const Tensor<T>& x);
template <class T> Tensor<T> sigmoid(const Tensor<T>& x);
template <class T> Tensor<T> relu(const Tensor<T>& x);
template <class T> Tensor<T> square(const Tensor<T>& x);
template <class T> Tensor<T> sqrt(const Tensor<T>& x);
template <class T> Tensor<T> reciprocal(const Tensor<T>& x);
template <class T> Tensor<T> sum_all(const Tensor<T>& x);
template <class T> Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis);
template <class T> Tensor<T> expand_axis(const Tensor<T>& x, std::size_t axis, std::size_t n);
template <class T> Tensor<T> reduce_to_suffix(const Tensor<T>& x, const Shape& shape);
template <class T> Tensor<T> broadcast_suffix(const Tensor<T>& x, const Shape& shape);
template <class T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <class T> Tensor<T> transpose12(const Tensor<T>& x);
template <class T> Tensor<T> slice_axis(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t len);
template <class T> Tensor<T> pad_axis(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t total);
template <class T> Tensor<T> concat_axis(const std::vector<Tensor<T>>& xs, std::size_t axis);
template <class T> Tensor<T> index_select0(const Tensor<T>& x, const std::vector<std::size_t>& idx);
template <class T> Tensor<T> index_add0(const Tensor<T>& x, const std::vector<std::size_t>& idx, std::size_t rows);
template <class T> Tensor<T> mm(const Tensor<T>& a, const Tensor<T>& b, bool ta = false, bool tb = false);
template <class T> Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool ta = false, bool tb = false);
template <class T> Tensor<T> softmax_last(const Tensor<T>& x);
template <class T> Tensor<T> l2_last(const Tensor<T>& x);
// clang-format on

namespace detail {

/// Both operands of a binary op either agree in shape, or the second is a
/// suffix of the first (a bias row, a positional table, a scalar).
template <class T>
bool is_suffix_broadcast(const Tensor<T>& a, const Tensor<T>& b, const char* op)
{
    if (a.shape() == b.shape()) {
        return false;
    }
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    bool ok = b.numel() == 1;
    if (!ok && sb.size() <= sa.size()) {
        ok = std::equal(sb.begin(), sb.end(), sa.end() - static_cast<std::ptrdiff_t>(sb.size()));
    }
    if (!ok) {
        throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(sb) + " onto " + shape_str(sa));
    }
    return true;
}

/// outer x mid x inner decomposition of a shape around one axis.
struct AxisSplit {
    std::size_t outer = 1;
    std::size_t mid = 1;
    std::size_t inner = 1;
};

inline AxisSplit split_at(const Shape& shape, std::size_t axis)
{
    if (axis >= shape.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
    }
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) {
        s.outer *= shape[i];
    }
    s.mid = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) {
        s.inner *= shape[i];
    }
    return s;
}

template <class T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
void gemm(const T* a, std::size_t ar, std::size_t ac, bool ta, const T* b, std::size_t br, std::size_t bc, bool tb,
          T* c)
{
    using CMap = Eigen::Map<const MatRM<T>>;
    const CMap A(a, static_cast<Eigen::Index>(ar), static_cast<Eigen::Index>(ac));
    const CMap B(b, static_cast<Eigen::Index>(br), static_cast<Eigen::Index>(bc));
    const std::size_t m = ta ? ac : ar;
    const std::size_t n = tb ? br : bc;
    Eigen::Map<MatRM<T>> C(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    if (!ta && !tb) {
        C.noalias() = A * B;
    } else if (!ta && tb) {
        C.noalias() = A * B.transpose();
    } else if (ta && !tb) {
        C.noalias() = A.transpose() * B;
    } else {
        C.noalias() = A.transpose() * B.transpose();
    }
}

template <class T, class F>
Tensor<T> unary(const char* op, const Tensor<T>& x, F&& f, typename Node<T>::BackwardFn backward)
{
    std::vector<T> v(x.numel());
    auto xs = x.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = f(xs[i]);
    }
    return make_result<T>(op, x.shape(), std::move(v), {x}, std::move(backward));
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b)
{
    const bool bc = detail::is_suffix_broadcast(a, b, "add");
    std::vector<T> v(a.values().begin(), a.values().end());
    auto bs = b.values();
    const std::size_t nb = b.numel();
    for (std::size_t i = 0; i < v.size(); i += nb) {
        for (std::size_t k = 0; k < nb; ++k) {
            v[i + k] += bs[k];
        }
    }
    return detail::make_result<T>("add", a.shape(), std::move(v), {a, b},
                                  [bc](const Tensor<T>& out, const Tensor<T>& g, const std::vector<bool>& needs) {
                                      std::vector<Tensor<T>> r(2);
                                      if (needs[0]) {
                                          r[0] = g;
                                      }
                                      if (needs[1]) {
                                          r[1] = bc ? reduce_to_suffix(g, out.parent(1).shape()) : g;
                                      }
                                      return r;
                                  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b)
{
    const bool bc = detail::is_suffix_broadcast(a, b, "sub");
    std::vector<T> v(a.values().begin(), a.values().end());
    auto bs = b.values();
    const std::size_t nb = b.numel();
    for (std::size_t i = 0; i < v.size(); i += nb) {
        for (std::size_t k = 0; k < nb; ++k) {
            v[i + k] -= bs[k];
        }
    }
    return detail::make_result<T>("sub", a.shape(), std::move(v), {a, b},
                                  [bc](const Tensor<T>& out, const Tensor<T>& g, const std::vector<bool>& needs) {
                                      std::vector<Tensor<T>> r(2);
                                      if (needs[0]) {
                                          r[0] = g;
                                      }
                                      if (needs[1]) {
                                          r[1] = neg(bc ? reduce_to_suffix(g, out.parent(1).shape()) : g);
                                      }
                                      return r;
                                  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b)
{
    const bool bc = detail::is_suffix_broadcast(a, b, "mul");
    std::vector<T> v(a.values().begin(), a.values().end());
    auto bs = b.values();
    const std::size_t nb = b.numel();
    for (std::size_t i = 0; i < v.size(); i += nb) {
        for (std::size_t k = 0; k < nb; ++k) {
            v[i + k] *= bs[k];
        }
    }
    return detail::make_result<T>("mul", a.shape(), std::move(v), {a, b},
                                  [bc](const Tensor<T>& out, const Tensor<T>& g, const std::vector<bool>& needs) {
                                      std::vector<Tensor<T>> r(2);
                                      const Tensor<T> pa = out.parent(0);
                                      const Tensor<T> pb = out.parent(1);
                                      if (needs[0]) {
                                          r[0] = mul(g, pb);
                                      }
                                      if (needs[1]) {
                                          const Tensor<T> prod = mul(g, pa);
                                          r[1] = bc ? reduce_to_suffix(prod, pb.shape()) : prod;
                                      }
                                      return r;
                                  });
}

template <class T>
Tensor<T> neg(const Tensor<T>& x)
{
    return detail::unary<T>("neg", x, [](T v) { return -v; },
                            [](const Tensor<T>&, const Tensor<T>& g, const std::vector<bool>&) {
                                return std::vector<Tensor<T>>{neg(g)};
                            });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, double c)
{
    const T tc = static_cast<T>(c);
    return detail::unary<T>("scale", x, [tc](T v) { return v * tc; },
                            [c](const Tensor<T>&, const Tensor<T>& g, const std::vector<bool>&) {
                                return std::vector<Tensor<T>>{scale(g, c)};
                            });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, double c)
{
    const T tc = static_cast<T>(c);
    return detail::unary<T>("add_scalar", x, [tc](T v) { return v + tc; },
                            [](const Tensor<T>&, const Tensor<T>& g, const std::vector<bool>&) {
                                return std::vector<Tensor<T>>{g};
                            });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x)
{
    return detail::unary<T>("exp", x, [](T v) { return std::exp(v); },
                            [](const Tensor<T>& out, const Tensor<T>& g, const std::vector<bool>&) {
                                return std::vector<Tensor<T>>{mul(g, out)};
                            });
}

template <class T>
Tensor<T> log(const Tensor<T>& x)
{
    return detail::unary<T>("log", x, [](T v) { return std::log(v); },
                            [](const Tensor<T>& out, const Tensor<T>& g, const std::vector<bool>&) {
                                return std::vector<Tensor<T>>{mul(g, reciprocal(out.parent(0)))};
                            });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x)
{
    return detail::unary<T>("tanh", x, [](T v) { return std::tanh(v); },
                            [](const Tensor<T>& out, const Tensor<T>& g, const std::vector<bool>&) {
                                return std::vector<Tensor<T>>{mul(g, add_scalar(neg(square(out)), 1.0))};
                            });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x)
{
    return detail::unary<T>("sigmoid", x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
                            [](const Tensor<T>& out, const Tensor<T>& g, const std::vector<bool>&) {
                                return std::vector<Tensor<T>>{mul(g, mul(out, add_scalar(neg(out), 1.0)))};
                            });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x)
{
    return detail::unary<T>("relu", x, [](T v) { return v > T(0) ? v : T(0); },
                            [](const Tensor<T>& out, const Tensor<T>& g, const std::vector<bool>&) {
                                auto xs = out.parent(0).values();
                                std::vector<T> step(xs.size());
                                for (std::size_t i = 0; i < xs.size(); ++i) {
                                    step[i] = xs[i] > T(0) ? T(1) : T(0);
                                }
                                return std::vector<Tensor<T>>{mul(g, Tensor<T>::constant(g.shape(), std::move(step)))};
                            });
}

template <class T>
Tensor<T> square(const Tensor<T>& x)
{
    return detail::unary<T>("square", x, [](T v) { return v * v; },
                            [](const Tensor<T>& out, const Tensor<T>& g, const std::vector<bool>&) {
                                return std::vector<Tensor<T>>{mul(g, scale(out.parent(0), 2.0))};
                            });
}

/// Gradient at exactly zero is taken as zero rather than infinite.
template <class T>
Tensor<T> sqrt(const Tensor<T>& x)
{
    return detail::unary<T>("sqrt", x, [](T v) { return std::sqrt(v); },
                            [](const Tensor<T>& out, const Tensor<T>& g, const std::vector<bool>&) {
                                return std::vector<Tensor<T>>{mul(g, scale(reciprocal(out), 0.5))};
                            });
}

/// 1/x, with 1/0 defined as 0.
template <class T>
Tensor<T> reciprocal(const Tensor<T>& x)
{
    return detail::unary<T>("reciprocal", x, [](T v) { return v != T(0) ? T(1) / v : T(0); },
                            [](const Tensor<T>& out, const Tensor<T>& g, const std::vector<bool>&) {
                                return std::vector<Tensor<T>>{mul(g, neg(square(out)))};
                            });
}

// ---------------------------------------------------------------------------
// Reductions and broadcasts

template <class T>
Tensor<T> sum_all(const Tensor<T>& x)
{
    T s = T(0);
    for (const T v : x.values()) {
        s += v;
    }
    return detail::make_result<T>("sum_all", {1}, {s}, {x},
                                  [](const Tensor<T>& out, const Tensor<T>& g, const std::vector<bool>&) {
                                      return std::vector<Tensor<T>>{broadcast_suffix(g, out.parent(0).shape())};
                                  });
}

template <class T>
Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis)
{
    const auto s = detail::split_at(x.shape(), axis);
    Shape shape = x.shape();
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
    if (shape.empty()) {
        shape = {1};
    }
    std::vector<T> v(s.outer * s.inner, T(0));
    auto xs = x.values();
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t m = 0; m < s.mid; ++m) {
            const T* src = xs.data() + (o * s.mid + m) * s.inner;
            T* dst = v.data() + o * s.inner;
            for (std::size_t i = 0; i < s.inner; ++i) {
                dst[i] += src[i];
            }
        }
    }
    const std::size_t n = s.mid;
    return detail::make_result<T>("sum_axis", std::move(shape), std::move(v), {x},
                                  [axis, n](const Tensor<T>& out, const Tensor<T>& g, const std::vector<bool>&) {
                                      const Tensor<T> x0 = out.parent(0);
                                      Shape keep = x0.shape();
                                      keep.erase(keep.begin() + static_cast<std::ptrdiff_t>(axis));
                                      return std::vector<Tensor<T>>{
                                          reshape(expand_axis(keep.empty() ? g : reshape(g, keep), axis, n), x0.shape())};
                                  });
}

/// Inserts a new axis of size n at `axis`, repeating the input along it.
template <class T>
Tensor<T> expand_axis(const Tensor<T>& x, std::size_t axis, std::size_t n)
{
    Shape shape = x.shape();
    if (axis > shape.size()) {
        throw ShapeError("expand_axis: axis out of range");
    }
    shape.insert(shape.begin() + static_cast<std::ptrdiff_t>(axis), n);
    const auto s = detail::split_at(shape, axis);
    std::vector<T> v(numel_of(shape));
    auto xs = x.values();
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t m = 0; m < n; ++m) {
            std::memcpy(v.data() + (o * n + m) * s.inner, xs.data() + o * s.inner, s.inner * sizeof(T));
        }
    }
    return detail::make_result<T>("expand_axis", std::move(shape), std::move(v), {x},
                                  [axis](const Tensor<T>&, const Tensor<T>& g, const std::vector<bool>&) {
                                      return std::vector<Tensor<T>>{sum_axis(g, axis)};
                                  });
}

/// Sums leading blocks of x so the result has `shape` (a suffix of x's shape, or numel 1).
template <class T>
Tensor<T> reduce_to_suffix(const Tensor<T>& x, const Shape& shape)
{
    const std::size_t nb = numel_of(shape);
    if (nb == 0 || x.numel() % nb != 0) {
        throw ShapeError("reduce_to_suffix: incompatible shapes");
    }
    std::vector<T> v(nb, T(0));
    auto xs = x.values();
    for (std::size_t i = 0; i < xs.size(); i += nb) {
        for (std::size_t k = 0; k < nb; ++k) {
            v[k] += xs[i + k];
        }
    }
    return detail::make_result<T>("reduce_to_suffix", shape, std::move(v), {x},
                                  [](const Tensor<T>& out, const Tensor<T>& g, const std::vector<bool>&) {
                                      return std::vector<Tensor<T>>{broadcast_suffix(g, out.parent(0).shape())};
                                  });
}

template <class T>
Tensor<T> broadcast_suffix(const Tensor<T>& x, const Shape& shape)
{
    const std::size_t n = numel_of(shape);
    const std::size_t nb = x.numel();
    if (nb == 0 || n % nb != 0) {
        throw ShapeError("broadcast_suffix: incompatible shapes " + shape_str(x.shape()) + " -> " + shape_str(shape));
    }
    std::vector<T> v(n);
    auto xs = x.values();
    for (std::size_t i = 0; i < n; i += nb) {
        std::memcpy(v.data() + i, xs.data(), nb * sizeof(T));
    }
    return detail::make_result<T>("broadcast_suffix", shape, std::move(v), {x},
                                  [](const Tensor<T>& out, const Tensor<T>& g, const std::vector<bool>&) {
                                      return std::vector<Tensor<T>>{reduce_to_suffix(g, out.parent(0).shape())};
                                  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape)
{
    if (numel_of(shape) != x.numel()) {
        throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
    }
    std::vector<T> v(x.values().begin(), x.values().end());
    return detail::make_result<T>("reshape", std::move(shape), std::move(v), {x},
                                  [](const Tensor<T>& out, const Tensor<T>& g, const std::vector<bool>&) {
                                      return std::vector<Tensor<T>>{reshape(g, out.parent(0).shape())};
                                  });
}

/// [a, b, c, d] -> [a, c, b, d]
template <class T>
Tensor<T> transpose12(const Tensor<T>& x)
{
    if (x.rank() != 4) {
        throw ShapeError("transpose12 expects rank 4, got " + shape_str(x.shape()));
    }
    const std::size_t A = x.dim(0), B = x.dim(1), C = x.dim(2), D = x.dim(3);
    std::vector<T> v(x.numel());
    auto xs = x.values();
    for (std::size_t a = 0; a < A; ++a) {
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t c = 0; c < C; ++c) {
                std::memcpy(v.data() + ((a * C + c) * B + b) * D, xs.data() + ((a * B + b) * C + c) * D, D * sizeof(T));
            }
        }
    }
    return detail::make_result<T>("transpose12", {A, C, B, D}, std::move(v), {x},
                                  [](const Tensor<T>&, const Tensor<T>& g, const std::vector<bool>&) {
                                      return std::vector<Tensor<T>>{transpose12(g)};
                                  });
}

template <class T>
Tensor<T> slice_axis(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t len)
{
    const auto s = detail::split_at(x.shape(), axis);
    if (start + len > s.mid) {
        throw ShapeError("slice_axis out of range on " + shape_str(x.shape()));
    }
    Shape shape = x.shape();
    shape[axis] = len;
    std::vector<T> v(s.outer * len * s.inner);
    auto xs = x.values();
    for (std::size_t o = 0; o < s.outer; ++o) {
        std::memcpy(v.data() + o * len * s.inner, xs.data() + (o * s.mid + start) * s.inner, len * s.inner * sizeof(T));
    }
    const std::size_t total = s.mid;
    return detail::make_result<T>("slice_axis", std::move(shape), std::move(v), {x},
                                  [axis, start, total](const Tensor<T>&, const Tensor<T>& g, const std::vector<bool>&) {
                                      return std::vector<Tensor<T>>{pad_axis(g, axis, start, total)};
                                  });
}

/// Zero-pads along `axis` so x occupies [start, start + x.dim(axis)) of `total`.
template <class T>
Tensor<T> pad_axis(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t total)
{
    const auto s = detail::split_at(x.shape(), axis);
    if (start + s.mid > total) {
        throw ShapeError("pad_axis out of range");
    }
    Shape shape = x.shape();
    shape[axis] = total;
    std::vector<T> v(s.outer * total * s.inner, T(0));
    auto xs = x.values();
    for (std::size_t o = 0; o < s.outer; ++o) {
        std::memcpy(v.data() + (o * total + start) * s.inner, xs.data() + o * s.mid * s.inner, s.mid * s.inner * sizeof(T));
    }
    const std::size_t len = s.mid;
    return detail::make_result<T>("pad_axis", std::move(shape), std::move(v), {x},
                                  [axis, start, len](const Tensor<T>&, const Tensor<T>& g, const std::vector<bool>&) {
                                      return std::vector<Tensor<T>>{slice_axis(g, axis, start, len)};
                                  });
}

template <class T>
Tensor<T> concat_axis(const std::vector<Tensor<T>>& xs, std::size_t axis)
{
    if (xs.empty()) {
        throw ShapeError("concat of empty list");
    }
    Shape shape = xs[0].shape();
    std::size_t total = 0;
    std::vector<std::size_t> sizes;
    for (const auto& x : xs) {
        Shape a = x.shape();
        Shape b = shape;
        if (a.size() != b.size() || axis >= a.size()) {
            throw ShapeError("concat rank mismatch");
        }
        a[axis] = b[axis] = 0;
        if (a != b) {
            throw ShapeError("concat shape mismatch: " + shape_str(x.shape()) + " vs " + shape_str(shape));
        }
        sizes.push_back(x.dim(axis));
        total += x.dim(axis);
    }
    shape[axis] = total;
    const auto s = detail::split_at(shape, axis);
    std::vector<T> v(numel_of(shape));
    std::size_t offset = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        auto src = xs[k].values();
        const std::size_t len = sizes[k];
        for (std::size_t o = 0; o < s.outer; ++o) {
            std::memcpy(v.data() + (o * total + offset) * s.inner, src.data() + o * len * s.inner, len * s.inner * sizeof(T));
        }
        offset += len;
    }
    return detail::make_result<T>("concat_axis", std::move(shape), std::move(v), xs,
                                  [axis, sizes](const Tensor<T>&, const Tensor<T>& g, const std::vector<bool>& needs) {
                                      std::vector<Tensor<T>> r(sizes.size());
                                      std::size_t off = 0;
                                      for (std::size_t k = 0; k < sizes.size(); ++k) {
                                          if (needs[k]) {
                                              r[k] = slice_axis(g, axis, off, sizes[k]);
                                          }
                                          off += sizes[k];
                                      }
                                      return r;
                                  });
}

/// Gathers rows (slices along axis 0).
template <class T>
Tensor<T> index_select0(const Tensor<T>& x, const std::vector<std::size_t>& idx)
{
    const std::size_t rows = x.dim(0);
    const std::size_t inner = x.numel() / rows;
    Shape shape = x.shape();
    shape[0] = idx.size();
    std::vector<T> v(idx.size() * inner);
    auto xs = x.values();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= rows) {
            throw ShapeError("index_select0 index out of range");
        }
        std::memcpy(v.data() + i * inner, xs.data() + idx[i] * inner, inner * sizeof(T));
    }
    return detail::make_result<T>("index_select0", std::move(shape), std::move(v), {x},
                                  [idx, rows](const Tensor<T>&, const Tensor<T>& g, const std::vector<bool>&) {
                                      return std::vector<Tensor<T>>{index_add0(g, idx, rows)};
                                  });
}

/// Scatter-adds rows of x into a zero tensor with `rows` rows.
template <class T>
Tensor<T> index_add0(const Tensor<T>& x, const std::vector<std::size_t>& idx, std::size_t rows)
{
    if (x.dim(0) != idx.size()) {
        throw ShapeError("index_add0 index count mismatch");
    }
    const std::size_t inner = idx.empty() ? 0 : x.numel() / idx.size();
    Shape shape = x.shape();
    shape[0] = rows;
    std::vector<T> v(rows * inner, T(0));
    auto xs = x.values();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        T* dst = v.data() + idx[i] * inner;
        const T* src = xs.data() + i * inner;
        for (std::size_t k = 0; k < inner; ++k) {
            dst[k] += src[k];
        }
    }
    return detail::make_result<T>("index_add0", std::move(shape), std::move(v), {x},
                                  [idx](const Tensor<T>&, const Tensor<T>& g, const std::vector<bool>&) {
                                      return std::vector<Tensor<T>>{index_select0(g, idx)};
                                  });
}

// ---------------------------------------------------------------------------
// Products

/// op(a) * op(b). Without `ta`, a may carry leading batch dims that are kept
/// in the result; b is always a matrix.
template <class T>
Tensor<T> mm(const Tensor<T>& a, const Tensor<T>& b, bool ta, bool tb)
{
    if (b.rank() != 2 || (ta && a.rank() != 2) || a.rank() < 1) {
        throw ShapeError("mm: unsupported ranks " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const std::size_t ac = a.shape().back();
    const std::size_t ar = a.numel() / ac;
    const std::size_t k = ta ? ar : ac;
    const std::size_t kb = tb ? b.dim(1) : b.dim(0);
    if (k != kb) {
        throw ShapeError("mm: inner dims differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const std::size_t n = tb ? b.dim(0) : b.dim(1);
    Shape shape;
    if (ta) {
        shape = {ac, n};
    } else {
        shape = a.shape();
        shape.back() = n;
    }
    std::vector<T> v(numel_of(shape));
    detail::gemm(a.values().data(), ar, ac, ta, b.values().data(), b.dim(0), b.dim(1), tb, v.data());
    return detail::make_result<T>(
        "mm", std::move(shape), std::move(v), {a, b},
        [ta, tb](const Tensor<T>& out, const Tensor<T>& g, const std::vector<bool>& needs) {
            std::vector<Tensor<T>> r(2);
            const Tensor<T> pa = out.parent(0);
            const Tensor<T> pb = out.parent(1);
            if (needs[0]) {
                r[0] = ta ? mm(pb, g, tb, true) : mm(g, pb, false, !tb);
            }
            if (needs[1]) {
                const std::size_t ac2 = pa.shape().back();
                const Tensor<T> a2 = pa.rank() == 2 ? pa : reshape(pa, {pa.numel() / ac2, ac2});
                const Tensor<T> g2 = g.rank() == 2 ? g : reshape(g, {g.numel() / g.shape().back(), g.shape().back()});
                r[1] = tb ? mm(g2, a2, true, ta) : mm(a2, g2, !ta, false);
            }
            return r;
        });
}

/// Batched op(a) * op(b) over matching leading dims.
template <class T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool ta, bool tb)
{
    if (a.rank() < 3 || a.rank() != b.rank() ||
        !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
        throw ShapeError("bmm: shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const std::size_t r = a.rank();
    const std::size_t ar = a.dim(r - 2), ac = a.dim(r - 1);
    const std::size_t br = b.dim(r - 2), bc = b.dim(r - 1);
    const std::size_t m = ta ? ac : ar;
    const std::size_t k = ta ? ar : ac;
    const std::size_t kb = tb ? bc : br;
    const std::size_t n = tb ? br : bc;
    if (k != kb) {
        throw ShapeError("bmm: inner dims differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const std::size_t batches = a.numel() / (ar * ac);
    Shape shape = a.shape();
    shape[r - 2] = m;
    shape[r - 1] = n;
    std::vector<T> v(batches * m * n);
    const T* ap = a.values().data();
    const T* bp = b.values().data();
    for (std::size_t i = 0; i < batches; ++i) {
        detail::gemm(ap + i * ar * ac, ar, ac, ta, bp + i * br * bc, br, bc, tb, v.data() + i * m * n);
    }
    return detail::make_result<T>("bmm", std::move(shape), std::move(v), {a, b},
                                  [ta, tb](const Tensor<T>& out, const Tensor<T>& g, const std::vector<bool>& needs) {
                                      std::vector<Tensor<T>> res(2);
                                      const Tensor<T> pa = out.parent(0);
                                      const Tensor<T> pb = out.parent(1);
                                      if (needs[0]) {
                                          res[0] = ta ? bmm(pb, g, tb, true) : bmm(g, pb, false, !tb);
                                      }
                                      if (needs[1]) {
                                          res[1] = tb ? bmm(g, pa, true, ta) : bmm(pa, g, !ta, false);
                                      }
                                      return res;
                                  });
}

// ---------------------------------------------------------------------------
// Row-wise

template <class T>
Tensor<T> softmax_last(const Tensor<T>& x)
{
    const std::size_t n = x.shape().back();
    std::vector<T> v(x.numel());
    auto xs = x.values();
    for (std::size_t row = 0; row < x.numel(); row += n) {
        T mx = xs[row];
        for (std::size_t k = 1; k < n; ++k) {
            mx = std::max(mx, xs[row + k]);
        }
        T sum = T(0);
        for (std::size_t k = 0; k < n; ++k) {
            v[row + k] = std::exp(xs[row + k] - mx);
            sum += v[row + k];
        }
        for (std::size_t k = 0; k < n; ++k) {
            v[row + k] /= sum;
        }
    }
    return detail::make_result<T>("softmax_last", x.shape(), std::move(v), {x},
                                  [n](const Tensor<T>& out, const Tensor<T>& g, const std::vector<bool>&) {
                                      const std::size_t last = out.rank() - 1;
                                      const Tensor<T> dot = expand_axis(sum_axis(mul(g, out), last), last, n);
                                      return std::vector<Tensor<T>>{mul(out, sub(g, dot))};
                                  });
}

/// Euclidean norm over the last axis (which is removed).
template <class T>
Tensor<T> l2_last(const Tensor<T>& x)
{
    const std::size_t n = x.shape().back();
    Shape shape = x.shape();
    shape.pop_back();
    if (shape.empty()) {
        shape = {1};
    }
    std::vector<T> v(x.numel() / n);
    auto xs = x.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
        T s = T(0);
        for (std::size_t k = 0; k < n; ++k) {
            s += xs[i * n + k] * xs[i * n + k];
        }
        v[i] = std::sqrt(s);
    }
    return detail::make_result<T>("l2_last", std::move(shape), std::move(v), {x},
                                  [n](const Tensor<T>& out, const Tensor<T>& g, const std::vector<bool>&) {
                                      const Tensor<T> x0 = out.parent(0);
                                      Shape lead = x0.shape();
                                      lead.pop_back();
                                      Tensor<T> w = mul(g, reciprocal(out));
                                      w = lead.empty() ? broadcast_suffix(w, x0.shape())
                                                       : reshape(expand_axis(reshape(w, lead), lead.size(), n), x0.shape());
                                      return std::vector<Tensor<T>>{mul(x0, w)};
                                  });
}

// ---------------------------------------------------------------------------
// Convenience

template <class T>
Tensor<T> mean_all(const Tensor<T>& x)
{
    return scale(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

template <class T>
Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis)
{
    return scale(sum_axis(x, axis), 1.0 / static_cast<double>(x.dim(axis)));
}

} // namespace dmm::nn
