// Copyright Contributors to the splatmamba project
// SPDX-License-Identifier: Apache-2.0

#include "splatmamba/autodiff/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace sm::ad {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

template <typename T>
using NodeT = detail::Node<T>;

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
    if (!t.defined() || t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                             (t.defined() ? shape_str(t.shape()) : std::string("undefined")));
    }
}

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) {
        return false;
    }
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b, F f, DA dfa, DB dfb) {
    Shape out_shape;
    if (is_suffix(b.shape(), a.shape())) {
        out_shape = a.shape();
    } else if (is_suffix(a.shape(), b.shape())) {
        out_shape = b.shape();
    } else {
        throw DimensionError(std::string(name) + ": cannot broadcast " + shape_str(a.shape()) + " with " +
                             shape_str(b.shape()));
    }
    const std::size_t n = shape_numel(out_shape);
    const std::size_t na = a.numel();
    const std::size_t nb = b.numel();
    auto av = a.data();
    auto bv = b.data();
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = f(av[i % na], bv[i % nb]);
    }
    return make_op<T>(name, out_shape, std::move(out), {a, b}, [n, na, nb, dfa, dfb](NodeT<T>& self) {
        auto& an = *self.inputs[0];
        auto& bn = *self.inputs[1];
        const auto& g = self.grad;
        if (an.requires_grad) {
            auto& ga = an.grad_buffer();
            for (std::size_t i = 0; i < n; ++i) {
                ga[i % na] += g[i] * dfa(an.value[i % na], bn.value[i % nb]);
            }
        }
        if (bn.requires_grad) {
            auto& gb = bn.grad_buffer();
            for (std::size_t i = 0; i < n; ++i) {
                gb[i % nb] += g[i] * dfb(an.value[i % na], bn.value[i % nb]);
            }
        }
    });
}

// f is the value, df the derivative expressed via (input, output).
template <typename T, typename F, typename DF>
Tensor<T> unary_op(const char* name, const Tensor<T>& x, F f, DF df) {
    const std::size_t n = x.numel();
    auto xv = x.data();
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = f(xv[i]);
    }
    return make_op<T>(name, x.shape(), std::move(out), {x}, [n, df](NodeT<T>& self) {
        auto& xn = *self.inputs[0];
        auto& gx = xn.grad_buffer();
        for (std::size_t i = 0; i < n; ++i) {
            gx[i] += self.grad[i] * df(xn.value[i], self.value[i]);
        }
    });
}

template <typename T>
T stable_sigmoid(T x) {
    if (x >= T(0)) {
        return T(1) / (T(1) + std::exp(-x));
    }
    const T e = std::exp(x);
    return e / (T(1) + e);
}

} // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw DimensionError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " . " +
                             shape_str(b.shape()));
    }
    std::vector<T> out(m * n);
    MutMap<T>(out.data(), m, n).noalias() = ConstMap<T>(a.data().data(), m, k) * ConstMap<T>(b.data().data(), k, n);
    return make_op<T>("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](NodeT<T>& self) {
        auto& an = *self.inputs[0];
        auto& bn = *self.inputs[1];
        ConstMap<T> g(self.grad.data(), m, n);
        if (an.requires_grad) {
            MutMap<T>(an.grad_buffer().data(), m, k).noalias() += g * ConstMap<T>(bn.value.data(), k, n).transpose();
        }
        if (bn.requires_grad) {
            MutMap<T>(bn.grad_buffer().data(), k, n).noalias() += ConstMap<T>(an.value.data(), m, k).transpose() * g;
        }
    });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    require_rank(x, 2, "linear");
    require_rank(weight, 2, "linear");
    const auto m = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
    if (weight.dim(1) != in) {
        throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
    }
    const bool has_bias = bias.defined();
    if (has_bias && (bias.rank() != 1 || bias.dim(0) != out_dim)) {
        throw DimensionError("linear: bias " + shape_str(bias.shape()) + " vs out dim " + std::to_string(out_dim));
    }
    std::vector<T> out(m * out_dim);
    MutMap<T> y(out.data(), m, out_dim);
    y.noalias() = ConstMap<T>(x.data().data(), m, in) * ConstMap<T>(weight.data().data(), out_dim, in).transpose();
    if (has_bias) {
        y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data().data(), out_dim);
    }
    std::vector<Tensor<T>> inputs{x, weight};
    if (has_bias) {
        inputs.push_back(bias);
    }
    return make_op<T>("linear", {m, out_dim}, std::move(out), std::move(inputs),
                      [m, in, out_dim, has_bias](NodeT<T>& self) {
                          auto& xn = *self.inputs[0];
                          auto& wn = *self.inputs[1];
                          ConstMap<T> g(self.grad.data(), m, out_dim);
                          if (xn.requires_grad) {
                              MutMap<T>(xn.grad_buffer().data(), m, in).noalias() +=
                                  g * ConstMap<T>(wn.value.data(), out_dim, in);
                          }
                          if (wn.requires_grad) {
                              MutMap<T>(wn.grad_buffer().data(), out_dim, in).noalias() +=
                                  g.transpose() * ConstMap<T>(xn.value.data(), m, in);
                          }
                          if (has_bias && self.inputs[2]->requires_grad) {
                              auto& gb = self.inputs[2]->grad_buffer();
                              for (std::size_t r = 0; r < m; ++r) {
                                  for (std::size_t c = 0; c < out_dim; ++c) {
                                      gb[c] += self.grad[r * out_dim + c];
                                  }
                              }
                          }
                      });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    return unary_op<T>(
        "scale", a, [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T offset) {
    return unary_op<T>(
        "add_scalar", a, [offset](T x) { return x + offset; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return unary_op<T>(
        "sigmoid", x, [](T v) { return stable_sigmoid(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
    return unary_op<T>(
        "silu", x, [](T v) { return v * stable_sigmoid(v); },
        [](T v, T) {
            const T s = stable_sigmoid(v);
            return s * (T(1) + v * (T(1) - s));
        });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
    return unary_op<T>(
        "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
    return unary_op<T>(
        "softplus", x,
        [](T v) { return v > T(20) ? v : std::log1p(std::exp(v)); },
        [](T v, T) { return stable_sigmoid(v); });
}

template <typename T>
Tensor<T> clamp_max(const Tensor<T>& x, T hi) {
    return unary_op<T>(
        "clamp_max", x, [hi](T v) { return std::min(v, hi); }, [hi](T v, T) { return v < hi ? T(1) : T(0); });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    if (x.rank() < 1) {
        throw DimensionError("layer_norm: scalar input");
    }
    const std::size_t d = x.shape().back();
    const std::size_t rows = x.numel() / d;
    const bool has_gamma = gamma.defined();
    const bool has_beta = beta.defined();
    if ((has_gamma && gamma.numel() != d) || (has_beta && beta.numel() != d)) {
        throw DimensionError("layer_norm: affine parameters must have " + std::to_string(d) + " entries");
    }
    auto xv = x.data();
    std::vector<T> xhat(x.numel());
    std::vector<T> rstd(rows);
    std::vector<T> out(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = xv.data() + r * d;
        double mu = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            mu += row[c];
        }
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            const double dv = row[c] - mu;
            var += dv * dv;
        }
        var /= static_cast<double>(d);
        const T rs = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        rstd[r] = rs;
        for (std::size_t c = 0; c < d; ++c) {
            const T xh = (row[c] - static_cast<T>(mu)) * rs;
            xhat[r * d + c] = xh;
            T y = has_gamma ? xh * gamma.data()[c] : xh;
            if (has_beta) {
                y += beta.data()[c];
            }
            out[r * d + c] = y;
        }
    }
    std::vector<Tensor<T>> inputs{x};
    if (has_gamma) {
        inputs.push_back(gamma);
    }
    if (has_beta) {
        inputs.push_back(beta);
    }
    return make_op<T>(
        "layer_norm", x.shape(), std::move(out), std::move(inputs),
        [rows, d, has_gamma, has_beta, xhat = std::move(xhat), rstd = std::move(rstd)](NodeT<T>& self) {
            auto& xn = *self.inputs[0];
            NodeT<T>* gn = has_gamma ? self.inputs[1].get() : nullptr;
            NodeT<T>* bn = has_beta ? self.inputs[has_gamma ? 2 : 1].get() : nullptr;
            const auto& g = self.grad;
            if (gn && gn->requires_grad) {
                auto& gg = gn->grad_buffer();
                for (std::size_t i = 0; i < rows * d; ++i) {
                    gg[i % d] += g[i] * xhat[i];
                }
            }
            if (bn && bn->requires_grad) {
                auto& gb = bn->grad_buffer();
                for (std::size_t i = 0; i < rows * d; ++i) {
                    gb[i % d] += g[i];
                }
            }
            if (xn.requires_grad) {
                auto& gx = xn.grad_buffer();
                std::vector<T> dxh(d);
                for (std::size_t r = 0; r < rows; ++r) {
                    T m1 = 0, m2 = 0;
                    for (std::size_t c = 0; c < d; ++c) {
                        dxh[c] = g[r * d + c] * (gn ? gn->value[c] : T(1));
                        m1 += dxh[c];
                        m2 += dxh[c] * xhat[r * d + c];
                    }
                    m1 /= static_cast<T>(d);
                    m2 /= static_cast<T>(d);
                    for (std::size_t c = 0; c < d; ++c) {
                        gx[r * d + c] += rstd[r] * (dxh[c] - m1 - xhat[r * d + c] * m2);
                    }
                }
            }
        });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    if (axis >= x.rank()) {
        throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
    }
    const auto& s = x.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) {
        outer *= s[i];
    }
    for (std::size_t i = axis + 1; i < s.size(); ++i) {
        inner *= s[i];
    }
    const std::size_t len = s[axis];
    auto xv = x.data();
    std::vector<T> out(x.numel());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            T mx = xv[base];
            for (std::size_t k = 1; k < len; ++k) {
                mx = std::max(mx, xv[base + k * inner]);
            }
            T z = 0;
            for (std::size_t k = 0; k < len; ++k) {
                const T e = std::exp(xv[base + k * inner] - mx);
                out[base + k * inner] = e;
                z += e;
            }
            for (std::size_t k = 0; k < len; ++k) {
                out[base + k * inner] /= z;
            }
        }
    }
    return make_op<T>("softmax", s, std::move(out), {x}, [outer, inner, len](NodeT<T>& self) {
        auto& gx = self.inputs[0]->grad_buffer();
        const auto& y = self.value;
        const auto& g = self.grad;
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * len * inner + in;
                T dot = 0;
                for (std::size_t k = 0; k < len; ++k) {
                    dot += g[base + k * inner] * y[base + k * inner];
                }
                for (std::size_t k = 0; k < len; ++k) {
                    const std::size_t i = base + k * inner;
                    gx[i] += y[i] * (g[i] - dot);
                }
            }
        }
    });
}

template <typename T>
Tensor<T> depthwise_conv1d(const Tensor<T>& x, const Tensor<T>& kernel, bool causal) {
    require_rank(x, 2, "depthwise_conv1d");
    require_rank(kernel, 2, "depthwise_conv1d");
    const std::size_t len = x.dim(0), d = x.dim(1), w = kernel.dim(0);
    if (w < 1 || kernel.dim(1) != d) {
        throw DimensionError("depthwise_conv1d: kernel " + shape_str(kernel.shape()) + " vs input " +
                             shape_str(x.shape()));
    }
    const std::ptrdiff_t offset = causal ? 0 : static_cast<std::ptrdiff_t>((w - 1) / 2);
    auto xv = x.data();
    auto kv = kernel.data();
    std::vector<T> out(len * d, T(0));
    for (std::size_t t = 0; t < len; ++t) {
        for (std::size_t j = 0; j < w; ++j) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) - static_cast<std::ptrdiff_t>(j) + offset;
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) {
                continue;
            }
            const T* xr = xv.data() + static_cast<std::size_t>(src) * d;
            const T* kr = kv.data() + j * d;
            T* yr = out.data() + t * d;
            for (std::size_t c = 0; c < d; ++c) {
                yr[c] += kr[c] * xr[c];
            }
        }
    }
    return make_op<T>("depthwise_conv1d", {len, d}, std::move(out), {x, kernel},
                      [len, d, w, offset](NodeT<T>& self) {
                          auto& xn = *self.inputs[0];
                          auto& kn = *self.inputs[1];
                          T* gx = xn.requires_grad ? xn.grad_buffer().data() : nullptr;
                          T* gk = kn.requires_grad ? kn.grad_buffer().data() : nullptr;
                          for (std::size_t t = 0; t < len; ++t) {
                              const T* gy = self.grad.data() + t * d;
                              for (std::size_t j = 0; j < w; ++j) {
                                  const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) -
                                                             static_cast<std::ptrdiff_t>(j) + offset;
                                  if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) {
                                      continue;
                                  }
                                  const std::size_t s = static_cast<std::size_t>(src);
                                  for (std::size_t c = 0; c < d; ++c) {
                                      if (gx) {
                                          gx[s * d + c] += kn.value[j * d + c] * gy[c];
                                      }
                                      if (gk) {
                                          gk[j * d + c] += xn.value[s * d + c] * gy[c];
                                      }
                                  }
                              }
                          }
                      });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
    }
    std::vector<T> out(x.data().begin(), x.data().end());
    return make_op<T>("reshape", std::move(shape), std::move(out), {x}, [](NodeT<T>& self) {
        auto& gx = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += self.grad[i];
        }
    });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end) {
    if (x.rank() < 1 || begin > end || end > x.dim(0)) {
        throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                             shape_str(x.shape()));
    }
    const std::size_t row = x.numel() / x.dim(0);
    Shape shape = x.shape();
    shape[0] = end - begin;
    std::vector<T> out(x.data().begin() + static_cast<std::ptrdiff_t>(begin * row),
                       x.data().begin() + static_cast<std::ptrdiff_t>(end * row));
    return make_op<T>("slice_rows", std::move(shape), std::move(out), {x}, [begin, row](NodeT<T>& self) {
        auto& gx = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            gx[begin * row + i] += self.grad[i];
        }
    });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end) {
    require_rank(x, 2, "slice_cols");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    if (begin > end || end > cols) {
        throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                             shape_str(x.shape()));
    }
    const std::size_t width = end - begin;
    std::vector<T> out(rows * width);
    auto xv = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(xv.data() + r * cols + begin, width, out.data() + r * width);
    }
    return make_op<T>("slice_cols", {rows, width}, std::move(out), {x}, [rows, cols, begin, width](NodeT<T>& self) {
        auto& gx = self.inputs[0]->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < width; ++c) {
                gx[r * cols + begin + c] += self.grad[r * width + c];
            }
        }
    });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) {
        throw DimensionError("concat_rows: no inputs");
    }
    Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
    std::size_t rows = 0;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        if (p.rank() < 1 || !std::equal(tail.begin(), tail.end(), p.shape().begin() + 1, p.shape().end())) {
            throw DimensionError("concat_rows: incompatible part " + shape_str(p.shape()));
        }
        offsets.push_back(rows);
        rows += p.dim(0);
    }
    const std::size_t row = shape_numel(tail);
    std::vector<T> out;
    out.reserve(rows * row);
    for (const auto& p : parts) {
        out.insert(out.end(), p.data().begin(), p.data().end());
    }
    Shape shape{rows};
    shape.insert(shape.end(), tail.begin(), tail.end());
    return make_op<T>("concat_rows", std::move(shape), std::move(out), parts, [offsets, row](NodeT<T>& self) {
        for (std::size_t k = 0; k < self.inputs.size(); ++k) {
            auto& in = *self.inputs[k];
            if (!in.requires_grad) {
                continue;
            }
            auto& g = in.grad_buffer();
            const std::size_t base = offsets[k] * row;
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[base + i];
            }
        }
    });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    double acc = 0.0;
    for (T v : x.data()) {
        acc += v;
    }
    return make_op<T>("sum", {1}, {static_cast<T>(acc)}, {x}, [](NodeT<T>& self) {
        auto& gx = self.inputs[0]->grad_buffer();
        for (auto& g : gx) {
            g += self.grad[0];
        }
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("mse: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const std::size_t n = a.numel();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dv = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
        acc += dv * dv;
    }
    return make_op<T>("mse", {1}, {static_cast<T>(acc / static_cast<double>(n))}, {a, b}, [n](NodeT<T>& self) {
        auto& an = *self.inputs[0];
        auto& bn = *self.inputs[1];
        const T k = T(2) * self.grad[0] / static_cast<T>(n);
        if (an.requires_grad) {
            auto& ga = an.grad_buffer();
            for (std::size_t i = 0; i < n; ++i) {
                ga[i] += k * (an.value[i] - bn.value[i]);
            }
        }
        if (bn.requires_grad) {
            auto& gb = bn.grad_buffer();
            for (std::size_t i = 0; i < n; ++i) {
                gb[i] -= k * (an.value[i] - bn.value[i]);
            }
        }
    });
}

template <typename T>
Tensor<T> normalize_rows(const Tensor<T>& x, const std::vector<T>& fallback, T eps) {
    require_rank(x, 2, "normalize_rows");
    const std::size_t rows = x.dim(0), k = x.dim(1);
    if (fallback.size() != k) {
        throw DimensionError("normalize_rows: fallback has " + std::to_string(fallback.size()) + " entries, need " +
                             std::to_string(k));
    }
    auto xv = x.data();
    std::vector<T> out(rows * k);
    std::vector<T> inv_norm(rows, T(0));
    for (std::size_t r = 0; r < rows; ++r) {
        T nrm2 = 0;
        for (std::size_t c = 0; c < k; ++c) {
            nrm2 += xv[r * k + c] * xv[r * k + c];
        }
        const T nrm = std::sqrt(nrm2);
        if (nrm < eps) {
            std::copy(fallback.begin(), fallback.end(), out.begin() + static_cast<std::ptrdiff_t>(r * k));
            continue;
        }
        inv_norm[r] = T(1) / nrm;
        for (std::size_t c = 0; c < k; ++c) {
            out[r * k + c] = xv[r * k + c] * inv_norm[r];
        }
    }
    return make_op<T>("normalize_rows", x.shape(), std::move(out), {x},
                      [rows, k, inv_norm = std::move(inv_norm)](NodeT<T>& self) {
                          auto& gx = self.inputs[0]->grad_buffer();
                          for (std::size_t r = 0; r < rows; ++r) {
                              if (inv_norm[r] == T(0)) {
                                  continue;
                              }
                              T dot = 0;
                              for (std::size_t c = 0; c < k; ++c) {
                                  dot += self.value[r * k + c] * self.grad[r * k + c];
                              }
                              for (std::size_t c = 0; c < k; ++c) {
                                  gx[r * k + c] += inv_norm[r] * (self.grad[r * k + c] - self.value[r * k + c] * dot);
                              }
                          }
                      });
}

#define SM_INSTANTIATE_OPS(T)                                                                          \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                     \
    template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                   \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                        \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                        \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                        \
    template Tensor<T> scale(const Tensor<T>&, T);                                                     \
    template Tensor<T> add_scalar(const Tensor<T>&, T);                                                \
    template Tensor<T> sigmoid(const Tensor<T>&);                                                      \
    template Tensor<T> silu(const Tensor<T>&);                                                         \
    template Tensor<T> exp(const Tensor<T>&);                                                          \
    template Tensor<T> softplus(const Tensor<T>&);                                                     \
    template Tensor<T> clamp_max(const Tensor<T>&, T);                                                 \
    template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);            \
    template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                         \
    template Tensor<T> depthwise_conv1d(const Tensor<T>&, const Tensor<T>&, bool);                     \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                               \
    template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                         \
    template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                         \
    template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                                     \
    template Tensor<T> sum(const Tensor<T>&);                                                          \
    template Tensor<T> mean(const Tensor<T>&);                                                         \
    template Tensor<T> mse(const Tensor<T>&, const Tensor<T>&);                                        \
    template Tensor<T> normalize_rows(const Tensor<T>&, const std::vector<T>&, T);

SM_INSTANTIATE_OPS(float)
SM_INSTANTIATE_OPS(double)

#undef SM_INSTANTIATE_OPS

} // namespace sm::ad
