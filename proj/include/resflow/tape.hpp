#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "resflow/tensor.hpp"

namespace resflow {

enum class ElementwiseKind { add, sub, mul, silu };

namespace kernels {

// C[M,N] += A[M,K] * B[K,N]
template <class T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t i = 0; i < M; ++i) {
    T* c = C + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const T a = A[i * K + k];
      const T* b = B + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += a * b[j];
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T
template <class T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t i = 0; i < M; ++i) {
    const T* a = A + i * K;
    for (std::size_t j = 0; j < N; ++j) {
      const T* b = B + j * K;
      T acc = 0;
      for (std::size_t k = 0; k < K; ++k) acc += a[k] * b[k];
      C[i * N + j] += acc;
    }
  }
}

// C[M,N] += A[K,M]^T * B[K,N]
template <class T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t k = 0; k < K; ++k) {
    const T* b = B + k * N;
    for (std::size_t i = 0; i < M; ++i) {
      const T a = A[k * M + i];
      T* c = C + i * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += a * b[j];
    }
  }
}

/// Geometry shared by conv2d (image = input) and conv_transpose2d (image = output).
struct ConvGeometry {
  std::size_t channels, height, width;  // image tensor
  std::size_t kh, kw, stride, pad;
  std::size_t out_h, out_w;             // sliding-window grid

  std::size_t rows() const { return channels * kh * kw; }
  std::size_t cols() const { return out_h * out_w; }
};

template <class T>
void im2col(const ConvGeometry& g, const T* image, T* cols) {
  const auto P = g.cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* row = cols + ((c * g.kh + ky) * g.kw + kx) * P;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.pad);
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = image + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width))
                          ? T(0)
                          : src[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const ConvGeometry& g, const T* cols, T* image) {
  const auto P = g.cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* row = cols + ((c * g.kh + ky) * g.kw + kx) * P;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          T* dst = image + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          const T* src = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width)) {
              dst[static_cast<std::size_t>(ix)] += src[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace kernels

/// Reverse-mode gradient tape. Every differentiable op is a member function;
/// ops whose inputs do not require gradients (or a tape built with
/// `recording == false`) run forward only.
///
/// A tape belongs to one thread. Leaf gradients accumulate across backward
/// calls until the caller zeroes them.
template <class T>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape inference() { return Tape(false); }

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return ops_.size(); }

  void clear() {
    ops_.clear();
    consumed_ = false;
  }

  // ---------------------------------------------------------------- backward

  void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1 || loss.rank() > 1) {
      throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
    }
    if (ops_.empty()) {
      throw std::logic_error(consumed_ ? "backward() called twice without re-recording"
                                       : "backward() on an empty tape");
    }
    if (!loss.requires_grad()) {
      throw std::logic_error("backward() on a loss that does not depend on any parameter");
    }
    Tensor<T> l = loss;
    l.grad_mut()[0] += T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->backward();
    ops_.clear();
    consumed_ = true;
  }

  // ------------------------------------------------------------ elementwise

  Tensor<T> elementwise(ElementwiseKind kind, const Tensor<T>& a,
                        const std::optional<Tensor<T>>& b = std::nullopt) {
    if (kind == ElementwiseKind::silu) {
      if (b) throw std::invalid_argument("silu is unary");
      return silu(a);
    }
    if (!b) throw std::invalid_argument("binary elementwise op needs two operands");
    switch (kind) {
      case ElementwiseKind::add: return add(a, *b);
      case ElementwiseKind::sub: return sub(a, *b);
      case ElementwiseKind::mul: return mul(a, *b);
      default: break;
    }
    throw std::invalid_argument("unknown elementwise op");
  }

  Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return binary(a, b, Binary::add); }
  Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return binary(a, b, Binary::sub); }
  Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return binary(a, b, Binary::mul); }

  Tensor<T> scale(const Tensor<T>& a, T s) {
    auto out = make_output(a.shape());
    auto od = out.data();
    auto ad = a.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * s;
    finish("scale", out, {a}, [a, out, s]() mutable {
      if (!a.requires_grad()) return;
      auto g = out.grad();
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
    });
    return out;
  }

  Tensor<T> add_scalar(const Tensor<T>& a, T s) {
    auto out = make_output(a.shape());
    auto od = out.data();
    auto ad = a.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + s;
    finish("add_scalar", out, {a}, [a, out]() mutable {
      if (!a.requires_grad()) return;
      auto g = out.grad();
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
    return out;
  }

  Tensor<T> silu(const Tensor<T>& a) {
    auto out = make_output(a.shape());
    auto od = out.data();
    auto ad = a.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] / (T(1) + std::exp(-ad[i]));
    finish("silu", out, {a}, [a, out]() mutable {
      if (!a.requires_grad()) return;
      auto g = out.grad();
      auto ga = a.grad_mut();
      auto x = a.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T s = T(1) / (T(1) + std::exp(-x[i]));
        ga[i] += g[i] * s * (T(1) + x[i] * (T(1) - s));
      }
    });
    return out;
  }

  // ----------------------------------------------------------- reductions

  Tensor<T> sum(const Tensor<T>& a) {
    auto out = make_output(Shape{});
    T acc = 0;
    for (T v : a.data()) acc += v;
    out[0] = acc;
    finish("sum", out, {a}, [a, out]() mutable {
      if (!a.requires_grad()) return;
      const T g = out.grad()[0];
      for (auto& v : a.grad_mut()) v += g;
    });
    return out;
  }

  Tensor<T> mean(const Tensor<T>& a) {
    if (a.numel() == 0) throw ShapeError("mean of an empty tensor");
    return scale(sum(a), T(1) / static_cast<T>(a.numel()));
  }

  // --------------------------------------------------------------- shaping

  Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
      throw ShapeError("cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
    }
    auto out = make_output(std::move(shape));
    std::copy(a.data().begin(), a.data().end(), out.data().begin());
    finish("reshape", out, {a}, [a, out]() mutable {
      if (!a.requires_grad()) return;
      auto g = out.grad();
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
    return out;
  }

  /// Concatenate along the leading axis; trailing extents must agree.
  Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat of nothing");
    Shape shape = parts.front().shape();
    if (shape.empty()) throw ShapeError("concat needs rank >= 1");
    shape[0] = 0;
    for (const auto& p : parts) {
      if (p.rank() != shape.size() ||
          !std::equal(p.shape().begin() + 1, p.shape().end(), shape.begin() + 1)) {
        throw ShapeError("concat trailing extents differ: " + shape_str(p.shape()));
      }
      shape[0] += p.dim(0);
    }
    auto out = make_output(shape);
    std::size_t offset = 0;
    for (const auto& p : parts) {
      std::copy(p.data().begin(), p.data().end(), out.data().begin() + offset);
      offset += p.numel();
    }
    finish("concat", out, parts, [parts, out]() mutable {
      auto g = out.grad();
      std::size_t off = 0;
      for (auto p : parts) {
        if (p.requires_grad()) {
          auto gp = p.grad_mut();
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
        }
        off += p.numel();
      }
    });
    return out;
  }

  // ---------------------------------------------------------------- linear

  Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
      throw ShapeError("matmul dimension mismatch: " + shape_str(a.shape()) + " x " +
                       shape_str(b.shape()));
    }
    const auto M = a.dim(0), K = a.dim(1), N = b.dim(1);
    auto out = make_output(Shape{M, N});
    kernels::gemm_nn(M, N, K, a.data().data(), b.data().data(), out.data().data());
    finish("matmul", out, {a, b}, [a, b, out, M, N, K]() mutable {
      auto g = out.grad().data();
      if (a.requires_grad()) kernels::gemm_nt(M, K, N, g, b.data().data(), a.grad_mut().data());
      if (b.requires_grad()) kernels::gemm_tn(K, N, M, a.data().data(), g, b.grad_mut().data());
    });
    return out;
  }

  /// 2-D cross-correlation of input [c_in,h,w] with kernel [c_out,c_in,kh,kw].
  Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel,
                   const std::optional<Tensor<T>>& bias, std::size_t stride, std::size_t pad) {
    if (input.rank() != 3 || kernel.rank() != 4 || kernel.dim(1) != input.dim(0)) {
      throw ShapeError("conv2d shape mismatch: input " + shape_str(input.shape()) + " kernel " +
                       shape_str(kernel.shape()));
    }
    if (kernel.dim(2) % 2 == 0 || kernel.dim(3) % 2 == 0) {
      throw ShapeError("conv2d kernel extents must be odd: " + shape_str(kernel.shape()));
    }
    if (stride == 0) throw ShapeError("conv2d stride must be positive");
    const auto cout = kernel.dim(0);
    check_bias(bias, cout, "conv2d");
    const auto h = static_cast<std::ptrdiff_t>(input.dim(1));
    const auto w = static_cast<std::ptrdiff_t>(input.dim(2));
    const auto kh = static_cast<std::ptrdiff_t>(kernel.dim(2));
    const auto kw = static_cast<std::ptrdiff_t>(kernel.dim(3));
    const auto p = static_cast<std::ptrdiff_t>(pad);
    const auto s = static_cast<std::ptrdiff_t>(stride);
    if (h + 2 * p - kh < 0 || w + 2 * p - kw < 0) {
      throw ShapeError("conv2d output extent is not positive for input " +
                       shape_str(input.shape()));
    }
    kernels::ConvGeometry geo{input.dim(0), input.dim(1), input.dim(2),
                              kernel.dim(2), kernel.dim(3), stride, pad,
                              static_cast<std::size_t>((h + 2 * p - kh) / s + 1),
                              static_cast<std::size_t>((w + 2 * p - kw) / s + 1)};
    const auto R = geo.rows(), P = geo.cols();
    auto cols = std::make_shared<std::vector<T>>(R * P);
    kernels::im2col(geo, input.data().data(), cols->data());
    auto out = make_output(Shape{cout, geo.out_h, geo.out_w});
    auto od = out.data();
    if (bias) {
      for (std::size_t co = 0; co < cout; ++co) {
        std::fill(od.begin() + co * P, od.begin() + (co + 1) * P, (*bias)[co]);
      }
    }
    kernels::gemm_nn(cout, P, R, kernel.data().data(), cols->data(), od.data());
    std::vector<Tensor<T>> inputs{input, kernel};
    if (bias) inputs.push_back(*bias);
    finish("conv2d", out, inputs, [input, kernel, bias, out, cols, geo, cout, R, P]() mutable {
      auto g = out.grad().data();
      if (kernel.requires_grad()) kernels::gemm_nt(cout, R, P, g, cols->data(), kernel.grad_mut().data());
      if (bias && bias->requires_grad()) accumulate_channel_sums(*bias, g, cout, P);
      if (input.requires_grad()) {
        std::vector<T> gcols(R * P, T(0));
        kernels::gemm_tn(R, P, cout, kernel.data().data(), g, gcols.data());
        kernels::col2im(geo, gcols.data(), input.grad_mut().data());
      }
    });
    return out;
  }

  /// Transposed convolution of input [c_in,h,w] with kernel [c_in,c_out,kh,kw];
  /// output extent (h-1)*stride - 2*pad + kh + output_padding.
  Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& kernel,
                             const std::optional<Tensor<T>>& bias, std::size_t stride,
                             std::size_t pad, std::size_t output_padding = 0) {
    if (input.rank() != 3 || kernel.rank() != 4 || kernel.dim(0) != input.dim(0)) {
      throw ShapeError("conv_transpose2d shape mismatch: input " + shape_str(input.shape()) +
                       " kernel " + shape_str(kernel.shape()));
    }
    if (stride == 0) throw ShapeError("conv_transpose2d stride must be positive");
    const auto cin = input.dim(0), cout = kernel.dim(1);
    check_bias(bias, cout, "conv_transpose2d");
    const auto oh = static_cast<std::ptrdiff_t>((input.dim(1) - 1) * stride + kernel.dim(2) +
                                                output_padding) - 2 * static_cast<std::ptrdiff_t>(pad);
    const auto ow = static_cast<std::ptrdiff_t>((input.dim(2) - 1) * stride + kernel.dim(3) +
                                                output_padding) - 2 * static_cast<std::ptrdiff_t>(pad);
    if (oh <= 0 || ow <= 0) throw ShapeError("conv_transpose2d output extent is not positive");
    kernels::ConvGeometry geo{cout, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow),
                              kernel.dim(2), kernel.dim(3), stride, pad,
                              input.dim(1), input.dim(2)};
    const auto R = geo.rows(), P = geo.cols();
    std::vector<T> cols(R * P, T(0));
    kernels::gemm_tn(R, P, cin, kernel.data().data(), input.data().data(), cols.data());
    auto out = make_output(Shape{cout, geo.height, geo.width});
    auto od = out.data();
    const auto plane = geo.height * geo.width;
    if (bias) {
      for (std::size_t co = 0; co < cout; ++co) {
        std::fill(od.begin() + co * plane, od.begin() + (co + 1) * plane, (*bias)[co]);
      }
    }
    kernels::col2im(geo, cols.data(), od.data());
    std::vector<Tensor<T>> inputs{input, kernel};
    if (bias) inputs.push_back(*bias);
    finish("conv_transpose2d", out, inputs,
           [input, kernel, bias, out, geo, cin, cout, R, P, plane]() mutable {
             auto g = out.grad().data();
             if (bias && bias->requires_grad()) accumulate_channel_sums(*bias, g, cout, plane);
             if (!input.requires_grad() && !kernel.requires_grad()) return;
             std::vector<T> gcols(R * P);
             kernels::im2col(geo, g, gcols.data());
             if (input.requires_grad()) {
               kernels::gemm_nn(cin, P, R, kernel.data().data(), gcols.data(),
                                input.grad_mut().data());
             }
             if (kernel.requires_grad()) {
               kernels::gemm_nt(cin, R, P, input.data().data(), gcols.data(),
                                kernel.grad_mut().data());
             }
           });
    return out;
  }

  // --------------------------------------------------------- normalization

  /// Group normalization over [c,h,w] without affine parameters.
  Tensor<T> group_norm(const Tensor<T>& x, std::size_t groups, T eps = T(1e-5)) {
    if (x.rank() != 3 || groups == 0 || x.dim(0) % groups != 0) {
      throw ShapeError("group_norm: " + std::to_string(groups) + " groups do not divide " +
                       shape_str(x.shape()));
    }
    const auto n = x.numel() / groups;
    auto out = make_output(x.shape());
    auto inv = std::make_shared<std::vector<T>>(groups);
    auto xd = x.data();
    auto od = out.data();
    for (std::size_t g = 0; g < groups; ++g) {
      const T* src = xd.data() + g * n;
      T mu = 0;
      for (std::size_t i = 0; i < n; ++i) mu += src[i];
      mu /= static_cast<T>(n);
      T var = 0;
      for (std::size_t i = 0; i < n; ++i) var += (src[i] - mu) * (src[i] - mu);
      var /= static_cast<T>(n);
      const T is = T(1) / std::sqrt(var + eps);
      (*inv)[g] = is;
      for (std::size_t i = 0; i < n; ++i) od[g * n + i] = (src[i] - mu) * is;
    }
    finish("group_norm", out, {x}, [x, out, inv, groups, n]() mutable {
      if (!x.requires_grad()) return;
      auto g = out.grad();
      auto xh = out.data();
      auto gx = x.grad_mut();
      const T N = static_cast<T>(n);
      for (std::size_t k = 0; k < groups; ++k) {
        T sg = 0, sgx = 0;
        for (std::size_t i = k * n; i < (k + 1) * n; ++i) {
          sg += g[i];
          sgx += g[i] * xh[i];
        }
        const T c = (*inv)[k] / N;
        for (std::size_t i = k * n; i < (k + 1) * n; ++i) {
          gx[i] += c * (N * g[i] - sg - xh[i] * sgx);
        }
      }
    });
    return out;
  }

  /// Per-channel affine modulation x * (1 + scale[c]) + shift[c] of x [c,h,w].
  Tensor<T> modulate(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift) {
    if (x.rank() != 3 || scale.numel() != x.dim(0) || shift.numel() != x.dim(0)) {
      throw ShapeError("modulate: scale/shift must have one entry per channel of " +
                       shape_str(x.shape()));
    }
    const auto C = x.dim(0), P = x.numel() / x.dim(0);
    auto out = make_output(x.shape());
    auto xd = x.data();
    auto od = out.data();
    for (std::size_t c = 0; c < C; ++c) {
      const T a = T(1) + scale[c], b = shift[c];
      for (std::size_t i = c * P; i < (c + 1) * P; ++i) od[i] = xd[i] * a + b;
    }
    finish("modulate", out, {x, scale, shift}, [x, scale, shift, out, C, P]() mutable {
      auto g = out.grad();
      auto xd = x.data();
      for (std::size_t c = 0; c < C; ++c) {
        T sg = 0, sgx = 0;
        const T a = T(1) + scale[c];
        for (std::size_t i = c * P; i < (c + 1) * P; ++i) {
          sg += g[i];
          sgx += g[i] * xd[i];
        }
        if (x.requires_grad()) {
          auto gx = x.grad_mut();
          for (std::size_t i = c * P; i < (c + 1) * P; ++i) gx[i] += g[i] * a;
        }
        if (scale.requires_grad()) scale.grad_mut()[c] += sgx;
        if (shift.requires_grad()) shift.grad_mut()[c] += sg;
      }
    });
    return out;
  }

 private:
  enum class Binary { add, sub, mul };

  struct Op {
    const char* name;
    std::function<void()> backward;
  };

  static bool is_scalar(const Tensor<T>& t) { return t.numel() == 1 && t.rank() <= 1; }

  static void check_bias(const std::optional<Tensor<T>>& bias, std::size_t channels,
                         const char* op) {
    if (bias && bias->numel() != channels) {
      throw ShapeError(std::string(op) + ": bias needs " + std::to_string(channels) +
                       " entries, got " + shape_str(bias->shape()));
    }
  }

  static void accumulate_channel_sums(const Tensor<T>& bias, const T* g, std::size_t C,
                                      std::size_t P) {
    auto gb = bias.grad_mut();
    for (std::size_t c = 0; c < C; ++c) {
      T acc = 0;
      for (std::size_t i = 0; i < P; ++i) acc += g[c * P + i];
      gb[c] += acc;
    }
  }

  Tensor<T> make_output(Shape shape) { return Tensor<T>::zeros(std::move(shape)); }

  template <class Fn>
  void finish(const char* name, Tensor<T>& out, const std::vector<Tensor<T>>& inputs,
              Fn&& backward) {
    if (!out.all_finite()) {
      throw NumericError(std::string("non-finite value produced by ") + name);
    }
    if (!recording_) return;
    const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                   [](const Tensor<T>& t) { return t.requires_grad(); });
    if (!needs) return;
    out.set_requires_grad(true);
    ops_.push_back(Op{name, std::forward<Fn>(backward)});
    consumed_ = false;
  }

  Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, Binary kind) {
    const bool same = a.shape() == b.shape();
    if (!same && !is_scalar(a) && !is_scalar(b)) {
      throw ShapeError("elementwise shape mismatch: " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
    }
    const bool a_bcast = !same && is_scalar(a);
    const bool b_bcast = !same && is_scalar(b);
    auto out = make_output(a_bcast ? b.shape() : a.shape());
    const auto n = out.numel();
    auto ad = a.data();
    auto bd = b.data();
    auto od = out.data();
    for (std::size_t i = 0; i < n; ++i) {
      const T x = ad[a_bcast ? 0 : i];
      const T y = bd[b_bcast ? 0 : i];
      od[i] = kind == Binary::add ? x + y : kind == Binary::sub ? x - y : x * y;
    }
    static constexpr const char* names[] = {"add", "sub", "mul"};
    finish(names[static_cast<int>(kind)], out, {a, b},
           [a, b, out, kind, a_bcast, b_bcast, n]() mutable {
             auto g = out.grad();
             auto ad = a.data();
             auto bd = b.data();
             if (a.requires_grad()) {
               auto ga = a.grad_mut();
               for (std::size_t i = 0; i < n; ++i) {
                 const T d = kind == Binary::mul ? bd[b_bcast ? 0 : i] : T(1);
                 ga[a_bcast ? 0 : i] += g[i] * d;
               }
             }
             if (b.requires_grad()) {
               auto gb = b.grad_mut();
               for (std::size_t i = 0; i < n; ++i) {
                 const T d = kind == Binary::mul ? ad[a_bcast ? 0 : i]
                             : kind == Binary::sub ? T(-1)
                                                   : T(1);
                 gb[b_bcast ? 0 : i] += g[i] * d;
               }
             }
           });
    return out;
  }

  bool recording_;
  bool consumed_ = false;
  std::vector<Op> ops_;
};

}  // namespace resflow
