#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "resflow/tensor.hpp"

namespace resflow {

/// Decoupled-weight-decay Adam.
template <class T>
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  AdamW(const std::vector<Tensor<T>>& params, Options opts) : opts_(opts) {
    for (const auto& p : params) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  explicit AdamW(const std::vector<Tensor<T>>& params) : AdamW(params, Options{}) {}

  std::uint64_t step_count() const { return step_; }
  const Options& options() const { return opts_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

  void restore_state(std::uint64_t step, std::vector<std::vector<double>> m,
                     std::vector<std::vector<double>> v) {
    if (m.size() != m_.size() || v.size() != v_.size()) {
      throw std::invalid_argument("optimizer state does not match parameter list");
    }
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (m[i].size() != m_[i].size() || v[i].size() != v_[i].size()) {
        throw std::invalid_argument("optimizer moment buffer has the wrong size");
      }
    }
    step_ = step;
    m_ = std::move(m);
    v_ = std::move(v);
  }

  /// One update with learning rate `lr`, reading each parameter's grad.
  void step(std::vector<Tensor<T>>& params, double lr) {
    if (params.size() != m_.size()) throw std::invalid_argument("parameter list changed size");
    ++step_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& p = params[k];
      if (!p.has_grad()) continue;
      if (p.numel() != m_[k].size()) throw std::invalid_argument("parameter changed size");
      auto g = p.grad();
      auto w = p.data();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * gi;
        v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * gi * gi;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        double wi = static_cast<double>(w[i]);
        wi -= lr * opts_.weight_decay * wi;
        wi -= lr * mhat / (std::sqrt(vhat) + opts_.eps);
        w[i] = static_cast<T>(wi);
      }
    }
  }

 private:
  Options opts_;
  std::uint64_t step_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Scale all gradients so their joint L2 norm is at most max_norm; returns the
/// norm before clipping.
template <class T>
double clip_grad_norm(std::vector<Tensor<T>>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& p : params) {
      for (auto& g : p.grad_mut()) g *= s;
    }
  }
  return norm;
}

/// Cosine decay from lr_init at step 0 to lr_final at step == iterations.
inline double cosine_lr(std::uint64_t step, std::uint64_t iterations, double lr_init,
                        double lr_final) {
  if (iterations == 0) throw std::invalid_argument("iterations must be >= 1");
  if (step > iterations) throw std::out_of_range("step beyond the schedule");
  const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(iterations);
  return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + std::cos(phase));
}

}  // namespace resflow
