#pragma once

#include <algorithm>
#include <atomic>
#include <concepts>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "resflow/rng.hpp"
#include "resflow/schedules.hpp"
#include "resflow/tensor.hpp"

namespace resflow {

struct SampleConfig {
  std::size_t steps = 4;
  std::uint64_t y_seed = 0;
  DegradationSchedule schedule;
  AuxDistribution aux = AuxDistribution::gaussian;
  bool clamp_output = true;

  void validate() const {
    if (steps == 0) throw std::invalid_argument("sample.steps must be >= 1");
    schedule.validate();
  }
};

/// Anything exposing velocity(x, y, t) -> {vx, vy}.
template <class F, class T>
concept VelocityField = requires(const F& f, const Tensor<T>& x, const Tensor<T>& y, double t) {
  { f.velocity(x, y, t).vx } -> std::convertible_to<Tensor<T>>;
};

namespace audit {
// Counts Euler integrations; training must leave it untouched.
inline std::atomic<std::uint64_t> integrations{0};
}  // namespace audit

namespace detail {

/// Backward Euler-grid integration t = 1 -> 0. The auxiliary is re-set to
/// sigma_t * y1 at every visited t; the model's vy is ignored.
template <class T, class F, class Visit>
Tensor<T> integrate(const F& field, const Tensor<T>& x1, const Tensor<T>& y1,
                    const SampleConfig& cfg, Visit&& visit) {
  cfg.validate();
  audit::integrations.fetch_add(1, std::memory_order_relaxed);
  if (y1.shape() != x1.shape()) throw ShapeError("auxiliary shape differs from the LQ image");
  if (!x1.all_finite()) throw NumericError("non-finite LQ image");
  const double n = static_cast<double>(cfg.steps);
  const double dt = 1.0 / n;
  auto x = x1.clone();
  visit(1.0, x);
  for (std::size_t k = cfg.steps; k >= 1; --k) {
    const double t = static_cast<double>(k) / n;
    const T sigma = static_cast<T>(eval_y(t, cfg.schedule).sigma);
    Tensor<T> y = Tensor<T>::zeros(y1.shape());
    auto yd = y.data();
    auto y1d = y1.data();
    for (std::size_t i = 0; i < yd.size(); ++i) yd[i] = sigma * y1d[i];
    const auto v = field.velocity(x, y, t);
    if (v.vx.shape() != x.shape()) throw ShapeError("velocity shape differs from the state");
    auto xd = x.data();
    auto vd = v.vx.data();
    const T step = static_cast<T>(dt);
    for (std::size_t i = 0; i < xd.size(); ++i) xd[i] -= step * vd[i];
    if (!x.all_finite()) {
      throw NumericError("non-finite state at t=" + std::to_string(t - dt));
    }
    visit(static_cast<double>(k - 1) / n, x);
  }
  if (cfg.clamp_output) {
    for (auto& v : x.data()) v = std::clamp(v, T(-1), T(1));
  }
  return x;
}

}  // namespace detail

template <class T>
Tensor<T> draw_y1(const Shape& shape, std::uint64_t seed, AuxDistribution aux) {
  Rng rng(seed);
  return sample_aux<T>(shape, rng, aux);
}

template <class T, class F>
  requires VelocityField<F, T>
Tensor<T> restore_with(const F& field, const Tensor<T>& x1, const Tensor<T>& y1,
                       const SampleConfig& cfg) {
  return detail::integrate(field, x1, y1, cfg, [](double, const Tensor<T>&) {});
}

/// Few-step Euler restoration with y1 drawn from cfg.y_seed.
template <class T, class F>
  requires VelocityField<F, T>
Tensor<T> restore(const F& field, const Tensor<T>& x1, const SampleConfig& cfg) {
  return restore_with(field, x1, draw_y1<T>(x1.shape(), cfg.y_seed, cfg.aux), cfg);
}

/// Seed of element i in a batch restore.
inline std::uint64_t batch_y_seed(std::uint64_t y_seed, std::size_t i) {
  return derive_seed(y_seed, "y1/", i);
}

template <class T, class F>
  requires VelocityField<F, T>
std::vector<Tensor<T>> restore_batch(const F& field, const std::vector<Tensor<T>>& lq,
                                     const SampleConfig& cfg,
                                     const std::vector<std::uint64_t>& seeds) {
  if (seeds.size() != lq.size()) throw std::invalid_argument("one y seed per LQ image required");
  std::vector<Tensor<T>> out;
  out.reserve(lq.size());
  for (std::size_t i = 0; i < lq.size(); ++i) {
    auto c = cfg;
    c.y_seed = seeds[i];
    out.push_back(restore(field, lq[i], c));
  }
  return out;
}

template <class T, class F>
  requires VelocityField<F, T>
std::vector<Tensor<T>> restore_batch(const F& field, const std::vector<Tensor<T>>& lq,
                                     const SampleConfig& cfg) {
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < lq.size(); ++i) seeds.push_back(batch_y_seed(cfg.y_seed, i));
  return restore_batch(field, lq, cfg, seeds);
}

template <class T>
struct TrajectoryEntry {
  double t;
  Tensor<T> x;
};

/// Every visited state, from (1, x1) down to (0, x0_hat). The last entry
/// equals restore() with the same config.
template <class T, class F>
  requires VelocityField<F, T>
std::vector<TrajectoryEntry<T>> trajectory(const F& field, const Tensor<T>& x1,
                                           const SampleConfig& cfg) {
  std::vector<TrajectoryEntry<T>> path;
  const auto y1 = draw_y1<T>(x1.shape(), cfg.y_seed, cfg.aux);
  auto c = cfg;
  c.clamp_output = false;
  auto last = detail::integrate(
      field, x1, y1, c, [&](double t, const Tensor<T>& x) { path.push_back({t, x.clone()}); });
  if (cfg.clamp_output) {
    for (auto& v : last.data()) v = std::clamp(v, T(-1), T(1));
    path.back().x = last;
  }
  return path;
}

}  // namespace resflow
