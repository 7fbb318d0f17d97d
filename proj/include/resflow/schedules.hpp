#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

#include "resflow/rng.hpp"
#include "resflow/tensor.hpp"

namespace resflow {

enum class YSchedule { entropy_preserving, constant, linear };

/// Distribution of the auxiliary endpoint y1.
enum class AuxDistribution { gaussian, constant };

inline std::string_view to_string(YSchedule v) {
  switch (v) {
    case YSchedule::entropy_preserving: return "entropy_preserving";
    case YSchedule::constant: return "constant";
    case YSchedule::linear: return "linear";
  }
  return "?";
}

inline YSchedule parse_y_schedule(std::string_view s) {
  if (s == "entropy_preserving") return YSchedule::entropy_preserving;
  if (s == "constant") return YSchedule::constant;
  if (s == "linear") return YSchedule::linear;
  throw std::invalid_argument("unknown y schedule '" + std::string(s) + "'");
}

inline std::string_view to_string(AuxDistribution a) {
  return a == AuxDistribution::gaussian ? "gaussian" : "constant";
}

inline AuxDistribution parse_aux(std::string_view s) {
  if (s == "gaussian") return AuxDistribution::gaussian;
  if (s == "constant") return AuxDistribution::constant;
  throw std::invalid_argument("unknown auxiliary distribution '" + std::string(s) + "'");
}

/// Interpolation coefficients of one path component and their time derivatives.
struct Coefficients {
  double alpha, sigma, dalpha, dsigma;
};

/// The x-component always follows the straight line alpha = 1 - t, sigma = t.
struct DegradationSchedule {
  YSchedule y_variant = YSchedule::entropy_preserving;
  double beta = 10.0;
  double gamma = 1.75;

  void validate() const {
    if (!(beta > 0.0) || !std::isfinite(beta)) throw std::invalid_argument("beta must be > 0");
    if (!(gamma > 0.0) || !std::isfinite(gamma)) throw std::invalid_argument("gamma must be > 0");
  }
};

namespace detail {
inline void check_time(double t) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw std::domain_error("time " + std::to_string(t) + " outside [0, 1]");
  }
}
}  // namespace detail

inline Coefficients eval_x(double t) {
  detail::check_time(t);
  return {1.0 - t, t, -1.0, 1.0};
}

inline Coefficients eval_y(double t, const DegradationSchedule& sched) {
  detail::check_time(t);
  sched.validate();
  switch (sched.y_variant) {
    case YSchedule::entropy_preserving: {
      const double d = 1.0 - t + sched.beta;
      const double sigma = sched.beta / d;
      const double dsigma = sched.beta / (d * d);
      return {1.0 - sigma, sigma, -dsigma, dsigma};
    }
    case YSchedule::constant: return {0.0, 1.0, 0.0, 0.0};
    case YSchedule::linear: return {1.0 - t, t, -1.0, 1.0};
  }
  throw std::invalid_argument("unknown y schedule variant");
}

/// Loss weighting (cos(pi/2 (t - 2)) + 1)^gamma; 0 at t = 0 and 1 at t = 1.
inline double loss_weight(double t, double gamma) {
  detail::check_time(t);
  if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be > 0");
  // The endpoints are pinned because cos(-pi) and cos(-pi/2) are not exact in
  // floating point.
  if (t == 0.0) return 0.0;
  if (t == 1.0) return 1.0;
  const double base = std::cos(std::numbers::pi / 2.0 * (t - 2.0)) + 1.0;
  return std::pow(std::max(base, 0.0), gamma);
}

template <class T>
struct AugmentedState {
  Tensor<T> x;
  Tensor<T> y;
  double t;
};

template <class T>
struct TargetVelocity {
  Tensor<T> vx;
  Tensor<T> vy;
};

namespace detail {
template <class T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <class T>
Tensor<T> axpby(double a, const Tensor<T>& x, double b, const Tensor<T>& y) {
  auto out = Tensor<T>::zeros(x.shape());
  const T ta = static_cast<T>(a), tb = static_cast<T>(b);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = ta * x[i] + tb * y[i];
  return out;
}

template <class T>
Tensor<T> scaled(double a, const Tensor<T>& x) {
  auto out = Tensor<T>::zeros(x.shape());
  const T ta = static_cast<T>(a);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = ta * x[i];
  return out;
}
}  // namespace detail

/// z_t on the straight x-path and the scheduled y-path, with y0 = 0.
template <class T>
AugmentedState<T> interpolate(const Tensor<T>& x0, const Tensor<T>& x1, const Tensor<T>& y1,
                              double t, const DegradationSchedule& sched) {
  detail::check_same_shape(x0, x1, "interpolate x0/x1");
  detail::check_same_shape(x0, y1, "interpolate x/y");
  const auto cx = eval_x(t);
  const auto cy = eval_y(t, sched);
  return {detail::axpby(cx.alpha, x0, cx.sigma, x1), detail::scaled(cy.sigma, y1), t};
}

template <class T>
TargetVelocity<T> target_velocity(const Tensor<T>& x0, const Tensor<T>& x1, const Tensor<T>& y1,
                                  double t, const DegradationSchedule& sched) {
  detail::check_same_shape(x0, x1, "target_velocity x0/x1");
  detail::check_same_shape(x0, y1, "target_velocity x/y");
  const auto cx = eval_x(t);
  const auto cy = eval_y(t, sched);
  return {detail::axpby(cx.dalpha, x0, cx.dsigma, x1), detail::scaled(cy.dsigma, y1)};
}

/// Unregularized y-scale beta / (1 - t); singular at t = 1.
inline double sigma_y_exact(double t, double beta) {
  if (!(t >= 0.0 && t < 1.0)) throw std::domain_error("exact schedule is singular at t = 1");
  return beta / (1.0 - t);
}

/// Differential entropy (nats) of z_t for uniform HQ pixels, Dirac LQ and
/// Gaussian y1 in d channels: d ln(1-t) + d/2 (1 + ln 2pi) + d ln sigma_y(t).
/// With `exact`, sigma_y = beta / (1 - t) and the value is independent of t.
inline double entropy_z(double t, int d, double beta, bool exact) {
  if (d <= 0) throw std::invalid_argument("dimension must be positive");
  if (!(beta > 0.0)) throw std::invalid_argument("beta must be > 0");
  const double sigma = exact ? sigma_y_exact(t, beta)
                             : eval_y(t, {YSchedule::entropy_preserving, beta, 1.75}).sigma;
  const double gauss = 0.5 * d * (1.0 + std::log(2.0 * std::numbers::pi));
  if (t == 1.0) return -std::numeric_limits<double>::infinity();
  return d * std::log(1.0 - t) + gauss + d * std::log(sigma);
}

/// Draw the auxiliary endpoint y1 with the requested distribution.
template <class T>
Tensor<T> sample_aux(const Shape& shape, Rng& rng, AuxDistribution aux) {
  if (aux == AuxDistribution::constant) return Tensor<T>::full(shape, T(1));
  return randn<T>(shape, rng);
}

}  // namespace resflow
