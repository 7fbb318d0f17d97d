#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "resflow/degradations.hpp"
#include "resflow/info_oracle.hpp"
#include "resflow/rng.hpp"
#include "resflow/schedules.hpp"
#include "resflow/tape.hpp"
#include "resflow/trainer.hpp"
#include "resflow/velocity_model.hpp"

// Self-checks behind `resflow verify <suite>`. Each suite returns named
// pass/fail lines plus the headline number it measured.
namespace resflow::verify {

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct Report {
  std::string suite;
  std::vector<Check> checks;
  double value = 0.0;  // headline measurement
  std::string value_name;

  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
  }
  void add(std::string name, bool ok, std::string detail) {
    checks.push_back({std::move(name), ok, std::move(detail)});
  }
};

inline std::string num(double v, int precision = 6) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

inline Report schedule(const DegradationSchedule& sched = {}) {
  Report r{"schedule", {}, 0.0, "max_entropy_identity_dev"};
  const auto x0 = eval_x(0.0), x1 = eval_x(1.0);
  r.add("x boundary", x0.alpha == 1.0 && x0.sigma == 0.0 && x1.alpha == 0.0 && x1.sigma == 1.0,
        "alpha0=" + num(x0.alpha) + " sigma0=" + num(x0.sigma) + " alpha1=" + num(x1.alpha) +
            " sigma1=" + num(x1.sigma));
  bool sums = true;
  for (int k = 0; k <= 1000; ++k) {
    const auto c = eval_x(k / 1000.0);
    sums = sums && c.alpha + c.sigma == 1.0;
  }
  r.add("x alpha+sigma=1", sums, "1001 grid points");
  r.add("lambda endpoints",
        loss_weight(0.0, sched.gamma) == 0.0 && loss_weight(1.0, sched.gamma) == 1.0,
        "lambda(0)=" + num(loss_weight(0.0, sched.gamma)) +
            " lambda(1)=" + num(loss_weight(1.0, sched.gamma)));

  const DegradationSchedule ep{YSchedule::entropy_preserving, sched.beta, sched.gamma};
  bool increasing = true;
  double prev = -1.0;
  for (int k = 0; k <= 1000; ++k) {
    const double s = eval_y(k / 1000.0, ep).sigma;
    increasing = increasing && s > prev;
    prev = s;
  }
  const double lo = eval_y(0.0, ep).sigma, hi = eval_y(1.0, ep).sigma;
  r.add("sigma_y increasing", increasing && hi == 1.0 && lo == sched.beta / (1.0 + sched.beta),
        "range [" + num(lo) + ", " + num(hi) + "]");

  double max_dev = 0.0;
  const double ref = std::log(1.0 - 0.01) + std::log(sigma_y_exact(0.01, sched.beta));
  for (int k = 1; k <= 99; ++k) {
    const double t = k / 100.0;
    const double v = std::log(1.0 - t) + std::log(sigma_y_exact(t, sched.beta));
    max_dev = std::max(max_dev, std::abs(v - ref));
  }
  r.add("entropy identity", max_dev <= 1e-12, "max deviation " + num(max_dev, 3));

  double max_deriv = 0.0;
  for (int k = 1; k < 100; ++k) {
    const double t = k / 100.0, h = 1e-6;
    const auto c = eval_y(t, ep);
    const double fd = (eval_y(t + h, ep).sigma - eval_y(t - h, ep).sigma) / (2 * h);
    max_deriv = std::max(max_deriv, std::abs(fd - c.dsigma) / std::abs(c.dsigma));
  }
  r.add("dsigma_y matches difference quotient", max_deriv <= 1e-6, "max rel err " + num(max_deriv, 3));
  r.value = max_dev;
  return r;
}

inline Report mutual_information(std::size_t trials = 200, std::uint64_t seed = 0) {
  Report r{"mi", {}, 0.0, "violations"};
  Rng rng(seed);
  std::size_t violations = 0;
  double worst = 0.0;
  for (std::size_t k = 0; k < trials; ++k) {
    const auto rows = 2 + uniform_index(rng, 7), cols = 2 + uniform_index(rng, 7);
    const auto j = info::random_joint(rows, cols, rng);
    const auto pushed =
        info::push_bijection(j, info::random_permutation(rows, rng), info::random_permutation(cols, rng));
    const double dev = std::abs(info::mutual_info(pushed) - info::mutual_info(j));
    worst = std::max(worst, dev);
    if (dev > 1e-12) ++violations;
  }
  r.add("bijection invariance", violations == 0,
        std::to_string(trials) + " trials, max |dMI| " + num(worst, 3));
  double flow_dev = 0.0;
  bool collapse_drops = true;
  for (std::size_t dim = 1; dim <= 3; ++dim) {
    const auto rep = info::flow_mi_invariance(dim, derive_seed(seed, "flow/", dim));
    flow_dev = std::max(flow_dev, rep.max_invertible_deviation());
    collapse_drops = collapse_drops && rep.mi_collapsed < rep.entropy_source;
  }
  r.add("discretized flow invariance", flow_dev <= 1e-12, "max |dMI| " + num(flow_dev, 3));
  r.add("collapse reduces MI", collapse_drops, "dims 1..3");
  r.value = static_cast<double>(violations);
  return r;
}

inline Report dpi(std::size_t trials = 500, std::uint64_t seed = 0) {
  Report r{"dpi", {}, 0.0, "violations"};
  Rng rng(seed);
  std::size_t violations = 0;
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < trials; ++k) {
    const auto nx = 2 + uniform_index(rng, 6), ny = 2 + uniform_index(rng, 6),
               nz = 2 + uniform_index(rng, 6);
    const auto res = info::dpi_chain(info::random_pmf(nx, rng), info::random_channel(nx, ny, rng),
                                     info::random_channel(ny, nz, rng));
    worst = std::max(worst, res.mi_xz - res.mi_xy);
    if (res.mi_xz > res.mi_xy + 1e-12) ++violations;
  }
  r.add("MI(X;Z) <= MI(X;Y)", violations == 0,
        std::to_string(trials) + " chains, max MI(X;Z)-MI(X;Y) " + num(worst, 3));
  r.value = static_cast<double>(violations);
  return r;
}

inline Report entropy(int d = 1, double beta = 10.0) {
  Report r{"entropy", {}, 0.0, "H"};
  const double h0 = entropy_z(0.0, d, beta, true);
  double max_dev = 0.0;
  for (int k = 1; k <= 99; ++k) {
    max_dev = std::max(max_dev, std::abs(entropy_z(k / 100.0, d, beta, true) - h0));
  }
  r.add("H(z_t) constant under exact schedule", max_dev <= 1e-12,
        "H=" + num(h0, 9) + " nats, max deviation " + num(max_dev, 3));
  const double reg0 = entropy_z(0.0, d, beta, false), reg99 = entropy_z(0.99, d, beta, false);
  r.add("regularized schedule loses entropy near t=1", reg99 < reg0,
        "H(0)=" + num(reg0) + " H(0.99)=" + num(reg99));
  r.value = h0;
  return r;
}

/// Every parameter gradient of the weighted flow-matching loss of a small
/// 64-bit model against central differences.
inline Report gradcheck(std::uint64_t seed = 0, double tolerance = 1e-5, double step = 1e-4) {
  Report r{"gradcheck", {}, 0.0, "max_rel_err"};
  ModelConfig mc;
  mc.width = 1;
  mc.groups = 1;
  mc.time_dim = 4;
  mc.embed_dim = 4;
  mc.adapter_blocks = 1;
  mc.max_params = 2000;
  mc.seed = derive_seed(seed, "init/");
  VelocityModel<double> model(mc);
  // Move every parameter off its initial value so zero-initialized layers
  // carry gradient through all paths.
  Rng prng(derive_seed(seed, "perturb/"));
  for (auto& p : model.parameters()) {
    for (auto& v : p.data()) v += 0.3 * uniform(prng, -1.0, 1.0);
  }
  DatasetFamily fam{{DegradationSpec{DegradationKind::blur, 1.0}}, Pattern::mixed, 8, 1};
  const auto data = make_dataset<double>(2, fam, derive_seed(seed, "data/"));
  std::vector<const PairedSample<double>*> batch{&data[0], &data[1]};
  Rng nrng(derive_seed(seed, "noise/"));
  auto noise = draw_noise<double>(batch, nrng, AuxDistribution::gaussian);
  noise.times = {0.37, 0.81};
  const DegradationSchedule sched;

  // Differences are taken on an extended-precision twin holding the same
  // weights, so rounding in the loss stays far below the tolerance.
  using LD = long double;
  VelocityModel<LD> twin(mc);
  for (std::size_t k = 0; k < model.parameters().size(); ++k) {
    auto src = model.parameters()[k].data();
    auto dst = twin.parameters()[k].data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<LD>(src[i]);
  }
  std::vector<PairedSample<LD>> data_ld;
  for (const auto& s : data) data_ld.push_back({s.x0.template cast<LD>(), s.x1.template cast<LD>(), s.spec, s.seed});
  std::vector<const PairedSample<LD>*> batch_ld{&data_ld[0], &data_ld[1]};
  BatchNoise<LD> noise_ld;
  noise_ld.times = noise.times;
  for (const auto& y : noise.y1) noise_ld.y1.push_back(y.template cast<LD>());
  auto loss_value = [&] {
    Tape<LD> tape(false);
    return static_cast<LD>(flow_matching_loss<LD>(tape, twin, batch_ld, noise_ld, sched).item());
  };
  model.zero_grad();
  {
    Tape<double> tape;
    auto loss = flow_matching_loss<double>(tape, model, batch, noise, sched);
    tape.backward(loss);
  }
  double worst = 0.0;
  std::string worst_name;
  std::size_t checked = 0;
  auto& params = model.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = twin.parameters()[k].data();
    auto g = params[k].grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const LD orig = w[i];
      const LD h = step;
      auto at = [&](LD offset) {
        w[i] = orig + offset;
        return loss_value();
      };
      const double fd = static_cast<double>((8 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12 * h));
      w[i] = orig;
      const double err = std::abs(g[i] - fd) / (std::abs(fd) + 1e-8);
      if (err > worst) {
        worst = err;
        worst_name = model.parameter_names()[k] + "[" + std::to_string(i) + "]";
      }
      ++checked;
    }
  }
  r.add("parameter gradients", worst <= tolerance,
        std::to_string(checked) + " parameters, max rel err " + num(worst, 3) + " at " + worst_name);
  r.value = worst;
  return r;
}

}  // namespace resflow::verify
