#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "resflow/rng.hpp"
#include "resflow/tensor.hpp"

namespace resflow {

enum class DegradationKind { blur, specks, haze, quantize, many_to_one };

enum class Pattern { gradient, checker, blobs, strokes, blocks, mixed };

inline std::string_view to_string(DegradationKind k) {
  switch (k) {
    case DegradationKind::blur: return "blur";
    case DegradationKind::specks: return "specks";
    case DegradationKind::haze: return "haze";
    case DegradationKind::quantize: return "quantize";
    case DegradationKind::many_to_one: return "many_to_one";
  }
  return "?";
}

inline DegradationKind parse_degradation_kind(std::string_view s) {
  if (s == "blur") return DegradationKind::blur;
  if (s == "specks") return DegradationKind::specks;
  if (s == "haze") return DegradationKind::haze;
  if (s == "quantize") return DegradationKind::quantize;
  if (s == "many_to_one") return DegradationKind::many_to_one;
  throw std::invalid_argument("unknown degradation kind '" + std::string(s) + "'");
}

inline std::string_view to_string(Pattern p) {
  switch (p) {
    case Pattern::gradient: return "gradient";
    case Pattern::checker: return "checker";
    case Pattern::blobs: return "blobs";
    case Pattern::strokes: return "strokes";
    case Pattern::blocks: return "blocks";
    case Pattern::mixed: return "mixed";
  }
  return "?";
}

inline Pattern parse_pattern(std::string_view s) {
  for (auto p : {Pattern::gradient, Pattern::checker, Pattern::blobs, Pattern::strokes,
                 Pattern::blocks, Pattern::mixed}) {
    if (to_string(p) == s) return p;
  }
  throw std::invalid_argument("unknown pattern '" + std::string(s) + "'");
}

/// Largest haze blend accepted for many_to_one: any two HQ images then map to
/// LQ images within 2 * (1 - alpha) <= 1e-7 of each other.
inline constexpr double kManyToOneMinAlpha = 1.0 - 5e-8;

/// One synthetic HQ -> LQ operator. `seed` fully determines any randomness.
struct DegradationSpec {
  DegradationKind kind = DegradationKind::blur;
  double sigma = 0.0;      // blur: Gaussian std in pixels
  double density = 0.0;    // specks: covered-area fraction in [0, 1]
  double radius = 1.5;     // specks: mean ellipse radius in pixels
  double airlight = 0.5;   // haze: veil level in [0, 1]; many_to_one: per-pair level
  double alpha = 0.0;      // haze / many_to_one: blend weight in [0, 1]
  int levels = 16;         // quantize: number of output levels
  std::uint64_t collapse_id = 0;  // many_to_one: which HQ group this LQ collapses
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument naming the offending parameter.
  void validate() const {
    auto bad = [](const char* name, double v, const char* range) {
      std::ostringstream os;
      os << name << '=' << v << " out of range " << range;
      throw std::invalid_argument(os.str());
    };
    switch (kind) {
      case DegradationKind::blur:
        if (!(sigma >= 0.0 && sigma <= 16.0)) bad("sigma", sigma, "[0,16]");
        break;
      case DegradationKind::specks:
        if (!(density >= 0.0 && density <= 1.0)) bad("density", density, "[0,1]");
        if (!(radius > 0.0 && radius <= 16.0)) bad("radius", radius, "(0,16]");
        break;
      case DegradationKind::haze:
        if (!(airlight >= 0.0 && airlight <= 1.0)) bad("airlight", airlight, "[0,1]");
        if (!(alpha >= 0.0 && alpha <= 1.0)) bad("alpha", alpha, "[0,1]");
        break;
      case DegradationKind::quantize:
        if (levels < 2 || levels > 256) bad("levels", levels, "[2,256]");
        break;
      case DegradationKind::many_to_one:
        if (!(airlight >= -1.0 && airlight <= 1.0)) bad("airlight", airlight, "[-1,1]");
        if (!(alpha >= kManyToOneMinAlpha && alpha <= 1.0)) bad("alpha", alpha, "[1-5e-8,1]");
        break;
    }
  }

  /// Parameters relevant to `kind` as "k=v;k=v" with round-trip precision.
  std::string params_string() const {
    char buf[64];
    std::string out;
    auto put = [&](const char* k, double v) {
      std::snprintf(buf, sizeof buf, "%s=%.17g", k, v);
      if (!out.empty()) out += ';';
      out += buf;
    };
    switch (kind) {
      case DegradationKind::blur: put("sigma", sigma); break;
      case DegradationKind::specks: put("density", density); put("radius", radius); break;
      case DegradationKind::haze: put("airlight", airlight); put("alpha", alpha); break;
      case DegradationKind::quantize: put("levels", levels); break;
      case DegradationKind::many_to_one:
        put("airlight", airlight);
        put("alpha", alpha);
        put("collapse", static_cast<double>(collapse_id));
        break;
    }
    return out;
  }
};

/// Degradations applied left to right.
using DegradationChain = std::vector<DegradationSpec>;

inline std::string chain_kind_string(const DegradationChain& chain) {
  std::string out;
  for (const auto& s : chain) {
    if (!out.empty()) out += '+';
    out += to_string(s.kind);
  }
  return out;
}

inline std::string chain_params_string(const DegradationChain& chain) {
  std::string out;
  for (const auto& s : chain) {
    if (!out.empty()) out += ';';
    out += s.params_string();
  }
  return out;
}

// ------------------------------------------------------------------ HQ images

namespace detail {

inline void normalize_to_unit(std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double peak = 0.0;
  for (double& x : v) {
    x -= mean;
    peak = std::max(peak, std::abs(x));
  }
  if (peak > 0.0) {
    for (double& x : v) x /= peak;
  }
}

inline std::vector<double> pattern_plane(Pattern kind, std::size_t n, Rng& rng) {
  std::vector<double> v(n * n, 0.0);
  const double nn = static_cast<double>(n);
  switch (kind) {
    case Pattern::gradient: {
      const double theta = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      const double c = std::cos(theta), s = std::sin(theta);
      const double lo = uniform(rng, -1.0, -0.2), hi = uniform(rng, 0.2, 1.0);
      for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
          const double u = ((static_cast<double>(x) + 0.5) / nn - 0.5) * c +
                           ((static_cast<double>(y) + 0.5) / nn - 0.5) * s;
          const double r = std::clamp(u * std::numbers::sqrt2 + 0.5, 0.0, 1.0);
          v[y * n + x] = lo + (hi - lo) * r;
        }
      }
      break;
    }
    case Pattern::checker: {
      const std::size_t phase = rng() & 1U;
      for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) v[y * n + x] = ((x + y + phase) % 2 == 0) ? 1.0 : -1.0;
      }
      break;
    }
    case Pattern::blobs: {
      const int count = 3 + static_cast<int>(uniform_index(rng, 3));
      for (int k = 0; k < count; ++k) {
        const double cx = uniform(rng, 0.0, nn), cy = uniform(rng, 0.0, nn);
        const double w = uniform(rng, 0.12, 0.3) * nn;
        const double amp = uniform(rng, -1.0, 1.0);
        for (std::size_t y = 0; y < n; ++y) {
          for (std::size_t x = 0; x < n; ++x) {
            const double dx = static_cast<double>(x) + 0.5 - cx;
            const double dy = static_cast<double>(y) + 0.5 - cy;
            v[y * n + x] += amp * std::exp(-(dx * dx + dy * dy) / (2.0 * w * w));
          }
        }
      }
      normalize_to_unit(v);
      break;
    }
    case Pattern::strokes: {
      const double bg = uniform(rng, -1.0, -0.6);
      std::fill(v.begin(), v.end(), bg);
      const int count = 2 + static_cast<int>(uniform_index(rng, 3));
      for (int k = 0; k < count; ++k) {
        const double ink = uniform(rng, 0.5, 1.0);
        const double x0 = uniform(rng, 0.1, 0.9) * nn, y0 = uniform(rng, 0.1, 0.9) * nn;
        const double len = uniform(rng, 0.3, 0.7) * nn;
        const double ang = static_cast<double>(uniform_index(rng, 4)) * std::numbers::pi / 4.0;
        const double half_width = uniform(rng, 0.5, 1.1);
        const double dx = std::cos(ang), dy = std::sin(ang);
        for (std::size_t y = 0; y < n; ++y) {
          for (std::size_t x = 0; x < n; ++x) {
            const double px = static_cast<double>(x) + 0.5 - x0;
            const double py = static_cast<double>(y) + 0.5 - y0;
            const double along = px * dx + py * dy;
            const double across = std::abs(-px * dy + py * dx);
            if (along >= 0.0 && along <= len && across <= half_width) v[y * n + x] = ink;
          }
        }
      }
      break;
    }
    case Pattern::blocks: {
      const std::size_t cell = std::max<std::size_t>(2, n / (2 + uniform_index(rng, 3)));
      const std::size_t cells = (n + cell - 1) / cell;
      std::vector<double> level(cells * cells);
      for (auto& l : level) l = uniform(rng, -1.0, 1.0);
      for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) v[y * n + x] = level[(y / cell) * cells + x / cell];
      }
      break;
    }
    case Pattern::mixed: break;
  }
  return v;
}

}  // namespace detail

/// Procedural HQ image [channels, size, size] with values in [-1, 1].
/// `mixed` draws one of gradient, blobs, strokes or blocks per seed.
template <class T>
Tensor<T> generate_hq(Pattern kind, std::size_t size, std::uint64_t seed,
                      std::size_t channels = 1) {
  if (size < 8) throw std::invalid_argument("size=" + std::to_string(size) + " must be >= 8");
  if (channels != 1 && channels != 3) throw std::invalid_argument("channels must be 1 or 3");
  Rng rng(seed);
  if (kind == Pattern::mixed) {
    static constexpr Pattern choices[] = {Pattern::gradient, Pattern::blobs, Pattern::strokes,
                                          Pattern::blocks};
    kind = choices[uniform_index(rng, 4)];
  }
  const auto plane = detail::pattern_plane(kind, size, rng);
  auto out = Tensor<T>::zeros(Shape{channels, size, size});
  const auto n = size * size;
  for (std::size_t c = 0; c < channels; ++c) {
    // Colour images share structure with a per-channel gain; checkers stay exact.
    const double gain = (channels == 1 || kind == Pattern::checker) ? 1.0 : uniform(rng, 0.6, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      out[c * n + i] = static_cast<T>(std::clamp(gain * plane[i], -1.0, 1.0));
    }
  }
  return out;
}

// ------------------------------------------------------------ degradations

namespace detail {

template <class T>
Tensor<T> gaussian_blur(const Tensor<T>& x, double sigma) {
  if (sigma == 0.0) return x.clone();
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    const double w = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = w;
    total += w;
  }
  for (double& w : k) w /= total;
  const auto C = x.dim(0);
  const auto H = static_cast<std::ptrdiff_t>(x.dim(1));
  const auto W = static_cast<std::ptrdiff_t>(x.dim(2));
  auto clampi = [](std::ptrdiff_t v, std::ptrdiff_t hi) { return std::clamp<std::ptrdiff_t>(v, 0, hi - 1); };
  std::vector<double> tmp(x.numel());
  auto out = Tensor<T>::zeros(x.shape());
  for (std::size_t c = 0; c < C; ++c) {
    const auto base = static_cast<std::ptrdiff_t>(c) * H * W;
    for (std::ptrdiff_t y = 0; y < H; ++y) {
      for (std::ptrdiff_t xx = 0; xx < W; ++xx) {
        double acc = 0.0;
        for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
          acc += k[static_cast<std::size_t>(i + radius)] *
                 static_cast<double>(x[static_cast<std::size_t>(base + y * W + clampi(xx + i, W))]);
        }
        tmp[static_cast<std::size_t>(base + y * W + xx)] = acc;
      }
    }
    for (std::ptrdiff_t y = 0; y < H; ++y) {
      for (std::ptrdiff_t xx = 0; xx < W; ++xx) {
        double acc = 0.0;
        for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
          acc += k[static_cast<std::size_t>(i + radius)] *
                 tmp[static_cast<std::size_t>(base + clampi(y + i, H) * W + xx)];
        }
        out[static_cast<std::size_t>(base + y * W + xx)] = static_cast<T>(acc);
      }
    }
  }
  return out;
}

template <class T>
Tensor<T> specks(const Tensor<T>& x, double density, double radius, std::uint64_t seed) {
  auto out = x.clone();
  if (density == 0.0) return out;
  const auto C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const double area = std::numbers::pi * radius * radius;
  const auto count = static_cast<std::size_t>(
      std::lround(density * static_cast<double>(H * W) / area));
  Rng rng(seed);
  for (std::size_t s = 0; s < count; ++s) {
    const double cx = uniform(rng, 0.0, static_cast<double>(W));
    const double cy = uniform(rng, 0.0, static_cast<double>(H));
    const double rx = radius * uniform(rng, 0.6, 1.4);
    const double ry = radius * uniform(rng, 0.6, 1.4);
    const double ang = uniform(rng, 0.0, std::numbers::pi);
    const double level = uniform(rng, 0.7, 1.0);
    const double opacity = uniform(rng, 0.75, 1.0);
    const double ca = std::cos(ang), sa = std::sin(ang);
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t xx = 0; xx < W; ++xx) {
        const double px = static_cast<double>(xx) + 0.5 - cx;
        const double py = static_cast<double>(y) + 0.5 - cy;
        const double u = (px * ca + py * sa) / rx;
        const double v = (-px * sa + py * ca) / ry;
        if (u * u + v * v > 1.0) continue;
        for (std::size_t c = 0; c < C; ++c) {
          auto& p = out[(c * H + y) * W + xx];
          p = static_cast<T>((1.0 - opacity) * static_cast<double>(p) + opacity * level);
        }
      }
    }
  }
  return out;
}

template <class T>
Tensor<T> blend(const Tensor<T>& x, double alpha, double airlight) {
  auto out = x.clone();
  for (auto& v : out.data()) {
    v = static_cast<T>((1.0 - alpha) * static_cast<double>(v) + alpha * airlight);
  }
  return out;
}

template <class T>
Tensor<T> quantize(const Tensor<T>& x, int levels) {
  auto out = x.clone();
  const double step = 2.0 / levels;
  for (auto& v : out.data()) {
    auto idx = static_cast<long>(std::floor((static_cast<double>(v) + 1.0) / step));
    idx = std::clamp<long>(idx, 0, levels - 1);
    v = static_cast<T>(-1.0 + (static_cast<double>(idx) + 0.5) * step);
  }
  return out;
}

}  // namespace detail

/// Apply one degradation; the result is clamped to [-1, 1].
template <class T>
Tensor<T> apply(const DegradationSpec& spec, const Tensor<T>& x0) {
  spec.validate();
  if (x0.rank() != 3) throw ShapeError("degradations expect [c,h,w], got " + shape_str(x0.shape()));
  Tensor<T> out;
  switch (spec.kind) {
    case DegradationKind::blur: out = detail::gaussian_blur(x0, spec.sigma); break;
    case DegradationKind::specks: out = detail::specks(x0, spec.density, spec.radius, spec.seed); break;
    case DegradationKind::haze:
    case DegradationKind::many_to_one: out = detail::blend(x0, spec.alpha, spec.airlight); break;
    case DegradationKind::quantize: out = detail::quantize(x0, spec.levels); break;
  }
  for (auto& v : out.data()) v = std::clamp(v, T(-1), T(1));
  return out;
}

template <class T>
Tensor<T> apply(const DegradationChain& chain, const Tensor<T>& x0) {
  Tensor<T> x = x0.clone();
  for (const auto& spec : chain) x = resflow::apply(spec, x);
  return x;
}

// ----------------------------------------------------------------- datasets

template <class T>
struct PairedSample {
  Tensor<T> x0;  // HQ
  Tensor<T> x1;  // LQ == apply(spec, x0)
  DegradationChain spec;
  std::uint64_t seed = 0;
};

/// Template for generating a dataset: the degradation chain (seeds and
/// many_to_one airlight/collapse ids are filled per sample) and the HQ source.
struct DatasetFamily {
  DegradationChain chain;
  Pattern pattern = Pattern::mixed;
  std::size_t size = 16;
  std::size_t channels = 1;
};

/// Reproducible list of n pairs. Sample i draws everything from
/// derive_seed(seed, "data/", i). With a many_to_one step, consecutive samples
/// (2k, 2k+1) form one collapse group that shares its LQ image.
template <class T>
std::vector<PairedSample<T>> make_dataset(std::size_t n, const DatasetFamily& family,
                                          std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("n must be >= 1");
  const bool collapsing = std::any_of(family.chain.begin(), family.chain.end(), [](const auto& s) {
    return s.kind == DegradationKind::many_to_one;
  });
  std::vector<PairedSample<T>> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto sample_seed = derive_seed(seed, "data/", i);
    const auto group = i / 2;
    const auto group_seed = derive_seed(seed, "group/", group);
    DegradationChain chain = family.chain;
    for (std::size_t k = 0; k < chain.size(); ++k) {
      auto& spec = chain[k];
      spec.seed = derive_seed(collapsing ? group_seed : sample_seed, "deg/", k);
      if (spec.kind == DegradationKind::many_to_one) {
        Rng rng(spec.seed);
        spec.airlight = family.chain[k].airlight * uniform(rng, -1.0, 1.0);
        spec.collapse_id = group;
      }
    }
    PairedSample<T> s;
    s.seed = sample_seed;
    s.x0 = generate_hq<T>(family.pattern, family.size, derive_seed(sample_seed, "hq"),
                          family.channels);
    s.x1 = resflow::apply(chain, s.x0);
    s.spec = std::move(chain);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace resflow
