#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "resflow/tensor.hpp"

namespace resflow::metrics {

/// Reported PSNR when the two images are identical.
inline constexpr double kPsnrCap = 99.0;

namespace detail {
template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  if (a.numel() == 0) throw ShapeError(std::string(what) + ": empty images");
}
}  // namespace detail

template <class T>
double mse(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

/// 10 log10(max_val^2 / MSE), capped at 99 dB. For [-1, 1] images max_val is 2.
template <class T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double max_val) {
  if (!(max_val > 0.0)) throw std::invalid_argument("max_val must be > 0");
  const double m = mse(a, b);
  if (m == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(max_val * max_val / m));
}

template <class T>
double mae(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mae");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    acc += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
  }
  return acc / static_cast<double>(a.numel());
}

/// Mean SSIM over every window x window box (stride 1) of each channel of
/// [c,h,w] images, with c1 = (0.01 L)^2 and c2 = (0.03 L)^2 for dynamic range L.
template <class T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, std::size_t window = 8,
            double dynamic_range = 2.0) {
  detail::require_same_shape(a, b, "ssim");
  if (a.rank() != 3) throw ShapeError("ssim expects [c,h,w] images");
  const auto C = a.dim(0), H = a.dim(1), W = a.dim(2);
  if (window == 0 || H < window || W < window) {
    throw ShapeError("ssim: image " + shape_str(a.shape()) + " smaller than window " +
                     std::to_string(window));
  }
  const double c1 = (0.01 * dynamic_range) * (0.01 * dynamic_range);
  const double c2 = (0.03 * dynamic_range) * (0.03 * dynamic_range);
  const double n = static_cast<double>(window * window);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y0 = 0; y0 + window <= H; ++y0) {
      for (std::size_t x0 = 0; x0 + window <= W; ++x0) {
        double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
        for (std::size_t y = y0; y < y0 + window; ++y) {
          for (std::size_t x = x0; x < x0 + window; ++x) {
            const double va = static_cast<double>(a[(c * H + y) * W + x]);
            const double vb = static_cast<double>(b[(c * H + y) * W + x]);
            sa += va;
            sb += vb;
            saa += va * va;
            sbb += vb * vb;
            sab += va * vb;
          }
        }
        const double ma = sa / n, mb = sb / n;
        const double va = std::max(0.0, saa / n - ma * ma);
        const double vb = std::max(0.0, sbb / n - mb * mb);
        const double cov = sab / n - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

struct ImageMetrics {
  std::string id;
  double psnr = 0, ssim = 0, mae = 0;
};

struct MetricReport {
  std::vector<ImageMetrics> images;
  ImageMetrics aggregate{"mean"};

  void add(ImageMetrics m) {
    images.push_back(std::move(m));
    const double n = static_cast<double>(images.size());
    aggregate = {"mean", 0, 0, 0};
    for (const auto& im : images) {
      aggregate.psnr += im.psnr;
      aggregate.ssim += im.ssim;
      aggregate.mae += im.mae;
    }
    aggregate.psnr /= n;
    aggregate.ssim /= n;
    aggregate.mae /= n;
  }
};

template <class T>
ImageMetrics evaluate(std::string id, const Tensor<T>& restored, const Tensor<T>& reference,
                      std::size_t window = 8) {
  return {std::move(id), psnr(restored, reference, 2.0), ssim(restored, reference, window, 2.0),
          mae(restored, reference)};
}

}  // namespace resflow::metrics
