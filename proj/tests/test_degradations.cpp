#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "resflow/degradations.hpp"
#include "resflow/metrics.hpp"

using namespace resflow;

namespace {

DegradationSpec blur(double s) {
  DegradationSpec d;
  d.kind = DegradationKind::blur;
  d.sigma = s;
  return d;
}

DegradationSpec haze(double alpha, double airlight = 0.5) {
  DegradationSpec d;
  d.kind = DegradationKind::haze;
  d.alpha = alpha;
  d.airlight = airlight;
  return d;
}

DegradationSpec quant(int levels) {
  DegradationSpec d;
  d.kind = DegradationKind::quantize;
  d.levels = levels;
  return d;
}

double psnr(const Tensor<double>& a, const Tensor<double>& b) { return metrics::psnr(a, b, 2.0); }

}  // namespace

TEST(GenerateHq, CheckerAlternatesWithPeriodTwo) {
  const auto x = generate_hq<double>(Pattern::checker, 8, 1);
  for (std::size_t y = 0; y < 8; ++y) {
    for (std::size_t c = 0; c < 8; ++c) {
      const double v = x[y * 8 + c];
      EXPECT_TRUE(v == 1.0 || v == -1.0);
      if (c + 1 < 8) {
        EXPECT_EQ(x[y * 8 + c + 1], -v);
      }
      if (y + 1 < 8) {
        EXPECT_EQ(x[(y + 1) * 8 + c], -v);
      }
      if (c + 2 < 8) {
        EXPECT_EQ(x[y * 8 + c + 2], v);
      }
    }
  }
}

TEST(GenerateHq, SameSeedBitIdentical) {
  for (auto p : {Pattern::gradient, Pattern::blobs, Pattern::strokes, Pattern::blocks, Pattern::mixed}) {
    EXPECT_TRUE(bit_equal(generate_hq<double>(p, 16, 42, 3), generate_hq<double>(p, 16, 42, 3)));
  }
  EXPECT_FALSE(bit_equal(generate_hq<double>(Pattern::blobs, 16, 1), generate_hq<double>(Pattern::blobs, 16, 2)));
}

TEST(GenerateHq, BlobMeanWithinHalf) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto x = generate_hq<double>(Pattern::blobs, 16, s);
    double m = 0;
    for (double v : x.data()) m += v;
    m /= x.numel();
    EXPECT_GE(m, -0.5);
    EXPECT_LE(m, 0.5);
  }
}

TEST(GenerateHq, RangeAndErrors) {
  for (std::uint64_t s = 0; s < 30; ++s) {
    for (const auto out = generate_hq<double>(Pattern::mixed, 12, s, 3); double v : out.data()) {
      EXPECT_GE(v, -1.0);
      EXPECT_LE(v, 1.0);
    }
  }
  EXPECT_THROW(generate_hq<double>(Pattern::mixed, 7, 0), std::invalid_argument);
  EXPECT_THROW(generate_hq<double>(Pattern::mixed, 8, 0, 2), std::invalid_argument);
}

TEST(Apply, IdentityCases) {
  const auto x = generate_hq<double>(Pattern::mixed, 16, 3);
  EXPECT_TRUE(bit_equal(resflow::apply(blur(0.0), x), x));
  DegradationSpec sp;
  sp.kind = DegradationKind::specks;
  sp.density = 0.0;
  EXPECT_TRUE(bit_equal(resflow::apply(sp, x), x));
}

TEST(Apply, FullHazeIsConstantAirlight) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto y = resflow::apply(haze(1.0, 0.3), generate_hq<double>(Pattern::mixed, 16, s));
    for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.3);
  }
}

TEST(Apply, SpecksBrightenAndAreSeeded) {
  const auto x = Tensor<double>::full({1, 16, 16}, -1.0);
  DegradationSpec sp;
  sp.kind = DegradationKind::specks;
  sp.density = 0.2;
  sp.seed = 5;
  const auto y = resflow::apply(sp, x);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < y.numel(); ++i) {
    EXPECT_GE(y[i], x[i]);
    changed += y[i] != x[i];
  }
  EXPECT_GT(changed, 10u);
  EXPECT_TRUE(bit_equal(y, resflow::apply(sp, x)));
  sp.seed = 6;
  EXPECT_FALSE(bit_equal(y, resflow::apply(sp, x)));
}

TEST(Apply, QuantizeIsMidRise) {
  const Tensor<double> x({1, 1, 4}, {-1.0, -0.01, 0.01, 1.0});
  const auto y = resflow::apply(quant(2), x);
  EXPECT_EQ(y[0], -0.5);
  EXPECT_EQ(y[1], -0.5);
  EXPECT_EQ(y[2], 0.5);
  EXPECT_EQ(y[3], 0.5);
}

TEST(Apply, ParameterRangesNameTheParameter) {
  DegradationSpec sp;
  sp.kind = DegradationKind::specks;
  sp.density = 1.5;
  try {
    resflow::apply(sp, Tensor<double>::zeros({1, 8, 8}));
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("density"), std::string::npos);
  }
  EXPECT_THROW(resflow::apply(haze(1.2), Tensor<double>::zeros({1, 8, 8})), std::invalid_argument);
  EXPECT_THROW(resflow::apply(quant(1), Tensor<double>::zeros({1, 8, 8})), std::invalid_argument);
  EXPECT_THROW(resflow::apply(blur(-1), Tensor<double>::zeros({1, 8, 8})), std::invalid_argument);
  DegradationSpec m;
  m.kind = DegradationKind::many_to_one;
  m.alpha = 0.9;
  EXPECT_THROW(resflow::apply(m, Tensor<double>::zeros({1, 8, 8})), std::invalid_argument);
}

TEST(Apply, OutputClampedToUnitRange) {
  const auto x = Tensor<double>::full({1, 8, 8}, 1.0);
  DegradationSpec sp;
  sp.kind = DegradationKind::specks;
  sp.density = 1.0;
  for (const auto out = resflow::apply(sp, x); double v : out.data()) EXPECT_LE(v, 1.0);
}

TEST(Apply, PureFunctionOfSpecAndInput) {
  DegradationChain chain{blur(1.3), haze(0.4)};
  DegradationSpec sp;
  sp.kind = DegradationKind::specks;
  sp.density = 0.05;
  sp.seed = 77;
  chain.push_back(sp);
  const auto x = generate_hq<double>(Pattern::mixed, 16, 9);
  EXPECT_TRUE(bit_equal(resflow::apply(chain, x), resflow::apply(chain, x)));
}

TEST(Apply, PsnrFallsAsStrengthGrows) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto x = generate_hq<double>(Pattern::mixed, 16, s);
    double prev = 1e9;
    for (double sigma : {0.5, 1.0, 1.5, 2.5, 4.0}) {
      const double p = psnr(resflow::apply(blur(sigma), x), x);
      EXPECT_LT(p, prev) << "blur sigma " << sigma;
      prev = p;
    }
    prev = 1e9;
    for (double a : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      const double p = psnr(resflow::apply(haze(a, 0.0), x), x);
      EXPECT_LT(p, prev) << "haze alpha " << a;
      prev = p;
    }
    prev = 1e9;
    for (int levels : {64, 16, 8, 4, 2}) {
      const double p = psnr(resflow::apply(quant(levels), x), x);
      EXPECT_LT(p, prev) << "quantize levels " << levels;
      prev = p;
    }
  }
}

TEST(Dataset, RerunIsIdentical) {
  DatasetFamily fam{{blur(1.0)}, Pattern::mixed, 16, 1};
  const auto a = make_dataset<double>(4, fam, 11), b = make_dataset<double>(4, fam, 11);
  ASSERT_EQ(a.size(), 4u);
  std::set<std::uint64_t> seeds;
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_TRUE(bit_equal(a[i].x0, b[i].x0));
    EXPECT_TRUE(bit_equal(a[i].x1, b[i].x1));
    EXPECT_TRUE(bit_equal(a[i].x1, resflow::apply(a[i].spec, a[i].x0)));
    seeds.insert(a[i].seed);
  }
  EXPECT_EQ(seeds.size(), 4u);
  EXPECT_THROW(make_dataset<double>(0, fam, 1), std::invalid_argument);
}

TEST(Dataset, ManyToOneHasHalfAsManyDistinctLq) {
  DegradationSpec m;
  m.kind = DegradationKind::many_to_one;
  m.alpha = 1.0;
  m.airlight = 0.6;
  DatasetFamily fam{{m}, Pattern::mixed, 16, 1};
  const std::size_t n = 12;
  const auto data = make_dataset<double>(n, fam, 5);
  std::size_t distinct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    bool seen = false;
    for (std::size_t j = 0; j < i; ++j) {
      double diff = 0;
      for (std::size_t k = 0; k < data[i].x1.numel(); ++k) diff = std::max(diff, std::abs(data[i].x1[k] - data[j].x1[k]));
      if (diff <= 1e-7) seen = true;
    }
    distinct += !seen;
  }
  EXPECT_EQ(distinct, n / 2);
  for (std::size_t g = 0; g < n / 2; ++g) {
    EXPECT_FALSE(bit_equal(data[2 * g].x0, data[2 * g + 1].x0));
    EXPECT_EQ(data[2 * g].spec[0].collapse_id, g);
  }
}

TEST(Dataset, NearOneAlphaStillCollapsesWithinTolerance) {
  DegradationSpec m;
  m.kind = DegradationKind::many_to_one;
  m.alpha = kManyToOneMinAlpha;
  DatasetFamily fam{{m}, Pattern::checker, 16, 1};
  const auto data = make_dataset<double>(2, fam, 8);
  for (std::size_t k = 0; k < data[0].x1.numel(); ++k) {
    EXPECT_LE(std::abs(data[0].x1[k] - data[1].x1[k]), 1e-7);
  }
}

TEST(Dataset, BlurredCheckersScoreBelowThirtyDb) {
  for (double sigma : {1.5, 2.0, 3.0}) {
    DatasetFamily fam{{blur(sigma)}, Pattern::checker, 16, 1};
    const auto data = make_dataset<double>(8, fam, 3);
    double mean = 0;
    for (const auto& s : data) mean += psnr(s.x1, s.x0);
    EXPECT_LT(mean / data.size(), 30.0);
  }
}

TEST(Descriptors, KindAndParamStrings) {
  DegradationChain chain{blur(1.5), haze(0.25, 0.5)};
  EXPECT_EQ(chain_kind_string(chain), "blur+haze");
  const auto p = chain_params_string(chain);
  EXPECT_NE(p.find("sigma=1.5"), std::string::npos);
  EXPECT_NE(p.find("alpha=0.25"), std::string::npos);
  EXPECT_EQ(parse_degradation_kind("many_to_one"), DegradationKind::many_to_one);
  EXPECT_THROW(parse_degradation_kind("rain"), std::invalid_argument);
  EXPECT_EQ(parse_pattern("checker"), Pattern::checker);
}
