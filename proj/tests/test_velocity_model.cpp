#include <gtest/gtest.h>

#include <cmath>
#include <thread>

#include "oracles.hpp"
#include "resflow/degradations.hpp"
#include "resflow/trainer.hpp"
#include "resflow/velocity_model.hpp"

using namespace resflow;

namespace {

ModelConfig small(InjectionMode mode = InjectionMode::adapter, std::uint64_t seed = 1) {
  ModelConfig c;
  c.width = 4;
  c.groups = 2;
  c.time_dim = 8;
  c.embed_dim = 8;
  c.injection = mode;
  c.seed = seed;
  return c;
}

ModelConfig tiny(std::uint64_t seed) {
  ModelConfig c;
  c.width = 1;
  c.groups = 1;
  c.time_dim = 4;
  c.embed_dim = 4;
  c.max_params = 2000;
  c.seed = seed;
  return c;
}

template <class T>
bool same_params(const VelocityModel<T>& a, const VelocityModel<T>& b) {
  if (a.parameters().size() != b.parameters().size()) return false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    if (!bit_equal(a.parameters()[i], b.parameters()[i])) return false;
  }
  return true;
}

template <class T>
void perturb(VelocityModel<T>& m, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& p : m.parameters())
    for (auto& v : p.data()) v += static_cast<T>(0.3 * uniform(rng, -1.0, 1.0));
}

struct LossFixture {
  std::vector<PairedSample<double>> data;
  std::vector<const PairedSample<double>*> batch;
  BatchNoise<double> noise;

  explicit LossFixture(std::uint64_t seed) {
    DatasetFamily fam{{DegradationSpec{DegradationKind::blur, 1.0}}, Pattern::mixed, 8, 1};
    data = make_dataset<double>(2, fam, seed);
    batch = {&data[0], &data[1]};
    Rng rng(seed + 100);
    noise = draw_noise<double>(batch, rng, AuxDistribution::gaussian);
    noise.times = {0.3, 0.85};
  }
};

// Extended-precision copy of a model and its batch; finite differences
// taken here keep rounding far below the tolerances under test.
struct LongDoubleTwin {
  using LD = long double;
  VelocityModel<LD> model;
  std::vector<PairedSample<LD>> data;
  std::vector<const PairedSample<LD>*> batch;
  BatchNoise<LD> noise;

  LongDoubleTwin(const ModelConfig& mc, VelocityModel<double>& src, const LossFixture& fx) : model(mc) {
    for (std::size_t k = 0; k < src.parameters().size(); ++k) {
      auto from = src.parameters()[k].data();
      auto to = model.parameters()[k].data();
      for (std::size_t i = 0; i < to.size(); ++i) to[i] = from[i];
    }
    for (const auto& s : fx.data) data.push_back({s.x0.cast<LD>(), s.x1.cast<LD>(), s.spec, s.seed});
    batch = {&data[0], &data[1]};
    noise = {fx.noise.times, {fx.noise.y1[0].cast<LD>(), fx.noise.y1[1].cast<LD>()}};
  }

  std::vector<double> differences(LD h) {
    const std::function<LD()> loss = [&] {
      Tape<LD> tape(false);
      return flow_matching_loss<LD>(tape, model, std::span<const PairedSample<LD>* const>(batch), noise,
                                    DegradationSchedule{})
          .item();
    };
    std::vector<double> fd;
    for (auto& p : model.parameters())
      for (auto& w : p.data()) fd.push_back(oracle::five_point(w, loss, h));
    return fd;
  }
};

}  // namespace

TEST(Build, SameSeedBitIdentical) {
  for (auto mode : {InjectionMode::adapter, InjectionMode::add, InjectionMode::concat}) {
    VelocityModel<float> a(small(mode, 9)), b(small(mode, 9)), c(small(mode, 10));
    EXPECT_TRUE(same_params(a, b));
    EXPECT_FALSE(same_params(a, c));
  }
}

TEST(Build, InvalidConfigRejected) {
  auto c = small();
  c.groups = 3;
  EXPECT_THROW(VelocityModel<float>{c}, std::invalid_argument);
  c = small();
  c.time_dim = 7;
  EXPECT_THROW(VelocityModel<float>{c}, std::invalid_argument);
  c = small();
  c.max_params = 100;
  EXPECT_THROW(VelocityModel<float>{c}, std::invalid_argument);
}

TEST(Build, DefaultFitsBudget) {
  ModelConfig c;
  VelocityModel<float> m(c);
  EXPECT_LE(m.parameter_count(), 200000u);
  EXPECT_GT(m.parameter_count(), 1000u);
  std::size_t sum = 0;
  for (const auto& p : m.parameters()) sum += p.numel();
  EXPECT_EQ(sum, m.parameter_count());
  EXPECT_EQ(m.parameter_names().size(), m.parameters().size());
}

TEST(Build, AdapterOutputProjectionsStartAtZero) {
  VelocityModel<float> m(small());
  std::size_t found = 0;
  for (std::size_t i = 0; i < m.parameters().size(); ++i) {
    const auto& name = m.parameter_names()[i];
    if (name.find("adapter") == std::string::npos) continue;
    if (name.find("gamma") == std::string::npos && name.find("beta") == std::string::npos) continue;
    ++found;
    for (float v : m.parameters()[i].data()) EXPECT_EQ(v, 0.0f) << name;
  }
  EXPECT_GT(found, 0u);
}

TEST(Forward, ShapesMatchInputs) {
  for (std::size_t size : {8u, 16u, 32u}) {
    for (std::size_t ch : {1u, 3u}) {
      auto c = small();
      c.channels = ch;
      VelocityModel<float> m(c);
      Rng rng(size);
      const auto x = randn<float>({ch, size, size}, rng), y = randn<float>({ch, size, size}, rng);
      const auto v = m.velocity(x, y, 0.4);
      EXPECT_EQ(v.vx.shape(), x.shape());
      EXPECT_EQ(v.vy.shape(), y.shape());
      EXPECT_TRUE(v.vx.all_finite());
    }
  }
}

TEST(Forward, InputErrors) {
  VelocityModel<float> m(small());
  const auto x = Tensor<float>::zeros({1, 8, 8});
  EXPECT_THROW(m.velocity(x, Tensor<float>::zeros({1, 8, 4}), 0.5), ShapeError);
  EXPECT_THROW(m.velocity(Tensor<float>::zeros({1, 6, 6}), Tensor<float>::zeros({1, 6, 6}), 0.5), ShapeError);
  EXPECT_THROW(m.velocity(Tensor<float>::zeros({3, 8, 8}), Tensor<float>::zeros({3, 8, 8}), 0.5), ShapeError);
  EXPECT_THROW(m.velocity(x, x, 1.5), std::domain_error);
}

TEST(Forward, AdapterIgnoresYAtInitialization) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    VelocityModel<float> m(small(InjectionMode::adapter, seed));
    Rng rng(seed);
    const auto x = randn<float>({1, 16, 16}, rng), y = randn<float>({1, 16, 16}, rng);
    const auto a = m.velocity(x, y, 0.6), b = m.velocity(x, Tensor<float>::zeros({1, 16, 16}), 0.6);
    EXPECT_TRUE(bit_equal(a.vx, b.vx));
    EXPECT_TRUE(bit_equal(a.vy, b.vy));
  }
}

TEST(Forward, AddAndConcatDependOnYImmediately) {
  for (auto mode : {InjectionMode::add, InjectionMode::concat}) {
    VelocityModel<double> m(small(mode));
    Rng rng(3);
    const auto x = randn<double>({1, 8, 8}, rng), y = randn<double>({1, 8, 8}, rng);
    EXPECT_FALSE(bit_equal(m.velocity(x, y, 0.5).vx, m.velocity(x, Tensor<double>::zeros({1, 8, 8}), 0.5).vx));
  }
}

TEST(Forward, AddModeEqualsSummedInputAtStem) {
  VelocityModel<double> m(small(InjectionMode::add));
  Rng rng(4);
  const auto x = randn<double>({1, 8, 8}, rng), y = randn<double>({1, 8, 8}, rng);
  auto s = x.clone();
  for (std::size_t i = 0; i < s.numel(); ++i) s[i] += y[i];
  const auto zero = Tensor<double>::zeros({1, 8, 8});
  EXPECT_TRUE(bit_equal(m.velocity(x, y, 0.2).vx, m.velocity(s, zero, 0.2).vx));
}

TEST(Forward, AdapterConditioningLiveAfterOneStep) {
  VelocityModel<double> m(small(InjectionMode::adapter, 2));
  LossFixture fx(5);
  AdamW<double> opt(m.parameters());
  TrainConfig cfg;
  apply_step(m, opt, std::span<const PairedSample<double>* const>(fx.batch), fx.noise, cfg, 1e-2);
  Rng rng(8);
  const auto x = randn<double>({1, 8, 8}, rng), y = randn<double>({1, 8, 8}, rng);
  EXPECT_FALSE(bit_equal(m.velocity(x, y, 0.6).vx, m.velocity(x, Tensor<double>::zeros({1, 8, 8}), 0.6).vx));
}

TEST(Forward, ConcurrentReadOnlyCallsAgree) {
  VelocityModel<float> m(small());
  Rng rng(1);
  const auto x = randn<float>({1, 16, 16}, rng), y = randn<float>({1, 16, 16}, rng);
  const auto ref = m.velocity(x, y, 0.3).vx;
  std::vector<Tensor<float>> outs(4);
  std::vector<std::thread> pool;
  for (auto& o : outs) pool.emplace_back([&] { o = m.velocity(x, y, 0.3).vx; });
  for (auto& t : pool) t.join();
  for (const auto& o : outs) EXPECT_TRUE(bit_equal(o, ref));
}

TEST(Copy, CloneIsDeepAndEqual) {
  VelocityModel<float> a(small());
  VelocityModel<float> b = a;
  EXPECT_TRUE(same_params(a, b));
  b.parameters()[0][0] += 1.0f;
  EXPECT_FALSE(same_params(a, b));
}

TEST(TimeEmbed, ZeroTimeIsSinZeroCosOne) {
  const auto e = time_embed<double>(0.0, 16);
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_EQ(e[k], 0.0);
    EXPECT_EQ(e[8 + k], 1.0);
  }
  EXPECT_THROW(time_embed<double>(0.5, 7), std::invalid_argument);
  EXPECT_THROW(time_embed<double>(-0.1, 8), std::domain_error);
}

TEST(TimeEmbed, DistinctTimesDistinctAndConstantNorm) {
  std::vector<Tensor<double>> grid;
  for (int k = 0; k < 100; ++k) grid.push_back(time_embed<double>(k / 99.0, 32));
  double min_dist = 1e9;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    double n = 0;
    for (double v : grid[i].data()) n += v * v;
    EXPECT_NEAR(std::sqrt(n), 4.0, 1e-6);
    for (std::size_t j = i + 1; j < grid.size(); ++j) {
      double d = 0;
      for (std::size_t k = 0; k < 32; ++k) d += (grid[i][k] - grid[j][k]) * (grid[i][k] - grid[j][k]);
      min_dist = std::min(min_dist, std::sqrt(d));
    }
  }
  EXPECT_GT(min_dist, 0.0);
}

TEST(Gradcheck, Float64MatchesFivePointDifferences) {
  for (std::uint64_t seed : {0u, 1u}) {
    VelocityModel<double> m(tiny(seed));
    ASSERT_LE(m.parameter_count(), 2000u);
    perturb(m, seed + 50);
    LossFixture fx(seed);
    m.zero_grad();
    {
      Tape<double> tape;
      tape.backward(flow_matching_loss<double>(tape, m, std::span<const PairedSample<double>* const>(fx.batch),
                                               fx.noise, DegradationSchedule{}));
    }
    std::vector<double> analytic;
    for (auto& p : m.parameters())
      for (double g : p.grad()) analytic.push_back(g);
    LongDoubleTwin twin(tiny(seed), m, fx);
    EXPECT_LE(oracle::max_rel_err(analytic, twin.differences(1e-4L)), 1e-5) << "seed " << seed;
  }
}

TEST(Gradcheck, Float32MatchesDifferencesOfFloat64Twin) {
  VelocityModel<double> m64(tiny(3));
  perturb(m64, 77);
  VelocityModel<float> m32(tiny(3));
  for (std::size_t k = 0; k < m64.parameters().size(); ++k) {
    auto dst = m32.parameters()[k].data();
    auto src = m64.parameters()[k].data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<float>(src[i]);
  }
  LossFixture fx(3);
  std::vector<PairedSample<float>> data32;
  for (const auto& s : fx.data) data32.push_back({s.x0.cast<float>(), s.x1.cast<float>(), s.spec, s.seed});
  std::vector<const PairedSample<float>*> batch32{&data32[0], &data32[1]};
  BatchNoise<float> noise32{fx.noise.times, {fx.noise.y1[0].cast<float>(), fx.noise.y1[1].cast<float>()}};
  m32.zero_grad();
  {
    Tape<float> tape;
    tape.backward(flow_matching_loss<float>(tape, m32, std::span<const PairedSample<float>* const>(batch32), noise32,
                                            DegradationSchedule{}));
  }
  // Relative error against the gradient scale: single precision cannot
  // resolve gradients far below the largest one.
  LongDoubleTwin twin(tiny(3), m64, fx);
  const auto fd = twin.differences(1e-4L);
  std::vector<double> analytic;
  double scale = 0;
  for (auto& p : m32.parameters())
    for (float g : p.grad()) analytic.push_back(g);
  for (double d : fd) scale = std::max(scale, std::abs(d));
  double worst = 0;
  for (std::size_t i = 0; i < fd.size(); ++i) {
    worst = std::max(worst, std::abs(analytic[i] - fd[i]) / std::max(std::abs(fd[i]), 1e-3 * scale));
  }
  EXPECT_LE(worst, 1e-3);
}
