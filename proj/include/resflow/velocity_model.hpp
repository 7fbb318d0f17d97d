#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "resflow/rng.hpp"
#include "resflow/tape.hpp"
#include "resflow/tensor.hpp"

namespace resflow {

/// How the auxiliary y_t enters the network.
enum class InjectionMode { adapter, add, concat };

inline std::string_view to_string(InjectionMode m) {
  switch (m) {
    case InjectionMode::adapter: return "adapter";
    case InjectionMode::add: return "add";
    case InjectionMode::concat: return "concat";
  }
  return "?";
}

inline InjectionMode parse_injection(std::string_view s) {
  if (s == "adapter") return InjectionMode::adapter;
  if (s == "add") return InjectionMode::add;
  if (s == "concat") return InjectionMode::concat;
  throw std::invalid_argument("unknown injection mode '" + std::string(s) + "'");
}

struct ModelConfig {
  std::size_t channels = 1;     // image channels of x (and of y)
  std::size_t width = 16;       // base feature width; level 1/2 use 2x
  std::size_t time_dim = 32;    // sinusoidal features
  std::size_t embed_dim = 64;   // time-embedding MLP width
  std::size_t groups = 4;       // group-norm groups
  InjectionMode injection = InjectionMode::adapter;
  std::size_t adapter_blocks = 1;  // residual blocks per adapter level
  std::size_t max_params = 200000;
  std::uint64_t seed = 0;

  void validate() const {
    if (channels == 0) throw std::invalid_argument("model.channels must be positive");
    if (width == 0) throw std::invalid_argument("model.width must be positive");
    if (groups == 0 || width % groups != 0) {
      throw std::invalid_argument("model.groups must divide model.width");
    }
    if (time_dim == 0 || time_dim % 2 != 0) throw std::invalid_argument("model.time_dim must be even");
    if (embed_dim == 0) throw std::invalid_argument("model.embed_dim must be positive");
  }
};

/// Sinusoidal features [sin(w_k s), cos(w_k s)] of s = 1000 t at dim/2
/// geometrically spaced frequencies w_k = 10000^(-k / (dim/2)). Shape [1, dim].
template <class T>
Tensor<T> time_embed(double t, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw std::invalid_argument("time embedding dim must be even");
  if (!(t >= 0.0 && t <= 1.0)) throw std::domain_error("time outside [0, 1]");
  const std::size_t half = dim / 2;
  auto out = Tensor<T>::zeros(Shape{1, dim});
  for (std::size_t k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
    const double arg = 1000.0 * t * freq;
    out[k] = static_cast<T>(std::sin(arg));
    out[half + k] = static_cast<T>(std::cos(arg));
  }
  return out;
}

template <class T>
struct Velocity {
  Tensor<T> vx;
  Tensor<T> vy;
};

/// v_theta(x_t, y_t, t): a two-level convolutional encoder-decoder with
/// time-conditioned group norms, two output heads (vx, vy) and one of three
/// ways to consume y_t.
///
/// In adapter mode y_t runs through its own residual pyramid whose per-level
/// outputs (gamma, beta) modulate the encoder features as h (1 + gamma) + beta.
/// The gamma/beta projections start at zero, so the freshly built model does
/// not depend on y_t at all.
template <class T>
class VelocityModel {
 public:
  explicit VelocityModel(ModelConfig cfg) : cfg_(std::move(cfg)) { build(); }

  VelocityModel(const VelocityModel& other) : VelocityModel(other.cfg_) { copy_values(other); }

  VelocityModel& operator=(const VelocityModel& other) {
    if (this != &other) {
      cfg_ = other.cfg_;
      build();
      copy_values(other);
    }
    return *this;
  }

  VelocityModel(VelocityModel&&) noexcept = default;
  VelocityModel& operator=(VelocityModel&&) noexcept = default;

  const ModelConfig& config() const { return cfg_; }
  std::vector<Tensor<T>>& parameters() { return params_; }
  const std::vector<Tensor<T>>& parameters() const { return params_; }
  const std::vector<std::string>& parameter_names() const { return names_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  /// Forward pass recorded on `tape`. x and y are [channels, h, w] with h and
  /// w divisible by 4.
  Velocity<T> forward(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& y, double t) const {
    check_inputs(x, y, t);
    const auto temb = time_features(tape, t);

    Tensor<T> stem_in = x;
    if (cfg_.injection == InjectionMode::add) stem_in = tape.add(x, y);
    if (cfg_.injection == InjectionMode::concat) stem_in = tape.concat({x, y});

    std::vector<Modulation> mods(3);
    if (cfg_.injection == InjectionMode::adapter) mods = adapter_forward(tape, y);

    auto h = conv(tape, stem_, stem_in);
    auto e0 = block(tape, enc0_, h, temb, mods[0]);
    auto e1 = block(tape, enc1_, conv(tape, down0_, e0), temb, mods[1]);
    auto m = block(tape, mid_, conv(tape, down1_, e1), temb, mods[2]);
    auto u1 = tape.conv_transpose2d(m, up1_.w, up1_.b, 2, 0);
    auto d1 = block(tape, dec1_, tape.concat({u1, e1}), temb, {});
    auto u0 = tape.conv_transpose2d(d1, up0_.w, up0_.b, 2, 0);
    auto d0 = block(tape, dec0_, tape.concat({u0, e0}), temb, {});
    auto out = tape.silu(tape.group_norm(d0, cfg_.groups));
    return {conv(tape, head_x_, out), conv(tape, head_y_, out)};
  }

  /// Inference-only evaluation; safe to call concurrently.
  Velocity<T> velocity(const Tensor<T>& x, const Tensor<T>& y, double t) const {
    Tape<T> tape(false);
    return forward(tape, x, y, t);
  }

 private:
  struct Conv {
    Tensor<T> w, b;
    std::size_t stride = 1, pad = 1;
  };
  struct ConvT {
    Tensor<T> w, b;
  };
  struct Linear {
    Tensor<T> w, b;
  };
  struct ResBlock {
    Linear scale, shift;
    Conv conv1, conv2;
    std::optional<Conv> skip;
    std::size_t groups_in = 1, groups_out = 1;
  };
  struct AdapterLevel {
    Conv entry;  // stem (level 0) or stride-2 downsampling
    std::vector<std::pair<Conv, Conv>> blocks;
    Conv gamma, beta;  // zero-initialized
  };
  struct Modulation {
    std::optional<Tensor<T>> gamma, beta;
  };

  void check_inputs(const Tensor<T>& x, const Tensor<T>& y, double t) const {
    if (x.rank() != 3 || x.dim(0) != cfg_.channels) {
      throw ShapeError("model input x must be [" + std::to_string(cfg_.channels) + ",h,w], got " +
                       shape_str(x.shape()));
    }
    if (y.shape() != x.shape()) {
      throw ShapeError("auxiliary y shape " + shape_str(y.shape()) + " differs from x " +
                       shape_str(x.shape()));
    }
    if (x.dim(1) % 4 != 0 || x.dim(2) % 4 != 0 || x.dim(1) == 0 || x.dim(2) == 0) {
      throw ShapeError("image extents must be positive multiples of 4, got " + shape_str(x.shape()));
    }
    if (!(t >= 0.0 && t <= 1.0)) throw std::domain_error("time outside [0, 1]");
  }

  std::size_t groups_for(std::size_t channels) const {
    std::size_t g = std::min(cfg_.groups, channels);
    while (channels % g != 0) --g;
    return g;
  }

  Tensor<T> make_param(std::string name, Shape shape, double bound, Rng& rng) {
    auto p = bound == 0.0 ? Tensor<T>::zeros(shape) : rand_uniform<T>(shape, rng, -bound, bound);
    p.set_requires_grad(true);
    params_.push_back(p);
    names_.push_back(std::move(name));
    return p;
  }

  Conv make_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                 std::size_t stride, Rng& rng, bool zero = false) {
    const double bound = zero ? 0.0 : 1.0 / std::sqrt(static_cast<double>(cin * k * k));
    Conv c;
    c.w = make_param(name + ".w", Shape{cout, cin, k, k}, bound, rng);
    c.b = make_param(name + ".b", Shape{cout}, 0.0, rng);
    c.stride = stride;
    c.pad = k / 2;
    return c;
  }

  Linear make_linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                     double gain = 1.0) {
    Linear l;
    l.w = make_param(name + ".w", Shape{in, out}, gain / std::sqrt(static_cast<double>(in)), rng);
    l.b = make_param(name + ".b", Shape{1, out}, 0.0, rng);
    return l;
  }

  ResBlock make_block(const std::string& name, std::size_t cin, std::size_t cout, Rng& rng) {
    ResBlock b;
    b.groups_in = groups_for(cin);
    b.groups_out = groups_for(cout);
    b.scale = make_linear(name + ".scale", cfg_.embed_dim, cin, rng, 0.5);
    b.shift = make_linear(name + ".shift", cfg_.embed_dim, cin, rng, 0.5);
    b.conv1 = make_conv(name + ".conv1", cin, cout, 3, 1, rng);
    b.conv2 = make_conv(name + ".conv2", cout, cout, 3, 1, rng);
    if (cin != cout) b.skip = make_conv(name + ".skip", cin, cout, 1, 1, rng);
    return b;
  }

  AdapterLevel make_adapter_level(const std::string& name, std::size_t cin, std::size_t cout,
                                  std::size_t stride, Rng& rng) {
    AdapterLevel a;
    a.entry = make_conv(name + ".entry", cin, cout, 3, stride, rng);
    for (std::size_t i = 0; i < cfg_.adapter_blocks; ++i) {
      const auto n = name + ".res" + std::to_string(i);
      auto c1 = make_conv(n + ".conv1", cout, cout, 3, 1, rng);
      auto c2 = make_conv(n + ".conv2", cout, cout, 3, 1, rng);
      a.blocks.emplace_back(std::move(c1), std::move(c2));
    }
    // 1x1 zero projections: the adapter starts as an exact no-op.
    a.gamma = make_conv(name + ".gamma", cout, cout, 1, 1, rng, true);
    a.beta = make_conv(name + ".beta", cout, cout, 1, 1, rng, true);
    return a;
  }

  void build() {
    cfg_.validate();
    params_.clear();
    names_.clear();
    adapter_.clear();
    Rng rng(cfg_.seed);
    const auto C = cfg_.channels, W = cfg_.width, W2 = 2 * cfg_.width;
    time1_ = make_linear("time.fc1", cfg_.time_dim, cfg_.embed_dim, rng);
    time2_ = make_linear("time.fc2", cfg_.embed_dim, cfg_.embed_dim, rng);
    const auto stem_in = cfg_.injection == InjectionMode::concat ? 2 * C : C;
    stem_ = make_conv("stem", stem_in, W, 3, 1, rng);
    enc0_ = make_block("enc0", W, W, rng);
    down0_ = make_conv("down0", W, W2, 3, 2, rng);
    enc1_ = make_block("enc1", W2, W2, rng);
    down1_ = make_conv("down1", W2, W2, 3, 2, rng);
    mid_ = make_block("mid", W2, W2, rng);
    up1_.w = make_param("up1.w", Shape{W2, W2, 2, 2}, 1.0 / std::sqrt(static_cast<double>(W2)), rng);
    up1_.b = make_param("up1.b", Shape{W2}, 0.0, rng);
    dec1_ = make_block("dec1", 2 * W2, W2, rng);
    up0_.w = make_param("up0.w", Shape{W2, W, 2, 2}, 1.0 / std::sqrt(static_cast<double>(W2)), rng);
    up0_.b = make_param("up0.b", Shape{W}, 0.0, rng);
    dec0_ = make_block("dec0", 2 * W, W, rng);
    head_x_ = make_conv("head_x", W, C, 3, 1, rng);
    head_y_ = make_conv("head_y", W, C, 3, 1, rng);
    if (cfg_.injection == InjectionMode::adapter) {
      adapter_.push_back(make_adapter_level("adapter0", C, W, 1, rng));
      adapter_.push_back(make_adapter_level("adapter1", W, W2, 2, rng));
      adapter_.push_back(make_adapter_level("adapter2", W2, W2, 2, rng));
    }
    if (parameter_count() > cfg_.max_params) {
      throw std::invalid_argument("model has " + std::to_string(parameter_count()) +
                                  " parameters, over the budget of " +
                                  std::to_string(cfg_.max_params));
    }
  }

  void copy_values(const VelocityModel& other) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      std::copy(other.params_[i].data().begin(), other.params_[i].data().end(),
                params_[i].data().begin());
    }
  }

  Tensor<T> conv(Tape<T>& tape, const Conv& c, const Tensor<T>& x) const {
    return tape.conv2d(x, c.w, c.b, c.stride, c.pad);
  }

  Tensor<T> linear(Tape<T>& tape, const Linear& l, const Tensor<T>& x) const {
    return tape.add(tape.matmul(x, l.w), l.b);
  }

  Tensor<T> time_features(Tape<T>& tape, double t) const {
    const auto e = time_embed<T>(t, cfg_.time_dim);
    return tape.silu(linear(tape, time2_, tape.silu(linear(tape, time1_, e))));
  }

  std::vector<Modulation> adapter_forward(Tape<T>& tape, const Tensor<T>& y) const {
    std::vector<Modulation> mods;
    Tensor<T> a = y;
    for (const auto& level : adapter_) {
      a = conv(tape, level.entry, a);
      for (const auto& [c1, c2] : level.blocks) {
        a = tape.add(a, conv(tape, c2, tape.silu(conv(tape, c1, tape.silu(a)))));
      }
      mods.push_back({conv(tape, level.gamma, a), conv(tape, level.beta, a)});
    }
    return mods;
  }

  Tensor<T> block(Tape<T>& tape, const ResBlock& b, const Tensor<T>& x, const Tensor<T>& temb,
                  const Modulation& mod) const {
    const auto cin = x.dim(0);
    auto h = tape.group_norm(x, b.groups_in);
    h = tape.modulate(h, tape.reshape(linear(tape, b.scale, temb), Shape{cin}),
                      tape.reshape(linear(tape, b.shift, temb), Shape{cin}));
    if (mod.gamma) h = tape.add(tape.mul(h, tape.add_scalar(*mod.gamma, T(1))), *mod.beta);
    h = conv(tape, b.conv1, tape.silu(h));
    h = conv(tape, b.conv2, tape.silu(tape.group_norm(h, b.groups_out)));
    const auto skip = b.skip ? conv(tape, *b.skip, x) : x;
    return tape.add(skip, h);
  }

  ModelConfig cfg_;
  std::vector<Tensor<T>> params_;
  std::vector<std::string> names_;
  Linear time1_, time2_;
  Conv stem_, down0_, down1_, head_x_, head_y_;
  ResBlock enc0_, enc1_, mid_, dec1_, dec0_;
  ConvT up1_, up0_;
  std::vector<AdapterLevel> adapter_;
};

}  // namespace resflow
