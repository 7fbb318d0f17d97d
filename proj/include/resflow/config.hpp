#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "resflow/degradations.hpp"
#include "resflow/rng.hpp"
#include "resflow/sampler.hpp"
#include "resflow/schedules.hpp"
#include "resflow/trainer.hpp"
#include "resflow/velocity_model.hpp"

namespace resflow {

/// Error raised for any bad configuration key or value; the message always
/// starts with the key.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DataSection {
  std::size_t n = 200;
  std::string kinds = "blur+specks";
  Pattern pattern = Pattern::mixed;
  std::size_t size = 16;
  std::size_t channels = 1;
  double sigma = 1.2;
  double density = 0.04;
  double radius = 1.0;
  double airlight = 0.5;
  double alpha = 0.5;
  int levels = 8;
};

struct EvalSection {
  std::size_t window = 8;
  double max_val = 2.0;
};

/// Everything a run needs, resolved from defaults, a config file and overrides.
struct RunConfig {
  std::uint64_t seed = 0;
  DataSection data;
  ModelConfig model;
  TrainConfig train;
  SampleConfig sample;
  EvalSection eval;
  std::uint64_t checkpoint_every = 0;

  DegradationChain chain() const;
  DatasetFamily family() const { return {chain(), data.pattern, data.size, data.channels}; }
  /// Model config with the channel count and init seed filled in.
  ModelConfig resolved_model() const {
    auto m = model;
    m.channels = data.channels;
    m.seed = derive_seed(seed, "init/");
    return m;
  }
  TrainConfig resolved_train() const {
    auto t = train;
    t.seed = derive_seed(seed, "train/");
    return t;
  }
  SampleConfig resolved_sample() const {
    auto s = sample;
    s.schedule = train.schedule;
    s.aux = train.aux;
    s.y_seed = derive_seed(seed, "y1/");
    return s;
  }
  std::uint64_t data_seed() const { return derive_seed(seed, "data/"); }

  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  /// Cross-field checks; range checks already ran in set().
  void validate() const;
  /// All keys as "key=value" lines in registry order.
  std::string dump() const;
};

namespace config_detail {

[[noreturn]] inline void fail(std::string_view key, const std::string& why) {
  throw ConfigError(std::string(key) + ": " + why);
}

template <class U>
U parse_number(std::string_view key, std::string_view s) {
  U v{};
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || s.empty()) {
    fail(key, "cannot parse '" + std::string(s) + "'");
  }
  return v;
}

inline bool parse_bool(std::string_view key, std::string_view s) {
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  fail(key, "expected true/false, got '" + std::string(s) + "'");
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Entry {
  std::string_view key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

/// Registry of every accepted key. Setters range-check and throw ConfigError
/// naming the key.
inline const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = [] {
    std::vector<Entry> e;
    auto uint_key = [&](std::string_view key, auto accessor, std::uint64_t lo, std::uint64_t hi) {
      e.push_back({key,
                   [=](RunConfig& c, std::string_view v) {
                     const auto n = parse_number<std::uint64_t>(key, v);
                     if (n < lo || n > hi) {
                       fail(key, std::to_string(n) + " out of range [" + std::to_string(lo) + "," +
                                     std::to_string(hi) + "]");
                     }
                     accessor(c) = static_cast<std::remove_reference_t<decltype(accessor(c))>>(n);
                   },
                   [=](const RunConfig& c) {
                     return std::to_string(accessor(c));
                   }});
    };
    auto real_key = [&](std::string_view key, auto accessor, double lo, double hi, bool open_lo) {
      e.push_back({key,
                   [=](RunConfig& c, std::string_view v) {
                     const auto x = parse_number<double>(key, v);
                     const bool ok = (open_lo ? x > lo : x >= lo) && x <= hi;
                     if (!ok) {
                       fail(key, fmt(x) + " out of range " + (open_lo ? "(" : "[") + fmt(lo) +
                                     "," + fmt(hi) + "]");
                     }
                     accessor(c) = x;
                   },
                   [=](const RunConfig& c) { return fmt(accessor(c)); }});
    };
    auto enum_key = [&](std::string_view key, auto accessor, auto parser) {
      e.push_back({key,
                   [=](RunConfig& c, std::string_view v) {
                     try {
                       accessor(c) = parser(v);
                     } catch (const std::exception& ex) {
                       fail(key, ex.what());
                     }
                   },
                   [=](const RunConfig& c) {
                     return std::string(to_string(accessor(c)));
                   }});
    };
    constexpr double kInf = 1e300;

    uint_key("seed", [](auto& c) -> auto& { return c.seed; }, 0, UINT64_MAX);

    uint_key("data.n", [](auto& c) -> auto& { return c.data.n; }, 1, 1000000);
    e.push_back({"data.kinds",
                 [](RunConfig& c, std::string_view v) {
                   const auto old = c.data.kinds;
                   c.data.kinds = std::string(v);
                   try {
                     (void)c.chain();
                   } catch (const std::exception& ex) {
                     c.data.kinds = old;
                     fail("data.kinds", ex.what());
                   }
                 },
                 [](const RunConfig& c) { return c.data.kinds; }});
    enum_key("data.pattern", [](auto& c) -> auto& { return c.data.pattern; },
             [](std::string_view s) { return parse_pattern(s); });
    uint_key("data.size", [](auto& c) -> auto& { return c.data.size; }, 8, 512);
    e.push_back({"data.channels",
                 [](RunConfig& c, std::string_view v) {
                   const auto n = parse_number<std::size_t>("data.channels", v);
                   if (n != 1 && n != 3) fail("data.channels", "must be 1 or 3");
                   c.data.channels = n;
                 },
                 [](const RunConfig& c) { return std::to_string(c.data.channels); }});
    real_key("data.sigma", [](auto& c) -> auto& { return c.data.sigma; }, 0, 16, false);
    real_key("data.density", [](auto& c) -> auto& { return c.data.density; }, 0, 1, false);
    real_key("data.radius", [](auto& c) -> auto& { return c.data.radius; }, 0, 16, true);
    real_key("data.airlight", [](auto& c) -> auto& { return c.data.airlight; }, 0, 1, false);
    real_key("data.alpha", [](auto& c) -> auto& { return c.data.alpha; }, 0, 1, false);
    uint_key("data.levels", [](auto& c) -> auto& { return c.data.levels; }, 2, 256);

    uint_key("model.width", [](auto& c) -> auto& { return c.model.width; }, 1, 256);
    uint_key("model.time_dim", [](auto& c) -> auto& { return c.model.time_dim; }, 2, 1024);
    uint_key("model.embed_dim", [](auto& c) -> auto& { return c.model.embed_dim; }, 1, 4096);
    uint_key("model.groups", [](auto& c) -> auto& { return c.model.groups; }, 1, 256);
    enum_key("model.injection", [](auto& c) -> auto& { return c.model.injection; },
             [](std::string_view s) { return parse_injection(s); });
    uint_key("model.adapter_blocks", [](auto& c) -> auto& { return c.model.adapter_blocks; },
             0, 16);
    uint_key("model.max_params", [](auto& c) -> auto& { return c.model.max_params; }, 1,
             100000000);

    uint_key("train.batch_size", [](auto& c) -> auto& { return c.train.batch_size; }, 1,
             4096);
    uint_key("train.iterations", [](auto& c) -> auto& { return c.train.iterations; }, 1,
             100000000);
    real_key("train.lr_init", [](auto& c) -> auto& { return c.train.lr_init; }, 0, 1, true);
    real_key("train.lr_final", [](auto& c) -> auto& { return c.train.lr_final; }, 0, 1,
             false);
    real_key("train.beta", [](auto& c) -> auto& { return c.train.schedule.beta; }, 0, kInf,
             true);
    real_key("train.gamma", [](auto& c) -> auto& { return c.train.schedule.gamma; }, 0,
             kInf, true);
    enum_key("train.y_schedule", [](auto& c) -> auto& { return c.train.schedule.y_variant; },
             [](std::string_view s) { return parse_y_schedule(s); });
    enum_key("train.aux", [](auto& c) -> auto& { return c.train.aux; },
             [](std::string_view s) { return parse_aux(s); });
    real_key("train.weight_decay", [](auto& c) -> auto& { return c.train.weight_decay; }, 0,
             1, false);
    real_key("train.clip_norm", [](auto& c) -> auto& { return c.train.clip_norm; }, 0, kInf,
             false);
    uint_key("train.checkpoint_every",
             [](auto& c) -> auto& { return c.checkpoint_every; }, 0, 100000000);

    uint_key("sample.steps", [](auto& c) -> auto& { return c.sample.steps; }, 1, 100000);
    e.push_back({"sample.clamp",
                 [](RunConfig& c, std::string_view v) {
                   c.sample.clamp_output = parse_bool("sample.clamp", v);
                 },
                 [](const RunConfig& c) {
                   return std::string(c.sample.clamp_output ? "true" : "false");
                 }});

    uint_key("eval.window", [](auto& c) -> auto& { return c.eval.window; }, 1, 512);
    real_key("eval.max_val", [](auto& c) -> auto& { return c.eval.max_val; }, 0, kInf, true);
    return e;
  }();
  return entries;
}

inline const Entry& find(std::string_view key) {
  for (const auto& e : registry()) {
    if (e.key == key) return e;
  }
  fail(key, "unknown configuration key");
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

}  // namespace config_detail

inline void RunConfig::set(std::string_view key, std::string_view value) {
  config_detail::find(key).set(*this, config_detail::trim(value));
}

inline std::string RunConfig::get(std::string_view key) const {
  return config_detail::find(key).get(*this);
}

inline std::string RunConfig::dump() const {
  std::string out;
  for (const auto& e : config_detail::registry()) {
    out += std::string(e.key) + "=" + e.get(*this) + "\n";
  }
  return out;
}

/// "blur+specks" -> one spec per kind, parameters from the data section.
inline DegradationChain RunConfig::chain() const {
  DegradationChain chain;
  std::string_view rest = data.kinds;
  while (!rest.empty()) {
    const auto plus = rest.find('+');
    const auto name = rest.substr(0, plus);
    DegradationSpec spec;
    spec.kind = parse_degradation_kind(name);
    spec.sigma = data.sigma;
    spec.density = data.density;
    spec.radius = data.radius;
    spec.airlight = data.airlight;
    spec.alpha = spec.kind == DegradationKind::many_to_one ? 1.0 : data.alpha;
    spec.levels = data.levels;
    chain.push_back(spec);
    if (plus == std::string_view::npos) break;
    rest.remove_prefix(plus + 1);
  }
  if (chain.empty()) throw std::invalid_argument("empty degradation chain");
  return chain;
}

inline void RunConfig::validate() const {
  using config_detail::fail;
  if (train.lr_final > train.lr_init) fail("train.lr_final", "must not exceed train.lr_init");
  if (model.width % model.groups != 0) fail("model.groups", "must divide model.width");
  if (model.time_dim % 2 != 0) fail("model.time_dim", "must be even");
  if (data.size % 4 != 0) fail("data.size", "must be a multiple of 4");
  if (eval.window > data.size) fail("eval.window", "larger than data.size");
  for (const auto& spec : chain()) {
    try {
      spec.validate();
    } catch (const std::exception& ex) {
      fail("data." + std::string(ex.what()).substr(0, std::string(ex.what()).find('=')),
           ex.what());
    }
  }
}

/// Parse "key = value" lines; '#' starts a comment. Keys are applied in file
/// order, so a later duplicate wins.
inline void apply_config_text(RunConfig& cfg, std::string_view text, std::string_view origin) {
  std::size_t lineno = 0;
  while (!text.empty()) {
    ++lineno;
    const auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(std::string(origin) + ":" + std::to_string(lineno) +
                        ": expected key=value");
    }
    cfg.set(config_detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

inline void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str(), path.string());
}

/// Overrides of the form "key=value" (highest precedence).
inline void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError(o + ": override must be key=value");
    cfg.set(config_detail::trim(std::string_view(o).substr(0, eq)),
            std::string_view(o).substr(eq + 1));
  }
}

}  // namespace resflow
