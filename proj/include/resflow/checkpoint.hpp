#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "resflow/optimizer.hpp"
#include "resflow/schedules.hpp"
#include "resflow/velocity_model.hpp"

// Layout (all integers little-endian):
//   "RFLW" | u32 version | u32 manifest bytes | manifest (key=value lines)
//   | u64 scalar count | f32 parameters in build order
//   | optional "ADAM" | u64 step | f64 first moments | f64 second moments
namespace resflow::checkpoint {

inline constexpr char kMagic[4] = {'R', 'F', 'L', 'W'};
inline constexpr std::uint32_t kVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Meta {
  ModelConfig model;
  DegradationSchedule schedule;
  AuxDistribution aux = AuxDistribution::gaussian;
  std::uint64_t step = 0;
};

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <class U>
void put(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class U>
U get(std::istream& in, const char* what) {
  U v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (in.gcount() != static_cast<std::streamsize>(sizeof v)) {
    throw FormatError(std::string("checkpoint truncated while reading ") + what);
  }
  return v;
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

inline std::string manifest_text(const Meta& meta) {
  std::ostringstream os;
  const auto& m = meta.model;
  os << "model.channels=" << m.channels << '\n'
     << "model.width=" << m.width << '\n'
     << "model.time_dim=" << m.time_dim << '\n'
     << "model.embed_dim=" << m.embed_dim << '\n'
     << "model.groups=" << m.groups << '\n'
     << "model.injection=" << to_string(m.injection) << '\n'
     << "model.adapter_blocks=" << m.adapter_blocks << '\n'
     << "model.max_params=" << m.max_params << '\n'
     << "model.seed=" << m.seed << '\n'
     << "train.beta=" << detail::fmt(meta.schedule.beta) << '\n'
     << "train.gamma=" << detail::fmt(meta.schedule.gamma) << '\n'
     << "train.y_schedule=" << to_string(meta.schedule.y_variant) << '\n'
     << "train.aux=" << to_string(meta.aux) << '\n'
     << "train.step=" << meta.step << '\n';
  return os.str();
}

inline Meta parse_manifest(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("bad manifest line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto need = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(std::string("manifest lacks ") + key);
    return it->second;
  };
  try {
    Meta meta;
    meta.model.channels = std::stoull(need("model.channels"));
    meta.model.width = std::stoull(need("model.width"));
    meta.model.time_dim = std::stoull(need("model.time_dim"));
    meta.model.embed_dim = std::stoull(need("model.embed_dim"));
    meta.model.groups = std::stoull(need("model.groups"));
    meta.model.injection = parse_injection(need("model.injection"));
    meta.model.adapter_blocks = std::stoull(need("model.adapter_blocks"));
    meta.model.max_params = std::stoull(need("model.max_params"));
    meta.model.seed = std::stoull(need("model.seed"));
    meta.schedule.beta = std::stod(need("train.beta"));
    meta.schedule.gamma = std::stod(need("train.gamma"));
    meta.schedule.y_variant = parse_y_schedule(need("train.y_schedule"));
    meta.aux = parse_aux(need("train.aux"));
    meta.step = std::stoull(need("train.step"));
    return meta;
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(std::string("bad manifest value: ") + e.what());
  }
}

/// Write atomically (temporary file + rename) so a failed write never
/// replaces the previous checkpoint.
template <class T>
void save(const std::filesystem::path& path, const VelocityModel<T>& model, const Meta& meta,
          const AdamW<T>* optimizer = nullptr) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(kMagic, 4);
    detail::put<std::uint32_t>(out, kVersion);
    const auto text = manifest_text(meta);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    detail::put<std::uint64_t>(out, model.parameter_count());
    for (const auto& p : model.parameters()) {
      for (T v : p.data()) detail::put<float>(out, static_cast<float>(v));
    }
    if (optimizer) {
      out.write("ADAM", 4);
      detail::put<std::uint64_t>(out, optimizer->step_count());
      for (const auto& m : optimizer->first_moments()) {
        for (double v : m) detail::put<double>(out, v);
      }
      for (const auto& m : optimizer->second_moments()) {
        for (double v : m) detail::put<double>(out, v);
      }
    }
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <class T>
struct Loaded {
  VelocityModel<T> model;
  Meta meta;
  std::optional<std::uint64_t> optimizer_step;
  std::vector<std::vector<double>> first_moments, second_moments;
};

template <class T>
Loaded<T> load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError(path.string() + " is not a checkpoint (bad magic)");
  }
  const auto version = detail::get<std::uint32_t>(in, "version");
  if (version != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto len = detail::get<std::uint32_t>(in, "manifest length");
  if (len > (1U << 20)) throw FormatError("implausible manifest length");
  std::string text(len, '\0');
  in.read(text.data(), len);
  if (in.gcount() != static_cast<std::streamsize>(len)) throw FormatError("checkpoint truncated in manifest");
  auto meta = parse_manifest(text);
  VelocityModel<T> model(meta.model);
  const auto count = detail::get<std::uint64_t>(in, "parameter count");
  if (count != model.parameter_count()) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " parameters, model needs " +
                      std::to_string(model.parameter_count()));
  }
  for (auto& p : model.parameters()) {
    for (auto& v : p.data()) v = static_cast<T>(detail::get<float>(in, "parameters"));
  }
  Loaded<T> out{std::move(model), meta, std::nullopt, {}, {}};
  char tag[4] = {};
  in.read(tag, 4);
  if (in.gcount() == 0) return out;
  if (in.gcount() != 4 || std::memcmp(tag, "ADAM", 4) != 0) {
    throw FormatError("unexpected trailing data in checkpoint");
  }
  out.optimizer_step = detail::get<std::uint64_t>(in, "optimizer step");
  for (auto* buffers : {&out.first_moments, &out.second_moments}) {
    for (const auto& p : out.model.parameters()) {
      std::vector<double> m(p.numel());
      for (auto& v : m) v = detail::get<double>(in, "optimizer moments");
      buffers->push_back(std::move(m));
    }
  }
  return out;
}

}  // namespace resflow::checkpoint
