#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "resflow/tensor.hpp"

namespace resflow {

/// Binary PGM (P5, 1 channel) / PPM (P6, 3 channels), 8-bit. Pixels map
/// linearly between [0, 255] and [-1, 1]; tensors are planar [c, h, w].
namespace pnm {

inline std::uint8_t to_byte(double v) {
  const double u = std::clamp((v + 1.0) * 0.5, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(u * 255.0));
}

inline double from_byte(std::uint8_t b) { return static_cast<double>(b) / 255.0 * 2.0 - 1.0; }

template <class T>
void write(const std::filesystem::path& path, const Tensor<T>& image) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw ShapeError("pnm::write expects [1|3, h, w], got " + shape_str(image.shape()));
  }
  const auto c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << (c == 1 ? "P5" : "P6") << '\n' << w << ' ' << h << "\n255\n";
  std::vector<std::uint8_t> bytes(c * h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t k = 0; k < c; ++k) {
        bytes[(y * w + x) * c + k] = to_byte(static_cast<double>(image[(k * h + y) * w + x]));
      }
    }
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

namespace detail {
inline std::size_t read_header_int(std::istream& in, const std::string& name) {
  char ch;
  while (in.get(ch)) {
    if (ch == '#') {
      std::string discard;
      std::getline(in, discard);
    } else if (!std::isspace(static_cast<unsigned char>(ch))) {
      in.unget();
      break;
    }
  }
  long long v = -1;
  if (!(in >> v) || v <= 0) throw std::runtime_error("malformed PNM header in " + name);
  return static_cast<std::size_t>(v);
}
}  // namespace detail

template <class T>
Tensor<T> read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  std::size_t c;
  if (magic == "P5") {
    c = 1;
  } else if (magic == "P6") {
    c = 3;
  } else {
    throw std::runtime_error(path.string() + " is not a binary PGM/PPM file");
  }
  const auto w = detail::read_header_int(in, path.string());
  const auto h = detail::read_header_int(in, path.string());
  const auto maxval = detail::read_header_int(in, path.string());
  if (maxval != 255) throw std::runtime_error("only 8-bit PNM is supported: " + path.string());
  in.get();  // single whitespace before the raster
  std::vector<std::uint8_t> bytes(c * h * w);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw std::runtime_error("truncated raster in " + path.string());
  }
  auto image = Tensor<T>::zeros(Shape{c, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t k = 0; k < c; ++k) {
        image[(k * h + y) * w + x] = static_cast<T>(from_byte(bytes[(y * w + x) * c + k]));
      }
    }
  }
  return image;
}

/// Round-trips a tensor through the 8-bit pixel grid.
template <class T>
Tensor<T> quantize_to_bytes(const Tensor<T>& image) {
  auto out = image.clone();
  for (auto& v : out.data()) v = static_cast<T>(from_byte(to_byte(static_cast<double>(v))));
  return out;
}

inline const char* extension(std::size_t channels) { return channels == 1 ? ".pgm" : ".ppm"; }

}  // namespace pnm
}  // namespace resflow
