#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "resflow/rng.hpp"

// Exact information-theoretic checks on finite alphabets: mutual information
// is invariant under bijective relabelling, cannot grow along a Markov chain,
// and a discretized invertible flow keeps MI with any reference fixed.
namespace resflow::info {

inline constexpr double kNormTolerance = 1e-12;

using Distribution = std::vector<double>;
/// Row-stochastic matrix: rows index inputs, columns outputs.
using Channel = std::vector<std::vector<double>>;

class JointDistribution {
 public:
  JointDistribution(std::size_t rows, std::size_t cols, std::vector<double> p)
      : rows_(rows), cols_(cols), p_(std::move(p)) {
    if (rows_ == 0 || cols_ == 0 || p_.size() != rows_ * cols_) {
      throw std::invalid_argument("joint distribution extents do not match its table");
    }
    double total = 0.0;
    for (double v : p_) {
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw std::invalid_argument("joint distribution has a negative or non-finite entry");
      }
      total += v;
    }
    if (std::abs(total - 1.0) > kNormTolerance) {
      throw std::invalid_argument("joint distribution sums to " + std::to_string(total));
    }
  }

  static JointDistribution from_matrix(const std::vector<std::vector<double>>& m) {
    if (m.empty()) throw std::invalid_argument("empty joint distribution");
    std::vector<double> flat;
    for (const auto& row : m) {
      if (row.size() != m.front().size()) throw std::invalid_argument("ragged joint matrix");
      flat.insert(flat.end(), row.begin(), row.end());
    }
    return {m.size(), m.front().size(), std::move(flat)};
  }

  /// p(i, j) = pmf[i] on the diagonal; MI of this joint is H(pmf).
  static JointDistribution diagonal(const Distribution& pmf) {
    std::vector<double> flat(pmf.size() * pmf.size(), 0.0);
    for (std::size_t i = 0; i < pmf.size(); ++i) flat[i * pmf.size() + i] = pmf[i];
    return {pmf.size(), pmf.size(), std::move(flat)};
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double operator()(std::size_t i, std::size_t j) const { return p_[i * cols_ + j]; }
  const std::vector<double>& table() const { return p_; }

  Distribution row_marginal() const {
    Distribution m(rows_, 0.0);
    for (std::size_t i = 0; i < rows_; ++i) {
      for (std::size_t j = 0; j < cols_; ++j) m[i] += (*this)(i, j);
    }
    return m;
  }

  Distribution col_marginal() const {
    Distribution m(cols_, 0.0);
    for (std::size_t i = 0; i < rows_; ++i) {
      for (std::size_t j = 0; j < cols_; ++j) m[j] += (*this)(i, j);
    }
    return m;
  }

  JointDistribution transposed() const {
    std::vector<double> t(p_.size());
    for (std::size_t i = 0; i < rows_; ++i) {
      for (std::size_t j = 0; j < cols_; ++j) t[j * rows_ + i] = (*this)(i, j);
    }
    return {cols_, rows_, std::move(t)};
  }

 private:
  std::size_t rows_, cols_;
  std::vector<double> p_;
};

/// Shannon entropy in bits, 0 log 0 := 0.
inline double entropy(const Distribution& p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log2(v);
  }
  return h;
}

/// Mutual information in bits, sum p(i,j) log2(p(i,j) / (p(i) p(j))).
inline double mutual_info(const JointDistribution& j) {
  const auto pr = j.row_marginal();
  const auto pc = j.col_marginal();
  double mi = 0.0;
  for (std::size_t a = 0; a < j.rows(); ++a) {
    for (std::size_t b = 0; b < j.cols(); ++b) {
      const double p = j(a, b);
      if (p > 0.0) mi += p * std::log2(p / (pr[a] * pc[b]));
    }
  }
  return std::max(mi, 0.0);
}

inline void require_bijection(const std::vector<std::size_t>& perm, std::size_t n,
                              const char* what) {
  if (perm.size() != n) throw std::invalid_argument(std::string(what) + " has the wrong length");
  std::vector<bool> seen(n, false);
  for (auto v : perm) {
    if (v >= n || seen[v]) throw std::invalid_argument(std::string(what) + " is not a bijection");
    seen[v] = true;
  }
}

/// Joint of (F(X), G(Y)) for bijections F = perm_rows, G = perm_cols.
inline JointDistribution push_bijection(const JointDistribution& j,
                                        const std::vector<std::size_t>& perm_rows,
                                        const std::vector<std::size_t>& perm_cols) {
  require_bijection(perm_rows, j.rows(), "row map");
  require_bijection(perm_cols, j.cols(), "column map");
  std::vector<double> out(j.rows() * j.cols(), 0.0);
  for (std::size_t a = 0; a < j.rows(); ++a) {
    for (std::size_t b = 0; b < j.cols(); ++b) out[perm_rows[a] * j.cols() + perm_cols[b]] = j(a, b);
  }
  return {j.rows(), j.cols(), std::move(out)};
}

/// Joint of (F(X), Y) for an arbitrary map F: X -> {0..out_size-1}.
inline JointDistribution push_rows(const JointDistribution& j, const std::vector<std::size_t>& map,
                                   std::size_t out_size) {
  if (map.size() != j.rows()) throw std::invalid_argument("map length differs from alphabet");
  std::vector<double> out(out_size * j.cols(), 0.0);
  for (std::size_t a = 0; a < j.rows(); ++a) {
    if (map[a] >= out_size) throw std::invalid_argument("map image outside target alphabet");
    for (std::size_t b = 0; b < j.cols(); ++b) out[map[a] * j.cols() + b] += j(a, b);
  }
  return {out_size, j.cols(), std::move(out)};
}

inline void require_stochastic(const Channel& ch, std::size_t inputs, const char* what) {
  if (ch.size() != inputs) throw std::invalid_argument(std::string(what) + " has wrong row count");
  for (const auto& row : ch) {
    if (row.size() != ch.front().size() || row.empty()) {
      throw std::invalid_argument(std::string(what) + " is ragged");
    }
    double s = 0.0;
    for (double v : row) {
      if (!(v >= 0.0)) throw std::invalid_argument(std::string(what) + " has a negative entry");
      s += v;
    }
    if (std::abs(s - 1.0) > kNormTolerance) {
      throw std::invalid_argument(std::string(what) + " is not row-stochastic");
    }
  }
}

struct DpiResult {
  double mi_xy;
  double mi_xz;
};

/// MI(X;Y) and MI(X;Z) for the Markov chain X -> Y -> Z.
inline DpiResult dpi_chain(const Distribution& px, const Channel& channel1,
                           const Channel& channel2) {
  double total = std::accumulate(px.begin(), px.end(), 0.0);
  if (px.empty() || std::abs(total - 1.0) > kNormTolerance ||
      std::any_of(px.begin(), px.end(), [](double v) { return !(v >= 0.0); })) {
    throw std::invalid_argument("source distribution is not a pmf");
  }
  require_stochastic(channel1, px.size(), "channel1");
  const auto ny = channel1.front().size();
  require_stochastic(channel2, ny, "channel2");
  const auto nz = channel2.front().size();
  std::vector<double> pxy(px.size() * ny), pxz(px.size() * nz, 0.0);
  for (std::size_t x = 0; x < px.size(); ++x) {
    for (std::size_t y = 0; y < ny; ++y) {
      const double p = px[x] * channel1[x][y];
      pxy[x * ny + y] = p;
      for (std::size_t z = 0; z < nz; ++z) pxz[x * nz + z] += p * channel2[y][z];
    }
  }
  return {mutual_info({px.size(), ny, std::move(pxy)}), mutual_info({px.size(), nz, std::move(pxz)})};
}

// ------------------------------------------------------- random instances

inline Distribution random_pmf(std::size_t n, Rng& rng) {
  Distribution p(n);
  double total = 0.0;
  for (auto& v : p) {
    v = -std::log(1.0 - uniform01(rng));  // Dirichlet(1)
    total += v;
  }
  for (auto& v : p) v /= total;
  return p;
}

inline JointDistribution random_joint(std::size_t rows, std::size_t cols, Rng& rng) {
  return {rows, cols, random_pmf(rows * cols, rng)};
}

inline Channel random_channel(std::size_t inputs, std::size_t outputs, Rng& rng) {
  Channel ch(inputs);
  for (auto& row : ch) row = random_pmf(outputs, rng);
  return ch;
}

inline std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[uniform_index(rng, i)]);
  return p;
}

// ------------------------------------------------ discretized flow check

struct FlowInvarianceReport {
  std::size_t dim = 0;
  std::size_t states = 0;
  double mi_reference = 0.0;       // MI(z_s, r)
  double mi_flowed = 0.0;          // MI(z_t, r), z_t = shear flow of z_s
  double entropy_source = 0.0;     // H(z_s)
  double mi_self_flowed = 0.0;     // MI(z_t, z_s) with r = z_s
  double mi_random_bijection = 0.0;
  double mi_collapsed = 0.0;       // after a non-invertible map
  double max_invertible_deviation() const {
    return std::max({std::abs(mi_flowed - mi_reference), std::abs(mi_random_bijection - mi_reference),
                     std::abs(mi_self_flowed - entropy_source)});
  }
};

/// Time-one map of the linear shear flow dz_k/dt = z_{k+1} (mod grid) on
/// Z_grid^dim: z_k <- z_k + z_{k+1} with the pre-update neighbour. The matrix
/// is unipotent, so the lattice map is a bijection.
inline std::vector<std::size_t> shear_flow_map(std::size_t dim, std::size_t grid) {
  std::size_t states = 1;
  for (std::size_t k = 0; k < dim; ++k) states *= grid;
  std::vector<std::size_t> map(states);
  std::vector<std::size_t> z(dim);
  for (std::size_t s = 0; s < states; ++s) {
    std::size_t r = s;
    for (std::size_t k = 0; k < dim; ++k) {
      z[k] = r % grid;
      r /= grid;
    }
    for (std::size_t k = 0; k + 1 < dim; ++k) z[k] = (z[k] + z[k + 1]) % grid;
    if (dim == 1) z[0] = (z[0] + 1) % grid;  // 1-D: translation flow
    std::size_t out = 0;
    for (std::size_t k = dim; k-- > 0;) out = out * grid + z[k];
    map[s] = out;
  }
  return map;
}

/// Verify MI(z_s, r) == MI(z_t, r) when z_t is an invertible discretized flow
/// of z_s, for a random reference r and for r = z_s; a collapsing map is the
/// negative control.
inline FlowInvarianceReport flow_mi_invariance(std::size_t dim, std::uint64_t seed,
                                               std::size_t grid = 4) {
  if (dim == 0 || dim > 3) throw std::invalid_argument("dim must be in [1, 3]");
  if (grid < 2) throw std::invalid_argument("grid must be >= 2");
  Rng rng(seed);
  const auto flow = shear_flow_map(dim, grid);
  const auto states = flow.size();
  FlowInvarianceReport rep;
  rep.dim = dim;
  rep.states = states;

  const auto joint = random_joint(states, 3, rng);  // (z_s, r)
  rep.mi_reference = mutual_info(joint);
  rep.mi_flowed = mutual_info(push_rows(joint, flow, states));
  rep.mi_random_bijection = mutual_info(push_rows(joint, random_permutation(states, rng), states));

  const auto pz = random_pmf(states, rng);
  rep.entropy_source = entropy(pz);
  rep.mi_self_flowed = mutual_info(push_rows(JointDistribution::diagonal(pz), flow, states));

  // Merge state pairs {0,1}, {2,3}, ...: loses information about r = z_s.
  std::vector<std::size_t> collapse(states);
  for (std::size_t s = 0; s < states; ++s) collapse[s] = s / 2;
  rep.mi_collapsed = mutual_info(push_rows(JointDistribution::diagonal(pz), collapse, (states + 1) / 2));
  return rep;
}

}  // namespace resflow::info
