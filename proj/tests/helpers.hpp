#pragma once

#include <permutofilt/ops.hpp>

#include <bit>
#include <cstdint>
#include <set>
#include <vector>

namespace permutofilt::testing {

inline Matrix random_matrix(Index rows, Index cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = sample_uniform(rng, lo, hi);
  return m;
}

inline Matrix random_features(Index n, int d, Rng& rng, double spread = 4.0) {
  return random_matrix(n, d, rng, 0.0, spread);
}

inline FilterBank random_bank(int d, int s, int c_out, int c_in, Rng& rng) {
  FilterBank bank = make_filter_bank(d, s, c_out, c_in);
  for (Index i = 0; i < bank.weights.size(); ++i)
    bank.weights.data()[i] = sample_normal(rng) * 0.5;
  return bank;
}

inline Vector flatten(const Matrix& m) {
  return Eigen::Map<const Vector>(m.data(), m.size());
}

inline Matrix unflatten(const Vector& v, Index rows, Index cols) {
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

// Breadth-first ball of radius s over single lattice hops. A hop moves to any
// of the 2^(d+1) - 2 direct neighbors, one per nonempty proper subset S of the
// coordinate axes: add (d+1) to the coordinates in S and subtract |S| from all.
inline std::set<std::vector<std::int32_t>> bfs_ball(const LatticeKey& center, int s) {
  const int n = center.dim_count();
  std::vector<std::vector<std::int32_t>> hops;
  for (std::uint32_t mask = 1; mask + 1 < (1u << n); ++mask) {
    std::vector<std::int32_t> hop(n);
    const std::int32_t size = static_cast<std::int32_t>(std::popcount(mask));
    for (int j = 0; j < n; ++j)
      hop[j] = static_cast<std::int32_t>(n) * ((mask >> j) & 1) - size;
    hops.push_back(std::move(hop));
  }

  std::set<std::vector<std::int32_t>> seen = {center.coords};
  std::vector<std::vector<std::int32_t>> frontier = {center.coords};
  for (int step = 0; step < s; ++step) {
    std::vector<std::vector<std::int32_t>> next;
    for (const std::vector<std::int32_t>& at : frontier)
      for (const std::vector<std::int32_t>& hop : hops) {
        std::vector<std::int32_t> moved(n);
        for (int j = 0; j < n; ++j) moved[j] = at[j] + hop[j];
        if (seen.insert(moved).second) next.push_back(std::move(moved));
      }
    frontier = std::move(next);
  }
  return seen;
}

}  // namespace permutofilt::testing
