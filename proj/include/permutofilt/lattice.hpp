#pragma once

#include <permutofilt/types.hpp>

#include <cstdint>
#include <unordered_map>
#include <vector>

namespace permutofilt {

// Lattice point on the zero-sum hyperplane in R^(d+1). Coordinates are
// integers summing to 0, all congruent modulo (d+1).
struct LatticeKey {
  std::vector<std::int32_t> coords;

  LatticeKey() = default;
  explicit LatticeKey(int dim_count) : coords(dim_count, 0) {}

  int dim_count() const { return static_cast<int>(coords.size()); }

  // Moves `inc` hops along lattice direction `dim`: every coordinate drops
  // by `inc` while coordinate `dim` gains `inc * dim_count()`.
  LatticeKey advanced(int dim, std::int32_t inc) const;

  bool operator==(const LatticeKey& other) const { return coords == other.coords; }
};

struct LatticeKeyHash {
  std::size_t operator()(const LatticeKey& key) const;
};

// Enclosing simplex of an elevated point: d+1 vertices in remainder order
// with matching barycentric weights (>= 0, summing to 1).
struct SimplexEnclosure {
  std::vector<LatticeKey> vertices;
  Vector barycentric;
};

// Elevates a d-dimensional feature onto the zero-sum hyperplane in R^(d+1),
// scaled so that the expected standard deviation matches the lattice spacing.
Vector embed(const Eigen::Ref<const Vector>& feature);

// Row-wise embed of an n x d feature matrix into n x (d+1).
Matrix embed_all(const Eigen::Ref<const Matrix>& features);

// Locates the simplex enclosing an elevated point and its barycentric
// weights. O(d^2) per point.
SimplexEnclosure find_simplex(const Eigen::Ref<const Vector>& elevated);

// Number of lattice points within `s` hops of a vertex for feature
// dimension d: (s+1)^(d+1) - s^(d+1). Throws SizeOverflow when the value
// does not fit in 64 bits.
std::uint64_t filter_size(int d, int s);

// All lattice keys within `s` hops of `key`, in canonical order:
// lexicographic over per-direction hop counts, center first. The count
// always equals filter_size(d, s).
std::vector<LatticeKey> enumerate_neighbors(const LatticeKey& key, int s);

// Canonical hop offsets relative to the origin key.
std::vector<LatticeKey> hop_offsets(int d, int s);

// Hash-keyed registry of populated lattice vertices with dense indices
// assigned in first-insertion order.
class LatticeIndex {
 public:
  LatticeIndex() = default;
  explicit LatticeIndex(int dim_count) : dim_count_(dim_count) {}

  // Returns the dense index of `key`, inserting it if absent.
  std::int32_t insert(const LatticeKey& key);

  // Dense index of `key`, or -1 when the vertex is not populated.
  std::int32_t find(const LatticeKey& key) const;

  Index size() const { return static_cast<Index>(keys_.size()); }
  int dim_count() const { return dim_count_; }
  const LatticeKey& key_of(std::int32_t index) const { return keys_.at(index); }

 private:
  int dim_count_ = 0;
  std::unordered_map<LatticeKey, std::int32_t, LatticeKeyHash> map_;
  std::vector<LatticeKey> keys_;
};

// Registers every vertex touched by the given enclosures.
LatticeIndex build_index(const std::vector<SimplexEnclosure>& enclosures);

}  // namespace permutofilt
