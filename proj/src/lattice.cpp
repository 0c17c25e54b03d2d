#include <permutofilt/lattice.hpp>

#include <cmath>

namespace permutofilt {

LatticeKey LatticeKey::advanced(int dim, std::int32_t inc) const {
  LatticeKey out = *this;
  const std::int32_t span = static_cast<std::int32_t>(coords.size());
  for (auto& c : out.coords) c -= inc;
  out.coords[dim] += inc * span;
  return out;
}

std::size_t LatticeKeyHash::operator()(const LatticeKey& key) const {
  std::uint64_t h = 0x9E3779B97F4A7C15ull;
  for (std::int32_t c : key.coords) {
    std::uint64_t x = static_cast<std::uint64_t>(static_cast<std::int64_t>(c));
    x *= 0xBF58476D1CE4E5B9ull;
    x ^= x >> 31;
    h = (h ^ x) * 0x94D049BB133111EBull;
  }
  return static_cast<std::size_t>(h ^ (h >> 29));
}

Vector embed(const Eigen::Ref<const Vector>& feature) {
  const int d = static_cast<int>(feature.size());
  if (d < 1) throw InvalidFeature("feature dimension must be at least 1");
  if (!feature.allFinite()) throw InvalidFeature("feature has non-finite entries");

  const double inv_std_dev = std::sqrt(2.0 / 3.0) * (d + 1);
  Vector elevated(d + 1);
  double sm = 0.0;
  for (int j = d; j > 0; --j) {
    const double scale = inv_std_dev / std::sqrt(static_cast<double>(j) * (j + 1));
    const double cf = feature[j - 1] * scale;
    elevated[j] = sm - j * cf;
    sm += cf;
  }
  elevated[0] = sm;
  return elevated;
}

Matrix embed_all(const Eigen::Ref<const Matrix>& features) {
  const Index n = features.rows();
  const Index d = features.cols();
  Matrix out(n, d + 1);
  for (Index i = 0; i < n; ++i) out.row(i) = embed(features.row(i).transpose()).transpose();
  return out;
}

SimplexEnclosure find_simplex(const Eigen::Ref<const Vector>& elevated) {
  const int span = static_cast<int>(elevated.size());
  const int d = span - 1;
  if (d < 1) throw InvalidFeature("elevated point must have at least 2 coordinates");
  if (!elevated.allFinite()) throw InvalidFeature("elevated point has non-finite entries");

  // Nearest remainder-0 lattice point: round each coordinate to a multiple
  // of d+1, then repair the rounding so the key sums to zero.
  std::vector<std::int32_t> rem0(span);
  std::int32_t sum = 0;
  for (int i = 0; i < span; ++i) {
    const double v = elevated[i] / span;
    const double up = std::ceil(v) * span;
    const double down = std::floor(v) * span;
    const double rounded = (up - elevated[i] < elevated[i] - down) ? up : down;
    rem0[i] = static_cast<std::int32_t>(rounded);
    sum += rem0[i] / span;
  }

  // Rank coordinates by rounding residual, largest first.
  std::vector<int> rank(span, 0);
  for (int i = 0; i < d; ++i) {
    const double di = elevated[i] - rem0[i];
    for (int j = i + 1; j < span; ++j) {
      if (di < elevated[j] - rem0[j]) {
        ++rank[i];
      } else {
        ++rank[j];
      }
    }
  }

  // If the rounded coordinates do not sum to zero, shift the offending
  // coordinates to the neighboring remainder-0 point.
  for (int i = 0; i < span; ++i) {
    rank[i] += sum;
    if (rank[i] < 0) {
      rank[i] += span;
      rem0[i] += span;
    } else if (rank[i] > d) {
      rank[i] -= span;
      rem0[i] -= span;
    }
  }

  // Barycentric weights are consecutive differences of the sorted residuals.
  Vector bary = Vector::Zero(span + 1);
  for (int i = 0; i < span; ++i) {
    const double v = (elevated[i] - rem0[i]) / span;
    bary[d - rank[i]] += v;
    bary[d - rank[i] + 1] -= v;
  }
  bary[0] += 1.0 + bary[span];

  SimplexEnclosure enclosure;
  enclosure.vertices.reserve(span);
  enclosure.barycentric = bary.head(span);
  for (int r = 0; r < span; ++r) {
    LatticeKey key(span);
    for (int i = 0; i < span; ++i) {
      const std::int32_t canonical = (rank[i] <= d - r) ? r : r - span;
      key.coords[i] = rem0[i] + canonical;
    }
    enclosure.vertices.push_back(std::move(key));
  }
  return enclosure;
}

std::uint64_t filter_size(int d, int s) {
  if (d < 1) throw InvalidFeature("feature dimension must be at least 1");
  if (s < 0) throw InvalidFeature("neighborhood size must be non-negative");
  auto checked_pow = [](std::uint64_t base, int exp) {
    std::uint64_t r = 1;
    for (int i = 0; i < exp; ++i) {
      if (base != 0 && r > UINT64_MAX / base) throw SizeOverflow("filter size exceeds 64 bits");
      r *= base;
    }
    return r;
  };
  return checked_pow(s + 1, d + 1) - checked_pow(s, d + 1);
}

namespace {

void walk_hops(const LatticeKey& key, int dim, bool any_zero, int s,
               std::vector<LatticeKey>& out) {
  const int span = key.dim_count();
  if (dim == span) {
    out.push_back(key);
    return;
  }
  const bool last = (dim == span - 1);
  const int max_hops = (!last || any_zero) ? s : 0;
  LatticeKey walking = key;
  for (int c = 0; c <= max_hops; ++c) {
    walk_hops(walking, dim + 1, any_zero || c == 0, s, out);
    if (c < max_hops) walking = walking.advanced(dim, 1);
  }
}

}  // namespace

std::vector<LatticeKey> enumerate_neighbors(const LatticeKey& key, int s) {
  const int d = key.dim_count() - 1;
  const std::uint64_t expected = filter_size(d, s);
  std::vector<LatticeKey> out;
  out.reserve(expected);
  walk_hops(key, 0, false, s, out);
  return out;
}

std::vector<LatticeKey> hop_offsets(int d, int s) {
  return enumerate_neighbors(LatticeKey(d + 1), s);
}

std::int32_t LatticeIndex::insert(const LatticeKey& key) {
  auto [it, added] = map_.try_emplace(key, static_cast<std::int32_t>(keys_.size()));
  if (added) {
    if (dim_count_ == 0) dim_count_ = key.dim_count();
    keys_.push_back(key);
  }
  return it->second;
}

std::int32_t LatticeIndex::find(const LatticeKey& key) const {
  auto it = map_.find(key);
  return it == map_.end() ? -1 : it->second;
}

LatticeIndex build_index(const std::vector<SimplexEnclosure>& enclosures) {
  LatticeIndex index;
  for (const auto& enclosure : enclosures)
    for (const auto& vertex : enclosure.vertices) index.insert(vertex);
  return index;
}

}  // namespace permutofilt
