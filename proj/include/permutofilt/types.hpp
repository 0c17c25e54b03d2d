#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace permutofilt {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Eigen::Index;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidFeature : Error {
  using Error::Error;
};
struct SizeOverflow : Error {
  using Error::Error;
};
struct ShapeMismatch : Error {
  using Error::Error;
};
struct LabelOutOfRange : Error {
  using Error::Error;
};
struct StateMissing : Error {
  using Error::Error;
};
struct CacheMissing : Error {
  using Error::Error;
};
struct EmptyInput : Error {
  using Error::Error;
};
struct EmptySegment : Error {
  using Error::Error;
};
struct EmptyDataset : Error {
  using Error::Error;
};
struct RecipeMismatch : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

using Rng = std::mt19937_64;

// Portable normal sampler so seeded runs are reproducible across standard
// library implementations.
inline double sample_normal(Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double u1 = 0.0;
  do {
    u1 = unit(rng);
  } while (u1 <= 0.0);
  const double u2 = unit(rng);
  constexpr double two_pi = 6.283185307179586476925286766559;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

inline double sample_uniform(Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  return dist(rng);
}

}  // namespace permutofilt
