#pragma once

#include <permutofilt/types.hpp>

#include <vector>

namespace permutofilt {

// Scaled feature geometry shared by every kernel scale of one module:
// the pairwise squared distance table is computed once and reused.
struct DistanceCache {
  Matrix features_in;   // P x D
  Matrix features_out;  // Q x D
  Matrix lambda;        // D x D
  Matrix distances;     // Q x P, squared distances between scaled features
};

DistanceCache build_distance_cache(const Eigen::Ref<const Matrix>& features_in,
                                   const Eigen::Ref<const Matrix>& features_out,
                                   const Eigen::Ref<const Matrix>& lambda);

// Row-stochastic Gaussian gram matrix over the cached distances:
// K_ij = exp(-theta d_ij) / sum_j' exp(-theta d_ij').
struct GramKernel {
  double theta = 1.0;
  Matrix k;  // Q x P
};

GramKernel build_gram(const DistanceCache& cache, double theta);

// (P x C) values -> (Q x C) filtered values.
Matrix gram_apply(const GramKernel& kernel, const Eigen::Ref<const Matrix>& z);

// Well separated default scales: 1, 0.7, 0.3, then the same pattern
// divided by growing powers of ten.
std::vector<double> default_thetas(int scale_count);

// H gram kernels over one distance cache plus per-channel mixing weights.
struct InceptionModule {
  DistanceCache cache;
  std::vector<GramKernel> kernels;
  Matrix mix;  // H x C, initialized uniform 1/H
};

InceptionModule build_inception(const Eigen::Ref<const Matrix>& features_in,
                                const Eigen::Ref<const Matrix>& features_out,
                                const Eigen::Ref<const Matrix>& lambda,
                                const std::vector<double>& thetas, int channels);

// Forward cache consumed by the backward pass.
struct InceptionState {
  Matrix z;                      // P x C
  std::vector<Matrix> filtered;  // per scale, Q x C
};

// out(:, c) = sum_h mix(h, c) * (K_h z)(:, c)
Matrix inception_forward(const InceptionModule& module, const Eigen::Ref<const Matrix>& z,
                         InceptionState* state = nullptr);

struct InceptionGradients {
  Matrix z;       // P x C
  Matrix mix;     // H x C
  Vector thetas;  // H
  Matrix lambda;  // D x D
};

InceptionGradients inception_backward(const InceptionModule& module, const InceptionState& state,
                                      const Eigen::Ref<const Matrix>& upstream);

// Mean values and features per segment. Ids must cover 0..M-1 densely;
// a segment with no members raises EmptySegment.
struct SegmentReduction {
  Matrix values;
  Matrix features;
  std::vector<std::vector<Index>> members;
};

SegmentReduction superpixel_reduce(const Eigen::Ref<const Matrix>& values,
                                   const Eigen::Ref<const Matrix>& features,
                                   const std::vector<int>& segments);

// Broadcasts per-segment rows back to the points of each segment.
Matrix segment_expand(const Eigen::Ref<const Matrix>& segment_values,
                      const std::vector<int>& segments);

}  // namespace permutofilt
