#pragma once

#include <permutofilt/ops.hpp>

namespace permutofilt::oracle {

// Dense (vertices x points) matrix of a splat or slice operator.
Matrix dense_interpolation(const SplatOperator& op);

// Dense (m x m) gather matrix for canonical neighbor k.
Matrix dense_gather(const BlurNeighborhood& blur, Index k);

// Reference forward pass composed purely from materialized dense matrices.
Matrix dense_forward(const LatticePlan& plan, const FilterBank& bank,
                     const Eigen::Ref<const Matrix>& values);

// Fully materialized linear operator acting on column-stacked values:
// vec(out) = full * vec(in), with channels as the outer blocks.
Matrix dense_full_operator(const LatticePlan& plan, const FilterBank& bank);

// Reference input gradient: the transpose of the full operator applied to
// the column-stacked upstream gradient.
Matrix dense_grad_input(const LatticePlan& plan, const FilterBank& bank,
                        const Eigen::Ref<const Matrix>& upstream);

// Max absolute difference over the max absolute reference entry.
double max_rel_error(const Eigen::Ref<const Matrix>& got, const Eigen::Ref<const Matrix>& want);

}  // namespace permutofilt::oracle
