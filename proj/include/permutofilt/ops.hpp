#pragma once

#include <permutofilt/lattice.hpp>
#include <permutofilt/types.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace permutofilt {

inline constexpr std::int32_t kMissing = -1;

// Point values paired with the features that place them in the lattice.
struct Signal {
  Matrix values;    // n x c
  Matrix features;  // n x d, unscaled
};

// Sparse barycentric interpolation operator between points and lattice
// vertices. As a matrix it has shape (vertices x points) with at most
// d+1 entries per column; scatter applies the matrix, gather applies its
// transpose.
class SplatOperator {
 public:
  SplatOperator() = default;
  SplatOperator(Index rows, Index cols, int order)
      : rows_(rows), cols_(cols), order_(order),
        vertices_(cols * order, kMissing), weights_(cols * order, 0.0) {}

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  int order() const { return order_; }

  std::int32_t vertex(Index point, int a) const { return vertices_[point * order_ + a]; }
  double weight(Index point, int a) const { return weights_[point * order_ + a]; }
  void set_entry(Index point, int a, std::int32_t vertex, double weight) {
    vertices_[point * order_ + a] = vertex;
    weights_[point * order_ + a] = weight;
  }
  void set_rows(Index rows) { rows_ = rows; }

  // Sum of weights attached to populated vertices for one point.
  double column_weight_sum(Index point) const;

  // point values (cols x c) -> lattice values (rows x c)
  Matrix scatter(const Eigen::Ref<const Matrix>& point_values) const;

  // lattice values (rows x c) -> point values (cols x c)
  Matrix gather(const Eigen::Ref<const Matrix>& lattice_values) const;

 private:
  Index rows_ = 0;
  Index cols_ = 0;
  int order_ = 0;
  std::vector<std::int32_t> vertices_;
  std::vector<double> weights_;
};

// Gather table over populated vertices: entry (k, j) is the dense index of
// the k-th canonical neighbor of vertex j, or kMissing when that neighbor
// is not populated. Row 0 is the identity.
struct BlurNeighborhood {
  int d = 0;
  int s = 0;
  Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic> neighbor_index;  // t x m

  Index t() const { return neighbor_index.rows(); }
  Index vertex_count() const { return neighbor_index.cols(); }
};

// Learnable lattice filter: one weight per (output channel, input channel,
// canonical neighbor) triple.
struct FilterBank {
  int d = 0;
  int s = 0;
  int c_out = 0;
  int c_in = 0;
  Index t = 0;
  Matrix weights;  // c_out x (c_in * t), column index cin * t + k

  double& at(int co, int cin, Index k) { return weights(co, cin * t + k); }
  double at(int co, int cin, Index k) const { return weights(co, cin * t + k); }
  Index parameter_count() const { return weights.size(); }
};

FilterBank make_filter_bank(int d, int s, int c_out, int c_in);

// Center-only identity filter; forward with it reduces to splat + slice.
FilterBank identity_filter(int d, int s, int c);

// Scalar filter with weights proportional to exp(-|offset|^2 / (2 sigma^2)),
// offsets measured in lattice hops, normalized to sum to one.
FilterBank gaussian_init(int d, int s, double sigma);

// Builds the splat operator for input points, registering every enclosing
// vertex in `index`. Features are scaled per dimension before elevation.
SplatOperator build_splat(const Eigen::Ref<const Matrix>& features,
                          const Eigen::Ref<const Vector>& scales, LatticeIndex& index);

// Builds the slice operator for output points against an existing vertex
// set. Vertices that were never populated stay kMissing and contribute
// nothing on gather.
SplatOperator build_slice(const Eigen::Ref<const Matrix>& features,
                          const Eigen::Ref<const Vector>& scales, const LatticeIndex& index);

BlurNeighborhood build_blur(const LatticeIndex& index, int s);

struct ConvolveOptions {
  Index chunk = 4096;
  int threads = 1;
};

// Applies the filter bank over the lattice neighborhood:
// out(j, co) = sum_k sum_cin bank(co, cin, k) * values(neighbor(k, j), cin),
// missing neighbors contributing zero. Processed in vertex chunks.
Matrix convolve_lattice(const Eigen::Ref<const Matrix>& lattice_values,
                        const BlurNeighborhood& blur, const FilterBank& bank,
                        const ConvolveOptions& options = {});

// Adjoint of convolve_lattice in its values argument.
Matrix convolve_lattice_adjoint(const Eigen::Ref<const Matrix>& upstream,
                                const BlurNeighborhood& blur, const FilterBank& bank,
                                const ConvolveOptions& options = {});

// Gradient of <upstream, convolve_lattice(values)> with respect to the
// filter weights.
Matrix convolve_weight_grad(const Eigen::Ref<const Matrix>& upstream,
                            const Eigen::Ref<const Matrix>& lattice_values,
                            const BlurNeighborhood& blur, const FilterBank& bank,
                            const ConvolveOptions& options = {});

// Precomputed operators for repeated filtering between two fixed point
// sets. The vertex set is populated by the input points only.
struct LatticePlan {
  int d = 0;
  int s = 0;
  LatticeIndex index;
  SplatOperator splat;
  SplatOperator slice;
  BlurNeighborhood blur;

  Index vertex_count() const { return index.size(); }
};

LatticePlan build_plan(const Eigen::Ref<const Matrix>& features_in,
                       const Eigen::Ref<const Matrix>& features_out,
                       const Eigen::Ref<const Vector>& scales, int s);

// splat -> blur-convolve -> slice
Matrix plan_forward(const LatticePlan& plan, const Eigen::Ref<const Matrix>& values,
                    const FilterBank& bank, const ConvolveOptions& options = {});

// Gradient of the forward pass with respect to the input values.
Matrix plan_grad_input(const LatticePlan& plan, const Eigen::Ref<const Matrix>& upstream,
                       const FilterBank& bank, const ConvolveOptions& options = {});

// Gradient of the forward pass with respect to the filter weights.
Matrix plan_grad_filter(const LatticePlan& plan, const Eigen::Ref<const Matrix>& upstream,
                        const Eigen::Ref<const Matrix>& values, const FilterBank& bank,
                        const ConvolveOptions& options = {});

// Applies a scalar filter bank to every channel independently.
Matrix plan_forward_channelwise(const LatticePlan& plan,
                                const Eigen::Ref<const Matrix>& values, const FilterBank& bank,
                                const ConvolveOptions& options = {});

Matrix plan_grad_input_channelwise(const LatticePlan& plan,
                                   const Eigen::Ref<const Matrix>& upstream,
                                   const FilterBank& bank, const ConvolveOptions& options = {});

Matrix plan_grad_filter_channelwise(const LatticePlan& plan,
                                    const Eigen::Ref<const Matrix>& upstream,
                                    const Eigen::Ref<const Matrix>& values,
                                    const FilterBank& bank, const ConvolveOptions& options = {});

// Channelwise filtering with an appended homogeneous channel of ones; each
// output is divided by the filtered ones response. Responses with near-zero
// mass come out as zero.
Matrix plan_forward_normalized(const LatticePlan& plan,
                               const Eigen::Ref<const Matrix>& values, const FilterBank& bank,
                               const ConvolveOptions& options = {});

// Convenience one-shot filtering between feature sets.
Matrix forward(const Signal& input, const Eigen::Ref<const Matrix>& features_out,
               const Eigen::Ref<const Vector>& scales, const FilterBank& bank, int s,
               const ConvolveOptions& options = {});

// Splat followed by slice with a center-only identity filter, normalized
// by the splatted mass. Fully populated outputs are convex combinations of
// the inputs; outputs with no populated vertex are zero.
Matrix bnn_identity(const Signal& input, const Eigen::Ref<const Matrix>& features_out,
                    const Eigen::Ref<const Vector>& scales, int s,
                    const ConvolveOptions& options = {});

// Binary filter container: magic "PBF1", then u32 feature dim, u32
// neighborhood size, u32 output channels, u32 input channels, then
// c_out * c_in * t weights as little-endian f32 in canonical neighbor order.
void write_filter_bank(const std::string& path, const FilterBank& bank);
FilterBank read_filter_bank(const std::string& path);

}  // namespace permutofilt
