#pragma once

#include <permutofilt/ops.hpp>

#include <memory>
#include <string>
#include <vector>

namespace permutofilt {

// One pairwise potential: a fixed feature kernel whose response to the
// current marginals is weighted and fed through the label compatibility.
// Either a lattice realization (plan + scalar filter bank) or an explicit
// affinity matrix used as a reference backend.
struct PairwiseKernel {
  std::shared_ptr<const LatticePlan> plan;
  FilterBank bank;
  Matrix dense;
  double weight = 1.0;

  bool is_dense() const { return dense.size() > 0; }
};

PairwiseKernel make_lattice_kernel(const Eigen::Ref<const Matrix>& features,
                                   const Eigen::Ref<const Vector>& scales, int s,
                                   const FilterBank& bank, double weight = 1.0);

PairwiseKernel make_dense_kernel(const Eigen::Ref<const Matrix>& affinity, double weight = 1.0);

// Uniform penalty for disagreeing labels: ones off the diagonal.
Matrix potts_compatibility(int label_count);

struct MfOptions {
  bool exclude_self = false;
  // Divide every kernel response by the kernel's row mass (its response to
  // an all-ones signal). Off by default: with learnable kernel weights the
  // overall scale is absorbed during training, and the unnormalized filter
  // is the operator the gradients are derived for.
  bool normalize_messages = false;
  ConvolveOptions convolve;
};

// Row-wise softmax of the negated unaries.
Matrix mf_init(const Eigen::Ref<const Matrix>& unaries);

// One mean-field update:
//   message = sum_k weight_k * kernel_k(Q)
//   Q' = row_softmax(-unaries - message * compat^T)
// With exclude_self, each kernel's response drops the point's own
// contribution, measured as the kernel's response to a one-hot indicator
// at that point.
Matrix mf_step(const Eigen::Ref<const Matrix>& q, const Eigen::Ref<const Matrix>& unaries,
               const std::vector<PairwiseKernel>& kernels, const Eigen::Ref<const Matrix>& compat,
               const MfOptions& options = {});

// Recorded forward trajectory for the backward pass.
struct MfTrace {
  int steps = 0;
  bool loose = false;
  std::vector<Matrix> marginals;                    // Q_0 .. Q_T
  std::vector<std::vector<Matrix>> step_messages;   // per step, per kernel, unweighted
};

// Runs `steps` updates from mf_init. In loose mode the kernel list holds
// one set per step, concatenated in step order; otherwise the same set is
// reused every step. Pass a trace to record what mf_backward needs.
Matrix mf_run(const Eigen::Ref<const Matrix>& unaries, const std::vector<PairwiseKernel>& kernels,
              const Eigen::Ref<const Matrix>& compat, int steps, bool loose = false,
              const MfOptions& options = {}, MfTrace* trace = nullptr);

struct MfGradients {
  Matrix unaries;
  std::vector<Matrix> filter_weights;  // per kernel; empty matrix for dense kernels
  Vector kernel_weights;
};

// Exact gradients of <upstream, Q_T> through the unrolled updates.
MfGradients mf_backward(const std::vector<PairwiseKernel>& kernels,
                        const Eigen::Ref<const Matrix>& compat, const MfTrace& trace,
                        const Eigen::Ref<const Matrix>& upstream, const MfOptions& options = {});

// Diagonal of the kernel's point-to-point response, one entry per point.
Vector kernel_self_response(const PairwiseKernel& kernel);

// Row mass of the kernel: its response to an all-ones signal.
Vector kernel_mass(const PairwiseKernel& kernel, const ConvolveOptions& options = {});

// Binary unary potentials: u32 point count, u32 label count, then n * L
// little-endian f32 values in row-major order.
void write_unaries(const std::string& path, const Eigen::Ref<const Matrix>& unaries);
Matrix read_unaries(const std::string& path);

}  // namespace permutofilt
