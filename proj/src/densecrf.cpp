#include <permutofilt/densecrf.hpp>

#include <permutofilt/detail/binary_io.hpp>

#include <cmath>
#include <fstream>
#include <unordered_map>

namespace permutofilt {

namespace {

Matrix row_softmax(const Eigen::Ref<const Matrix>& scores) {
  Matrix q(scores.rows(), scores.cols());
  for (Index i = 0; i < scores.rows(); ++i) {
    const double peak = scores.row(i).maxCoeff();
    q.row(i) = (scores.row(i).array() - peak).exp();
    q.row(i) /= q.row(i).sum();
  }
  return q;
}

// gE(i, x) = Q(i, x) * (gQ(i, x) - <gQ(i, :), Q(i, :)>)
Matrix row_softmax_backward(const Eigen::Ref<const Matrix>& q,
                            const Eigen::Ref<const Matrix>& gq) {
  const Vector row_dot = (gq.array() * q.array()).rowwise().sum();
  const Matrix centered = gq - row_dot.replicate(1, gq.cols());
  return (q.array() * centered.array()).matrix();
}

void check_kernel(const PairwiseKernel& kernel, Index n) {
  if (kernel.is_dense()) {
    if (kernel.dense.rows() != n || kernel.dense.cols() != n)
      throw ShapeMismatch("dense kernel does not match point count");
    return;
  }
  if (!kernel.plan) throw StateMissing("pairwise kernel has no lattice plan");
  if (kernel.plan->splat.cols() != n || kernel.plan->slice.cols() != n)
    throw ShapeMismatch("kernel plan does not match point count");
  if (kernel.bank.c_in != 1 || kernel.bank.c_out != 1)
    throw ShapeMismatch("pairwise kernels need scalar filter banks");
}

constexpr double kMassFloor = 1e-12;

// 1/mass per point; points with vanishing mass are dropped entirely.
Vector safe_inverse(const Vector& mass) {
  Vector inv(mass.size());
  for (Index i = 0; i < mass.size(); ++i)
    inv[i] = std::abs(mass[i]) <= kMassFloor ? 0.0 : 1.0 / mass[i];
  return inv;
}

// Unweighted kernel response, with the self term removed and the row mass
// divided out when requested.
Matrix kernel_message(const PairwiseKernel& kernel, const Eigen::Ref<const Matrix>& q,
                      const MfOptions& options) {
  Matrix msg = kernel.is_dense() ? Matrix(kernel.dense * q)
                                 : plan_forward_channelwise(*kernel.plan, q, kernel.bank,
                                                            options.convolve);
  if (options.exclude_self) {
    const Vector diag = kernel_self_response(kernel);
    msg -= (q.array().colwise() * diag.array()).matrix();
  }
  if (options.normalize_messages) {
    const Vector inv = safe_inverse(kernel_mass(kernel, options.convolve));
    msg = (msg.array().colwise() * inv.array()).matrix();
  }
  return msg;
}

// Enclosure vertex pairs of each point mapped to canonical neighbor slots.
template <typename Fn>
void for_each_self_pair(const LatticePlan& plan, Fn&& fn) {
  const std::vector<LatticeKey> offsets = hop_offsets(plan.d, plan.s);
  std::unordered_map<LatticeKey, Index, LatticeKeyHash> slot;
  for (Index k = 0; k < static_cast<Index>(offsets.size()); ++k) slot.emplace(offsets[k], k);

  const SplatOperator& splat = plan.splat;
  const int order = splat.order();
  LatticeKey delta(order);
  for (Index i = 0; i < splat.cols(); ++i)
    for (int a = 0; a < order; ++a) {
      const std::int32_t va = splat.vertex(i, a);
      if (va == kMissing) continue;
      for (int b = 0; b < order; ++b) {
        const std::int32_t vb = splat.vertex(i, b);
        if (vb == kMissing) continue;
        const LatticeKey& ka = plan.index.key_of(va);
        const LatticeKey& kb = plan.index.key_of(vb);
        for (int c = 0; c < order; ++c) delta.coords[c] = kb.coords[c] - ka.coords[c];
        const auto it = slot.find(delta);
        if (it == slot.end()) continue;
        fn(i, it->second, splat.weight(i, a) * splat.weight(i, b));
      }
    }
}

}  // namespace

PairwiseKernel make_lattice_kernel(const Eigen::Ref<const Matrix>& features,
                                   const Eigen::Ref<const Vector>& scales, int s,
                                   const FilterBank& bank, double weight) {
  PairwiseKernel kernel;
  kernel.plan = std::make_shared<LatticePlan>(build_plan(features, features, scales, s));
  kernel.bank = bank;
  kernel.weight = weight;
  check_kernel(kernel, features.rows());
  if (bank.d != kernel.plan->d || bank.s != s)
    throw ShapeMismatch("filter bank does not match kernel features");
  return kernel;
}

PairwiseKernel make_dense_kernel(const Eigen::Ref<const Matrix>& affinity, double weight) {
  if (affinity.rows() != affinity.cols()) throw ShapeMismatch("affinity matrix must be square");
  PairwiseKernel kernel;
  kernel.dense = affinity;
  kernel.weight = weight;
  return kernel;
}

Matrix potts_compatibility(int label_count) {
  if (label_count < 1) throw ShapeMismatch("need at least one label");
  return Matrix::Ones(label_count, label_count) - Matrix::Identity(label_count, label_count);
}

Vector kernel_self_response(const PairwiseKernel& kernel) {
  if (kernel.is_dense()) return kernel.dense.diagonal();
  if (!kernel.plan) throw StateMissing("pairwise kernel has no lattice plan");
  Vector diag = Vector::Zero(kernel.plan->splat.cols());
  for_each_self_pair(*kernel.plan, [&](Index i, Index k, double w) {
    diag[i] += w * kernel.bank.at(0, 0, k);
  });
  return diag;
}

Vector kernel_mass(const PairwiseKernel& kernel, const ConvolveOptions& options) {
  if (kernel.is_dense()) return kernel.dense.rowwise().sum();
  if (!kernel.plan) throw StateMissing("pairwise kernel has no lattice plan");
  const Matrix ones = Matrix::Ones(kernel.plan->splat.cols(), 1);
  return plan_forward(*kernel.plan, ones, kernel.bank, options).col(0);
}

Matrix mf_init(const Eigen::Ref<const Matrix>& unaries) {
  if (unaries.rows() == 0 || unaries.cols() < 1) throw EmptyInput("unaries are empty");
  return row_softmax(-unaries);
}

Matrix mf_step(const Eigen::Ref<const Matrix>& q, const Eigen::Ref<const Matrix>& unaries,
               const std::vector<PairwiseKernel>& kernels, const Eigen::Ref<const Matrix>& compat,
               const MfOptions& options) {
  const Index n = q.rows();
  const Index label_count = q.cols();
  if (unaries.rows() != n || unaries.cols() != label_count)
    throw ShapeMismatch("unaries do not match marginals");
  if (compat.rows() != label_count || compat.cols() != label_count)
    throw ShapeMismatch("compatibility does not match label count");
  for (const auto& kernel : kernels) check_kernel(kernel, n);

  Matrix message = Matrix::Zero(n, label_count);
  for (const auto& kernel : kernels)
    message += kernel.weight * kernel_message(kernel, q, options);
  return row_softmax(-unaries - message * compat.transpose());
}

Matrix mf_run(const Eigen::Ref<const Matrix>& unaries, const std::vector<PairwiseKernel>& kernels,
              const Eigen::Ref<const Matrix>& compat, int steps, bool loose,
              const MfOptions& options, MfTrace* trace) {
  if (steps < 0) throw ShapeMismatch("step count must be non-negative");
  std::size_t per_step = kernels.size();
  if (loose) {
    if (steps == 0 || kernels.size() % static_cast<std::size_t>(steps) != 0)
      throw ShapeMismatch("loose mode needs one kernel set per step");
    per_step = kernels.size() / static_cast<std::size_t>(steps);
  }

  Matrix q = mf_init(unaries);
  if (trace) {
    *trace = MfTrace{};
    trace->steps = steps;
    trace->loose = loose;
    trace->marginals.push_back(q);
  }
  for (int step = 0; step < steps; ++step) {
    const std::size_t base = loose ? step * per_step : 0;
    const std::vector<PairwiseKernel> active(kernels.begin() + base,
                                             kernels.begin() + base + per_step);
    if (trace) {
      std::vector<Matrix> messages;
      messages.reserve(active.size());
      Matrix message = Matrix::Zero(q.rows(), q.cols());
      for (const auto& kernel : active) {
        check_kernel(kernel, q.rows());
        messages.push_back(kernel_message(kernel, q, options));
        message += kernel.weight * messages.back();
      }
      q = row_softmax(-unaries - message * compat.transpose());
      trace->step_messages.push_back(std::move(messages));
      trace->marginals.push_back(q);
    } else {
      q = mf_step(q, unaries, active, compat, options);
    }
  }
  return q;
}

MfGradients mf_backward(const std::vector<PairwiseKernel>& kernels,
                        const Eigen::Ref<const Matrix>& compat, const MfTrace& trace,
                        const Eigen::Ref<const Matrix>& upstream, const MfOptions& options) {
  if (trace.marginals.size() != static_cast<std::size_t>(trace.steps) + 1 ||
      trace.step_messages.size() != static_cast<std::size_t>(trace.steps))
    throw StateMissing("mean-field trace was not recorded");
  const Index n = upstream.rows();
  const Index label_count = upstream.cols();
  if (trace.marginals.back().rows() != n || trace.marginals.back().cols() != label_count)
    throw ShapeMismatch("upstream does not match recorded marginals");

  const std::size_t per_step =
      trace.loose ? kernels.size() / static_cast<std::size_t>(trace.steps) : kernels.size();
  if (trace.loose && kernels.size() % static_cast<std::size_t>(trace.steps) != 0)
    throw ShapeMismatch("loose mode needs one kernel set per step");

  MfGradients grads;
  grads.unaries = Matrix::Zero(n, label_count);
  grads.kernel_weights = Vector::Zero(static_cast<Index>(kernels.size()));
  grads.filter_weights.resize(kernels.size());
  for (std::size_t ki = 0; ki < kernels.size(); ++ki)
    if (!kernels[ki].is_dense())
      grads.filter_weights[ki] = Matrix::Zero(1, kernels[ki].bank.t);

  Matrix gq = upstream;
  for (int step = trace.steps - 1; step >= 0; --step) {
    const Matrix& q_out = trace.marginals[step + 1];
    const Matrix& q_in = trace.marginals[step];
    const Matrix ge = row_softmax_backward(q_out, gq);
    grads.unaries -= ge;
    const Matrix gm = -ge * compat;  // message gradient

    gq = Matrix::Zero(n, label_count);
    const std::size_t base = trace.loose ? step * per_step : 0;
    for (std::size_t local = 0; local < per_step; ++local) {
      const std::size_t ki = base + local;
      const PairwiseKernel& kernel = kernels[ki];
      const Matrix& msg = trace.step_messages[step][local];
      grads.kernel_weights[static_cast<Index>(ki)] += (gm.array() * msg.array()).sum();

      const Matrix up_k = kernel.weight * gm;
      Matrix up_eff = up_k;
      if (options.normalize_messages) {
        const Vector inv = safe_inverse(kernel_mass(kernel, options.convolve));
        up_eff = (up_k.array().colwise() * inv.array()).matrix();
        if (!kernel.is_dense()) {
          // The row mass is itself a filter response, so its weight
          // gradient flows through the response to the all-ones signal.
          Matrix gv(n, 1);
          gv.col(0) = -((up_k.array() * msg.array()).rowwise().sum() * inv.array()).matrix();
          const Matrix ones = Matrix::Ones(n, 1);
          grads.filter_weights[ki] += plan_grad_filter_channelwise(*kernel.plan, gv, ones,
                                                                   kernel.bank, options.convolve);
        }
      }
      if (kernel.is_dense()) {
        gq.noalias() += kernel.dense.transpose() * up_eff;
      } else {
        grads.filter_weights[ki] += plan_grad_filter_channelwise(*kernel.plan, up_eff, q_in,
                                                                 kernel.bank, options.convolve);
        gq += plan_grad_input_channelwise(*kernel.plan, up_eff, kernel.bank, options.convolve);
      }
      if (options.exclude_self) {
        const Vector diag = kernel_self_response(kernel);
        gq -= (up_eff.array().colwise() * diag.array()).matrix();
        if (!kernel.is_dense()) {
          const Vector coeff = (up_eff.array() * q_in.array()).rowwise().sum();
          for_each_self_pair(*kernel.plan, [&](Index i, Index k, double w) {
            grads.filter_weights[ki](0, k) -= coeff[i] * w;
          });
        }
      }
    }
  }

  // Q_0 = row_softmax(-unaries)
  grads.unaries -= row_softmax_backward(trace.marginals.front(), gq);
  return grads;
}

void write_unaries(const std::string& path, const Eigen::Ref<const Matrix>& unaries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open unary file for writing: " + path);
  detail::store_u32_le(out, static_cast<std::uint32_t>(unaries.rows()));
  detail::store_u32_le(out, static_cast<std::uint32_t>(unaries.cols()));
  for (Index i = 0; i < unaries.rows(); ++i)
    for (Index l = 0; l < unaries.cols(); ++l)
      detail::store_f32_le(out, static_cast<float>(unaries(i, l)));
  if (!out) throw IoError("failed writing unary file: " + path);
}

Matrix read_unaries(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open unary file: " + path);
  const std::uint32_t n = detail::load_u32_le(in);
  const std::uint32_t label_count = detail::load_u32_le(in);
  if (!in || n == 0 || label_count == 0) throw IoError("unary file header out of range: " + path);
  if (static_cast<std::uint64_t>(n) * label_count > (static_cast<std::uint64_t>(1) << 31))
    throw IoError("unary file too large: " + path);
  Matrix unaries(static_cast<Index>(n), static_cast<Index>(label_count));
  for (Index i = 0; i < unaries.rows(); ++i)
    for (Index l = 0; l < unaries.cols(); ++l) {
      const float v = detail::load_f32_le(in);
      if (!in) throw IoError("unary file truncated: " + path);
      unaries(i, l) = static_cast<double>(v);
    }
  char extra = 0;
  if (in.read(&extra, 1); in.gcount() != 0)
    throw IoError("unary file has trailing bytes: " + path);
  return unaries;
}

}  // namespace permutofilt
