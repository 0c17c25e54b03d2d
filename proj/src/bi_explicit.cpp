#include <permutofilt/bi_explicit.hpp>

#include <cmath>

namespace permutofilt {

DistanceCache build_distance_cache(const Eigen::Ref<const Matrix>& features_in,
                                   const Eigen::Ref<const Matrix>& features_out,
                                   const Eigen::Ref<const Matrix>& lambda) {
  const Index dim = features_in.cols();
  if (features_out.cols() != dim) throw ShapeMismatch("feature dimensions differ");
  if (lambda.rows() != dim || lambda.cols() != dim)
    throw ShapeMismatch("feature scaling must be square in the feature dimension");
  if (features_in.rows() == 0 || features_out.rows() == 0)
    throw EmptyInput("gram kernel needs at least one point on each side");

  DistanceCache cache;
  cache.features_in = features_in;
  cache.features_out = features_out;
  cache.lambda = lambda;
  const Matrix scaled_in = features_in * lambda.transpose();
  const Matrix scaled_out = features_out * lambda.transpose();
  const Vector in_sq = scaled_in.rowwise().squaredNorm();
  const Vector out_sq = scaled_out.rowwise().squaredNorm();
  cache.distances = out_sq.replicate(1, features_in.rows()) +
                    in_sq.transpose().replicate(features_out.rows(), 1) -
                    2.0 * scaled_out * scaled_in.transpose();
  cache.distances = cache.distances.cwiseMax(0.0);
  return cache;
}

GramKernel build_gram(const DistanceCache& cache, double theta) {
  if (cache.distances.size() == 0) throw CacheMissing("distance cache was not built");
  if (!std::isfinite(theta)) throw InvalidFeature("kernel scale must be finite");

  GramKernel kernel;
  kernel.theta = theta;
  kernel.k.resize(cache.distances.rows(), cache.distances.cols());
  for (Index i = 0; i < kernel.k.rows(); ++i) {
    const auto logits = (-theta) * cache.distances.row(i).array();
    const double peak = logits.maxCoeff();
    kernel.k.row(i) = (logits - peak).exp();
    kernel.k.row(i) /= kernel.k.row(i).sum();
  }
  return kernel;
}

Matrix gram_apply(const GramKernel& kernel, const Eigen::Ref<const Matrix>& z) {
  if (z.rows() != kernel.k.cols()) throw ShapeMismatch("values do not match kernel width");
  return kernel.k * z;
}

std::vector<double> default_thetas(int scale_count) {
  if (scale_count < 1) throw ShapeMismatch("need at least one scale");
  const double pattern[3] = {1.0, 0.7, 0.3};
  std::vector<double> thetas(scale_count);
  double decade = 1.0;
  for (int h = 0; h < scale_count; ++h) {
    thetas[h] = pattern[h % 3] * decade;
    if (h % 3 == 2) decade /= 10.0;
  }
  return thetas;
}

InceptionModule build_inception(const Eigen::Ref<const Matrix>& features_in,
                                const Eigen::Ref<const Matrix>& features_out,
                                const Eigen::Ref<const Matrix>& lambda,
                                const std::vector<double>& thetas, int channels) {
  if (thetas.empty()) throw ShapeMismatch("need at least one scale");
  if (channels < 1) throw ShapeMismatch("need at least one channel");
  InceptionModule module;
  module.cache = build_distance_cache(features_in, features_out, lambda);
  module.kernels.reserve(thetas.size());
  for (double theta : thetas) module.kernels.push_back(build_gram(module.cache, theta));
  module.mix = Matrix::Constant(static_cast<Index>(thetas.size()), channels,
                                1.0 / static_cast<double>(thetas.size()));
  return module;
}

Matrix inception_forward(const InceptionModule& module, const Eigen::Ref<const Matrix>& z,
                         InceptionState* state) {
  if (z.cols() != module.mix.cols()) throw ShapeMismatch("channel count does not match module");
  if (z.rows() != module.cache.features_in.rows())
    throw ShapeMismatch("value rows do not match input features");

  const Index out_rows = module.cache.features_out.rows();
  Matrix out = Matrix::Zero(out_rows, z.cols());
  if (state) {
    state->z = z;
    state->filtered.clear();
  }
  for (std::size_t h = 0; h < module.kernels.size(); ++h) {
    Matrix filtered = gram_apply(module.kernels[h], z);
    for (Index c = 0; c < z.cols(); ++c)
      out.col(c) += module.mix(static_cast<Index>(h), c) * filtered.col(c);
    if (state) state->filtered.push_back(std::move(filtered));
  }
  return out;
}

InceptionGradients inception_backward(const InceptionModule& module, const InceptionState& state,
                                      const Eigen::Ref<const Matrix>& upstream) {
  if (state.filtered.size() != module.kernels.size() || state.z.size() == 0)
    throw CacheMissing("inception forward state was not recorded");
  if (upstream.rows() != module.cache.features_out.rows() ||
      upstream.cols() != module.mix.cols())
    throw ShapeMismatch("upstream does not match module output");

  const Index scale_count = static_cast<Index>(module.kernels.size());
  const Index channels = module.mix.cols();
  const Matrix& dist = module.cache.distances;

  InceptionGradients grads;
  grads.z = Matrix::Zero(state.z.rows(), channels);
  grads.mix = Matrix::Zero(scale_count, channels);
  grads.thetas = Vector::Zero(scale_count);
  Matrix g_dist = Matrix::Zero(dist.rows(), dist.cols());

  for (Index h = 0; h < scale_count; ++h) {
    const GramKernel& kernel = module.kernels[h];
    const Matrix& filtered = state.filtered[static_cast<std::size_t>(h)];

    Matrix g_k = Matrix::Zero(dist.rows(), dist.cols());
    for (Index c = 0; c < channels; ++c) {
      grads.mix(h, c) = upstream.col(c).dot(filtered.col(c));
      const double w = module.mix(h, c);
      grads.z.col(c).noalias() += w * (kernel.k.transpose() * upstream.col(c));
      g_k.noalias() += w * (upstream.col(c) * state.z.col(c).transpose());
    }

    // Backward through the row-wise softmax over logits -theta * d.
    const Vector row_dot = (g_k.array() * kernel.k.array()).rowwise().sum();
    const Matrix g_logits =
        (kernel.k.array() * (g_k - row_dot.replicate(1, dist.cols())).array()).matrix();
    grads.thetas[h] = -(g_logits.array() * dist.array()).sum();
    g_dist -= kernel.theta * g_logits;
  }

  // d_ij = |L a_i - L b_j|^2 with a = output features, b = input features.
  const Matrix& a = module.cache.features_out;
  const Matrix& b = module.cache.features_in;
  const Vector row_sum = g_dist.rowwise().sum();
  const Vector col_sum = g_dist.colwise().sum().transpose();
  Matrix quad = a.transpose() * row_sum.asDiagonal() * a;
  quad += b.transpose() * col_sum.asDiagonal() * b;
  const Matrix cross = a.transpose() * g_dist * b;
  quad -= cross + cross.transpose();
  grads.lambda = 2.0 * module.cache.lambda * quad;
  return grads;
}

SegmentReduction superpixel_reduce(const Eigen::Ref<const Matrix>& values,
                                   const Eigen::Ref<const Matrix>& features,
                                   const std::vector<int>& segments) {
  const Index n = values.rows();
  if (n == 0) throw EmptyInput("nothing to reduce");
  if (features.rows() != n || static_cast<Index>(segments.size()) != n)
    throw ShapeMismatch("values, features and segment ids disagree on point count");

  int segment_count = 0;
  for (int id : segments) {
    if (id < 0) throw EmptySegment("segment ids must be non-negative");
    segment_count = std::max(segment_count, id + 1);
  }

  SegmentReduction reduction;
  reduction.members.resize(segment_count);
  for (Index i = 0; i < n; ++i) reduction.members[segments[i]].push_back(i);

  reduction.values = Matrix::Zero(segment_count, values.cols());
  reduction.features = Matrix::Zero(segment_count, features.cols());
  for (int m = 0; m < segment_count; ++m) {
    const auto& members = reduction.members[m];
    if (members.empty())
      throw EmptySegment("segment " + std::to_string(m) + " has no members");
    for (Index i : members) {
      reduction.values.row(m) += values.row(i);
      reduction.features.row(m) += features.row(i);
    }
    reduction.values.row(m) /= static_cast<double>(members.size());
    reduction.features.row(m) /= static_cast<double>(members.size());
  }
  return reduction;
}

Matrix segment_expand(const Eigen::Ref<const Matrix>& segment_values,
                      const std::vector<int>& segments) {
  Matrix out(static_cast<Index>(segments.size()), segment_values.cols());
  for (Index i = 0; i < out.rows(); ++i) {
    const int id = segments[static_cast<std::size_t>(i)];
    if (id < 0 || id >= segment_values.rows())
      throw EmptySegment("segment id outside reduced range");
    out.row(i) = segment_values.row(id);
  }
  return out;
}

}  // namespace permutofilt
