#include <permutofilt/oracle.hpp>

#include <algorithm>

namespace permutofilt::oracle {

Matrix dense_interpolation(const SplatOperator& op) {
  Matrix dense = Matrix::Zero(op.rows(), op.cols());
  for (Index i = 0; i < op.cols(); ++i)
    for (int a = 0; a < op.order(); ++a) {
      const std::int32_t idx = op.vertex(i, a);
      if (idx != kMissing) dense(idx, i) += op.weight(i, a);
    }
  return dense;
}

Matrix dense_gather(const BlurNeighborhood& blur, Index k) {
  const Index m = blur.vertex_count();
  Matrix dense = Matrix::Zero(m, m);
  for (Index j = 0; j < m; ++j) {
    const std::int32_t nb = blur.neighbor_index(k, j);
    if (nb != kMissing) dense(j, nb) = 1.0;
  }
  return dense;
}

Matrix dense_forward(const LatticePlan& plan, const FilterBank& bank,
                     const Eigen::Ref<const Matrix>& values) {
  const Matrix splat = dense_interpolation(plan.splat);
  const Matrix slice = dense_interpolation(plan.slice);
  const Matrix lattice = splat * values;
  Matrix blurred = Matrix::Zero(lattice.rows(), bank.c_out);
  for (Index k = 0; k < bank.t; ++k) {
    Matrix bank_slice(bank.c_out, bank.c_in);
    for (int co = 0; co < bank.c_out; ++co)
      for (int cin = 0; cin < bank.c_in; ++cin) bank_slice(co, cin) = bank.at(co, cin, k);
    blurred += dense_gather(plan.blur, k) * lattice * bank_slice.transpose();
  }
  return slice.transpose() * blurred;
}

Matrix dense_full_operator(const LatticePlan& plan, const FilterBank& bank) {
  const Matrix splat = dense_interpolation(plan.splat);
  const Matrix slice = dense_interpolation(plan.slice);
  const Index n_in = splat.cols();
  const Index n_out = slice.cols();
  Matrix full = Matrix::Zero(n_out * bank.c_out, n_in * bank.c_in);
  for (Index k = 0; k < bank.t; ++k) {
    const Matrix path = slice.transpose() * dense_gather(plan.blur, k) * splat;
    for (int co = 0; co < bank.c_out; ++co)
      for (int cin = 0; cin < bank.c_in; ++cin)
        full.block(co * n_out, cin * n_in, n_out, n_in) += bank.at(co, cin, k) * path;
  }
  return full;
}

Matrix dense_grad_input(const LatticePlan& plan, const FilterBank& bank,
                        const Eigen::Ref<const Matrix>& upstream) {
  const Matrix full = dense_full_operator(plan, bank);
  const Index n_out = plan.slice.cols();
  const Index n_in = plan.splat.cols();
  Vector up_vec(n_out * bank.c_out);
  for (int co = 0; co < bank.c_out; ++co) up_vec.segment(co * n_out, n_out) = upstream.col(co);
  const Vector grad_vec = full.transpose() * up_vec;
  Matrix grad(n_in, bank.c_in);
  for (int cin = 0; cin < bank.c_in; ++cin) grad.col(cin) = grad_vec.segment(cin * n_in, n_in);
  return grad;
}

double max_rel_error(const Eigen::Ref<const Matrix>& got, const Eigen::Ref<const Matrix>& want) {
  if (got.rows() != want.rows() || got.cols() != want.cols())
    throw ShapeMismatch("cannot compare matrices of different shapes");
  if (want.size() == 0) return 0.0;
  const double scale = std::max(want.cwiseAbs().maxCoeff(), 1e-30);
  return (got - want).cwiseAbs().maxCoeff() / scale;
}

}  // namespace permutofilt::oracle
