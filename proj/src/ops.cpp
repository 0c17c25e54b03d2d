#include <permutofilt/ops.hpp>

#include <permutofilt/detail/binary_io.hpp>

#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <thread>

namespace permutofilt {

namespace {

constexpr double kNormalizeFloor = 1e-12;

void check_filter_shapes(const BlurNeighborhood& blur, const FilterBank& bank) {
  if (bank.d != blur.d || bank.s != blur.s || bank.t != blur.t())
    throw ShapeMismatch("filter bank does not match blur neighborhood");
}

std::vector<std::pair<Index, Index>> chunk_ranges(Index total, Index chunk) {
  std::vector<std::pair<Index, Index>> ranges;
  const Index step = std::max<Index>(1, chunk);
  for (Index j0 = 0; j0 < total; j0 += step) ranges.emplace_back(j0, std::min(total, j0 + step));
  return ranges;
}

template <typename Fn>
void run_chunks(const std::vector<std::pair<Index, Index>>& ranges, int threads, Fn&& fn) {
  const int worker_count =
      std::min<int>(std::max(1, threads), static_cast<int>(ranges.size()));
  if (worker_count <= 1) {
    for (const auto& r : ranges) fn(r.first, r.second);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= ranges.size()) return;
      fn(ranges[i].first, ranges[i].second);
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(worker_count);
  for (int w = 0; w < worker_count; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

SplatOperator build_interpolation(const Eigen::Ref<const Matrix>& features,
                                  const Eigen::Ref<const Vector>& scales, LatticeIndex* mutable_index,
                                  const LatticeIndex* fixed_index) {
  const Index n = features.rows();
  const int d = static_cast<int>(features.cols());
  if (d < 1) throw InvalidFeature("features must have at least one dimension");
  if (scales.size() != d) throw ShapeMismatch("feature scale count does not match dimension");

  const Matrix scaled = features.array().rowwise() * scales.transpose().array();
  SplatOperator op(0, n, d + 1);
  for (Index i = 0; i < n; ++i) {
    const SimplexEnclosure enclosure = find_simplex(embed(scaled.row(i).transpose()));
    for (int a = 0; a <= d; ++a) {
      const std::int32_t idx = mutable_index ? mutable_index->insert(enclosure.vertices[a])
                                             : fixed_index->find(enclosure.vertices[a]);
      op.set_entry(i, a, idx, enclosure.barycentric[a]);
    }
  }
  op.set_rows(mutable_index ? mutable_index->size() : fixed_index->size());
  return op;
}

}  // namespace

double SplatOperator::column_weight_sum(Index point) const {
  double sum = 0.0;
  for (int a = 0; a < order_; ++a)
    if (vertex(point, a) != kMissing) sum += weight(point, a);
  return sum;
}

Matrix SplatOperator::scatter(const Eigen::Ref<const Matrix>& point_values) const {
  if (point_values.rows() != cols_) throw ShapeMismatch("value rows do not match point count");
  Matrix out = Matrix::Zero(rows_, point_values.cols());
  for (Index i = 0; i < cols_; ++i)
    for (int a = 0; a < order_; ++a) {
      const std::int32_t idx = vertex(i, a);
      if (idx != kMissing) out.row(idx) += weight(i, a) * point_values.row(i);
    }
  return out;
}

Matrix SplatOperator::gather(const Eigen::Ref<const Matrix>& lattice_values) const {
  if (lattice_values.rows() != rows_) throw ShapeMismatch("value rows do not match vertex count");
  Matrix out = Matrix::Zero(cols_, lattice_values.cols());
  for (Index i = 0; i < cols_; ++i)
    for (int a = 0; a < order_; ++a) {
      const std::int32_t idx = vertex(i, a);
      if (idx != kMissing) out.row(i) += weight(i, a) * lattice_values.row(idx);
    }
  return out;
}

FilterBank make_filter_bank(int d, int s, int c_out, int c_in) {
  if (c_out < 1 || c_in < 1) throw ShapeMismatch("filter bank needs at least one channel");
  const std::uint64_t t = filter_size(d, s);
  if (t > static_cast<std::uint64_t>(1) << 30) throw SizeOverflow("filter too large to build");
  FilterBank bank;
  bank.d = d;
  bank.s = s;
  bank.c_out = c_out;
  bank.c_in = c_in;
  bank.t = static_cast<Index>(t);
  bank.weights = Matrix::Zero(c_out, static_cast<Index>(c_in) * bank.t);
  return bank;
}

FilterBank identity_filter(int d, int s, int c) {
  FilterBank bank = make_filter_bank(d, s, c, c);
  for (int ch = 0; ch < c; ++ch) bank.at(ch, ch, 0) = 1.0;
  return bank;
}

FilterBank gaussian_init(int d, int s, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw InvalidFeature("gaussian width must be positive and finite");
  FilterBank bank = make_filter_bank(d, s, 1, 1);
  const std::vector<LatticeKey> offsets = hop_offsets(d, s);
  const double hop_norm2 = static_cast<double>(d) * (d + 1);
  double sum = 0.0;
  for (Index k = 0; k < bank.t; ++k) {
    double norm2 = 0.0;
    for (std::int32_t c : offsets[k].coords) norm2 += static_cast<double>(c) * c;
    const double w = std::exp(-norm2 / (hop_norm2 * 2.0 * sigma * sigma));
    bank.at(0, 0, k) = w;
    sum += w;
  }
  bank.weights /= sum;
  return bank;
}

SplatOperator build_splat(const Eigen::Ref<const Matrix>& features,
                          const Eigen::Ref<const Vector>& scales, LatticeIndex& index) {
  return build_interpolation(features, scales, &index, nullptr);
}

SplatOperator build_slice(const Eigen::Ref<const Matrix>& features,
                          const Eigen::Ref<const Vector>& scales, const LatticeIndex& index) {
  return build_interpolation(features, scales, nullptr, &index);
}

BlurNeighborhood build_blur(const LatticeIndex& index, int s) {
  const int d = index.dim_count() - 1;
  const Index m = index.size();
  if (m == 0) throw EmptyInput("no populated lattice vertices");
  const std::uint64_t t64 = filter_size(d, s);
  if (t64 > static_cast<std::uint64_t>(1) << 30) throw SizeOverflow("neighborhood too large");
  const Index t = static_cast<Index>(t64);

  BlurNeighborhood blur;
  blur.d = d;
  blur.s = s;
  blur.neighbor_index.resize(t, m);
  for (Index j = 0; j < m; ++j) {
    const std::vector<LatticeKey> neighbors = enumerate_neighbors(index.key_of(j), s);
    for (Index k = 0; k < t; ++k) blur.neighbor_index(k, j) = index.find(neighbors[k]);
  }
  return blur;
}

Matrix convolve_lattice(const Eigen::Ref<const Matrix>& lattice_values,
                        const BlurNeighborhood& blur, const FilterBank& bank,
                        const ConvolveOptions& options) {
  check_filter_shapes(blur, bank);
  if (lattice_values.rows() != blur.vertex_count() || lattice_values.cols() != bank.c_in)
    throw ShapeMismatch("lattice values do not match blur neighborhood and filter");

  const Index m = blur.vertex_count();
  const Index t = blur.t();
  const int c_in = bank.c_in;
  Matrix out(m, bank.c_out);
  auto process = [&](Index j0, Index j1) {
    const Index len = j1 - j0;
    Matrix col(static_cast<Index>(c_in) * t, len);
    for (Index j = j0; j < j1; ++j)
      for (Index k = 0; k < t; ++k) {
        const std::int32_t nb = blur.neighbor_index(k, j);
        for (int cin = 0; cin < c_in; ++cin)
          col(cin * t + k, j - j0) = nb == kMissing ? 0.0 : lattice_values(nb, cin);
      }
    out.middleRows(j0, len).noalias() = (bank.weights * col).transpose();
  };
  run_chunks(chunk_ranges(m, options.chunk), options.threads, process);
  return out;
}

Matrix convolve_lattice_adjoint(const Eigen::Ref<const Matrix>& upstream,
                                const BlurNeighborhood& blur, const FilterBank& bank,
                                const ConvolveOptions& options) {
  check_filter_shapes(blur, bank);
  if (upstream.rows() != blur.vertex_count() || upstream.cols() != bank.c_out)
    throw ShapeMismatch("upstream does not match blur neighborhood and filter");

  const Index m = blur.vertex_count();
  const Index t = blur.t();
  const int c_in = bank.c_in;
  Matrix out = Matrix::Zero(m, c_in);
  for (const auto& [j0, j1] : chunk_ranges(m, options.chunk)) {
    const Index len = j1 - j0;
    Matrix col_grad = bank.weights.transpose() * upstream.middleRows(j0, len).transpose();
    for (Index j = j0; j < j1; ++j)
      for (Index k = 0; k < t; ++k) {
        const std::int32_t nb = blur.neighbor_index(k, j);
        if (nb == kMissing) continue;
        for (int cin = 0; cin < c_in; ++cin) out(nb, cin) += col_grad(cin * t + k, j - j0);
      }
  }
  return out;
}

Matrix convolve_weight_grad(const Eigen::Ref<const Matrix>& upstream,
                            const Eigen::Ref<const Matrix>& lattice_values,
                            const BlurNeighborhood& blur, const FilterBank& bank,
                            const ConvolveOptions& options) {
  check_filter_shapes(blur, bank);
  if (upstream.rows() != blur.vertex_count() || upstream.cols() != bank.c_out ||
      lattice_values.rows() != blur.vertex_count() || lattice_values.cols() != bank.c_in)
    throw ShapeMismatch("upstream or values do not match blur neighborhood and filter");

  const Index m = blur.vertex_count();
  const Index t = blur.t();
  const int c_in = bank.c_in;
  Matrix grad = Matrix::Zero(bank.c_out, static_cast<Index>(c_in) * t);
  for (const auto& [j0, j1] : chunk_ranges(m, options.chunk)) {
    const Index len = j1 - j0;
    Matrix col(static_cast<Index>(c_in) * t, len);
    for (Index j = j0; j < j1; ++j)
      for (Index k = 0; k < t; ++k) {
        const std::int32_t nb = blur.neighbor_index(k, j);
        for (int cin = 0; cin < c_in; ++cin)
          col(cin * t + k, j - j0) = nb == kMissing ? 0.0 : lattice_values(nb, cin);
      }
    grad.noalias() += upstream.middleRows(j0, len).transpose() * col.transpose();
  }
  return grad;
}

LatticePlan build_plan(const Eigen::Ref<const Matrix>& features_in,
                       const Eigen::Ref<const Matrix>& features_out,
                       const Eigen::Ref<const Vector>& scales, int s) {
  if (features_in.cols() != features_out.cols())
    throw ShapeMismatch("input and output features must share a dimension");
  LatticePlan plan;
  plan.d = static_cast<int>(features_in.cols());
  plan.s = s;
  plan.splat = build_splat(features_in, scales, plan.index);
  plan.blur = build_blur(plan.index, s);
  plan.slice = build_slice(features_out, scales, plan.index);
  return plan;
}

Matrix plan_forward(const LatticePlan& plan, const Eigen::Ref<const Matrix>& values,
                    const FilterBank& bank, const ConvolveOptions& options) {
  return plan.slice.gather(convolve_lattice(plan.splat.scatter(values), plan.blur, bank, options));
}

Matrix plan_grad_input(const LatticePlan& plan, const Eigen::Ref<const Matrix>& upstream,
                       const FilterBank& bank, const ConvolveOptions& options) {
  return plan.splat.gather(
      convolve_lattice_adjoint(plan.slice.scatter(upstream), plan.blur, bank, options));
}

Matrix plan_grad_filter(const LatticePlan& plan, const Eigen::Ref<const Matrix>& upstream,
                        const Eigen::Ref<const Matrix>& values, const FilterBank& bank,
                        const ConvolveOptions& options) {
  return convolve_weight_grad(plan.slice.scatter(upstream), plan.splat.scatter(values), plan.blur,
                              bank, options);
}

namespace {

void check_scalar_bank(const FilterBank& bank) {
  if (bank.c_in != 1 || bank.c_out != 1)
    throw ShapeMismatch("channelwise application needs a scalar filter bank");
}

// out(j, ch) = sum_k w_k * values(neighbor(k, j), ch) for every channel.
Matrix blur_channelwise(const Eigen::Ref<const Matrix>& lattice_values,
                        const BlurNeighborhood& blur, const FilterBank& bank, bool adjoint) {
  check_filter_shapes(blur, bank);
  const Index m = blur.vertex_count();
  const Index t = blur.t();
  Matrix out = Matrix::Zero(m, lattice_values.cols());
  for (Index j = 0; j < m; ++j)
    for (Index k = 0; k < t; ++k) {
      const std::int32_t nb = blur.neighbor_index(k, j);
      if (nb == kMissing) continue;
      const double w = bank.at(0, 0, k);
      if (adjoint) {
        out.row(nb) += w * lattice_values.row(j);
      } else {
        out.row(j) += w * lattice_values.row(nb);
      }
    }
  return out;
}

}  // namespace

Matrix plan_forward_channelwise(const LatticePlan& plan, const Eigen::Ref<const Matrix>& values,
                                const FilterBank& bank, const ConvolveOptions&) {
  check_scalar_bank(bank);
  return plan.slice.gather(blur_channelwise(plan.splat.scatter(values), plan.blur, bank, false));
}

Matrix plan_grad_input_channelwise(const LatticePlan& plan,
                                   const Eigen::Ref<const Matrix>& upstream,
                                   const FilterBank& bank, const ConvolveOptions&) {
  check_scalar_bank(bank);
  return plan.splat.gather(blur_channelwise(plan.slice.scatter(upstream), plan.blur, bank, true));
}

Matrix plan_grad_filter_channelwise(const LatticePlan& plan,
                                    const Eigen::Ref<const Matrix>& upstream,
                                    const Eigen::Ref<const Matrix>& values,
                                    const FilterBank& bank, const ConvolveOptions&) {
  check_scalar_bank(bank);
  const Matrix lattice_up = plan.slice.scatter(upstream);
  const Matrix lattice_values = plan.splat.scatter(values);
  const Index m = plan.blur.vertex_count();
  const Index t = plan.blur.t();
  Matrix grad = Matrix::Zero(1, t);
  for (Index j = 0; j < m; ++j)
    for (Index k = 0; k < t; ++k) {
      const std::int32_t nb = plan.blur.neighbor_index(k, j);
      if (nb == kMissing) continue;
      grad(0, k) += lattice_up.row(j).dot(lattice_values.row(nb));
    }
  return grad;
}

Matrix plan_forward_normalized(const LatticePlan& plan, const Eigen::Ref<const Matrix>& values,
                               const FilterBank& bank, const ConvolveOptions& options) {
  check_scalar_bank(bank);
  const Index n = values.rows();
  const Index c = values.cols();
  Matrix homogeneous(n, c + 1);
  homogeneous.leftCols(c) = values;
  homogeneous.col(c).setOnes();
  const Matrix filtered = plan_forward_channelwise(plan, homogeneous, bank, options);
  Matrix out(plan.slice.cols(), c);
  for (Index i = 0; i < out.rows(); ++i) {
    const double mass = filtered(i, c);
    if (std::abs(mass) <= kNormalizeFloor) {
      out.row(i).setZero();
    } else {
      out.row(i) = filtered.row(i).head(c) / mass;
    }
  }
  return out;
}

Matrix forward(const Signal& input, const Eigen::Ref<const Matrix>& features_out,
               const Eigen::Ref<const Vector>& scales, const FilterBank& bank, int s,
               const ConvolveOptions& options) {
  if (input.values.rows() != input.features.rows())
    throw ShapeMismatch("signal values and features disagree on point count");
  const LatticePlan plan = build_plan(input.features, features_out, scales, s);
  return plan_forward(plan, input.values, bank, options);
}

Matrix bnn_identity(const Signal& input, const Eigen::Ref<const Matrix>& features_out,
                    const Eigen::Ref<const Vector>& scales, int s,
                    const ConvolveOptions& options) {
  if (input.values.rows() != input.features.rows())
    throw ShapeMismatch("signal values and features disagree on point count");
  const LatticePlan plan = build_plan(input.features, features_out, scales, s);
  const FilterBank bank = identity_filter(plan.d, s, 1);
  return plan_forward_normalized(plan, input.values, bank, options);
}

void write_filter_bank(const std::string& path, const FilterBank& bank) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open filter file for writing: " + path);
  out.write("PBF1", 4);
  detail::store_u32_le(out, static_cast<std::uint32_t>(bank.d));
  detail::store_u32_le(out, static_cast<std::uint32_t>(bank.s));
  detail::store_u32_le(out, static_cast<std::uint32_t>(bank.c_out));
  detail::store_u32_le(out, static_cast<std::uint32_t>(bank.c_in));
  for (int co = 0; co < bank.c_out; ++co)
    for (int cin = 0; cin < bank.c_in; ++cin)
      for (Index k = 0; k < bank.t; ++k)
        detail::store_f32_le(out, static_cast<float>(bank.at(co, cin, k)));
  if (!out) throw IoError("failed writing filter file: " + path);
}

FilterBank read_filter_bank(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open filter file: " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "PBF1", 4) != 0)
    throw IoError("not a filter file (bad magic): " + path);
  const std::uint32_t d = detail::load_u32_le(in);
  const std::uint32_t s = detail::load_u32_le(in);
  const std::uint32_t c_out = detail::load_u32_le(in);
  const std::uint32_t c_in = detail::load_u32_le(in);
  if (!in || d < 1 || d > 64 || s > 16 || c_out < 1 || c_in < 1 || c_out > 4096 || c_in > 4096)
    throw IoError("filter file header out of range: " + path);
  FilterBank bank = make_filter_bank(static_cast<int>(d), static_cast<int>(s),
                                     static_cast<int>(c_out), static_cast<int>(c_in));
  for (int co = 0; co < bank.c_out; ++co)
    for (int cin = 0; cin < bank.c_in; ++cin)
      for (Index k = 0; k < bank.t; ++k) {
        const float w = detail::load_f32_le(in);
        if (!in) throw IoError("filter file truncated: " + path);
        bank.at(co, cin, k) = static_cast<double>(w);
      }
  char extra = 0;
  if (in.read(&extra, 1); in.gcount() != 0)
    throw IoError("filter file has trailing bytes: " + path);
  return bank;
}

}  // namespace permutofilt
