#include <doctest.h>

#include <permutofilt/bi_explicit.hpp>
#include <permutofilt/training.hpp>

#include "helpers.hpp"

#include <cmath>

using namespace permutofilt;
using testing::flatten;
using testing::random_matrix;
using testing::unflatten;

TEST_CASE("gram rows are stochastic") {
  Rng rng(61);
  const Matrix f_in = random_matrix(12, 3, rng);
  const Matrix f_out = random_matrix(9, 3, rng);
  const DistanceCache cache = build_distance_cache(f_in, f_out, Matrix::Identity(3, 3));
  REQUIRE(cache.distances.rows() == 9);
  REQUIRE(cache.distances.cols() == 12);
  CHECK(cache.distances.minCoeff() >= 0.0);

  const GramKernel kernel = build_gram(cache, 0.8);
  CHECK((kernel.k.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
  CHECK(kernel.k.minCoeff() >= 0.0);
}

TEST_CASE("vanishing scale gives uniform weights") {
  Rng rng(62);
  const Matrix f = random_matrix(10, 2, rng);
  const DistanceCache cache = build_distance_cache(f, f, Matrix::Identity(2, 2));
  const GramKernel kernel = build_gram(cache, 1e-12);
  CHECK((kernel.k.array() - 0.1).abs().maxCoeff() < 1e-9);
}

TEST_CASE("two point kernel matches the hand computation") {
  Matrix f_in(2, 1), f_out(1, 1);
  f_in << 0.0, 1.0;
  f_out << 0.0;
  const DistanceCache cache = build_distance_cache(f_in, f_out, Matrix::Identity(1, 1));
  const GramKernel kernel = build_gram(cache, 1.0);
  const double denom = 1.0 + std::exp(-1.0);
  CHECK(std::abs(kernel.k(0, 0) - 1.0 / denom) < 1e-12);
  CHECK(std::abs(kernel.k(0, 1) - std::exp(-1.0) / denom) < 1e-12);
}

TEST_CASE("unnormalized affinities are symmetric for shared features") {
  Rng rng(63);
  const Matrix f = random_matrix(14, 3, rng, -2.0, 2.0);
  Matrix lambda = Matrix::Identity(3, 3);
  lambda(0, 0) = 0.5;
  lambda(2, 1) = 0.25;
  const DistanceCache cache = build_distance_cache(f, f, lambda);
  const Matrix affinity = (-0.7 * cache.distances.array()).exp().matrix();
  CHECK((affinity - affinity.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((cache.distances.diagonal().array()).abs().maxCoeff() < 1e-12);
}

TEST_CASE("feature scaling enters the distances") {
  Matrix f_in(2, 2), f_out(1, 2);
  f_in << 0.0, 0.0, 1.0, 2.0;
  f_out << 0.0, 0.0;
  Matrix lambda(2, 2);
  lambda << 2.0, 0.0, 0.0, 0.5;
  const DistanceCache cache = build_distance_cache(f_in, f_out, lambda);
  CHECK(cache.distances(0, 0) == doctest::Approx(0.0));
  CHECK(cache.distances(0, 1) == doctest::Approx(4.0 + 1.0).epsilon(1e-12));
}

TEST_CASE("default scales follow the documented pattern") {
  const std::vector<double> thetas = default_thetas(7);
  REQUIRE(thetas.size() == 7);
  CHECK(thetas[0] == doctest::Approx(1.0));
  CHECK(thetas[1] == doctest::Approx(0.7));
  CHECK(thetas[2] == doctest::Approx(0.3));
  CHECK(thetas[3] == doctest::Approx(0.1));
  CHECK(thetas[4] == doctest::Approx(0.07));
  CHECK(thetas[5] == doctest::Approx(0.03));
  CHECK(thetas[6] == doctest::Approx(0.01));
}

TEST_CASE("inception mixes scales per channel") {
  Rng rng(64);
  const Matrix f = random_matrix(8, 2, rng);
  const Matrix z = random_matrix(8, 2, rng);
  InceptionModule module =
      build_inception(f, f, Matrix::Identity(2, 2), {1.0, 0.25}, 2);
  REQUIRE(module.kernels.size() == 2);
  CHECK((module.mix.array() - 0.5).abs().maxCoeff() == 0.0);

  module.mix << 0.75, 0.0, 0.25, 1.0;
  const Matrix out = inception_forward(module, z);
  const Matrix first = gram_apply(module.kernels[0], z);
  const Matrix second = gram_apply(module.kernels[1], z);
  for (Index i = 0; i < out.rows(); ++i) {
    CHECK(out(i, 0) ==
          doctest::Approx(0.75 * first(i, 0) + 0.25 * second(i, 0)).epsilon(1e-12));
    CHECK(out(i, 1) == doctest::Approx(second(i, 1)).epsilon(1e-12));
  }
}

TEST_CASE("inception gradients match finite differences") {
  Rng rng(65);
  const Index p = 10;
  const int d = 2;
  const int channels = 2;
  const Matrix f_in = random_matrix(p, d, rng, -1.5, 1.5);
  const Matrix f_out = random_matrix(6, d, rng, -1.5, 1.5);
  const Matrix lambda =
      Matrix::Identity(d, d) + 0.1 * random_matrix(d, d, rng);
  const std::vector<double> thetas = {1.0, 0.4, 0.15};
  const Matrix z = random_matrix(p, channels, rng);
  const Matrix upstream = random_matrix(6, channels, rng);

  InceptionModule module = build_inception(f_in, f_out, lambda, thetas, channels);
  module.mix = random_matrix(3, channels, rng, 0.1, 0.9);
  InceptionState state;
  inception_forward(module, z, &state);
  const InceptionGradients grads = inception_backward(module, state, upstream);

  SUBCASE("values") {
    const auto objective = [&](const Vector& zvec) {
      return (inception_forward(module, unflatten(zvec, p, channels)).array() *
              upstream.array())
          .sum();
    };
    const GradCheckReport report =
        grad_check(objective, flatten(z), flatten(grads.z), 20, 1e-6, 1e-5, rng);
    CHECK(report.failures == 0);
  }

  SUBCASE("mixing weights") {
    const auto objective = [&](const Vector& m) {
      InceptionModule probe = module;
      probe.mix = unflatten(m, 3, channels);
      return (inception_forward(probe, z).array() * upstream.array()).sum();
    };
    const GradCheckReport report =
        grad_check(objective, flatten(module.mix), flatten(grads.mix), 6, 1e-6, 1e-5, rng);
    CHECK(report.failures == 0);
  }

  SUBCASE("kernel scales") {
    const auto objective = [&](const Vector& th) {
      InceptionModule probe =
          build_inception(f_in, f_out, lambda, {th[0], th[1], th[2]}, channels);
      probe.mix = module.mix;
      return (inception_forward(probe, z).array() * upstream.array()).sum();
    };
    Vector base(3);
    base << thetas[0], thetas[1], thetas[2];
    const GradCheckReport report =
        grad_check(objective, base, grads.thetas, 3, 1e-6, 1e-5, rng);
    CHECK(report.failures == 0);
  }

  SUBCASE("feature scaling") {
    const auto objective = [&](const Vector& lam) {
      InceptionModule probe =
          build_inception(f_in, f_out, unflatten(lam, d, d), thetas, channels);
      probe.mix = module.mix;
      return (inception_forward(probe, z).array() * upstream.array()).sum();
    };
    const GradCheckReport report =
        grad_check(objective, flatten(lambda), flatten(grads.lambda), 4, 1e-6, 1e-5, rng);
    CHECK(report.failures == 0);
  }
}

TEST_CASE("backward requires the matching forward state") {
  Rng rng(66);
  const Matrix f = random_matrix(6, 2, rng);
  InceptionModule module = build_inception(f, f, Matrix::Identity(2, 2), {1.0}, 1);
  const Matrix z = random_matrix(6, 1, rng);
  InceptionState state;
  inception_forward(module, z, &state);

  InceptionState stale = state;
  stale.filtered.clear();
  CHECK_THROWS_AS(inception_backward(module, stale, random_matrix(6, 1, rng)), CacheMissing);
  CHECK_THROWS_AS(inception_backward(module, state, random_matrix(3, 1, rng)), ShapeMismatch);
}

TEST_CASE("gram construction validates its inputs") {
  Rng rng(67);
  const Matrix f = random_matrix(4, 2, rng);
  CHECK_THROWS_AS(build_gram(DistanceCache{}, 1.0), CacheMissing);
  const DistanceCache cache = build_distance_cache(f, f, Matrix::Identity(2, 2));
  CHECK_THROWS_AS(build_gram(cache, std::nan("")), InvalidFeature);
  CHECK_THROWS_AS(build_distance_cache(f, random_matrix(4, 3, rng), Matrix::Identity(2, 2)),
                  ShapeMismatch);
  CHECK_THROWS_AS(build_distance_cache(f, f, Matrix::Identity(3, 3)), ShapeMismatch);
  CHECK_THROWS_AS(build_distance_cache(Matrix(), f, Matrix::Identity(2, 2)), Error);
}

TEST_CASE("superpixel reduction averages segment members") {
  Matrix values(4, 1), features(4, 2);
  values << 1.0, 3.0, 10.0, 20.0;
  features << 0.0, 0.0, 2.0, 0.0, 5.0, 5.0, 7.0, 9.0;
  const std::vector<int> segments = {0, 0, 1, 1};

  const SegmentReduction reduced = superpixel_reduce(values, features, segments);
  REQUIRE(reduced.values.rows() == 2);
  CHECK(reduced.values(0, 0) == doctest::Approx(2.0));
  CHECK(reduced.values(1, 0) == doctest::Approx(15.0));
  CHECK(reduced.features(0, 0) == doctest::Approx(1.0));
  CHECK(reduced.features(1, 1) == doctest::Approx(7.0));
  REQUIRE(reduced.members.size() == 2);
  CHECK(reduced.members[0].size() == 2);

  const Matrix expanded = segment_expand(reduced.values, segments);
  CHECK(expanded(0, 0) == doctest::Approx(2.0));
  CHECK(expanded(3, 0) == doctest::Approx(15.0));

  CHECK_THROWS_AS(superpixel_reduce(values, features, {0, 0, 2, 2}), EmptySegment);
  CHECK_THROWS_AS(superpixel_reduce(values, features, {0, 0, -1, 1}), EmptySegment);
  CHECK_THROWS_AS(superpixel_reduce(values, features, {0, 0, 1}), ShapeMismatch);
  CHECK_THROWS_AS(segment_expand(reduced.values, {0, 5}), EmptySegment);
}
