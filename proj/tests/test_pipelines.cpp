#include <doctest.h>

#include <permutofilt/pipelines.hpp>

#include "helpers.hpp"

#include <cstdio>
#include <fstream>

using namespace permutofilt;
using testing::flatten;
using testing::random_features;
using testing::random_matrix;
using testing::unflatten;

namespace {

ImageBuffer gray_image(int width, int height, double fill = 0.0) {
  ImageBuffer image;
  image.width = width;
  image.height = height;
  image.channels = 1;
  image.values = Matrix::Constant(static_cast<Index>(width) * height, 1, fill);
  return image;
}

}  // namespace

TEST_CASE("psnr is capped and matches known errors") {
  ImageBuffer a = gray_image(4, 4, 0.0);
  ImageBuffer b = gray_image(4, 4, 0.1);
  CHECK(psnr(a, a) == 99.0);
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-9));
  CHECK(rmse(a.values, b.values) == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("grayscale conversion uses the standard luma weights") {
  ImageBuffer color;
  color.width = 1;
  color.height = 1;
  color.channels = 3;
  color.values = Matrix(1, 3);
  color.values << 1.0, 0.5, 0.25;
  const ImageBuffer gray = to_gray(color);
  CHECK(gray.channels == 1);
  CHECK(gray.values(0, 0) ==
        doctest::Approx(0.299 * 1.0 + 0.587 * 0.5 + 0.114 * 0.25).epsilon(1e-12));

  const ImageBuffer already = to_gray(gray);
  CHECK((already.values - gray.values).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("pixel features honor scales and grouping") {
  FeatureRecipe xy;
  xy.kind = FeatureKind::Position;
  xy.scales = {1.0};

  const ImageBuffer single = gray_image(1, 1, 0.5);
  const Matrix one = make_features(single, xy);
  REQUIRE(one.rows() == 1);
  REQUIRE(one.cols() == 2);
  CHECK(one(0, 0) == 0.0);
  CHECK(one(0, 1) == 0.0);

  const ImageBuffer pair = gray_image(2, 1, 0.5);
  const Matrix two = make_features(pair, xy);
  CHECK(two(1, 0) == 1.0);
  CHECK(two(1, 1) == 0.0);

  FeatureRecipe scaled;
  scaled.kind = FeatureKind::PositionIntensity;
  scaled.scales = {0.5, 4.0};
  ImageBuffer img = gray_image(2, 1, 0.0);
  img.values(1, 0) = 1.0;
  const Matrix features = make_features(img, scaled);
  REQUIRE(features.cols() == 3);
  CHECK(features(1, 0) == doctest::Approx(0.5));
  CHECK(features(1, 2) == doctest::Approx(4.0));

  FeatureRecipe color;
  color.kind = FeatureKind::PositionColor;
  color.scales = {1.0, 1.0};
  CHECK_THROWS_AS(make_features(img, color), RecipeMismatch);

  FeatureRecipe wrong;
  wrong.kind = FeatureKind::Position;
  wrong.scales = {1.0, 1.0, 1.0};
  CHECK_THROWS_AS(make_features(img, wrong), RecipeMismatch);

  CHECK(parse_feature_kind("xy") == FeatureKind::Position);
  CHECK(parse_feature_kind("xyv") == FeatureKind::PositionIntensity);
  CHECK(parse_feature_kind("xyrgb") == FeatureKind::PositionColor);
  CHECK_THROWS_AS(parse_feature_kind("polar"), RecipeMismatch);
}

TEST_CASE("block downsampling averages each block") {
  ImageBuffer image = gray_image(4, 2);
  for (Index i = 0; i < 8; ++i) image.values(i, 0) = static_cast<double>(i) / 10.0;
  const ImageBuffer low = box_downsample(image, 2);
  REQUIRE(low.width == 2);
  REQUIRE(low.height == 1);
  CHECK(low.values(0, 0) == doctest::Approx((0.0 + 0.1 + 0.4 + 0.5) / 4.0).epsilon(1e-12));
  CHECK(low.values(1, 0) == doctest::Approx((0.2 + 0.3 + 0.6 + 0.7) / 4.0).epsilon(1e-12));

  CHECK_THROWS_AS(box_downsample(image, 3), ShapeMismatch);
}

TEST_CASE("bicubic upsampling reproduces constants and stays centered") {
  const ImageBuffer flat = gray_image(3, 3, 0.42);
  const ImageBuffer up = bicubic_upsample(flat, 4);
  REQUIRE(up.width == 12);
  REQUIRE(up.height == 12);
  CHECK((up.values.array() - 0.42).abs().maxCoeff() < 1e-12);

  ImageBuffer ramp = gray_image(8, 1);
  for (int x = 0; x < 8; ++x) ramp.values(x, 0) = 0.1 * x;
  const ImageBuffer ramp_up = bicubic_upsample(ramp, 2);
  for (int x = 4; x < 12; ++x) {
    const double position = (x + 0.5) / 2.0 - 0.5;
    CHECK(ramp_up.values(x, 0) == doctest::Approx(0.1 * position).epsilon(1e-9));
  }
}

TEST_CASE("seeded noise is reproducible and clipped") {
  const ImageBuffer base = gray_image(6, 6, 0.5);
  const ImageBuffer a = add_gaussian_noise(base, 0.3, 7);
  const ImageBuffer b = add_gaussian_noise(base, 0.3, 7);
  const ImageBuffer c = add_gaussian_noise(base, 0.3, 8);
  CHECK((a.values - b.values).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.values - c.values).cwiseAbs().maxCoeff() > 0.0);
  CHECK(a.values.minCoeff() >= 0.0);
  CHECK(a.values.maxCoeff() <= 1.0);
}

TEST_CASE("synthetic region images are deterministic and bounded") {
  const ImageBuffer a = synth_voronoi(16, 12, 5, 3);
  const ImageBuffer b = synth_voronoi(16, 12, 5, 3);
  CHECK((a.values - b.values).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.values.minCoeff() >= 0.05);
  CHECK(a.values.maxCoeff() <= 0.95);

  std::set<double> levels(a.values.data(), a.values.data() + a.values.size());
  CHECK(levels.size() <= 5);
}

TEST_CASE("guided upsampling beats bicubic on piecewise-constant images") {
  const ImageBuffer clean = synth_voronoi(32, 32, 6, 21);
  const ImageBuffer low = box_downsample(clean, 4);

  const ImageBuffer bicubic = bicubic_upsample(low, 4);

  FeatureRecipe recipe;
  recipe.kind = FeatureKind::PositionIntensity;
  recipe.scales = {0.2, 8.0};
  const FilterBank bank = gaussian_init(3, 1, 0.5);
  const ImageBuffer guided = upsample_guided(low, clean, 4, recipe, bank, 1);

  REQUIRE(guided.width == 32);
  REQUIRE(guided.height == 32);
  CHECK(guided.values.minCoeff() >= 0.0);
  CHECK(guided.values.maxCoeff() <= 1.0);

  const double mse_guided = (guided.values - clean.values).squaredNorm();
  const double mse_bicubic = (bicubic.values - clean.values).squaredNorm();
  CHECK(mse_guided < mse_bicubic);
}

TEST_CASE("normalized filtering gradient passes finite differences") {
  Rng rng(71);
  const Matrix features = random_features(40, 3, rng);
  const LatticePlan plan = build_plan(features, features, Vector::Ones(3), 1);
  const Matrix values = random_matrix(40, 1, rng, 0.0, 1.0);
  const Matrix target = random_matrix(40, 1, rng, 0.0, 1.0);
  const FilterBank bank = gaussian_init(3, 1, 0.5);

  const NormalizedFilterGrad result = normalized_filter_mse_grad(plan, values, target, bank);
  const auto objective = [&](const Vector& w) {
    FilterBank probe = bank;
    probe.weights = unflatten(w, 1, bank.weights.cols());
    return normalized_filter_mse_grad(plan, values, target, probe).mse;
  };
  const GradCheckReport report = grad_check(objective, flatten(bank.weights),
                                            flatten(result.grad), 10, 1e-6, 1e-5, rng);
  CHECK(report.failures == 0);
}

TEST_CASE("denoise training is deterministic and tracks the best epoch") {
  std::vector<ImageBuffer> clean, noisy;
  for (int i = 0; i < 2; ++i) {
    clean.push_back(synth_voronoi(24, 24, 5, 100 + i));
    noisy.push_back(add_gaussian_noise(clean.back(), 25.0 / 255.0, 200 + i));
  }

  DenoiseOptions options;
  options.recipe.kind = FeatureKind::PositionIntensity;
  options.recipe.scales = {0.25, 5.0};
  options.s = 1;
  options.train.epochs = 2;
  options.train.lr = 1e-3;
  options.train.seed = 5;

  const DenoiseResult first = denoise_train(noisy, clean, options);
  const DenoiseResult second = denoise_train(noisy, clean, options);
  REQUIRE(first.epoch_mse.size() == 3);
  CHECK((first.bank.weights - second.bank.weights).cwiseAbs().maxCoeff() == 0.0);
  CHECK(first.best_train_mse <= first.epoch_mse[0]);

  const ImageBuffer out = denoise_apply(noisy[0], first.bank, options.recipe, options.s);
  CHECK(out.values.minCoeff() >= 0.0);
  CHECK(out.values.maxCoeff() <= 1.0);
  CHECK(psnr(clean[0], out) > psnr(clean[0], noisy[0]));

  CHECK_THROWS_AS(denoise_train({}, {}, options), EmptyDataset);
}

TEST_CASE("mesh denoising keeps constant signals constant") {
  Rng rng(72);
  Signal cloud;
  cloud.features = random_features(30, 3, rng);
  cloud.values = Matrix::Constant(30, 2, 5.0);
  Vector scales(3);
  scales << 1.0, 1.0, 1.0;
  const Matrix out = mesh_denoise(cloud, scales, gaussian_init(3, 1, 0.5), 1);
  CHECK((out.array() - 5.0).abs().maxCoeff() < 1e-9);
}

TEST_CASE("png files round-trip at 8-bit resolution") {
  ImageBuffer image;
  image.width = 5;
  image.height = 3;
  image.channels = 3;
  image.values = Matrix(15, 3);
  for (Index i = 0; i < 15; ++i)
    for (int c = 0; c < 3; ++c)
      image.values(i, c) = static_cast<double>((i * 3 + c * 7) % 256) / 255.0;

  const std::string path = "tmp_roundtrip.png";
  write_image(path, image);
  const ImageBuffer loaded = read_image(path);
  CHECK(loaded.width == 5);
  CHECK(loaded.height == 3);
  CHECK(loaded.channels == 3);
  CHECK((loaded.values - image.values).cwiseAbs().maxCoeff() == 0.0);
  std::remove(path.c_str());
}

TEST_CASE("ascii pnm files round-trip and binary variants load") {
  ImageBuffer image = gray_image(3, 2);
  for (Index i = 0; i < 6; ++i) image.values(i, 0) = static_cast<double>(i * 40) / 255.0;
  const std::string path = "tmp_roundtrip.pgm";
  write_image(path, image);
  const ImageBuffer loaded = read_image(path);
  CHECK(loaded.channels == 1);
  CHECK((loaded.values - image.values).cwiseAbs().maxCoeff() == 0.0);
  std::remove(path.c_str());

  {
    std::ofstream out("tmp_binary.pgm", std::ios::binary);
    out << "P5\n# comment\n2 2\n255\n";
    const unsigned char bytes[4] = {0, 51, 102, 255};
    out.write(reinterpret_cast<const char*>(bytes), 4);
  }
  const ImageBuffer binary = read_pnm("tmp_binary.pgm");
  CHECK(binary.width == 2);
  CHECK(binary.values(1, 0) == doctest::Approx(51.0 / 255.0).epsilon(1e-12));
  CHECK(binary.values(3, 0) == doctest::Approx(1.0));
  std::remove("tmp_binary.pgm");

  CHECK_THROWS_AS(read_image("tmp_image.webp"), IoError);
  CHECK_THROWS_AS(read_image("tmp_missing.png"), IoError);
}

TEST_CASE("point clouds round-trip through csv") {
  Signal cloud;
  cloud.values = Matrix(2, 2);
  cloud.values << 1.5, -2.25, 0.125, 3.0;
  cloud.features = Matrix(2, 3);
  cloud.features << 0.0, 1.0, 2.0, 3.5, 4.5, 5.5;

  const std::string path = "tmp_cloud.csv";
  write_point_cloud_csv(path, cloud);
  const Signal loaded = read_point_cloud_csv(path);
  CHECK((loaded.values - cloud.values).cwiseAbs().maxCoeff() == 0.0);
  CHECK((loaded.features - cloud.features).cwiseAbs().maxCoeff() == 0.0);
  std::remove(path.c_str());

  {
    std::ofstream out(path);
    out << "value_0,feat_0\n1.0\n";
  }
  CHECK_THROWS_AS(read_point_cloud_csv(path), IoError);
  {
    std::ofstream out(path);
    out << "foo,bar\n1.0,2.0\n";
  }
  CHECK_THROWS_AS(read_point_cloud_csv(path), IoError);
  std::remove(path.c_str());
}

TEST_CASE("segment maps load from rasters and plain lists") {
  {
    std::ofstream out("tmp_segments.pgm");
    out << "P2\n3 1\n255\n0 1 1\n";
  }
  const std::vector<int> raster = read_segments("tmp_segments.pgm");
  REQUIRE(raster.size() == 3);
  CHECK(raster[0] == 0);
  CHECK(raster[2] == 1);
  std::remove("tmp_segments.pgm");

  {
    std::ofstream out("tmp_segments.csv");
    out << "point,segment\n0,2\n1,0\n2,2\n";
  }
  const std::vector<int> listed = read_segments("tmp_segments.csv");
  REQUIRE(listed.size() == 3);
  CHECK(listed[0] == 2);
  CHECK(listed[1] == 0);
  std::remove("tmp_segments.csv");

  {
    std::ofstream out("tmp_segments.txt");
    out << "1\n0\n1\n";
  }
  const std::vector<int> plain = read_segments("tmp_segments.txt");
  REQUIRE(plain.size() == 3);
  CHECK(plain[0] == 1);
  std::remove("tmp_segments.txt");
}
