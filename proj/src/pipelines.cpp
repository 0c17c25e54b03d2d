#include <permutofilt/pipelines.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace permutofilt {

namespace {

constexpr double kMassFloor = 1e-12;

double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

void check_image(const ImageBuffer& image) {
  if (image.width < 1 || image.height < 1) throw EmptyInput("image has no pixels");
  if (image.channels != 1 && image.channels != 3)
    throw ShapeMismatch("images must have 1 or 3 channels");
  if (image.values.rows() != image.pixel_count() || image.values.cols() != image.channels)
    throw ShapeMismatch("image value matrix does not match its dimensions");
}

}  // namespace

ImageBuffer to_gray(const ImageBuffer& image) {
  check_image(image);
  if (image.channels == 1) return image;
  ImageBuffer gray;
  gray.width = image.width;
  gray.height = image.height;
  gray.channels = 1;
  gray.values.resize(image.pixel_count(), 1);
  for (Index i = 0; i < image.pixel_count(); ++i)
    gray.values(i, 0) = luma(image.values(i, 0), image.values(i, 1), image.values(i, 2));
  return gray;
}

ImageBuffer clamp_unit(ImageBuffer image) {
  image.values = image.values.cwiseMax(0.0).cwiseMin(1.0);
  return image;
}

FeatureKind parse_feature_kind(const std::string& name) {
  if (name == "xy") return FeatureKind::Position;
  if (name == "xyv") return FeatureKind::PositionIntensity;
  if (name == "xyrgb") return FeatureKind::PositionColor;
  throw RecipeMismatch("unknown feature kind: " + name);
}

int feature_dim(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::Position:
      return 2;
    case FeatureKind::PositionIntensity:
      return 3;
    case FeatureKind::PositionColor:
      return 5;
  }
  throw RecipeMismatch("unknown feature kind");
}

namespace {

// Accepts per-dimension scales or one scale per group (position, values).
std::vector<double> expand_scales(const FeatureRecipe& recipe) {
  const int d = feature_dim(recipe.kind);
  const int groups = recipe.kind == FeatureKind::Position ? 1 : 2;
  if (static_cast<int>(recipe.scales.size()) == d) return recipe.scales;
  if (static_cast<int>(recipe.scales.size()) == groups) {
    std::vector<double> full(d, recipe.scales[0]);
    for (int i = 2; i < d; ++i) full[i] = recipe.scales[1];
    return full;
  }
  throw RecipeMismatch("feature scale count matches neither dimensions nor groups");
}

}  // namespace

Matrix make_features(const ImageBuffer& image, const FeatureRecipe& recipe, double position_step,
                     double position_offset) {
  check_image(image);
  const int d = feature_dim(recipe.kind);
  if (recipe.kind == FeatureKind::PositionColor && image.channels != 3)
    throw RecipeMismatch("color features need a 3-channel image");
  const std::vector<double> scales = expand_scales(recipe);

  const ImageBuffer gray =
      recipe.kind == FeatureKind::PositionIntensity ? to_gray(image) : ImageBuffer{};
  Matrix features(image.pixel_count(), d);
  Index i = 0;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x, ++i) {
      features(i, 0) = (x * position_step + position_offset) * scales[0];
      features(i, 1) = (y * position_step + position_offset) * scales[1];
      if (recipe.kind == FeatureKind::PositionIntensity) {
        features(i, 2) = gray.values(i, 0) * scales[2];
      } else if (recipe.kind == FeatureKind::PositionColor) {
        for (int c = 0; c < 3; ++c) features(i, 2 + c) = image.values(i, c) * scales[2 + c];
      }
    }
  return features;
}

double psnr(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeMismatch("cannot compare signals of different shapes");
  if (a.size() == 0) throw EmptyInput("psnr over empty signals");
  const double mse = (a - b).squaredNorm() / static_cast<double>(a.size());
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, -10.0 * std::log10(mse));
}

double psnr(const ImageBuffer& a, const ImageBuffer& b) { return psnr(a.values, b.values); }

double rmse(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeMismatch("cannot compare signals of different shapes");
  if (a.rows() == 0) throw EmptyInput("rmse over empty signals");
  return std::sqrt((a - b).rowwise().squaredNorm().sum() / static_cast<double>(a.rows()));
}

ImageBuffer add_gaussian_noise(const ImageBuffer& image, double sigma, std::uint64_t seed) {
  check_image(image);
  Rng rng(seed);
  ImageBuffer noisy = image;
  for (Index i = 0; i < noisy.values.rows(); ++i)
    for (Index c = 0; c < noisy.values.cols(); ++c)
      noisy.values(i, c) += sigma * sample_normal(rng);
  return clamp_unit(std::move(noisy));
}

ImageBuffer synth_voronoi(int width, int height, int cells, std::uint64_t seed) {
  if (width < 1 || height < 1 || cells < 1) throw EmptyInput("degenerate synthetic image");
  Rng rng(seed);
  std::vector<double> cx(cells), cy(cells), level(cells);
  for (int k = 0; k < cells; ++k) {
    cx[k] = sample_uniform(rng, 0.0, width);
    cy[k] = sample_uniform(rng, 0.0, height);
    level[k] = sample_uniform(rng, 0.05, 0.95);
  }
  ImageBuffer image;
  image.width = width;
  image.height = height;
  image.channels = 1;
  image.values.resize(static_cast<Index>(width) * height, 1);
  Index i = 0;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x, ++i) {
      int best = 0;
      double best_dist = std::numeric_limits<double>::max();
      for (int k = 0; k < cells; ++k) {
        const double dx = x + 0.5 - cx[k];
        const double dy = y + 0.5 - cy[k];
        const double dist = dx * dx + dy * dy;
        if (dist < best_dist) {
          best_dist = dist;
          best = k;
        }
      }
      image.values(i, 0) = level[best];
    }
  return image;
}

ImageBuffer box_downsample(const ImageBuffer& image, int factor) {
  check_image(image);
  if (factor < 1 || image.width % factor != 0 || image.height % factor != 0)
    throw ShapeMismatch("downsampling factor must divide the image dimensions");
  ImageBuffer low;
  low.width = image.width / factor;
  low.height = image.height / factor;
  low.channels = image.channels;
  low.values = Matrix::Zero(low.pixel_count(), low.channels);
  const double inv_area = 1.0 / (static_cast<double>(factor) * factor);
  for (int y = 0; y < low.height; ++y)
    for (int x = 0; x < low.width; ++x) {
      const Index target = static_cast<Index>(y) * low.width + x;
      for (int dy = 0; dy < factor; ++dy)
        for (int dx = 0; dx < factor; ++dx) {
          const Index source = static_cast<Index>(y * factor + dy) * image.width + x * factor + dx;
          low.values.row(target) += image.values.row(source);
        }
      low.values.row(target) *= inv_area;
    }
  return low;
}

namespace {

// Cubic convolution weight, a = -0.5.
double catmull_rom(double t) {
  constexpr double a = -0.5;
  const double at = std::abs(t);
  if (at <= 1.0) return ((a + 2.0) * at - (a + 3.0)) * at * at + 1.0;
  if (at < 2.0) return a * (((at - 5.0) * at + 8.0) * at - 4.0);
  return 0.0;
}

}  // namespace

ImageBuffer bicubic_upsample(const ImageBuffer& low, int factor) {
  check_image(low);
  if (factor < 1) throw ShapeMismatch("upsampling factor must be positive");
  ImageBuffer out;
  out.width = low.width * factor;
  out.height = low.height * factor;
  out.channels = low.channels;
  out.values.resize(out.pixel_count(), out.channels);

  auto clamp = [](int v, int hi) { return std::clamp(v, 0, hi); };
  for (int y = 0; y < out.height; ++y) {
    const double sy = (y + 0.5) / factor - 0.5;
    const int y0 = static_cast<int>(std::floor(sy));
    for (int x = 0; x < out.width; ++x) {
      const double sx = (x + 0.5) / factor - 0.5;
      const int x0 = static_cast<int>(std::floor(sx));
      const Index target = static_cast<Index>(y) * out.width + x;
      for (int c = 0; c < out.channels; ++c) {
        double acc = 0.0;
        for (int j = -1; j <= 2; ++j) {
          const double wy = catmull_rom(sy - (y0 + j));
          const int yy = clamp(y0 + j, low.height - 1);
          for (int i = -1; i <= 2; ++i) {
            const double wx = catmull_rom(sx - (x0 + i));
            const int xx = clamp(x0 + i, low.width - 1);
            acc += wy * wx * low.values(static_cast<Index>(yy) * low.width + xx, c);
          }
        }
        out.values(target, c) = acc;
      }
    }
  }
  return clamp_unit(std::move(out));
}

ImageBuffer upsample_guided(const ImageBuffer& low, const ImageBuffer& guide, int factor,
                            const FeatureRecipe& recipe, const FilterBank& bank, int s,
                            bool normalize, const ConvolveOptions& options) {
  check_image(low);
  check_image(guide);
  if (factor < 1 || guide.width != low.width * factor || guide.height != low.height * factor)
    throw ShapeMismatch("guidance dimensions must be the low resolution times the factor");

  // Low-resolution pixels sit at the centers of their guidance blocks.
  const Matrix features_low =
      make_features(low, recipe, static_cast<double>(factor), (factor - 1) / 2.0);
  const Matrix features_guide = make_features(guide, recipe);
  const Vector unit = Vector::Ones(features_low.cols());
  const LatticePlan plan = build_plan(features_low, features_guide, unit, s);

  ImageBuffer out;
  out.width = guide.width;
  out.height = guide.height;
  out.channels = low.channels;
  out.values = normalize ? plan_forward_normalized(plan, low.values, bank, options)
                         : plan_forward_channelwise(plan, low.values, bank, options);
  return clamp_unit(std::move(out));
}

NormalizedFilterGrad normalized_filter_mse_grad(const LatticePlan& plan,
                                                const Eigen::Ref<const Matrix>& values,
                                                const Eigen::Ref<const Matrix>& target,
                                                const FilterBank& bank,
                                                const ConvolveOptions& options) {
  const Index n = values.rows();
  const Index c = values.cols();
  if (target.rows() != plan.slice.cols() || target.cols() != c)
    throw ShapeMismatch("target does not match the filtered output shape");

  Matrix homogeneous(n, c + 1);
  homogeneous.leftCols(c) = values;
  homogeneous.col(c).setOnes();
  const Matrix filtered = plan_forward_channelwise(plan, homogeneous, bank, options);

  Matrix out(target.rows(), c);
  for (Index i = 0; i < out.rows(); ++i) {
    const double mass = filtered(i, c);
    out.row(i) = std::abs(mass) <= kMassFloor ? Matrix::Zero(1, c)
                                              : Matrix(filtered.row(i).head(c) / mass);
  }

  const LossValue loss = mse_loss(out, target);
  Matrix up_values(target.rows(), c);
  Matrix up_ones(target.rows(), 1);
  for (Index i = 0; i < out.rows(); ++i) {
    const double mass = filtered(i, c);
    if (std::abs(mass) <= kMassFloor) {
      up_values.row(i).setZero();
      up_ones(i, 0) = 0.0;
    } else {
      up_values.row(i) = loss.grad.row(i) / mass;
      up_ones(i, 0) = -loss.grad.row(i).dot(out.row(i)) / mass;
    }
  }

  NormalizedFilterGrad result;
  result.mse = loss.value;
  result.grad = plan_grad_filter_channelwise(plan, up_values, values, bank, options);
  result.grad += plan_grad_filter_channelwise(plan, up_ones, Matrix::Ones(n, 1), bank, options);
  return result;
}

namespace {

struct TrainImage {
  LatticePlan plan;
  Matrix noisy;
  Matrix clean;
};

double plain_filter_mse_grad(const TrainImage& image, const FilterBank& bank,
                             const ConvolveOptions& options, Matrix* grad) {
  const Matrix out = plan_forward_channelwise(image.plan, image.noisy, bank, options);
  const LossValue loss = mse_loss(out, image.clean);
  if (grad)
    *grad = plan_grad_filter_channelwise(image.plan, loss.grad, image.noisy, bank, options);
  return loss.value;
}

double image_mse_grad(const TrainImage& image, const FilterBank& bank, bool normalize,
                      const ConvolveOptions& options, Matrix* grad) {
  if (!normalize) return plain_filter_mse_grad(image, bank, options, grad);
  if (!grad) {
    // Evaluation only; reuse the gradient path's forward.
    NormalizedFilterGrad r = normalized_filter_mse_grad(image.plan, image.noisy, image.clean,
                                                        bank, options);
    return r.mse;
  }
  NormalizedFilterGrad r =
      normalized_filter_mse_grad(image.plan, image.noisy, image.clean, bank, options);
  *grad = std::move(r.grad);
  return r.mse;
}

}  // namespace

DenoiseResult denoise_train(const std::vector<ImageBuffer>& noisy,
                            const std::vector<ImageBuffer>& clean, const DenoiseOptions& options) {
  if (noisy.empty()) throw EmptyDataset("no training images");
  if (noisy.size() != clean.size()) throw ShapeMismatch("noisy/clean pair counts differ");

  std::vector<TrainImage> images;
  images.reserve(noisy.size());
  const int d = feature_dim(options.recipe.kind);
  for (std::size_t p = 0; p < noisy.size(); ++p) {
    const ImageBuffer noisy_gray = to_gray(noisy[p]);
    const ImageBuffer clean_gray = to_gray(clean[p]);
    if (noisy_gray.width != clean_gray.width || noisy_gray.height != clean_gray.height)
      throw ShapeMismatch("noisy and clean image dimensions differ");
    TrainImage image;
    const Matrix features = make_features(noisy_gray, options.recipe);
    image.plan = build_plan(features, features, Vector::Ones(d), options.s);
    image.noisy = noisy_gray.values;
    image.clean = clean_gray.values;
    images.push_back(std::move(image));
  }

  FilterBank bank = gaussian_init(d, options.s, options.init_sigma);
  SgdConfig sgd{options.train.lr, options.train.momentum, options.train.weight_decay};
  SgdState state = make_sgd_state(bank.weights.rows(), bank.weights.cols());

  auto dataset_mse = [&](const FilterBank& b) {
    double total = 0.0;
    for (const auto& image : images)
      total += image_mse_grad(image, b, options.normalize, options.convolve, nullptr);
    return total / static_cast<double>(images.size());
  };

  DenoiseResult result;
  result.bank = bank;
  result.best_train_mse = dataset_mse(bank);
  result.epoch_mse.push_back(result.best_train_mse);

  Rng rng(options.train.seed);
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = static_cast<std::size_t>(options.train.batch);

  for (int epoch = 0; epoch < options.train.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t stop = std::min(order.size(), start + batch);
      Matrix grad = Matrix::Zero(bank.weights.rows(), bank.weights.cols());
      Matrix image_grad;
      for (std::size_t b = start; b < stop; ++b) {
        image_mse_grad(images[order[b]], bank, options.normalize, options.convolve, &image_grad);
        grad += image_grad;
      }
      grad /= static_cast<double>(stop - start);
      sgd_step(bank.weights, grad, state, sgd);
    }
    const double epoch_error = dataset_mse(bank);
    result.epoch_mse.push_back(epoch_error);
    if (epoch_error < result.best_train_mse) {
      result.best_train_mse = epoch_error;
      result.bank = bank;
    }
  }
  return result;
}

ImageBuffer denoise_apply(const ImageBuffer& noisy, const FilterBank& bank,
                          const FeatureRecipe& recipe, int s, bool normalize,
                          const ConvolveOptions& options) {
  const ImageBuffer gray = to_gray(noisy);
  const int d = feature_dim(recipe.kind);
  const Matrix features = make_features(gray, recipe);
  const LatticePlan plan = build_plan(features, features, Vector::Ones(d), s);
  ImageBuffer out = gray;
  out.values = normalize ? plan_forward_normalized(plan, gray.values, bank, options)
                         : plan_forward_channelwise(plan, gray.values, bank, options);
  return clamp_unit(std::move(out));
}

Matrix mesh_denoise(const Signal& noisy, const Eigen::Ref<const Vector>& scales,
                    const FilterBank& bank, int s, bool normalize,
                    const ConvolveOptions& options) {
  if (noisy.values.rows() != noisy.features.rows())
    throw ShapeMismatch("signal values and features disagree on point count");
  if (noisy.values.rows() == 0) throw EmptyInput("point cloud is empty");
  const LatticePlan plan = build_plan(noisy.features, noisy.features, scales, s);
  return normalize ? plan_forward_normalized(plan, noisy.values, bank, options)
                   : plan_forward_channelwise(plan, noisy.values, bank, options);
}

}  // namespace permutofilt
