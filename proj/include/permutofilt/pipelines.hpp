#pragma once

#include <permutofilt/ops.hpp>
#include <permutofilt/training.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace permutofilt {

// Raster image with values in [0, 1], pixels in scanline order.
struct ImageBuffer {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 or 3
  Matrix values;     // (width * height) x channels

  Index pixel_count() const { return static_cast<Index>(width) * height; }
};

// Reads PNG or PPM/PGM by extension; 16-bit and paletted PNGs are folded
// down to 8-bit, alpha is dropped.
ImageBuffer read_image(const std::string& path);
void write_image(const std::string& path, const ImageBuffer& image);

ImageBuffer read_pnm(const std::string& path);
void write_pnm(const std::string& path, const ImageBuffer& image);
ImageBuffer read_png(const std::string& path);
void write_png(const std::string& path, const ImageBuffer& image);

// BT.601 luma for color images; gray images pass through.
ImageBuffer to_gray(const ImageBuffer& image);

ImageBuffer clamp_unit(ImageBuffer image);

enum class FeatureKind { Position, PositionIntensity, PositionColor };

FeatureKind parse_feature_kind(const std::string& name);
int feature_dim(FeatureKind kind);

// Per-pixel lattice features. Scales are given either per dimension or per
// group (position, then value group); they are baked into the returned
// features. Positions are pixel indices mapped through
// index * position_step + position_offset.
struct FeatureRecipe {
  FeatureKind kind = FeatureKind::PositionIntensity;
  std::vector<double> scales;
};

Matrix make_features(const ImageBuffer& image, const FeatureRecipe& recipe,
                     double position_step = 1.0, double position_offset = 0.0);

// Peak signal-to-noise ratio against a unit dynamic range, capped at 99 dB.
double psnr(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b);
double psnr(const ImageBuffer& a, const ImageBuffer& b);

// Root of the mean squared per-point distance between value rows.
double rmse(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b);

// Additive Gaussian noise, clipped back to [0, 1].
ImageBuffer add_gaussian_noise(const ImageBuffer& image, double sigma, std::uint64_t seed);

// Piecewise-constant test image: nearest-seed regions with random levels.
ImageBuffer synth_voronoi(int width, int height, int cells, std::uint64_t seed);

// Block-mean reduction by an integer factor; dimensions must divide.
ImageBuffer box_downsample(const ImageBuffer& image, int factor);

// Catmull-Rom interpolation (a = -0.5) with clamped borders, block-center
// aligned with box_downsample.
ImageBuffer bicubic_upsample(const ImageBuffer& low, int factor);

// Joint bilateral upsampling: low-resolution values are splatted at their
// block centers in the guidance frame and sliced at every guidance pixel.
ImageBuffer upsample_guided(const ImageBuffer& low, const ImageBuffer& guide, int factor,
                            const FeatureRecipe& recipe, const FilterBank& bank, int s,
                            bool normalize = true, const ConvolveOptions& options = {});

struct DenoiseOptions {
  FeatureRecipe recipe;
  int s = 1;
  double init_sigma = 0.5;
  bool normalize = true;
  TrainConfig train;
  ConvolveOptions convolve;
};

struct DenoiseResult {
  FilterBank bank;
  double best_train_mse = 0.0;
  std::vector<double> epoch_mse;  // entry 0 is the initial filter
};

// Squared error and filter-weight gradient of one normalized filtering
// pass against a target.
struct NormalizedFilterGrad {
  double mse = 0.0;
  Matrix grad;
};

NormalizedFilterGrad normalized_filter_mse_grad(const LatticePlan& plan,
                                                const Eigen::Ref<const Matrix>& values,
                                                const Eigen::Ref<const Matrix>& target,
                                                const FilterBank& bank,
                                                const ConvolveOptions& options = {});

// Fits a single scalar filter by SGD over noisy/clean image pairs,
// starting from a Gaussian filter. Returns the bank with the best
// training error seen, the initial filter included.
DenoiseResult denoise_train(const std::vector<ImageBuffer>& noisy,
                            const std::vector<ImageBuffer>& clean, const DenoiseOptions& options);

// Filters a noisy image with the learned bank over its own features.
ImageBuffer denoise_apply(const ImageBuffer& noisy, const FilterBank& bank,
                          const FeatureRecipe& recipe, int s, bool normalize = true,
                          const ConvolveOptions& options = {});

// Filters point-cloud values over their own precomputed features.
Matrix mesh_denoise(const Signal& noisy, const Eigen::Ref<const Vector>& scales,
                    const FilterBank& bank, int s, bool normalize = true,
                    const ConvolveOptions& options = {});

// CSV point clouds: header value_0..value_{c-1},feat_0..feat_{d-1}.
Signal read_point_cloud_csv(const std::string& path);
void write_point_cloud_csv(const std::string& path, const Signal& signal);

// Segment maps: a PGM raster of ids, or a CSV/plain file with one id per
// point line.
std::vector<int> read_segments(const std::string& path);

}  // namespace permutofilt
