#include <CLI11.hpp>

#include <permutofilt/bi_explicit.hpp>
#include <permutofilt/densecrf.hpp>
#include <permutofilt/oracle.hpp>
#include <permutofilt/pipelines.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace permutofilt;

std::string env_name(const std::string& option) {
  std::string name = "PERMUTOFILT_";
  for (char c : option.substr(option.find_first_not_of('-'))) {
    if (name.back() != '_' || c != '-') name.push_back(c == '-' ? '_' : std::toupper(c));
  }
  return name;
}

template <typename T>
CLI::Option* opt(CLI::App& cmd, const std::string& name, T& var, const std::string& desc) {
  return cmd.add_option(name, var, desc)->envname(env_name(name));
}

CLI::Option* flag(CLI::App& cmd, const std::string& name, bool& var, const std::string& desc) {
  return cmd.add_flag(name, var, desc)->envname(env_name(name));
}

std::vector<double> parse_scales(const std::string& text) {
  std::vector<double> scales;
  std::stringstream stream(text);
  std::string field;
  while (std::getline(stream, field, ',')) {
    try {
      std::size_t used = 0;
      scales.push_back(std::stod(field, &used));
      if (used != field.size()) throw std::invalid_argument(field);
    } catch (const std::exception&) {
      throw RecipeMismatch("bad scale value '" + field + "'");
    }
  }
  if (scales.empty()) throw RecipeMismatch("empty scale list");
  return scales;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::stringstream stream(text);
  std::string field;
  while (std::getline(stream, field, ',')) items.push_back(field);
  return items;
}

std::string default_out(const std::string& in, const std::string& tag) {
  const auto dot = in.find_last_of('.');
  if (dot == std::string::npos) return in + "_" + tag + ".png";
  return in.substr(0, dot) + "_" + tag + in.substr(dot);
}

void append_csv_row(const std::string& path, const std::string& method,
                    const std::string& image, double value) {
  bool fresh = true;
  {
    std::ifstream probe(path);
    fresh = !probe.good() || probe.peek() == EOF;
  }
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot open csv for writing: " + path);
  if (fresh) out << "method,image,psnr\n";
  out << method << "," << image << "," << value << "\n";
}

Matrix random_matrix(Index rows, Index cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = sample_uniform(rng, lo, hi);
  return m;
}

FilterBank random_bank(int d, int s, int c_out, int c_in, Rng& rng) {
  FilterBank bank = make_filter_bank(d, s, c_out, c_in);
  for (Index i = 0; i < bank.weights.size(); ++i)
    bank.weights.data()[i] = sample_normal(rng) * 0.5;
  return bank;
}

Vector flatten(const Matrix& m) {
  return Eigen::Map<const Vector>(m.data(), m.size());
}

Matrix unflatten(const Vector& v, Index rows, Index cols) {
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

struct CommonImageArgs {
  std::string features = "xyrgb";
  std::string scales;
  int s = 1;
  int threads = 1;
  Index chunk = 4096;

  void attach(CLI::App& cmd) {
    opt(cmd, "--features", features, "feature layout: xy, xyv or xyrgb");
    opt(cmd, "--scales", scales,
        "comma list of feature scales, per dimension or per group (position, value); "
        "default 0.2 for position and 6 for value channels");
    opt(cmd, "--s", s, "blur neighborhood size in lattice hops")->check(CLI::Range(0, 16));
    opt(cmd, "--threads", threads, "worker threads for lattice convolution");
    opt(cmd, "--chunk", chunk, "vertex chunk size for lattice convolution");
  }

  FeatureRecipe recipe() const {
    FeatureRecipe r;
    r.kind = parse_feature_kind(features);
    if (scales.empty()) {
      r.scales = r.kind == FeatureKind::Position ? std::vector<double>{0.2}
                                                 : std::vector<double>{0.2, 6.0};
    } else {
      r.scales = parse_scales(scales);
    }
    return r;
  }

  ConvolveOptions convolve() const { return ConvolveOptions{chunk, threads}; }
};

int run_filter(const CommonImageArgs& common, const std::string& in_path, std::string out_path,
               const std::string& weights_path, bool gauss, double sigma, bool raw) {
  const ImageBuffer image = read_image(in_path);
  const FeatureRecipe recipe = common.recipe();
  const Matrix features = make_features(image, recipe);
  const int d = static_cast<int>(features.cols());

  FilterBank bank;
  if (!weights_path.empty() && !gauss) {
    bank = read_filter_bank(weights_path);
    if (bank.d != d) throw ShapeMismatch("weights were trained for a different feature layout");
    if (bank.c_out != 1 || bank.c_in != 1)
      throw ShapeMismatch("image filtering expects a single-channel filter bank");
  } else {
    bank = gaussian_init(d, common.s, sigma);
  }

  const LatticePlan plan = build_plan(features, features, Vector::Ones(d), bank.s);
  ImageBuffer out = image;
  out.values = raw ? plan_forward_channelwise(plan, image.values, bank, common.convolve())
                   : plan_forward_normalized(plan, image.values, bank, common.convolve());
  out = clamp_unit(std::move(out));
  if (out_path.empty()) out_path = default_out(in_path, "filtered");
  write_image(out_path, out);
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

int run_upsample(const CommonImageArgs& common, const std::string& in_path,
                 const std::string& guide_path, int factor, const std::string& method,
                 double sigma, bool raw, std::string out_path, const std::string& clean_path,
                 const std::string& csv_path) {
  const ImageBuffer low = read_image(in_path);
  ImageBuffer out;
  if (method == "bicubic") {
    out = bicubic_upsample(low, factor);
  } else if (method == "bilateral") {
    if (guide_path.empty()) throw RecipeMismatch("bilateral upsampling needs --guide");
    const ImageBuffer guide = read_image(guide_path);
    const FilterBank bank = gaussian_init(feature_dim(common.recipe().kind), common.s, sigma);
    out = upsample_guided(low, guide, factor, common.recipe(), bank, common.s, !raw,
                          common.convolve());
  } else {
    throw RecipeMismatch("unknown upsampling method '" + method + "'");
  }
  if (out_path.empty()) out_path = default_out(in_path, method);
  write_image(out_path, out);
  std::cout << "wrote " << out_path << "\n";
  if (!clean_path.empty()) {
    const double value = psnr(read_image(clean_path), out);
    std::cout << method << " psnr " << value << "\n";
    if (!csv_path.empty()) append_csv_row(csv_path, method, in_path, value);
  }
  return 0;
}

int run_denoise_train(const CommonImageArgs& common, const std::string& images,
                      const std::string& cleans, int synth, int size, double noise_sigma,
                      double init_sigma, bool raw, const std::string& config_path,
                      const TrainConfig& overrides, const std::vector<bool>& overridden,
                      std::uint64_t seed, const std::string& out_path) {
  DenoiseOptions options;
  options.recipe = common.recipe();
  options.s = common.s;
  options.init_sigma = init_sigma;
  options.normalize = !raw;
  options.convolve = common.convolve();
  if (!config_path.empty()) options.train = load_train_config(config_path);
  if (overridden[0]) options.train.lr = overrides.lr;
  if (overridden[1]) options.train.momentum = overrides.momentum;
  if (overridden[2]) options.train.weight_decay = overrides.weight_decay;
  if (overridden[3]) options.train.epochs = overrides.epochs;
  if (overridden[4]) options.train.batch = overrides.batch;
  options.train.seed = seed;

  std::vector<ImageBuffer> noisy, clean;
  if (!images.empty()) {
    const std::vector<std::string> noisy_paths = split_list(images);
    const std::vector<std::string> clean_paths = split_list(cleans);
    if (!clean_paths.empty() && clean_paths.size() != noisy_paths.size())
      throw ShapeMismatch("--images and --clean must list the same number of files");
    for (std::size_t i = 0; i < noisy_paths.size(); ++i) {
      if (clean_paths.empty()) {
        const ImageBuffer base = to_gray(read_image(noisy_paths[i]));
        clean.push_back(base);
        noisy.push_back(add_gaussian_noise(base, noise_sigma, seed + i));
      } else {
        noisy.push_back(to_gray(read_image(noisy_paths[i])));
        clean.push_back(to_gray(read_image(clean_paths[i])));
      }
    }
  } else {
    for (int i = 0; i < synth; ++i) {
      const ImageBuffer base = synth_voronoi(size, size, 8, seed * 1000 + i);
      clean.push_back(base);
      noisy.push_back(add_gaussian_noise(base, noise_sigma, seed * 1000 + 500 + i));
    }
  }

  const DenoiseResult result = denoise_train(noisy, clean, options);
  for (std::size_t e = 0; e < result.epoch_mse.size(); ++e)
    std::cout << "epoch " << e << " train mse " << result.epoch_mse[e] << "\n";
  std::cout << "best train mse " << result.best_train_mse << "\n";
  write_filter_bank(out_path, result.bank);
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

int run_denoise_apply(const CommonImageArgs& common, const std::string& in_path,
                      const std::string& weights_path, bool raw, std::string out_path,
                      const std::string& clean_path, const std::string& csv_path) {
  const ImageBuffer noisy = to_gray(read_image(in_path));
  const FilterBank bank = read_filter_bank(weights_path);
  const ImageBuffer out =
      denoise_apply(noisy, bank, common.recipe(), bank.s, !raw, common.convolve());
  if (out_path.empty()) out_path = default_out(in_path, "denoised");
  write_image(out_path, out);
  std::cout << "wrote " << out_path << "\n";
  if (!clean_path.empty()) {
    const ImageBuffer clean = to_gray(read_image(clean_path));
    const double value = psnr(clean, out);
    std::cout << "denoised psnr " << value << " (noisy " << psnr(clean, noisy) << ")\n";
    if (!csv_path.empty()) append_csv_row(csv_path, "denoised", in_path, value);
  }
  return 0;
}

int run_mesh_denoise(const CommonImageArgs& common, const std::string& in_path,
                     const std::string& weights_path, double sigma, bool raw,
                     std::string out_path) {
  Signal signal = read_point_cloud_csv(in_path);
  const int d = static_cast<int>(signal.features.cols());
  std::vector<double> scales = parse_scales(common.scales);
  if (scales.size() == 1) scales.assign(d, scales[0]);
  if (static_cast<int>(scales.size()) != d)
    throw RecipeMismatch("scale count does not match the point cloud feature dimension");
  Vector scale_vec = Eigen::Map<const Vector>(scales.data(), d);

  FilterBank bank;
  if (!weights_path.empty()) {
    bank = read_filter_bank(weights_path);
    if (bank.d != d) throw ShapeMismatch("weights were trained for a different feature layout");
  } else {
    bank = gaussian_init(d, common.s, sigma);
  }
  signal.values = mesh_denoise(signal, scale_vec, bank, bank.s, !raw, common.convolve());
  if (out_path.empty()) out_path = default_out(in_path, "denoised");
  write_point_cloud_csv(out_path, signal);
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

int run_crf(const CommonImageArgs& common, const std::string& unaries_path,
            const std::string& image_path, const std::string& smooth_scales, double sigma,
            double weight, double smooth_weight, int steps, bool exclude_self, bool normalize,
            std::string out_path, const std::string& marginals_path) {
  const Matrix unaries = read_unaries(unaries_path);
  std::vector<PairwiseKernel> kernels;
  if (!image_path.empty()) {
    const ImageBuffer image = read_image(image_path);
    if (image.pixel_count() != unaries.rows())
      throw ShapeMismatch("unary rows do not match the image pixel count");
    const FeatureRecipe recipe = common.recipe();
    const Matrix features = make_features(image, recipe);
    const int d = static_cast<int>(features.cols());
    kernels.push_back(make_lattice_kernel(features, Vector::Ones(d),
                                          common.s, gaussian_init(d, common.s, sigma), weight));
    if (!smooth_scales.empty()) {
      FeatureRecipe smooth;
      smooth.kind = FeatureKind::Position;
      smooth.scales = parse_scales(smooth_scales);
      const Matrix pos = make_features(image, smooth);
      kernels.push_back(make_lattice_kernel(pos, Vector::Ones(2), common.s,
                                            gaussian_init(2, common.s, sigma), smooth_weight));
    }
  }

  MfOptions options;
  options.exclude_self = exclude_self;
  options.normalize_messages = normalize;
  options.convolve = common.convolve();
  const Matrix compat = potts_compatibility(static_cast<int>(unaries.cols()));
  const Matrix q = mf_run(unaries, kernels, compat, steps, false, options);

  if (!marginals_path.empty()) {
    write_unaries(marginals_path, q);
    std::cout << "wrote " << marginals_path << "\n";
  }
  if (out_path.empty()) out_path = unaries_path + ".labels";
  std::ofstream out(out_path);
  if (!out) throw IoError("cannot open label output: " + out_path);
  for (Index i = 0; i < q.rows(); ++i) {
    Index best = 0;
    q.row(i).maxCoeff(&best);
    out << best << "\n";
  }
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

int run_bi_filter(const CommonImageArgs& common, const std::string& in_path,
                  const std::string& thetas_text, const std::string& segments_path,
                  std::string out_path) {
  const ImageBuffer image = read_image(in_path);
  if (image.pixel_count() > 4096)
    throw SizeOverflow("explicit kernels are quadratic in point count; use images up to 4096 pixels");
  const Matrix pixel_features = make_features(image, common.recipe());
  const int d = static_cast<int>(pixel_features.cols());
  const std::vector<double> thetas =
      thetas_text.empty() ? default_thetas(3) : parse_scales(thetas_text);

  Matrix features_in = pixel_features;
  Matrix values_in = image.values;
  std::vector<int> segments;
  if (!segments_path.empty()) {
    segments = read_segments(segments_path);
    if (static_cast<Index>(segments.size()) != image.pixel_count())
      throw ShapeMismatch("segment map size does not match the image");
    const SegmentReduction reduced = superpixel_reduce(image.values, pixel_features, segments);
    features_in = reduced.features;
    values_in = reduced.values;
  }

  const InceptionModule module = build_inception(features_in, pixel_features,
                                                 Matrix::Identity(d, d), thetas, image.channels);
  ImageBuffer out = image;
  out.values = inception_forward(module, values_in);
  out = clamp_unit(std::move(out));
  if (out_path.empty()) out_path = default_out(in_path, "bi");
  write_image(out_path, out);
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

int run_gradcheck(const std::string& target, int d, int s, int n, int c, std::uint64_t seed,
                  int probes, double tolerance) {
  Rng rng(seed);
  GradCheckReport report;

  if (target == "filter" || target == "input") {
    const Matrix features = random_matrix(n, d, rng, 0.0, 4.0);
    const Matrix values = random_matrix(n, c, rng);
    const Matrix upstream = random_matrix(n, c, rng);
    const FilterBank bank = random_bank(d, s, c, c, rng);
    const LatticePlan plan = build_plan(features, features, Vector::Ones(d), s);
    if (target == "filter") {
      const auto objective = [&](const Vector& w) {
        FilterBank probe_bank = bank;
        probe_bank.weights = unflatten(w, bank.weights.rows(), bank.weights.cols());
        return (plan_forward(plan, values, probe_bank).array() * upstream.array()).sum();
      };
      const Matrix analytic = plan_grad_filter(plan, upstream, values, bank);
      report = grad_check(objective, flatten(bank.weights), flatten(analytic), probes, 1e-6,
                          tolerance, rng);
    } else {
      const auto objective = [&](const Vector& x) {
        return (plan_forward(plan, unflatten(x, n, c), bank).array() * upstream.array()).sum();
      };
      const Matrix analytic = plan_grad_input(plan, upstream, bank);
      report = grad_check(objective, flatten(values), flatten(analytic), probes, 1e-6,
                          tolerance, rng);
    }
  } else if (target == "mf") {
    const int labels = 3;
    const Matrix features = random_matrix(n, d, rng, 0.0, 4.0);
    const Matrix unaries = random_matrix(n, labels, rng);
    const Matrix upstream = random_matrix(n, labels, rng);
    std::vector<PairwiseKernel> kernels;
    kernels.push_back(make_lattice_kernel(features, Vector::Ones(d), s,
                                          gaussian_init(d, s, 0.7), 0.8));
    const Matrix compat = potts_compatibility(labels);
    const auto objective = [&](const Vector& u) {
      return (mf_run(unflatten(u, n, labels), kernels, compat, 3).array() * upstream.array())
          .sum();
    };
    MfTrace trace;
    mf_run(unaries, kernels, compat, 3, false, {}, &trace);
    const MfGradients grads = mf_backward(kernels, compat, trace, upstream);
    report = grad_check(objective, flatten(unaries), flatten(grads.unaries), probes, 1e-6,
                        tolerance, rng);
  } else if (target == "inception") {
    const Matrix features = random_matrix(n, d, rng, 0.0, 2.0);
    const Matrix values = random_matrix(n, c, rng);
    const Matrix upstream = random_matrix(n, c, rng);
    const Matrix lambda = Matrix::Identity(d, d);
    const std::vector<double> thetas = default_thetas(3);
    const auto objective = [&](const Vector& th) {
      const std::vector<double> probe(th.data(), th.data() + th.size());
      const InceptionModule module = build_inception(features, features, lambda, probe, c);
      return (inception_forward(module, values).array() * upstream.array()).sum();
    };
    const InceptionModule module = build_inception(features, features, lambda, thetas, c);
    InceptionState state;
    inception_forward(module, values, &state);
    const InceptionGradients grads = inception_backward(module, state, upstream);
    Vector params = Eigen::Map<const Vector>(thetas.data(), static_cast<Index>(thetas.size()));
    report = grad_check(objective, params, grads.thetas, probes, 1e-6, tolerance, rng);
  } else {
    throw RecipeMismatch("unknown gradcheck target '" + target + "'");
  }

  std::cout << "max rel err = " << report.max_rel_err << " over " << report.probes
            << " probes, " << report.failures << " failures\n";
  return report.failures == 0 ? 0 : 1;
}

int run_bench(int n, int d, int s, int c, int repeat, int threads, Index chunk,
              std::uint64_t seed) {
  using Clock = std::chrono::steady_clock;
  Rng rng(seed);
  const Matrix features = random_matrix(n, d, rng, 0.0, 8.0);
  const Matrix values = random_matrix(n, c, rng);
  const FilterBank bank = random_bank(d, s, c, c, rng);
  const ConvolveOptions options{chunk, threads};

  const std::vector<std::string> stages = {"splat-build", "blur-build", "slice-build",
                                           "scatter", "convolve", "gather"};
  std::vector<std::vector<double>> ms(stages.size());
  for (int r = 0; r < repeat; ++r) {
    auto t0 = Clock::now();
    LatticeIndex index(d + 1);
    const SplatOperator splat = build_splat(features, Vector::Ones(d), index);
    auto t1 = Clock::now();
    const BlurNeighborhood blur = build_blur(index, s);
    auto t2 = Clock::now();
    const SplatOperator slice = build_slice(features, Vector::Ones(d), index);
    auto t3 = Clock::now();
    const Matrix lattice = splat.scatter(values);
    auto t4 = Clock::now();
    const Matrix blurred = convolve_lattice(lattice, blur, bank, options);
    auto t5 = Clock::now();
    const Matrix out = slice.gather(blurred);
    auto t6 = Clock::now();
    (void)out;
    const Clock::time_point ticks[] = {t0, t1, t2, t3, t4, t5, t6};
    for (std::size_t i = 0; i < stages.size(); ++i)
      ms[i].push_back(std::chrono::duration<double, std::milli>(ticks[i + 1] - ticks[i]).count());
  }
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const double mean = std::accumulate(ms[i].begin(), ms[i].end(), 0.0) / repeat;
    double var = 0.0;
    for (double v : ms[i]) var += (v - mean) * (v - mean);
    const double std_dev = repeat > 1 ? std::sqrt(var / (repeat - 1)) : 0.0;
    std::cout << stages[i] << " " << mean << " ms +- " << std_dev << " ms\n";
  }
  return 0;
}

int run_oracle_diff(int n, int d, int s, int c_in, int c_out, std::uint64_t seed, Index chunk,
                    int threads, double tolerance) {
  Rng rng(seed);
  const Matrix features_in = random_matrix(n, d, rng, 0.0, 4.0);
  const Matrix features_out = random_matrix(n, d, rng, 0.0, 4.0);
  const Matrix values = random_matrix(n, c_in, rng);
  const FilterBank bank = random_bank(d, s, c_out, c_in, rng);
  const LatticePlan plan = build_plan(features_in, features_out, Vector::Ones(d), s);
  const Matrix got = plan_forward(plan, values, bank, ConvolveOptions{chunk, threads});
  const Matrix want = oracle::dense_forward(plan, bank, values);
  const double err = oracle::max_rel_error(got, want);
  std::cout << "max rel err = " << err << "\n";
  return err < tolerance ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse high-dimensional filtering toolbox"};
  app.require_subcommand(1);

  // filter
  auto* filter_cmd = app.add_subcommand("filter", "filter an image over its own features");
  CommonImageArgs filter_common;
  filter_common.attach(*filter_cmd);
  std::string filter_in, filter_out, filter_weights;
  bool filter_gauss = false, filter_raw = false;
  double filter_sigma = 0.5;
  opt(*filter_cmd, "--in", filter_in, "input image")->required();
  opt(*filter_cmd, "--out", filter_out, "output image path");
  opt(*filter_cmd, "--weights", filter_weights, "filter bank file");
  flag(*filter_cmd, "--gauss", filter_gauss, "use a Gaussian filter bank");
  opt(*filter_cmd, "--sigma", filter_sigma, "Gaussian bank width in hops");
  flag(*filter_cmd, "--raw", filter_raw, "skip homogeneous normalization");

  // upsample
  auto* up_cmd = app.add_subcommand("upsample", "upsample a low-resolution image");
  CommonImageArgs up_common;
  up_common.attach(*up_cmd);
  std::string up_in, up_guide, up_out, up_clean, up_csv, up_method = "bilateral";
  int up_factor = 4;
  double up_sigma = 0.5;
  bool up_raw = false;
  opt(*up_cmd, "--in", up_in, "low-resolution input image")->required();
  opt(*up_cmd, "--guide", up_guide, "high-resolution guidance image");
  opt(*up_cmd, "--factor", up_factor, "integer upsampling factor")->check(CLI::Range(1, 64));
  opt(*up_cmd, "--method", up_method, "bilateral or bicubic");
  opt(*up_cmd, "--sigma", up_sigma, "Gaussian bank width in hops");
  flag(*up_cmd, "--raw", up_raw, "skip homogeneous normalization");
  opt(*up_cmd, "--out", up_out, "output image path");
  opt(*up_cmd, "--clean", up_clean, "ground-truth image for PSNR reporting");
  opt(*up_cmd, "--csv", up_csv, "append method,image,psnr rows to this file");

  // denoise-train
  auto* dt_cmd = app.add_subcommand("denoise-train", "fit a denoising filter bank by SGD");
  CommonImageArgs dt_common;
  dt_common.features = "xyv";
  dt_common.attach(*dt_cmd);
  std::string dt_images, dt_clean, dt_config, dt_out = "weights.pbf";
  int dt_synth = 10, dt_size = 64;
  double dt_noise = 25.0 / 255.0, dt_init_sigma = 0.5;
  bool dt_raw = false;
  std::uint64_t dt_seed = 0;
  TrainConfig dt_overrides;
  opt(*dt_cmd, "--images", dt_images, "comma list of training images");
  opt(*dt_cmd, "--clean", dt_clean, "comma list of clean references (defaults to adding noise)");
  opt(*dt_cmd, "--synth", dt_synth, "number of synthetic training images when no --images");
  opt(*dt_cmd, "--size", dt_size, "synthetic image side length");
  opt(*dt_cmd, "--noise-sigma", dt_noise, "additive noise level in [0,1] units");
  opt(*dt_cmd, "--init-sigma", dt_init_sigma, "Gaussian initialization width");
  flag(*dt_cmd, "--raw", dt_raw, "skip homogeneous normalization");
  opt(*dt_cmd, "--config", dt_config, "key=value training configuration file");
  auto* o_lr = opt(*dt_cmd, "--lr", dt_overrides.lr, "learning rate");
  auto* o_mom = opt(*dt_cmd, "--momentum", dt_overrides.momentum, "momentum coefficient");
  auto* o_wd = opt(*dt_cmd, "--weight-decay", dt_overrides.weight_decay, "weight decay");
  auto* o_epochs = opt(*dt_cmd, "--epochs", dt_overrides.epochs, "training epochs");
  auto* o_batch = opt(*dt_cmd, "--batch", dt_overrides.batch, "images per update");
  opt(*dt_cmd, "--seed", dt_seed, "RNG seed for noise, shuffling and synthesis");
  opt(*dt_cmd, "--out", dt_out, "output filter bank path");

  // denoise-apply
  auto* da_cmd = app.add_subcommand("denoise-apply", "apply a trained denoising bank");
  CommonImageArgs da_common;
  da_common.features = "xyv";
  da_common.attach(*da_cmd);
  std::string da_in, da_weights, da_out, da_clean, da_csv;
  bool da_raw = false;
  opt(*da_cmd, "--in", da_in, "noisy input image")->required();
  opt(*da_cmd, "--weights", da_weights, "filter bank file")->required();
  flag(*da_cmd, "--raw", da_raw, "skip homogeneous normalization");
  opt(*da_cmd, "--out", da_out, "output image path");
  opt(*da_cmd, "--clean", da_clean, "ground-truth image for PSNR reporting");
  opt(*da_cmd, "--csv", da_csv, "append method,image,psnr rows to this file");

  // mesh-denoise
  auto* md_cmd = app.add_subcommand("mesh-denoise", "filter point cloud values");
  CommonImageArgs md_common;
  md_common.attach(*md_cmd);
  std::string md_in, md_weights, md_out;
  double md_sigma = 0.5;
  bool md_raw = false;
  opt(*md_cmd, "--in", md_in, "input point cloud csv")->required();
  opt(*md_cmd, "--weights", md_weights, "filter bank file (defaults to Gaussian)");
  opt(*md_cmd, "--sigma", md_sigma, "Gaussian bank width in hops");
  flag(*md_cmd, "--raw", md_raw, "skip homogeneous normalization");
  opt(*md_cmd, "--out", md_out, "output point cloud path");

  // crf
  auto* crf_cmd = app.add_subcommand("crf", "mean-field inference over dense pairwise terms");
  CommonImageArgs crf_common;
  crf_common.attach(*crf_cmd);
  std::string crf_unaries, crf_image, crf_smooth_scales, crf_out, crf_marginals;
  double crf_sigma = 0.7, crf_weight = 1.0, crf_smooth_weight = 1.0;
  int crf_steps = 5;
  bool crf_exclude_self = false;
  bool crf_normalize = false;
  opt(*crf_cmd, "--unaries", crf_unaries, "binary unary potential file")->required();
  opt(*crf_cmd, "--in", crf_image, "image supplying pairwise features");
  opt(*crf_cmd, "--smooth-scales", crf_smooth_scales, "scales for an extra position-only kernel");
  opt(*crf_cmd, "--sigma", crf_sigma, "Gaussian bank width in hops");
  opt(*crf_cmd, "--weight", crf_weight, "bilateral kernel weight");
  opt(*crf_cmd, "--smooth-weight", crf_smooth_weight, "position kernel weight");
  opt(*crf_cmd, "--steps", crf_steps, "mean-field steps")->check(CLI::Range(0, 1000));
  flag(*crf_cmd, "--exclude-self", crf_exclude_self, "drop each point's own kernel response");
  flag(*crf_cmd, "--normalize-messages", crf_normalize,
       "divide kernel responses by their row mass");
  opt(*crf_cmd, "--out", crf_out, "label output path (one id per line)");
  opt(*crf_cmd, "--marginals-out", crf_marginals, "write final marginals in the unary format");

  // bi-filter
  auto* bi_cmd = app.add_subcommand("bi-filter", "explicit multi-scale gram filtering");
  CommonImageArgs bi_common;
  bi_common.attach(*bi_cmd);
  std::string bi_in, bi_thetas, bi_segments, bi_out;
  opt(*bi_cmd, "--in", bi_in, "input image (at most 4096 pixels)")->required();
  opt(*bi_cmd, "--thetas", bi_thetas, "comma list of kernel scales");
  opt(*bi_cmd, "--segments", bi_segments, "superpixel map; filters segment means");
  opt(*bi_cmd, "--out", bi_out, "output image path");

  // gradcheck
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::string gc_target = "filter";
  int gc_d = 2, gc_s = 1, gc_n = 24, gc_c = 2, gc_probes = 40;
  std::uint64_t gc_seed = 1;
  double gc_tol = 1e-5;
  opt(*gc_cmd, "--target", gc_target, "filter, input, mf or inception");
  opt(*gc_cmd, "--d", gc_d, "feature dimension")->check(CLI::Range(1, 16));
  opt(*gc_cmd, "--s", gc_s, "neighborhood size")->check(CLI::Range(0, 8));
  opt(*gc_cmd, "--n", gc_n, "point count");
  opt(*gc_cmd, "--c", gc_c, "channel count");
  opt(*gc_cmd, "--probes", gc_probes, "probed coordinates");
  opt(*gc_cmd, "--seed", gc_seed, "RNG seed");
  opt(*gc_cmd, "--tol", gc_tol, "relative error tolerance");

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "per-stage filtering wall time");
  int bench_n = 20000, bench_d = 5, bench_s = 1, bench_c = 3, bench_repeat = 5,
      bench_threads = 1;
  Index bench_chunk = 4096;
  std::uint64_t bench_seed = 0;
  opt(*bench_cmd, "--n", bench_n, "point count");
  opt(*bench_cmd, "--d", bench_d, "feature dimension")->check(CLI::Range(1, 16));
  opt(*bench_cmd, "--s", bench_s, "neighborhood size")->check(CLI::Range(0, 8));
  opt(*bench_cmd, "--c", bench_c, "channel count");
  opt(*bench_cmd, "--repeat", bench_repeat, "timed repetitions")->check(CLI::Range(1, 1000));
  opt(*bench_cmd, "--threads", bench_threads, "worker threads");
  opt(*bench_cmd, "--chunk", bench_chunk, "vertex chunk size");
  opt(*bench_cmd, "--seed", bench_seed, "RNG seed");

  // oracle-diff
  auto* od_cmd = app.add_subcommand("oracle-diff", "compare against the dense reference operator");
  int od_n = 30, od_d = 2, od_s = 1, od_cin = 2, od_cout = 2, od_threads = 1;
  Index od_chunk = 4096;
  std::uint64_t od_seed = 7;
  double od_tol = 1e-10;
  opt(*od_cmd, "--n", od_n, "point count")->check(CLI::Range(1, 2000));
  opt(*od_cmd, "--d", od_d, "feature dimension")->check(CLI::Range(1, 8));
  opt(*od_cmd, "--s", od_s, "neighborhood size")->check(CLI::Range(0, 4));
  opt(*od_cmd, "--cin", od_cin, "input channels");
  opt(*od_cmd, "--cout", od_cout, "output channels");
  opt(*od_cmd, "--seed", od_seed, "RNG seed");
  opt(*od_cmd, "--chunk", od_chunk, "vertex chunk size");
  opt(*od_cmd, "--threads", od_threads, "worker threads");
  opt(*od_cmd, "--tol", od_tol, "failure threshold on the reported error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (filter_cmd->parsed())
      return run_filter(filter_common, filter_in, filter_out, filter_weights, filter_gauss,
                        filter_sigma, filter_raw);
    if (up_cmd->parsed())
      return run_upsample(up_common, up_in, up_guide, up_factor, up_method, up_sigma, up_raw,
                          up_out, up_clean, up_csv);
    if (dt_cmd->parsed()) {
      const std::vector<bool> overridden = {o_lr->count() > 0, o_mom->count() > 0,
                                            o_wd->count() > 0, o_epochs->count() > 0,
                                            o_batch->count() > 0};
      return run_denoise_train(dt_common, dt_images, dt_clean, dt_synth, dt_size, dt_noise,
                               dt_init_sigma, dt_raw, dt_config, dt_overrides, overridden,
                               dt_seed, dt_out);
    }
    if (da_cmd->parsed())
      return run_denoise_apply(da_common, da_in, da_weights, da_raw, da_out, da_clean, da_csv);
    if (md_cmd->parsed())
      return run_mesh_denoise(md_common, md_in, md_weights, md_sigma, md_raw, md_out);
    if (crf_cmd->parsed())
      return run_crf(crf_common, crf_unaries, crf_image, crf_smooth_scales, crf_sigma,
                     crf_weight, crf_smooth_weight, crf_steps, crf_exclude_self, crf_normalize,
                     crf_out, crf_marginals);
    if (bi_cmd->parsed()) return run_bi_filter(bi_common, bi_in, bi_thetas, bi_segments, bi_out);
    if (gc_cmd->parsed())
      return run_gradcheck(gc_target, gc_d, gc_s, gc_n, gc_c, gc_seed, gc_probes, gc_tol);
    if (bench_cmd->parsed())
      return run_bench(bench_n, bench_d, bench_s, bench_c, bench_repeat, bench_threads,
                       bench_chunk, bench_seed);
    if (od_cmd->parsed())
      return run_oracle_diff(od_n, od_d, od_s, od_cin, od_cout, od_seed, od_chunk, od_threads,
                             od_tol);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
