#include <permutofilt/training.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace permutofilt {

SgdState make_sgd_state(Index rows, Index cols) {
  SgdState state;
  state.velocity = Matrix::Zero(rows, cols);
  return state;
}

void sgd_step(Matrix& theta, const Eigen::Ref<const Matrix>& grad, SgdState& state,
              const SgdConfig& config) {
  if (grad.rows() != theta.rows() || grad.cols() != theta.cols())
    throw ShapeMismatch("gradient shape does not match parameters");
  if (state.velocity.size() == 0) state.velocity = Matrix::Zero(theta.rows(), theta.cols());
  if (state.velocity.rows() != theta.rows() || state.velocity.cols() != theta.cols())
    throw StateMissing("optimizer state does not match parameter shape");
  state.velocity = config.momentum * state.velocity -
                   config.lr * (grad + config.weight_decay * theta);
  theta += state.velocity;
}

LossValue mse_loss(const Eigen::Ref<const Matrix>& pred, const Eigen::Ref<const Matrix>& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw ShapeMismatch("prediction and target shapes differ");
  if (pred.size() == 0) throw EmptyInput("loss over empty prediction");
  const double scale = 1.0 / static_cast<double>(pred.size());
  LossValue out;
  const Matrix diff = pred - target;
  out.value = diff.squaredNorm() * scale;
  out.grad = 2.0 * scale * diff;
  return out;
}

LossValue logistic_loss(const Eigen::Ref<const Matrix>& logits, const std::vector<int>& labels,
                        const Vector& class_weights) {
  const Index n = logits.rows();
  const Index label_count = logits.cols();
  if (n == 0) throw EmptyInput("loss over empty prediction");
  if (static_cast<Index>(labels.size()) != n)
    throw ShapeMismatch("label count does not match rows");
  if (class_weights.size() != 0 && class_weights.size() != label_count)
    throw ShapeMismatch("class weight count does not match label count");

  LossValue out;
  out.grad = Matrix::Zero(n, label_count);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Index i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= label_count) throw LabelOutOfRange("label outside score range");
    const double w = class_weights.size() ? class_weights[y] : 1.0;
    const double peak = logits.row(i).maxCoeff();
    const double lse = peak + std::log((logits.row(i).array() - peak).exp().sum());
    out.value += w * (lse - logits(i, y)) * inv_n;
    out.grad.row(i) = (w * inv_n) * (logits.row(i).array() - lse).exp().matrix();
    out.grad(i, y) -= w * inv_n;
  }
  return out;
}

GradCheckReport grad_check(const std::function<double(const Vector&)>& objective,
                           const Vector& params, const Vector& analytic_grad, int probes,
                           double step_scale, double tolerance, Rng& rng) {
  if (params.size() != analytic_grad.size())
    throw ShapeMismatch("analytic gradient does not match parameters");
  if (params.size() == 0) throw EmptyInput("gradient check on empty parameters");

  const Index count = params.size();
  std::vector<Index> picks;
  if (probes >= count) {
    picks.resize(count);
    for (Index i = 0; i < count; ++i) picks[i] = i;
  } else {
    std::uniform_int_distribution<Index> dist(0, count - 1);
    for (int p = 0; p < probes; ++p) picks.push_back(dist(rng));
  }

  GradCheckReport report;
  Vector probe = params;
  for (Index i : picks) {
    const double h = step_scale * std::max(1.0, std::abs(params[i]));
    probe[i] = params[i] + h;
    const double above = objective(probe);
    probe[i] = params[i] - h;
    const double below = objective(probe);
    probe[i] = params[i];
    const double fd = (above - below) / (2.0 * h);
    const double an = analytic_grad[i];
    const double denom = std::max(std::abs(fd), std::abs(an));
    const double err = denom < 1e-10 ? std::abs(fd - an) : std::abs(fd - an) / denom;
    report.max_rel_err = std::max(report.max_rel_err, err);
    if (err >= tolerance) ++report.failures;
    ++report.probes;
  }
  return report;
}

namespace {

std::string trim(const std::string& text) {
  const auto begin = text.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = text.find_last_not_of(" \t\r\n");
  return text.substr(begin, end - begin + 1);
}

double parse_double(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw RecipeMismatch("bad numeric value for " + key + ": " + text);
  }
  if (used != text.size()) throw RecipeMismatch("bad numeric value for " + key + ": " + text);
  return v;
}

long parse_long(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(text, &used);
  } catch (const std::exception&) {
    throw RecipeMismatch("bad integer value for " + key + ": " + text);
  }
  if (used != text.size()) throw RecipeMismatch("bad integer value for " + key + ": " + text);
  return v;
}

}  // namespace

std::map<std::string, std::string> parse_key_values(std::istream& in) {
  std::map<std::string, std::string> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw RecipeMismatch("expected key=value on line " + std::to_string(line_no));
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) throw RecipeMismatch("empty key on line " + std::to_string(line_no));
    entries[key] = value;
  }
  return entries;
}

TrainConfig parse_train_config(std::istream& in) {
  TrainConfig config;
  for (const auto& [key, value] : parse_key_values(in)) {
    if (key == "lr") {
      config.lr = parse_double(key, value);
    } else if (key == "momentum") {
      config.momentum = parse_double(key, value);
    } else if (key == "weight_decay") {
      config.weight_decay = parse_double(key, value);
    } else if (key == "epochs") {
      config.epochs = static_cast<int>(parse_long(key, value));
    } else if (key == "batch") {
      config.batch = static_cast<int>(parse_long(key, value));
    } else if (key == "loss") {
      if (value != "mse" && value != "logistic")
        throw RecipeMismatch("unknown loss: " + value);
      config.loss = value;
    } else if (key == "seed") {
      config.seed = static_cast<std::uint64_t>(parse_long(key, value));
    } else if (key == "feature_scales") {
      config.feature_scales.clear();
      std::stringstream parts(value);
      std::string part;
      while (std::getline(parts, part, ','))
        config.feature_scales.push_back(parse_double(key, trim(part)));
      if (config.feature_scales.empty())
        throw RecipeMismatch("feature_scales must list at least one value");
    } else {
      throw RecipeMismatch("unknown configuration key: " + key);
    }
  }
  if (config.epochs < 0) throw RecipeMismatch("epochs must be non-negative");
  if (config.batch < 1) throw RecipeMismatch("batch must be positive");
  return config;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  return parse_train_config(in);
}

}  // namespace permutofilt
