#include <doctest.h>

#include <permutofilt/training.hpp>

#include "helpers.hpp"

#include <cmath>
#include <sstream>

using namespace permutofilt;
using testing::flatten;
using testing::random_matrix;

TEST_CASE("sgd follows the momentum recurrence") {
  SgdConfig config{0.1, 0.9, 0.05};
  Matrix theta = Matrix::Constant(1, 1, 2.0);
  SgdState state = make_sgd_state(1, 1);

  double ref_theta = 2.0;
  double ref_velocity = 0.0;
  Rng rng(41);
  for (int step = 0; step < 10; ++step) {
    const double g = sample_normal(rng);
    sgd_step(theta, Matrix::Constant(1, 1, g), state, config);

    const double decayed = g + config.weight_decay * ref_theta;
    ref_velocity = config.momentum * ref_velocity - config.lr * decayed;
    ref_theta += ref_velocity;
    CHECK(theta(0, 0) == doctest::Approx(ref_theta).epsilon(1e-14));
  }
}

TEST_CASE("weight decay is folded into the gradient before momentum") {
  SgdConfig config{0.5, 0.9, 0.2};
  Matrix theta = Matrix::Constant(1, 1, 3.0);
  SgdState state = make_sgd_state(1, 1);
  sgd_step(theta, Matrix::Constant(1, 1, 1.0), state, config);
  CHECK(theta(0, 0) == doctest::Approx(3.0 - 0.5 * (1.0 + 0.2 * 3.0)).epsilon(1e-15));
}

TEST_CASE("sgd state shape is validated") {
  SgdState state = make_sgd_state(2, 2);
  Matrix theta = Matrix::Zero(3, 1);
  CHECK_THROWS_AS(sgd_step(theta, Matrix::Zero(3, 1), state, SgdConfig{}), StateMissing);

  SgdState fresh;
  sgd_step(theta, Matrix::Ones(3, 1), fresh, SgdConfig{1.0, 0.0, 0.0});
  CHECK(fresh.velocity.rows() == 3);
  CHECK((theta.array() + 1.0).abs().maxCoeff() < 1e-15);
}

TEST_CASE("mse loss value and gradient") {
  Matrix pred(2, 2), target(2, 2);
  pred << 1.0, 2.0, 3.0, 4.0;
  target << 1.0, 1.0, 1.0, 1.0;
  const LossValue loss = mse_loss(pred, target);
  CHECK(loss.value == doctest::Approx((0.0 + 1.0 + 4.0 + 9.0) / 4.0).epsilon(1e-15));
  CHECK(loss.grad(0, 0) == doctest::Approx(0.0));
  CHECK(loss.grad(1, 1) == doctest::Approx(2.0 * 3.0 / 4.0).epsilon(1e-15));

  CHECK_THROWS_AS(mse_loss(pred, Matrix::Zero(1, 2)), ShapeMismatch);
}

TEST_CASE("mse gradient passes finite differences") {
  Rng rng(42);
  const Matrix target = random_matrix(4, 3, rng);
  const Matrix pred = random_matrix(4, 3, rng);
  const LossValue loss = mse_loss(pred, target);
  const auto objective = [&](const Vector& p) {
    return mse_loss(testing::unflatten(p, 4, 3), target).value;
  };
  const GradCheckReport report =
      grad_check(objective, flatten(pred), flatten(loss.grad), 12, 1e-6, 1e-7, rng);
  CHECK(report.failures == 0);
}

TEST_CASE("logistic loss on a hand-worked example") {
  Matrix logits(1, 2);
  logits << 2.0, 0.0;
  const LossValue loss = logistic_loss(logits, {0});
  const double expected = std::log(1.0 + std::exp(-2.0));
  CHECK(loss.value == doctest::Approx(expected).epsilon(1e-12));

  const double p0 = 1.0 / (1.0 + std::exp(-2.0));
  CHECK(loss.grad(0, 0) == doctest::Approx(p0 - 1.0).epsilon(1e-12));
  CHECK(loss.grad(0, 1) == doctest::Approx(1.0 - p0).epsilon(1e-12));
}

TEST_CASE("logistic loss class weights scale by the true label") {
  Matrix logits(2, 2);
  logits << 1.0, -1.0, 0.5, 0.25;
  Vector weights(2);
  weights << 2.0, 0.0;
  const LossValue weighted = logistic_loss(logits, {0, 1}, weights);

  const LossValue first = logistic_loss(logits.topRows(1), {0});
  CHECK(weighted.value == doctest::Approx(first.value).epsilon(1e-12));
  CHECK(weighted.grad.row(1).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("logistic loss is shift invariant and validates labels") {
  Rng rng(43);
  const Matrix logits = random_matrix(5, 3, rng, -30.0, 30.0);
  const std::vector<int> labels = {0, 1, 2, 1, 0};
  const LossValue base = logistic_loss(logits, labels);
  const LossValue shifted = logistic_loss(Matrix(logits.array() + 1000.0), labels);
  CHECK(shifted.value == doctest::Approx(base.value).epsilon(1e-9));

  CHECK_THROWS_AS(logistic_loss(logits, {0, 1, 3, 1, 0}), LabelOutOfRange);
  CHECK_THROWS_AS(logistic_loss(logits, {0, -1, 2, 1, 0}), LabelOutOfRange);
  CHECK_THROWS_AS(logistic_loss(logits, {0, 1}), ShapeMismatch);
}

TEST_CASE("logistic gradient passes finite differences") {
  Rng rng(44);
  const Matrix logits = random_matrix(4, 3, rng);
  const std::vector<int> labels = {2, 0, 1, 1};
  const LossValue loss = logistic_loss(logits, labels);
  const auto objective = [&](const Vector& p) {
    return logistic_loss(testing::unflatten(p, 4, 3), labels).value;
  };
  const GradCheckReport report =
      grad_check(objective, flatten(logits), flatten(loss.grad), 12, 1e-6, 1e-7, rng);
  CHECK(report.failures == 0);
}

TEST_CASE("gradient checker accepts correct and rejects corrupted gradients") {
  Rng rng(45);
  Vector params(4);
  params << 1.0, -2.0, 0.5, 3.0;
  Vector coeff(4);
  coeff << 2.0, 1.0, -1.5, 0.25;
  const auto objective = [&](const Vector& x) {
    return (coeff.array() * x.array().square()).sum();
  };
  const Vector analytic = 2.0 * coeff.array() * params.array();
  const GradCheckReport good = grad_check(objective, params, analytic, 4, 1e-6, 1e-7, rng);
  CHECK(good.failures == 0);
  CHECK(good.probes == 4);
  CHECK(good.max_rel_err < 1e-7);

  Vector wrong = analytic;
  wrong[2] += 1.0;
  const GradCheckReport bad = grad_check(objective, params, wrong, 4, 1e-6, 1e-7, rng);
  CHECK(bad.failures > 0);
}

TEST_CASE("key=value parsing skips comments and blank lines") {
  std::istringstream in("# header\n\nlr = 0.5\nloss=mse # trailing\n");
  const auto pairs = parse_key_values(in);
  CHECK(pairs.at("lr") == "0.5");
  CHECK(pairs.at("loss") == "mse");
  CHECK(pairs.size() == 2);

  std::istringstream bad("just words\n");
  CHECK_THROWS_AS(parse_key_values(bad), RecipeMismatch);
}

TEST_CASE("training configuration parses and validates") {
  std::istringstream in(
      "lr = 0.01\nmomentum = 0.8\nweight_decay = 0\nepochs = 3\nbatch = 2\n"
      "loss = logistic\nseed = 9\nfeature_scales = 0.1, 0.2, 4\n");
  const TrainConfig config = parse_train_config(in);
  CHECK(config.lr == doctest::Approx(0.01));
  CHECK(config.momentum == doctest::Approx(0.8));
  CHECK(config.weight_decay == 0.0);
  CHECK(config.epochs == 3);
  CHECK(config.batch == 2);
  CHECK(config.loss == "logistic");
  CHECK(config.seed == 9);
  REQUIRE(config.feature_scales.size() == 3);
  CHECK(config.feature_scales[2] == doctest::Approx(4.0));

  std::istringstream defaults("");
  const TrainConfig d = parse_train_config(defaults);
  CHECK(d.lr == doctest::Approx(1e-6));
  CHECK(d.momentum == doctest::Approx(0.9));
  CHECK(d.weight_decay == doctest::Approx(0.0005));

  std::istringstream unknown("turbo = on\n");
  CHECK_THROWS_AS(parse_train_config(unknown), RecipeMismatch);
  std::istringstream bad_loss("loss = hinge\n");
  CHECK_THROWS_AS(parse_train_config(bad_loss), RecipeMismatch);
  std::istringstream bad_number("lr = fast\n");
  CHECK_THROWS_AS(parse_train_config(bad_number), RecipeMismatch);
  std::istringstream bad_batch("batch = 0\n");
  CHECK_THROWS_AS(parse_train_config(bad_batch), RecipeMismatch);
}
