#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "kavi/discrepancy.hpp"
#include "kavi/distillation.hpp"
#include "kavi/grad_check.hpp"
#include "kavi/ops.hpp"

using namespace kavi;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -2.0,
                     double hi = 2.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = dist(rng);
  return Tensor::from_data(std::move(shape), std::move(data));
}

Tensor onehot(const std::vector<std::size_t>& labels, std::size_t nc) {
  std::vector<double> data(labels.size() * nc, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) data[i * nc + labels[i]] = 1.0;
  return Tensor::from_data({labels.size(), nc}, std::move(data));
}

DistillationConfig plain_config(double tau) {
  DistillationConfig cfg;
  cfg.tau = tau;
  cfg.tau_squared = false;
  return cfg;
}

}  // namespace

TEST_CASE("config validation") {
  DistillationConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.tau == 20.0);
  CHECK(cfg.lambda_cls == 0.8);
  CHECK(cfg.alpha1 == 0.1);
  CHECK(cfg.alpha2 == 0.9);
  CHECK(cfg.tau_squared);
  CHECK_FALSE(cfg.kl_reverse);

  cfg.tau = 0.0;
  CHECK_THROWS_AS(cfg.validate(), TensorError);
  cfg.tau = 20.0;
  cfg.lambda_cls = 1.5;
  CHECK_THROWS_AS(cfg.validate(), TensorError);
  cfg.lambda_cls = 0.8;
  cfg.alpha1 = 0.95;
  CHECK_THROWS_AS(cfg.validate(), TensorError);
}

TEST_CASE("temperature softmax basics") {
  NoGradGuard guard;
  Tensor z = Tensor::from_data({1, 2}, {0.0, 0.0});
  for (double tau : {0.5, 1.0, 20.0}) {
    Tensor p = temp_softmax(z, tau);
    CHECK(p.at(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(p.at(0, 1) == doctest::Approx(0.5).epsilon(1e-14));
  }

  // Dividing [2, 0] by tau=2 gives softmax([1, 0]).
  Tensor z2 = Tensor::from_data({1, 2}, {2.0, 0.0});
  Tensor p2 = temp_softmax(z2, 2.0);
  CHECK(p2.at(0, 0) == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(p2.at(0, 1) == doctest::Approx(0.2689).epsilon(1e-4));

  Tensor hot = temp_softmax(z2, 1e6);
  CHECK(std::abs(hot.at(0, 0) - 0.5) < 1e-3);
  CHECK(std::abs(hot.at(0, 1) - 0.5) < 1e-3);

  CHECK_THROWS_AS(temp_softmax(z2, 0.0), TensorError);
  CHECK_THROWS_AS(temp_softmax(z2, -1.0), TensorError);
}

TEST_CASE("temperature softmax keeps the argmax at any tau") {
  std::mt19937_64 rng(61);
  NoGradGuard guard;
  Tensor z = random_tensor({5, 6}, rng, -4.0, 4.0);
  Tensor base = temp_softmax(z, 1.0);
  for (double tau : {0.25, 2.0, 20.0, 500.0}) {
    Tensor p = temp_softmax(z, tau);
    for (std::size_t i = 0; i < 5; ++i) {
      std::size_t am_base = 0, am = 0;
      for (std::size_t c = 1; c < 6; ++c) {
        if (base.at(i, c) > base.at(i, am_base)) am_base = c;
        if (p.at(i, c) > p.at(i, am)) am = c;
      }
      CHECK(am == am_base);
    }
  }
}

TEST_CASE("identical logits distill at zero cost") {
  std::mt19937_64 rng(62);
  NoGradGuard guard;
  Tensor z = random_tensor({4, 5}, rng);
  DistillationConfig cfg;
  CHECK(std::abs(kd_target_loss(z, z, cfg).value()) < 1e-14);
  cfg.kl_reverse = true;
  CHECK(std::abs(kd_target_loss(z, z, cfg).value()) < 1e-14);
}

TEST_CASE("two-class distillation matches the frozen closed-form value") {
  NoGradGuard guard;
  // Student soft distribution exactly [0.7311, 0.2689], teacher uniform.
  const double tau = 20.0;
  Tensor student = Tensor::from_data(
      {1, 2}, {tau * std::log(0.7311), tau * std::log(0.2689)});
  Tensor teacher = Tensor::from_data({1, 2}, {0.0, 0.0});
  DistillationConfig cfg = plain_config(tau);
  CHECK(kd_target_loss(student, teacher, cfg).value() ==
        doctest::Approx(0.11098549740510352).epsilon(1e-9));
  // tau^2 scaling multiplies the same value.
  cfg.tau_squared = true;
  CHECK(kd_target_loss(student, teacher, cfg).value() ==
        doctest::Approx(tau * tau * 0.11098549740510352).epsilon(1e-9));
}

TEST_CASE("distillation losses are nonnegative and separate distributions") {
  std::mt19937_64 rng(63);
  NoGradGuard guard;
  DistillationConfig cfg;
  for (int rep = 0; rep < 8; ++rep) {
    Tensor s = random_tensor({3, 4}, rng);
    Tensor t = random_tensor({3, 4}, rng);
    const double v = kd_target_loss(s, t, cfg).value();
    CHECK(v >= 0.0);
    CHECK(v > 1e-8);  // random logits essentially never coincide
  }
}

TEST_CASE("distillation gradient matches finite differences") {
  std::mt19937_64 rng(64);
  Tensor s = random_tensor({4, 3}, rng);
  Tensor t = random_tensor({4, 3}, rng);
  s.set_requires_grad(true);
  DistillationConfig cfg;
  cfg.tau = 4.0;
  auto res = grad_check([&]() { return kd_target_loss(s, t, cfg); }, {s});
  CHECK_MESSAGE(res.passed, res.worst);
  CHECK(res.max_rel_error < 1e-4);

  cfg.kl_reverse = true;
  res = grad_check([&]() { return kd_target_loss(s, t, cfg); }, {s});
  CHECK_MESSAGE(res.passed, res.worst);
}

TEST_CASE("no gradient reaches the teacher through distillation") {
  std::mt19937_64 rng(65);
  Tape::active().clear();
  Tensor s = random_tensor({4, 3}, rng);
  Tensor t = random_tensor({4, 3}, rng);
  s.set_requires_grad(true);
  t.set_requires_grad(true);
  DistillationConfig cfg;
  Tensor loss = kd_target_loss(s, t, cfg);
  backward(loss);
  CHECK(s.has_grad());
  bool teacher_touched = false;
  if (t.has_grad())
    for (double g : t.grad()) teacher_touched = teacher_touched || g != 0.0;
  CHECK_FALSE(teacher_touched);
}

TEST_CASE("source distillation decomposes into KL plus weighted classification") {
  std::mt19937_64 rng(66);
  Tape::active().clear();
  Tensor s = random_tensor({4, 3}, rng);
  Tensor t = random_tensor({4, 3}, rng);
  Tensor labels = onehot({0, 1, 2, 1}, 3);
  DistillationConfig cfg;
  cfg.lambda_cls = 0.8;
  const double eps = 0.1;
  const double combined = kd_source_loss(s, t, labels, cfg, eps).value();
  const double kl = kd_target_loss(s, t, cfg).value();
  const double ce = smoothed_ce(s, labels, eps).value();
  CHECK(combined == doctest::Approx(kl + 0.8 * ce).epsilon(1e-13));

  // Identical logits with lambda_cls 0 cost nothing.
  cfg.lambda_cls = 0.0;
  CHECK(std::abs(kd_source_loss(s, s, labels, cfg, eps).value()) < 1e-14);
  // Identical logits with lambda_cls 1 leave only the classification term.
  cfg.lambda_cls = 1.0;
  CHECK(kd_source_loss(s, s, labels, cfg, eps).value() ==
        doctest::Approx(ce).epsilon(1e-13));
}

TEST_CASE("total objective is the stated convex combination") {
  Tape::active().clear();
  Tensor sda = Tensor::scalar(1.0);
  Tensor kdt = Tensor::scalar(0.2);
  Tensor kds = Tensor::scalar(0.4);
  CHECK(total_loss(sda, kdt, kds, 0.0).value() == doctest::Approx(1.0));
  CHECK(total_loss(sda, kdt, kds, 1.0).value() == doctest::Approx(0.6));
  CHECK(total_loss(sda, kdt, kds, 0.3).value() == doctest::Approx(0.88).epsilon(1e-14));
  CHECK_THROWS_AS(total_loss(sda, kdt, kds, -0.1), TensorError);
  CHECK_THROWS_AS(total_loss(sda, kdt, kds, 1.1), TensorError);

  // Linear in each component.
  Tensor sda2 = Tensor::scalar(2.0);
  const double l1 = total_loss(sda, kdt, kds, 0.3).value();
  const double l2 = total_loss(sda2, kdt, kds, 0.3).value();
  CHECK(l2 - l1 == doctest::Approx(0.7 * 1.0).epsilon(1e-14));
}

TEST_CASE("distillation weight schedule interpolates geometrically") {
  CHECK(lambda_e(0, 40, 0.1, 0.9) == doctest::Approx(0.1).epsilon(1e-14));
  CHECK(lambda_e(40, 40, 0.1, 0.9) == doctest::Approx(0.9).epsilon(1e-14));
  CHECK(lambda_e(20, 40, 0.1, 0.9) == doctest::Approx(0.3).epsilon(1e-12));

  double prev = 0.0;
  for (std::size_t e = 0; e <= 40; ++e) {
    const double v = lambda_e(e, 40, 0.1, 0.9);
    CHECK(v > prev);
    CHECK(v >= 0.1 - 1e-15);
    CHECK(v <= 0.9 + 1e-15);
    prev = v;
  }

  CHECK_THROWS_AS(lambda_e(0, 0, 0.1, 0.9), TensorError);
  CHECK_THROWS_AS(lambda_e(0, 40, 0.0, 0.9), TensorError);
  CHECK_THROWS_AS(lambda_e(0, 40, 0.9, 0.1), TensorError);
}
