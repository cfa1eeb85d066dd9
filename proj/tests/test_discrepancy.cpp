#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "kavi/discrepancy.hpp"
#include "kavi/grad_check.hpp"
#include "kavi/ops.hpp"

using namespace kavi;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0,
                     double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = dist(rng);
  return Tensor::from_data(std::move(shape), std::move(data));
}

// Scalar-by-scalar kernel evaluation, independent of the tensor path.
double kernel_scalar(const Tensor& x, std::size_t i, const Tensor& y, std::size_t j,
                     const KernelFamily& fam, bool squared) {
  const std::size_t d = x.dim(1);
  double dist2 = 0.0;
  for (std::size_t t = 0; t < d; ++t) {
    const double diff = x.at(i, t) - y.at(j, t);
    dist2 += diff * diff;
  }
  double k = 0.0;
  for (std::size_t u = 0; u < fam.bandwidths.size(); ++u)
    k += fam.mixture_weights[u] *
         std::exp(-dist2 / (2.0 * fam.bandwidths[u] * fam.bandwidths[u]));
  return squared ? k * k : k;
}

double mmsd_oracle(const Tensor& xs, const Tensor& xt, const KernelFamily& fam) {
  const std::size_t m = xs.dim(0), n = xt.dim(0);
  double ss = 0.0, tt = 0.0, st = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) ss += kernel_scalar(xs, i, xs, j, fam, true);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) tt += kernel_scalar(xt, i, xt, j, fam, true);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) st += kernel_scalar(xs, i, xt, j, fam, true);
  return ss / (double)(m * m) + tt / (double)(n * n) - 2.0 * st / (double)(m * n);
}

double weighted_oracle(const Tensor& fs, const Tensor& ft, const ClassWeights& ws,
                       const ClassWeights& wt, const KernelFamily& fam, bool squared) {
  const std::size_t m = fs.dim(0), n = ft.dim(0), nc = ws.weights.dim(1);
  double total = 0.0;
  for (std::size_t c = 0; c < nc; ++c) {
    if (!ws.present[c] || !wt.present[c]) continue;
    double ss = 0.0, tt = 0.0, st = 0.0;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j)
        ss += ws.weights.at(i, c) * ws.weights.at(j, c) *
              kernel_scalar(fs, i, fs, j, fam, squared);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        tt += wt.weights.at(i, c) * wt.weights.at(j, c) *
              kernel_scalar(ft, i, ft, j, fam, squared);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        st += ws.weights.at(i, c) * wt.weights.at(j, c) *
              kernel_scalar(fs, i, ft, j, fam, squared);
    total += ss + tt - 2.0 * st;
  }
  return total / (double)nc;
}

Tensor onehot(const std::vector<std::size_t>& labels, std::size_t nc) {
  std::vector<double> data(labels.size() * nc, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) data[i * nc + labels[i]] = 1.0;
  return Tensor::from_data({labels.size(), nc}, std::move(data));
}

Tensor random_soft_labels(std::size_t n, std::size_t nc, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(0.05, 1.0);
  std::vector<double> data(n * nc);
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t c = 0; c < nc; ++c) {
      data[i * nc + c] = dist(rng);
      row += data[i * nc + c];
    }
    for (std::size_t c = 0; c < nc; ++c) data[i * nc + c] /= row;
  }
  return Tensor::from_data({n, nc}, std::move(data));
}

KernelFamily single_bandwidth(double sigma) {
  KernelFamily f;
  f.bandwidths = {sigma};
  f.mixture_weights = {1.0};
  return f;
}

}  // namespace

TEST_CASE("kernel family validation") {
  KernelFamily def = KernelFamily::defaults();
  CHECK_NOTHROW(def.validate());
  CHECK(def.bandwidths == std::vector<double>{0.001, 0.01, 1.0, 10.0, 100.0});
  for (double w : def.mixture_weights) CHECK(w == doctest::Approx(0.2));

  KernelFamily bad;
  CHECK_THROWS_AS(bad.validate(), TensorError);
  bad.bandwidths = {1.0, -1.0};
  bad.mixture_weights = {0.5, 0.5};
  CHECK_THROWS_AS(bad.validate(), TensorError);
  bad.bandwidths = {1.0, 2.0};
  bad.mixture_weights = {0.9, 0.9};
  CHECK_THROWS_AS(bad.validate(), TensorError);
}

TEST_CASE("kernel matrix diagonal is one for identical inputs") {
  std::mt19937_64 rng(41);
  NoGradGuard guard;
  Tensor x = random_tensor({5, 3}, rng);
  for (bool squared : {false, true}) {
    Tensor k = kernel_matrix(x, x, KernelFamily::defaults(), squared);
    for (std::size_t i = 0; i < 5; ++i)
      CHECK(k.at(i, i) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("kernel closed-form values at unit-bandwidth distances") {
  NoGradGuard guard;
  const double sigma = 2.0;
  KernelFamily fam = single_bandwidth(sigma);
  // Distance sigma: exponent -sigma^2/(2 sigma^2) = -1/2.
  Tensor a = Tensor::from_data({1, 1}, {0.0});
  Tensor b = Tensor::from_data({1, 1}, {sigma});
  CHECK(kernel_matrix(a, b, fam, false).value() ==
        doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  CHECK(kernel_matrix(a, b, fam, false).value() == doctest::Approx(0.60653).epsilon(1e-5));
  CHECK(kernel_matrix(a, b, fam, true).value() ==
        doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  CHECK(kernel_matrix(a, b, fam, true).value() == doctest::Approx(0.36788).epsilon(1e-5));
  // Distance sqrt(2) sigma: exponent -1.
  Tensor c = Tensor::from_data({1, 1}, {sigma * std::sqrt(2.0)});
  CHECK(kernel_matrix(a, c, fam, false).value() ==
        doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
}

TEST_CASE("swapping kernel arguments transposes the matrix") {
  std::mt19937_64 rng(42);
  NoGradGuard guard;
  Tensor x = random_tensor({4, 3}, rng);
  Tensor y = random_tensor({6, 3}, rng);
  Tensor kxy = kernel_matrix(x, y, KernelFamily::defaults(), true);
  Tensor kyx = kernel_matrix(y, x, KernelFamily::defaults(), true);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 6; ++j)
      CHECK(kxy.at(i, j) == doctest::Approx(kyx.at(j, i)).epsilon(1e-14));
}

TEST_CASE("discrepancy vanishes on identical sample multisets") {
  std::mt19937_64 rng(43);
  NoGradGuard guard;
  Tensor xs = random_tensor({6, 4}, rng);
  // Same multiset, different order.
  std::vector<double> shuffled;
  for (std::size_t i : {3, 0, 5, 1, 4, 2})
    for (std::size_t t = 0; t < 4; ++t) shuffled.push_back(xs.at(i, t));
  Tensor xt = Tensor::from_data({6, 4}, std::move(shuffled));
  CHECK(std::abs(mmsd_biased(xs, xt, KernelFamily::defaults()).value()) <= 1e-12);
}

TEST_CASE("single-sample discrepancy expands to 2 - 2k^2") {
  NoGradGuard guard;
  KernelFamily fam = KernelFamily::defaults();
  Tensor a = Tensor::from_data({1, 3}, {0.1, -0.4, 0.7});
  Tensor b = Tensor::from_data({1, 3}, {0.9, 0.2, -0.3});
  const double k2 = kernel_scalar(a, 0, b, 0, fam, true);
  CHECK(mmsd_biased(a, b, fam).value() == doctest::Approx(2.0 - 2.0 * k2).epsilon(1e-14));
}

TEST_CASE("discrepancy matches the brute-force double-sum oracle") {
  std::mt19937_64 rng(44);
  NoGradGuard guard;
  KernelFamily fam = KernelFamily::defaults();
  Tensor xs = random_tensor({16, 5}, rng);
  Tensor xt = random_tensor({16, 5}, rng, -0.5, 1.5);
  CHECK(mmsd_biased(xs, xt, fam).value() ==
        doctest::Approx(mmsd_oracle(xs, xt, fam)).epsilon(1e-13));
  CHECK_THROWS_AS(mmsd_biased(Tensor::zeros({0, 5}), xt, fam), TensorError);
}

TEST_CASE("discrepancy is nonnegative and separates different sets") {
  std::mt19937_64 rng(45);
  NoGradGuard guard;
  KernelFamily fam = KernelFamily::defaults();
  for (int rep = 0; rep < 8; ++rep) {
    Tensor xs = random_tensor({5, 3}, rng);
    Tensor xt = random_tensor({7, 3}, rng, 0.5, 2.5);
    const double v = mmsd_biased(xs, xt, fam).value();
    CHECK(v >= -1e-12);
    CHECK(v > 1e-8);  // clearly different distributions
    CHECK(std::abs(mmsd_biased(xs, xs, fam).value()) <= 1e-12);
  }
}

TEST_CASE("class weights from hard labels one-hot per class") {
  ClassWeights cw = class_weights(onehot({0, 1}, 2));
  CHECK(cw.weights.at(0, 0) == 1.0);
  CHECK(cw.weights.at(1, 0) == 0.0);
  CHECK(cw.weights.at(0, 1) == 0.0);
  CHECK(cw.weights.at(1, 1) == 1.0);
  CHECK(cw.present[0]);
  CHECK(cw.present[1]);
}

TEST_CASE("class weights spread uniformly over identical soft rows") {
  Tensor y = Tensor::from_data({4, 2}, {0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5});
  ClassWeights cw = class_weights(y);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 2; ++c) CHECK(cw.weights.at(i, c) == doctest::Approx(0.25));
}

TEST_CASE("class weight columns sum to one for present classes") {
  std::mt19937_64 rng(46);
  Tensor y = random_soft_labels(9, 4, rng);
  ClassWeights cw = class_weights(y);
  for (std::size_t c = 0; c < 4; ++c) {
    REQUIRE(cw.present[c]);
    double col = 0.0;
    for (std::size_t i = 0; i < 9; ++i) col += cw.weights.at(i, c);
    CHECK(col == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("absent classes get zero weights and a flag") {
  ClassWeights cw = class_weights(onehot({0, 0, 2}, 4));
  CHECK(cw.present[0]);
  CHECK_FALSE(cw.present[1]);
  CHECK(cw.present[2]);
  CHECK_FALSE(cw.present[3]);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(cw.weights.at(i, 1) == 0.0);
    CHECK(cw.weights.at(i, 3) == 0.0);
  }
  Tensor bad = Tensor::from_data({1, 2}, {0.9, 0.3});
  CHECK_THROWS_AS(class_weights(bad), TensorError);
}

TEST_CASE("label smoothing values and argmax preservation") {
  Tensor y = onehot({0}, 10);
  Tensor s0 = smooth_labels(y, 0.0);
  for (std::size_t c = 0; c < 10; ++c) CHECK(s0.at(0, c) == y.at(0, c));

  Tensor s = smooth_labels(y, 0.1);
  CHECK(s.at(0, 0) == doctest::Approx(0.91).epsilon(1e-14));
  for (std::size_t c = 1; c < 10; ++c) CHECK(s.at(0, c) == doctest::Approx(0.01).epsilon(1e-14));
  double row = 0.0;
  for (std::size_t c = 0; c < 10; ++c) row += s.at(0, c);
  CHECK(row == doctest::Approx(1.0).epsilon(1e-14));

  Tensor near_uniform = smooth_labels(y, 0.999999);
  for (std::size_t c = 0; c < 10; ++c)
    CHECK(near_uniform.at(0, c) == doctest::Approx(0.1).epsilon(1e-4));

  // Argmax survives any eps below (n_c - 1) / n_c.
  Tensor edge = smooth_labels(y, 0.89);
  for (std::size_t c = 1; c < 10; ++c) CHECK(edge.at(0, 0) > edge.at(0, c));

  CHECK_THROWS_AS(smooth_labels(y, -0.1), TensorError);
  CHECK_THROWS_AS(smooth_labels(y, 1.0), TensorError);
}

TEST_CASE("smoothed cross-entropy reduces to plain cross-entropy at eps 0") {
  std::mt19937_64 rng(47);
  Tape::active().clear();
  Tensor logits = random_tensor({4, 3}, rng, -2.0, 2.0);
  Tensor labels = onehot({2, 0, 1, 2}, 3);
  const double got = smoothed_ce(logits, labels, 0.0).value();
  // Independent computation with explicit row softmax.
  double expect = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    double mx = logits.at(i, 0);
    for (std::size_t c = 1; c < 3; ++c) mx = std::max(mx, logits.at(i, c));
    double z = 0.0;
    for (std::size_t c = 0; c < 3; ++c) z += std::exp(logits.at(i, c) - mx);
    std::size_t label = 0;
    for (std::size_t c = 0; c < 3; ++c)
      if (labels.at(i, c) == 1.0) label = c;
    expect -= logits.at(i, label) - mx - std::log(z);
  }
  CHECK(got == doctest::Approx(expect / 4.0).epsilon(1e-12));
}

TEST_CASE("uniform logits cost log(n_c) regardless of smoothing") {
  Tensor logits = Tensor::full({3, 7}, 1.3);
  Tensor labels = onehot({0, 3, 6}, 7);
  for (double eps : {0.0, 0.1, 0.5})
    CHECK(smoothed_ce(logits, labels, eps).value() ==
          doctest::Approx(std::log(7.0)).epsilon(1e-12));
}

TEST_CASE("smoothed cross-entropy sits above the smoothed-target entropy floor") {
  std::mt19937_64 rng(48);
  NoGradGuard guard;
  for (int rep = 0; rep < 5; ++rep) {
    Tensor logits = random_tensor({6, 4}, rng, -3.0, 3.0);
    Tensor labels = onehot({0, 1, 2, 3, 1, 2}, 4);
    const double eps = 0.1;
    Tensor s = smooth_labels(labels, eps);
    double floor = 0.0;
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t c = 0; c < 4; ++c)
        floor -= s.at(i, c) * std::log(s.at(i, c));
    floor /= 6.0;
    CHECK(smoothed_ce(logits, labels, eps).value() >= floor - 1e-12);
  }
}

TEST_CASE("smoothed cross-entropy gradient matches finite differences") {
  std::mt19937_64 rng(49);
  Tensor logits = random_tensor({4, 3}, rng, -2.0, 2.0);
  logits.set_requires_grad(true);
  Tensor labels = onehot({2, 0, 1, 2}, 3);
  auto res = grad_check([&]() { return smoothed_ce(logits, labels, 0.1); }, {logits});
  CHECK_MESSAGE(res.passed, res.worst);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("class-weighted discrepancy vanishes for identical batches and labels") {
  std::mt19937_64 rng(50);
  NoGradGuard guard;
  Tensor f = random_tensor({8, 4}, rng);
  ClassWeights cw = class_weights(onehot({0, 1, 2, 0, 1, 2, 0, 1}, 3));
  auto res = elmmsd(f, f, cw, cw, KernelFamily::defaults());
  CHECK(std::abs(res.value.value()) <= 1e-12);
  CHECK(res.shared_classes == 3);
  CHECK_FALSE(res.no_shared_class);
}

TEST_CASE("concentrated weights reduce to single-pair discrepancies") {
  std::mt19937_64 rng(51);
  NoGradGuard guard;
  KernelFamily fam = KernelFamily::defaults();
  Tensor fs = random_tensor({4, 3}, rng);
  Tensor ft = random_tensor({4, 3}, rng);
  // One sample per domain per class: classes 0 and 1 live at rows {0, 2}.
  ClassWeights ws = class_weights(onehot({0, 1, 1, 0}, 2));
  ws.weights = Tensor::from_data({4, 2}, {1, 0, 0, 1, 0, 0, 0, 0});
  ClassWeights wt = class_weights(onehot({0, 1, 1, 0}, 2));
  wt.weights = Tensor::from_data({4, 2}, {0, 0, 0, 0, 0, 1, 1, 0});
  auto res = elmmsd(fs, ft, ws, wt, fam);
  // Class 0: source row 0 vs target row 3; class 1: source row 1 vs target row 2.
  const double c0 = 2.0 - 2.0 * kernel_scalar(fs, 0, ft, 3, fam, true);
  const double c1 = 2.0 - 2.0 * kernel_scalar(fs, 1, ft, 2, fam, true);
  CHECK(res.value.value() == doctest::Approx((c0 + c1) / 2.0).epsilon(1e-12));
}

TEST_CASE("class-weighted discrepancy matches the brute-force oracle") {
  std::mt19937_64 rng(52);
  NoGradGuard guard;
  KernelFamily fam = KernelFamily::defaults();
  Tensor fs = random_tensor({12, 5}, rng);
  Tensor ft = random_tensor({12, 5}, rng, -0.5, 1.5);
  ClassWeights ws = class_weights(random_soft_labels(12, 3, rng));
  ClassWeights wt = class_weights(random_soft_labels(12, 3, rng));
  auto res = elmmsd(fs, ft, ws, wt, fam);
  CHECK(res.value.value() ==
        doctest::Approx(weighted_oracle(fs, ft, ws, wt, fam, true)).epsilon(1e-13));
  auto lm = lmmd_baseline(fs, ft, ws, wt, fam);
  CHECK(lm.value.value() ==
        doctest::Approx(weighted_oracle(fs, ft, ws, wt, fam, false)).epsilon(1e-13));
}

TEST_CASE("no shared class yields zero with a warning flag") {
  std::mt19937_64 rng(53);
  NoGradGuard guard;
  Tensor fs = random_tensor({3, 4}, rng);
  Tensor ft = random_tensor({3, 4}, rng);
  ClassWeights ws = class_weights(onehot({0, 0, 0}, 2));
  ClassWeights wt = class_weights(onehot({1, 1, 1}, 2));
  auto res = elmmsd(fs, ft, ws, wt, KernelFamily::defaults());
  CHECK(res.value.value() == 0.0);
  CHECK(res.no_shared_class);
  CHECK(res.shared_classes == 0);
}

TEST_CASE("weighted discrepancies are permutation invariant") {
  std::mt19937_64 rng(54);
  NoGradGuard guard;
  KernelFamily fam = KernelFamily::defaults();
  Tensor fs = random_tensor({6, 4}, rng);
  Tensor ft = random_tensor({5, 4}, rng);
  Tensor ys = random_soft_labels(6, 3, rng);
  Tensor yt = random_soft_labels(5, 3, rng);
  const double base =
      elmmsd(fs, ft, class_weights(ys), class_weights(yt), fam).value.value();

  const std::vector<std::size_t> perm{4, 2, 0, 5, 1, 3};
  std::vector<double> pf(6 * 4), py(6 * 3);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t t = 0; t < 4; ++t) pf[i * 4 + t] = fs.at(perm[i], t);
    for (std::size_t c = 0; c < 3; ++c) py[i * 3 + c] = ys.at(perm[i], c);
  }
  Tensor pfs = Tensor::from_data({6, 4}, std::move(pf));
  Tensor pys = Tensor::from_data({6, 3}, std::move(py));
  const double permuted =
      elmmsd(pfs, ft, class_weights(pys), class_weights(yt), fam).value.value();
  CHECK(permuted == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("unsquared baseline equals squared version on 0/1 kernels") {
  NoGradGuard guard;
  // Points either coincide (k=1) or sit far beyond a tiny bandwidth (k
  // underflows to exactly 0), making k^2 == k everywhere.
  KernelFamily fam = single_bandwidth(0.001);
  Tensor fs = Tensor::from_data({4, 1}, {0.0, 0.0, 5.0, 5.0});
  Tensor ft = Tensor::from_data({4, 1}, {0.0, 5.0, 5.0, 10.0});
  ClassWeights ws = class_weights(onehot({0, 1, 0, 1}, 2));
  ClassWeights wt = class_weights(onehot({1, 0, 0, 1}, 2));
  const double a = elmmsd(fs, ft, ws, wt, fam).value.value();
  const double b = lmmd_baseline(fs, ft, ws, wt, fam).value.value();
  CHECK(a == doctest::Approx(b).epsilon(1e-15));
}

TEST_CASE("feature gradients of the weighted discrepancy match finite differences") {
  std::mt19937_64 rng(55);
  Tensor fs = random_tensor({5, 3}, rng);
  Tensor ft = random_tensor({4, 3}, rng);
  fs.set_requires_grad(true);
  ft.set_requires_grad(true);
  ClassWeights ws = class_weights(onehot({0, 1, 0, 1, 0}, 2));
  ClassWeights wt = class_weights(onehot({1, 0, 1, 0}, 2));
  KernelFamily fam;
  fam.bandwidths = {1.0, 10.0};
  fam.mixture_weights = {0.5, 0.5};
  auto res = grad_check([&]() { return elmmsd(fs, ft, ws, wt, fam).value; }, {fs, ft});
  CHECK_MESSAGE(res.passed, res.worst);

  res = grad_check([&]() { return mmsd_biased(fs, ft, fam); }, {fs, ft});
  CHECK_MESSAGE(res.passed, res.worst);
}

TEST_CASE("combined loss with lambda 0 is the classification term alone") {
  std::mt19937_64 rng(56);
  Tape::active().clear();
  Tensor logits = random_tensor({4, 3}, rng, -2.0, 2.0);
  Tensor labels = onehot({0, 1, 2, 0}, 3);
  Tensor f1s = random_tensor({4, 6}, rng), f1t = random_tensor({4, 6}, rng);
  Tensor f2s = random_tensor({4, 5}, rng), f2t = random_tensor({4, 5}, rng);
  ClassWeights ws = class_weights(smooth_labels(labels, 0.1));
  ClassWeights wt = class_weights(random_soft_labels(4, 3, rng));
  LossBreakdown bd;
  Tensor loss = sda_loss(logits, labels, f1s, f1t, f2s, f2t, ws, wt,
                         KernelFamily::defaults(), 0.1, 0.0,
                         SdaDiscrepancy::kElmmsd, &bd);
  CHECK(loss.value() == doctest::Approx(smoothed_ce(logits, labels, 0.1).value())
                            .epsilon(1e-14));
  CHECK(bd.lambda_sda == 0.0);
}

TEST_CASE("combined loss is the exact sum of its recorded parts") {
  std::mt19937_64 rng(57);
  Tape::active().clear();
  Tensor logits = random_tensor({6, 3}, rng, -2.0, 2.0);
  Tensor labels = onehot({0, 1, 2, 0, 1, 2}, 3);
  Tensor f1s = random_tensor({6, 6}, rng), f1t = random_tensor({6, 6}, rng);
  Tensor f2s = random_tensor({6, 5}, rng), f2t = random_tensor({6, 5}, rng);
  ClassWeights ws = class_weights(smooth_labels(labels, 0.1));
  ClassWeights wt = class_weights(random_soft_labels(6, 3, rng));
  KernelFamily fam = KernelFamily::defaults();

  for (auto kind : {SdaDiscrepancy::kElmmsd, SdaDiscrepancy::kMmsd, SdaDiscrepancy::kLmmd}) {
    LossBreakdown bd;
    Tensor loss = sda_loss(logits, labels, f1s, f1t, f2s, f2t, ws, wt, fam, 0.1,
                           1.3, kind, &bd);
    CHECK(std::abs(loss.value() - (bd.cls + 1.3 * (bd.d_fc1 + bd.d_fc2))) <= 1e-12);
    CHECK(bd.total == loss.value());
  }
}

TEST_CASE("combined loss differentiates through logits and features") {
  std::mt19937_64 rng(58);
  Tensor logits = random_tensor({4, 3}, rng, -2.0, 2.0);
  Tensor labels = onehot({0, 1, 2, 0}, 3);
  Tensor f1s = random_tensor({4, 4}, rng), f1t = random_tensor({4, 4}, rng);
  Tensor f2s = random_tensor({4, 3}, rng), f2t = random_tensor({4, 3}, rng);
  for (Tensor t : {logits, f1s, f1t, f2s, f2t}) t.set_requires_grad(true);
  ClassWeights ws = class_weights(smooth_labels(labels, 0.1));
  ClassWeights wt = class_weights(random_soft_labels(4, 3, rng));
  KernelFamily fam;
  fam.bandwidths = {1.0, 10.0};
  fam.mixture_weights = {0.5, 0.5};
  auto res = grad_check(
      [&]() {
        return sda_loss(logits, labels, f1s, f1t, f2s, f2t, ws, wt, fam, 0.1, 0.7);
      },
      {logits, f1s, f1t, f2s, f2t});
  CHECK_MESSAGE(res.passed, res.worst);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("adaptation schedule endpoints and shape") {
  CHECK(lambda_sda(0, 40) == 0.0);
  // One past the final epoch hits the asymptote exactly.
  CHECK(lambda_sda(41, 40) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(lambda_sda(3, 3) == doctest::Approx(1.856406460551).epsilon(1e-9));

  double prev = -1.0;
  for (std::size_t e = 0; e <= 40; ++e) {
    const double v = lambda_sda(e, 40);
    CHECK(v >= prev);
    CHECK(v >= 0.0);
    CHECK(v < 2.0);
    prev = v;
  }
  CHECK_THROWS_AS(lambda_sda(0, 0), TensorError);
}
