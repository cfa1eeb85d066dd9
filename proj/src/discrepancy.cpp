#include "kavi/discrepancy.hpp"

#include <cmath>
#include <string>

#include "kavi/ops.hpp"

namespace kavi {

KernelFamily KernelFamily::defaults() {
  KernelFamily f;
  f.bandwidths = {0.001, 0.01, 1.0, 10.0, 100.0};
  f.mixture_weights.assign(f.bandwidths.size(), 1.0 / f.bandwidths.size());
  return f;
}

void KernelFamily::validate() const {
  if (bandwidths.empty()) throw TensorError("kernel family: no bandwidths");
  if (bandwidths.size() != mixture_weights.size())
    throw TensorError("kernel family: bandwidth and weight counts differ");
  double total = 0.0;
  for (double b : bandwidths)
    if (b <= 0.0) throw TensorError("kernel family: bandwidths must be positive");
  for (double w : mixture_weights) {
    if (w < 0.0) throw TensorError("kernel family: mixture weights must be nonnegative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw TensorError("kernel family: mixture weights must sum to 1");
}

Tensor kernel_matrix(const Tensor& x, const Tensor& y, const KernelFamily& family,
                     bool squared) {
  family.validate();
  Tensor d = pairwise_sqdist(x, y);
  Tensor k;
  for (std::size_t u = 0; u < family.bandwidths.size(); ++u) {
    const double sigma = family.bandwidths[u];
    Tensor term = mul(exp(mul(d, -0.5 / (sigma * sigma))), family.mixture_weights[u]);
    k = k.defined() ? add(k, term) : term;
  }
  return squared ? mul(k, k) : k;
}

Tensor mmsd_biased(const Tensor& xs, const Tensor& xt, const KernelFamily& family) {
  if (xs.rank() != 2 || xt.rank() != 2 || xs.dim(0) == 0 || xt.dim(0) == 0)
    throw TensorError("mmsd_biased: both domains need at least one sample");
  Tensor kss = kernel_matrix(xs, xs, family, true);
  Tensor ktt = kernel_matrix(xt, xt, family, true);
  Tensor kst = kernel_matrix(xs, xt, family, true);
  return add(mean(kss), sub(mean(ktt), mul(mean(kst), 2.0)));
}

ClassWeights class_weights(const Tensor& label_dists) {
  if (label_dists.rank() != 2)
    throw TensorError("class_weights: label distributions must be rank-2");
  const std::size_t n = label_dists.dim(0), nc = label_dists.dim(1);
  const auto& y = label_dists.data();
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t c = 0; c < nc; ++c) {
      if (y[i * nc + c] < -1e-12)
        throw TensorError("class_weights: negative label probability");
      row += y[i * nc + c];
    }
    if (std::abs(row - 1.0) > 1e-6)
      throw TensorError("class_weights: row " + std::to_string(i) +
                        " is not a probability vector");
  }
  ClassWeights cw;
  cw.present.assign(nc, false);
  std::vector<double> w(n * nc, 0.0);
  for (std::size_t c = 0; c < nc; ++c) {
    double mass = 0.0;
    for (std::size_t i = 0; i < n; ++i) mass += y[i * nc + c];
    if (mass <= 0.0) continue;
    cw.present[c] = true;
    for (std::size_t i = 0; i < n; ++i) w[i * nc + c] = y[i * nc + c] / mass;
  }
  cw.weights = Tensor::from_data({n, nc}, std::move(w));
  return cw;
}

Tensor smooth_labels(const Tensor& labels, double eps) {
  if (labels.rank() != 2) throw TensorError("smooth_labels: labels must be rank-2");
  if (eps < 0.0 || eps >= 1.0)
    throw TensorError("smooth_labels: smoothing coefficient must lie in [0, 1)");
  const std::size_t nc = labels.dim(1);
  std::vector<double> out(labels.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = (1.0 - eps) * labels.data()[i] + eps / static_cast<double>(nc);
  return Tensor::from_data(labels.shape(), std::move(out));
}

Tensor smoothed_ce(const Tensor& logits, const Tensor& labels, double eps) {
  if (logits.shape() != labels.shape())
    throw TensorError("smoothed_ce: logits and labels must share a shape");
  Tensor targets = smooth_labels(labels, eps);
  Tensor lt = log_softmax_rows(logits);
  const double inv_n = 1.0 / static_cast<double>(logits.dim(0));
  return mul(sum(mul(targets, lt)), -inv_n);
}

namespace {

// Constant per-domain quadratic-form weights: W = sum_c outer(w_c, w_c) over
// classes shared by both domains, so one elementwise product against the
// kernel matrix evaluates all per-class double sums at once.
Tensor pair_weight_matrix(const ClassWeights& a, const ClassWeights& b,
                          const std::vector<bool>& shared) {
  const std::size_t na = a.weights.dim(0), nb = b.weights.dim(0);
  const std::size_t nc = a.weights.dim(1);
  std::vector<double> w(na * nb, 0.0);
  for (std::size_t c = 0; c < nc; ++c) {
    if (!shared[c]) continue;
    for (std::size_t i = 0; i < na; ++i) {
      const double wi = a.weights.data()[i * nc + c];
      if (wi == 0.0) continue;
      for (std::size_t j = 0; j < nb; ++j)
        w[i * nb + j] += wi * b.weights.data()[j * nc + c];
    }
  }
  return Tensor::from_data({na, nb}, std::move(w));
}

DiscrepancyResult weighted_discrepancy(const Tensor& fs, const Tensor& ft,
                                       const ClassWeights& ws, const ClassWeights& wt,
                                       const KernelFamily& family, bool squared) {
  if (fs.rank() != 2 || ft.rank() != 2)
    throw TensorError("weighted discrepancy: features must be rank-2");
  if (ws.weights.dim(0) != fs.dim(0) || wt.weights.dim(0) != ft.dim(0))
    throw TensorError("weighted discrepancy: weights and features disagree on batch size");
  if (ws.weights.dim(1) != wt.weights.dim(1))
    throw TensorError("weighted discrepancy: class counts differ between domains");
  const std::size_t nc = ws.weights.dim(1);

  DiscrepancyResult res;
  std::vector<bool> shared(nc, false);
  for (std::size_t c = 0; c < nc; ++c) {
    shared[c] = ws.present[c] && wt.present[c];
    if (shared[c]) ++res.shared_classes;
  }
  if (res.shared_classes == 0) {
    res.no_shared_class = true;
    res.value = Tensor::scalar(0.0);
    return res;
  }

  Tensor kss = kernel_matrix(fs, fs, family, squared);
  Tensor ktt = kernel_matrix(ft, ft, family, squared);
  Tensor kst = kernel_matrix(fs, ft, family, squared);
  Tensor wss = pair_weight_matrix(ws, ws, shared);
  Tensor wtt = pair_weight_matrix(wt, wt, shared);
  Tensor wst = pair_weight_matrix(ws, wt, shared);

  Tensor acc = add(sum(mul(kss, wss)),
                   sub(sum(mul(ktt, wtt)), mul(sum(mul(kst, wst)), 2.0)));
  res.value = mul(acc, 1.0 / static_cast<double>(nc));
  return res;
}

}  // namespace

DiscrepancyResult elmmsd(const Tensor& features_s, const Tensor& features_t,
                         const ClassWeights& ws, const ClassWeights& wt,
                         const KernelFamily& family) {
  return weighted_discrepancy(features_s, features_t, ws, wt, family, true);
}

DiscrepancyResult lmmd_baseline(const Tensor& features_s, const Tensor& features_t,
                                const ClassWeights& ws, const ClassWeights& wt,
                                const KernelFamily& family) {
  return weighted_discrepancy(features_s, features_t, ws, wt, family, false);
}

Tensor sda_loss(const Tensor& logits_s, const Tensor& labels_s,
                const Tensor& fc1_s, const Tensor& fc1_t,
                const Tensor& fc2_s, const Tensor& fc2_t,
                const ClassWeights& ws, const ClassWeights& wt,
                const KernelFamily& family, double eps, double lambda,
                SdaDiscrepancy kind, LossBreakdown* breakdown) {
  Tensor cls = smoothed_ce(logits_s, labels_s, eps);

  Tensor d1, d2;
  bool no_shared = false;
  switch (kind) {
    case SdaDiscrepancy::kElmmsd: {
      auto r1 = elmmsd(fc1_s, fc1_t, ws, wt, family);
      auto r2 = elmmsd(fc2_s, fc2_t, ws, wt, family);
      d1 = r1.value;
      d2 = r2.value;
      no_shared = r1.no_shared_class;
      break;
    }
    case SdaDiscrepancy::kMmsd:
      d1 = mmsd_biased(fc1_s, fc1_t, family);
      d2 = mmsd_biased(fc2_s, fc2_t, family);
      break;
    case SdaDiscrepancy::kLmmd: {
      auto r1 = lmmd_baseline(fc1_s, fc1_t, ws, wt, family);
      auto r2 = lmmd_baseline(fc2_s, fc2_t, ws, wt, family);
      d1 = r1.value;
      d2 = r2.value;
      no_shared = r1.no_shared_class;
      break;
    }
  }

  Tensor total = add(cls, mul(add(d1, d2), lambda));
  if (breakdown) {
    breakdown->cls = cls.value();
    breakdown->d_fc1 = d1.value();
    breakdown->d_fc2 = d2.value();
    breakdown->lambda_sda = lambda;
    breakdown->total = total.value();
    breakdown->no_shared_class = no_shared;
  }
  return total;
}

double lambda_sda(std::size_t e, std::size_t n_e) {
  if (n_e == 0) throw TensorError("lambda_sda: epoch count must be positive");
  const double ratio = static_cast<double>(e) / static_cast<double>(n_e + 1);
  return -4.0 / (std::sqrt(ratio) + 1.0) + 4.0;
}

}  // namespace kavi
