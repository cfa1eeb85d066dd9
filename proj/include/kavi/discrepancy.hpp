#pragma once

#include <cstddef>
#include <vector>

#include "kavi/tensor.hpp"

namespace kavi {

// Mixture of Gaussian kernels k(x,y) = sum_u mu_u exp(-||x-y||^2 / (2 sigma_u^2)).
struct KernelFamily {
  std::vector<double> bandwidths;
  std::vector<double> mixture_weights;

  // Bandwidths {0.001, 0.01, 1, 10, 100} with uniform mixture weights.
  static KernelFamily defaults();
  void validate() const;
};

// Mixture kernel matrix between row sets; `squared` squares the mixture
// elementwise (the tensor-product kernel the biased statistic uses).
// Differentiable with respect to both inputs.
Tensor kernel_matrix(const Tensor& x, const Tensor& y, const KernelFamily& family,
                     bool squared);

// Biased squared-kernel discrepancy: mean(Kss) + mean(Ktt) - 2 mean(Kst).
Tensor mmsd_biased(const Tensor& xs, const Tensor& xt, const KernelFamily& family);

// Per-sample class weights w[i][c] = y[i][c] / sum_j y[j][c]. Classes with no
// mass in the batch get zero columns and are flagged absent.
struct ClassWeights {
  Tensor weights;              // n x n_c, constant (never differentiated)
  std::vector<bool> present;   // per class
};
ClassWeights class_weights(const Tensor& label_dists);

// S(y) = (1 - eps) y + eps / n_c, rows stay probability vectors.
Tensor smooth_labels(const Tensor& labels, double eps);

// Cross-entropy against smoothed targets, averaged over the batch.
Tensor smoothed_ce(const Tensor& logits, const Tensor& labels, double eps);

struct DiscrepancyResult {
  Tensor value;                    // scalar
  std::size_t shared_classes = 0;  // classes with mass in both domains
  bool no_shared_class = false;
};

// Class-weighted discrepancy (1/n_c) sum_c [ws_c' K ws_c + wt_c' K wt_c
// - 2 ws_c' K wt_c] over squared kernels. Classes missing from either domain
// contribute nothing. Differentiable with respect to the features.
DiscrepancyResult elmmsd(const Tensor& features_s, const Tensor& features_t,
                         const ClassWeights& ws, const ClassWeights& wt,
                         const KernelFamily& family);

// Same weighted form over unsquared kernels; callers supply hard-label
// weights to reproduce the baseline.
DiscrepancyResult lmmd_baseline(const Tensor& features_s, const Tensor& features_t,
                                const ClassWeights& ws, const ClassWeights& wt,
                                const KernelFamily& family);

enum class SdaDiscrepancy { kElmmsd, kMmsd, kLmmd };

struct LossBreakdown {
  double cls = 0.0;
  double d_fc1 = 0.0;
  double d_fc2 = 0.0;
  double lambda_sda = 0.0;
  double total = 0.0;
  bool no_shared_class = false;
};

// L = smoothed_ce(logits_s, labels_s) + lambda * (d_fc1 + d_fc2), with the
// discrepancy measured at both feature levels by the chosen statistic.
Tensor sda_loss(const Tensor& logits_s, const Tensor& labels_s,
                const Tensor& fc1_s, const Tensor& fc1_t,
                const Tensor& fc2_s, const Tensor& fc2_t,
                const ClassWeights& ws, const ClassWeights& wt,
                const KernelFamily& family, double eps, double lambda,
                SdaDiscrepancy kind = SdaDiscrepancy::kElmmsd,
                LossBreakdown* breakdown = nullptr);

// Adaptation trade-off schedule: -4 / (sqrt(e / (n_e + 1)) + 1) + 4.
// Zero at e = 0, approaches 2 from below.
double lambda_sda(std::size_t e, std::size_t n_e);

}  // namespace kavi
