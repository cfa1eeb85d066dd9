#pragma once

#include <cstddef>

#include "kavi/tensor.hpp"

namespace kavi {

struct DistillationConfig {
  double tau = 20.0;
  double lambda_cls = 0.8;
  double alpha1 = 0.1;
  double alpha2 = 0.9;
  // Scales KL terms by tau^2 so soft-target gradients keep a
  // temperature-independent magnitude. Off reproduces the literal objective.
  bool tau_squared = true;
  // Swaps the KL argument order to the conventional teacher-first direction.
  bool kl_reverse = false;

  void validate() const;
};

// Softmax of logits / tau per row.
Tensor temp_softmax(const Tensor& logits, double tau);

// KL between softened student and teacher rows, averaged over the batch.
// Teacher logits are detached inside: no gradient ever reaches them.
Tensor kd_target_loss(const Tensor& student_logits, const Tensor& teacher_logits,
                      const DistillationConfig& cfg);

// Target-style KL on source logits plus lambda_cls times the smoothed
// cross-entropy against the source labels.
Tensor kd_source_loss(const Tensor& student_logits, const Tensor& teacher_logits,
                      const Tensor& labels, const DistillationConfig& cfg, double eps);

// (1 - lambda_e) * L_SDA + lambda_e * (L_KD_target + L_KD_source).
Tensor total_loss(const Tensor& l_sda, const Tensor& l_kd_t, const Tensor& l_kd_s,
                  double lambda_e_value);

// Geometric interpolation from alpha1 at e=0 to alpha2 at e=n_e.
double lambda_e(std::size_t e, std::size_t n_e, double alpha1, double alpha2);

}  // namespace kavi
