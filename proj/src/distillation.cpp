#include "kavi/distillation.hpp"

#include <cmath>

#include "kavi/discrepancy.hpp"
#include "kavi/ops.hpp"

namespace kavi {

void DistillationConfig::validate() const {
  if (tau <= 0.0) throw TensorError("distillation: temperature must be positive");
  if (lambda_cls < 0.0 || lambda_cls > 1.0)
    throw TensorError("distillation: lambda_cls must lie in [0, 1]");
  if (!(alpha1 > 0.0 && alpha1 <= alpha2 && alpha2 < 1.0))
    throw TensorError("distillation: need 0 < alpha1 <= alpha2 < 1");
}

Tensor temp_softmax(const Tensor& logits, double tau) {
  if (tau <= 0.0) throw TensorError("temp_softmax: temperature must be positive");
  return softmax_rows(mul(logits, 1.0 / tau));
}

namespace {

// Batch-mean KL between softened rows. The teacher side is constant.
Tensor softened_kl(const Tensor& student_logits, const Tensor& teacher_logits,
                   const DistillationConfig& cfg) {
  cfg.validate();
  if (student_logits.shape() != teacher_logits.shape())
    throw TensorError("distillation: student and teacher logits differ in shape, " +
                      shape_to_string(student_logits.shape()) + " vs " +
                      shape_to_string(teacher_logits.shape()));
  const double inv_tau = 1.0 / cfg.tau;
  Tensor ls = log_softmax_rows(mul(student_logits, inv_tau));
  Tensor lt = log_softmax_rows(mul(teacher_logits.detach(), inv_tau));
  Tensor kl;
  if (cfg.kl_reverse) {
    Tensor qt = softmax_rows(mul(teacher_logits.detach(), inv_tau));
    kl = sum(mul(qt, sub(lt, ls)));
  } else {
    Tensor qs = softmax_rows(mul(student_logits, inv_tau));
    kl = sum(mul(qs, sub(ls, lt)));
  }
  double scale = 1.0 / static_cast<double>(student_logits.dim(0));
  if (cfg.tau_squared) scale *= cfg.tau * cfg.tau;
  return mul(kl, scale);
}

}  // namespace

Tensor kd_target_loss(const Tensor& student_logits, const Tensor& teacher_logits,
                      const DistillationConfig& cfg) {
  return softened_kl(student_logits, teacher_logits, cfg);
}

Tensor kd_source_loss(const Tensor& student_logits, const Tensor& teacher_logits,
                      const Tensor& labels, const DistillationConfig& cfg, double eps) {
  Tensor kl = softened_kl(student_logits, teacher_logits, cfg);
  Tensor ce = smoothed_ce(student_logits, labels, eps);
  return add(kl, mul(ce, cfg.lambda_cls));
}

Tensor total_loss(const Tensor& l_sda, const Tensor& l_kd_t, const Tensor& l_kd_s,
                  double lambda_e_value) {
  if (lambda_e_value < 0.0 || lambda_e_value > 1.0)
    throw TensorError("total_loss: lambda_e must lie in [0, 1]");
  return add(mul(l_sda, 1.0 - lambda_e_value),
             mul(add(l_kd_t, l_kd_s), lambda_e_value));
}

double lambda_e(std::size_t e, std::size_t n_e, double alpha1, double alpha2) {
  if (n_e == 0) throw TensorError("lambda_e: epoch count must be positive");
  if (!(alpha1 > 0.0 && alpha1 <= alpha2 && alpha2 < 1.0))
    throw TensorError("lambda_e: need 0 < alpha1 <= alpha2 < 1");
  const double progress = static_cast<double>(e) / static_cast<double>(n_e);
  return alpha1 * std::exp(progress * std::log(alpha2 / alpha1));
}

}  // namespace kavi
