#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "kavi/data.hpp"
#include "kavi/discrepancy.hpp"
#include "kavi/distillation.hpp"
#include "kavi/models.hpp"

namespace kavi {

// Training variants: the full joint method, its decompositions into
// sequential phases, the student adapted on its own, and the two
// discrepancy-statistic substitutions.
enum class AblationMode {
  kKavi,
  kSdaThenKd,
  kKdThenSda,
  kSdaOnly,
  kMmsdBaseline,
  kLmmdBaseline,
  kNoLabelSmoothing,
};

std::string ablation_mode_name(AblationMode mode);
AblationMode parse_ablation_mode(const std::string& name);

struct ExperimentConfig {
  TeacherConfig teacher;
  StudentConfig student;
  DistillationConfig distill;
  KernelFamily kernels = KernelFamily::defaults();
  double eps = 0.1;  // label smoothing coefficient
  std::size_t batch_size = 128;
  double learning_rate = 0.001;
  std::size_t epochs = 40;
  SplitRatios split;
  std::uint64_t seed = 0;
  AblationMode ablation_mode = AblationMode::kKavi;

  // eps with the mode applied: the hard-label mode forces it to zero.
  double resolved_eps() const;
  void validate() const;
};

// Plain stochastic gradient descent. step() applies p -= lr * grad to every
// registered parameter that accumulated a gradient and touches nothing else.
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Tensor> parameters, double learning_rate);

  void step();
  void zero_grad();
  const std::vector<Tensor>& parameters() const { return params_; }

 private:
  std::vector<Tensor> params_;
  double lr_;
};

// One optimization step. Fields not exercised by the active mode or phase
// stay zero; total always equals the value whose gradient was applied.
struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double cls = 0.0;    // smoothed cross-entropy inside the adaptation loss
  double d_fc1 = 0.0;  // feature discrepancy, first aligned layer
  double d_fc2 = 0.0;  // feature discrepancy, second aligned layer
  double sda = 0.0;    // cls + lambda_sda * (d_fc1 + d_fc2)
  double kd_target = 0.0;
  double kd_source = 0.0;
  double lambda_sda = 0.0;
  double lambda_e = 0.0;
  double total = 0.0;
};

// Per-epoch summary. Accuracy fields are negative when the mode never builds
// that model; a model that exists is always evaluated, trained or not.
struct EpochRecord {
  std::size_t epoch = 0;
  double mean_total = 0.0;
  double lambda_sda = 0.0;
  double lambda_e = 0.0;
  double teacher_val_accuracy = -1.0;
  double student_val_accuracy = -1.0;
};

struct TrainResult {
  std::optional<TeacherModel> teacher;  // absent in the mode without one
  StudentModel student;
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;

  // The splits actually trained and validated on; test parts were never
  // touched and are safe for held-out evaluation.
  DatasetSplits source;
  DatasetSplits target;

  // Deep-copied snapshots at the best source-validation epoch per model,
  // restorable with restore_state. Empty when that model was never built.
  std::vector<NamedTensor> best_teacher_state;
  std::vector<NamedTensor> best_student_state;
  std::size_t best_teacher_epoch = 0;
  std::size_t best_student_epoch = 0;
  double best_teacher_val_accuracy = -1.0;
  double best_student_val_accuracy = -1.0;

  double final_lambda_sda = 0.0;
  double final_lambda_e = 0.0;
};

// Non-finite loss or activation during training; carries where it happened.
class DivergenceError : public TensorError {
 public:
  DivergenceError(const std::string& what, std::size_t epoch, std::size_t step);

  std::size_t epoch() const { return epoch_; }
  std::size_t step() const { return step_; }

 private:
  std::size_t epoch_;
  std::size_t step_;
};

// Softmax rows of the teacher's logits on a model-ready batch, forwarded in
// inference mode with no tape recording. Used only to weight subdomains.
Tensor generate_pseudo_labels(TeacherModel& teacher, const Tensor& inputs);

// Argmax accuracy over a dataset, forwarding standardized segments in
// deterministic chunks in inference mode. Ties pick the lowest class index.
double eval_accuracy(TeacherModel& model, const SignalDataset& ds, std::size_t batch_size);
double eval_accuracy(StudentModel& model, const SignalDataset& ds, std::size_t batch_size);

// Detached deep copies of a model state, suitable for restore_state later.
std::vector<NamedTensor> clone_state(const std::vector<NamedTensor>& state);

// Runs the experiment the config describes: splits both domains, trains
// according to ablation_mode, and returns models, logs, and best states.
// Throws DivergenceError when a loss or activation goes non-finite.
TrainResult train_kavi(const ExperimentConfig& cfg, const SignalDataset& source,
                       const SignalDataset& target);

// train_kavi already dispatches on cfg.ablation_mode; alias for call sites
// that emphasize the mode.
TrainResult train_ablation(const ExperimentConfig& cfg, const SignalDataset& source,
                           const SignalDataset& target);

// No-adaptation reference: the teacher trains on the smoothed source
// classification loss alone; the student is constructed but never stepped.
// Splits, logs, and best-snapshot handling match train_kavi, so the result
// drops into the same evaluation machinery.
TrainResult train_source_only(const ExperimentConfig& cfg, const SignalDataset& source,
                              const SignalDataset& target);

// One JSON object per line: every step record, then every epoch record.
void write_metrics_jsonl(std::ostream& out, const TrainResult& result);

}  // namespace kavi
