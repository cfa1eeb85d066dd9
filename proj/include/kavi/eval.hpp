#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "kavi/data.hpp"
#include "kavi/models.hpp"
#include "kavi/trainer.hpp"

namespace kavi {

// Row-major counts indexed [true class][predicted class].
struct ConfusionMatrix {
  std::size_t n_classes = 0;
  std::vector<std::size_t> counts;

  std::size_t at(std::size_t truth, std::size_t predicted) const;
  std::size_t row_sum(std::size_t truth) const;
  std::size_t col_sum(std::size_t predicted) const;
  std::size_t trace() const;
  std::size_t total() const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

struct ClassificationResult {
  double accuracy = 0.0;
  ConfusionMatrix confusion;
};

// Argmax predictions against labels over deterministic evaluation chunks;
// ties resolve to the lowest class index. Accuracy equals trace over total.
ClassificationResult accuracy_and_confusion(TeacherModel& model, const SignalDataset& ds,
                                            std::size_t batch_size = 128);
ClassificationResult accuracy_and_confusion(StudentModel& model, const SignalDataset& ds,
                                            std::size_t batch_size = 128);

// Diagonal over column sum / row sum; empty denominators yield zero.
std::vector<double> precision_per_class(const ConfusionMatrix& confusion);
std::vector<double> recall_per_class(const ConfusionMatrix& confusion);

// Domain-separability estimate from a linear probe: a hinge-loss linear
// classifier trained by deterministic subgradient descent on a fixed-seed
// 50/50 split tries to tell source features from target features. The
// held-out error maps through 2(1 - 2*zeta); `value` clips zeta to [0, 0.5]
// first so sampling noise cannot drive the reported distance negative, `raw`
// keeps the unclipped map.
struct ADistance {
  double value = 0.0;
  double raw = 0.0;
  double error = 0.5;  // held-out probe error
};

ADistance a_distance(const Tensor& features_s, const Tensor& features_t);

// The clipped map itself.
double a_distance_from_error(double zeta);

// Class-conditional variant: one probe per class shared by both domains,
// combined as 2 * sum_c p(c) (1 - 2 zeta_c) with p taken from the target
// labels. Classes lacking two samples on either side are excluded and the
// remaining priors renormalized.
struct ALDistance {
  double value = 0.0;
  double raw = 0.0;
  std::vector<double> priors;        // renormalized; zero for excluded classes
  std::vector<double> class_errors;  // held-out probe error, -1 for excluded
  std::vector<bool> included;
  bool any_excluded = false;
};

ALDistance a_l_distance(const Tensor& features_s, const std::vector<std::size_t>& labels_s,
                        const Tensor& features_t,
                        const std::vector<std::size_t>& pseudo_labels_t,
                        std::size_t n_classes);

double a_l_distance_from_errors(const std::vector<double>& zetas,
                                const std::vector<double>& priors);

// Evaluation-mode forward over a dataset collecting the deepest shared head
// activation (the one the alignment loss ends on) plus argmax predictions.
struct TeacherFeatures {
  Tensor fc2;
  std::vector<std::size_t> predictions;
};

TeacherFeatures extract_teacher_features(TeacherModel& model, const SignalDataset& ds,
                                         std::size_t batch_size = 128);

// Stable fingerprint over every experiment hyperparameter.
std::string config_hash(const ExperimentConfig& cfg);

struct EvalReport {
  std::string subject;  // which model the classification block describes
  std::string config_hash;
  std::size_t n_classes = 0;
  double accuracy = 0.0;
  ConfusionMatrix confusion;
  std::vector<double> precision;
  std::vector<double> recall;
  bool has_distances = false;  // false when the run trained no teacher
  double a_distance_value = 0.0;
  double a_distance_raw = 0.0;
  double a_l_distance_value = 0.0;
  double a_l_distance_raw = 0.0;
  bool a_l_excluded_class = false;
  CostReport teacher_cost;
  CostReport student_cost;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

// Restores each model to its best validation snapshot, measures the student
// on the held-out target test split, and derives the discrepancy metrics
// from the restored teacher's features on the two test splits.
EvalReport evaluate_experiment(TrainResult& result, const ExperimentConfig& cfg,
                               std::size_t batch_size = 128);

// Writes `<base_path>.txt` (human-readable) and `<base_path>.jsonl`
// (machine-readable, one record line). Rejects reports with an empty
// confusion matrix or an accuracy inconsistent with it.
void emit_report(const EvalReport& report, const std::string& base_path);

// Reads back a record written by emit_report; round-trips exactly.
EvalReport parse_report(const std::string& jsonl_path);

}  // namespace kavi
