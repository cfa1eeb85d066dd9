#include "kavi/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <string_view>
#include <utility>

#include "json.hpp"

#include "kavi/ops.hpp"

namespace kavi {

std::string ablation_mode_name(AblationMode mode) {
  switch (mode) {
    case AblationMode::kKavi: return "kavi";
    case AblationMode::kSdaThenKd: return "sda_then_kd";
    case AblationMode::kKdThenSda: return "kd_then_sda";
    case AblationMode::kSdaOnly: return "sda_only";
    case AblationMode::kMmsdBaseline: return "mmsd_baseline";
    case AblationMode::kLmmdBaseline: return "lmmd_baseline";
    case AblationMode::kNoLabelSmoothing: return "no_label_smoothing";
  }
  throw TensorError("ablation_mode_name: unknown mode");
}

AblationMode parse_ablation_mode(const std::string& name) {
  for (AblationMode mode :
       {AblationMode::kKavi, AblationMode::kSdaThenKd, AblationMode::kKdThenSda,
        AblationMode::kSdaOnly, AblationMode::kMmsdBaseline, AblationMode::kLmmdBaseline,
        AblationMode::kNoLabelSmoothing}) {
    if (ablation_mode_name(mode) == name) return mode;
  }
  throw TensorError("parse_ablation_mode: unknown mode '" + name + "'");
}

double ExperimentConfig::resolved_eps() const {
  return ablation_mode == AblationMode::kNoLabelSmoothing ? 0.0 : eps;
}

void ExperimentConfig::validate() const {
  if (teacher.n_classes != student.n_classes)
    throw TensorError("ExperimentConfig: teacher and student class counts differ");
  if (teacher.input_len != student.input_len)
    throw TensorError("ExperimentConfig: teacher and student input lengths differ");
  if (!(eps >= 0.0 && eps < 1.0))
    throw TensorError("ExperimentConfig: smoothing coefficient must lie in [0, 1)");
  if (batch_size == 0) throw TensorError("ExperimentConfig: batch size must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw TensorError("ExperimentConfig: learning rate must be positive and finite");
  if (epochs == 0) throw TensorError("ExperimentConfig: epoch count must be positive");
  distill.validate();
  kernels.validate();
}

SgdOptimizer::SgdOptimizer(std::vector<Tensor> parameters, double learning_rate)
    : params_(std::move(parameters)), lr_(learning_rate) {
  if (!(lr_ > 0.0) || !std::isfinite(lr_))
    throw TensorError("SgdOptimizer: learning rate must be positive and finite");
  for (const Tensor& p : params_)
    if (!p.defined() || !p.requires_grad())
      throw TensorError("SgdOptimizer: parameters must be defined and require grad");
}

void SgdOptimizer::step() {
  for (const Tensor& p : params_) {
    if (!p.has_grad()) continue;
    const std::vector<double>& g = p.grad();
    std::vector<double>& v = p.mutable_data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr_ * g[i];
  }
}

void SgdOptimizer::zero_grad() {
  for (const Tensor& p : params_) p.zero_grad();
}

DivergenceError::DivergenceError(const std::string& what, std::size_t epoch, std::size_t step)
    : TensorError("diverged at epoch " + std::to_string(epoch) + ", step " +
                  std::to_string(step) + ": " + what),
      epoch_(epoch),
      step_(step) {}

Tensor generate_pseudo_labels(TeacherModel& teacher, const Tensor& inputs) {
  NoGradGuard guard;
  return softmax_rows(teacher.forward(inputs, false).logits);
}

std::vector<NamedTensor> clone_state(const std::vector<NamedTensor>& state) {
  std::vector<NamedTensor> out;
  out.reserve(state.size());
  for (const auto& [name, tensor] : state) out.emplace_back(name, tensor.detach());
  return out;
}

namespace {

// A model-ready minibatch: standardized rows plus labels when the domain
// contributes supervision.
struct Batch {
  Tensor x;
  Tensor y;
  std::vector<std::size_t> labels;
};

Batch make_batch(const SignalDataset& ds, const std::vector<std::size_t>& indices,
                 bool with_labels) {
  SignalDataset rows = subset(ds, indices);
  Batch out;
  out.x = standardize_segments(rows.segments);
  if (with_labels) {
    out.y = one_hot(rows.labels, ds.n_classes);
    out.labels = std::move(rows.labels);
  }
  return out;
}

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < logits.dim(1); ++c)
    if (logits.at(row, c) > logits.at(row, best)) best = c;
  return best;
}

template <typename Model>
double accuracy_over(Model& model, const SignalDataset& ds, std::size_t batch_size) {
  if (ds.size() == 0) throw TensorError("eval_accuracy: empty dataset");
  if (!ds.labeled()) throw TensorError("eval_accuracy: dataset has no labels");
  if (batch_size == 0) throw TensorError("eval_accuracy: batch size must be positive");
  NoGradGuard guard;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, ds.size() - start);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), start);
    SignalDataset rows = subset(ds, idx);
    Tensor logits = model.forward(standardize_segments(rows.segments), false).logits;
    for (std::size_t r = 0; r < n; ++r)
      if (argmax_row(logits, r) == rows.labels[r]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

// Schedule values in force during a given epoch of the current phase.
using ScheduleFn = std::function<std::pair<double, double>(std::size_t)>;

// Computes the losses for one minibatch, runs backward and the optimizer
// step, and reports the loss parts. Epoch/step/lambda fields are filled by
// the driver.
using StepFn = std::function<StepRecord(const Batch& bs, const Batch& bt,
                                        double lambda_sda_value, double lambda_e_value)>;

class Trainer {
 public:
  Trainer(const ExperimentConfig& cfg, DatasetSplits source, DatasetSplits target,
          bool source_only = false)
      : cfg_(cfg),
        eps_(cfg.resolved_eps()),
        source_only_(source_only),
        src_(std::move(source)),
        tgt_(std::move(target)),
        rng_(cfg.seed + 2) {}

  TrainResult run() {
    if (source_only_ || cfg_.ablation_mode != AblationMode::kSdaOnly)
      teacher_.emplace(cfg_.teacher, cfg_.seed);
    student_.emplace(cfg_.student, cfg_.seed + 1);

    if (source_only_) {
      run_source_only();
      return finish();
    }

    switch (cfg_.ablation_mode) {
      case AblationMode::kKavi:
      case AblationMode::kNoLabelSmoothing:
        run_joint(SdaDiscrepancy::kElmmsd);
        break;
      case AblationMode::kMmsdBaseline:
        run_joint(SdaDiscrepancy::kMmsd);
        break;
      case AblationMode::kLmmdBaseline:
        run_joint(SdaDiscrepancy::kLmmd);
        break;
      case AblationMode::kSdaThenKd:
        run_sda_then_kd();
        break;
      case AblationMode::kKdThenSda:
        run_kd_then_sda();
        break;
      case AblationMode::kSdaOnly:
        run_sda_only();
        break;
    }
    return finish();
  }

 private:
  // The joint objective: teacher adapts under the chosen discrepancy while
  // both distillation losses pull the student along, mixed by lambda_e.
  void run_joint(SdaDiscrepancy kind) {
    const std::size_t n_e = cfg_.epochs;
    opt_.emplace(concat(teacher_->parameters(), student_->parameters()), cfg_.learning_rate);
    run_epochs(
        n_e, true,
        [&](std::size_t e) {
          return std::pair{lambda_sda(e, n_e),
                           lambda_e(e, n_e, cfg_.distill.alpha1, cfg_.distill.alpha2)};
        },
        [&](const Batch& bs, const Batch& bt, double w_sda, double w_e) {
          auto ts = teacher_->forward(bs.x, true);
          auto tt = teacher_->forward(bt.x, true);
          auto ss = student_->forward(bs.x, true);
          auto st = student_->forward(bt.x, true);

          Tensor pseudo = detached_softmax(tt.logits);
          ClassWeights ws = class_weights(
              kind == SdaDiscrepancy::kLmmd ? bs.y : smooth_labels(bs.y, eps_));
          ClassWeights wt = class_weights(pseudo);

          LossBreakdown bd;
          Tensor l_sda = sda_loss(ts.logits, bs.y, ts.fc1, tt.fc1, ts.fc2, tt.fc2, ws, wt,
                                  cfg_.kernels, eps_, w_sda, kind, &bd);
          Tensor l_kdt = kd_target_loss(st.logits, tt.logits, cfg_.distill);
          Tensor l_kds = kd_source_loss(ss.logits, ts.logits, bs.y, cfg_.distill, eps_);
          Tensor total = total_loss(l_sda, l_kdt, l_kds, w_e);

          apply(total);
          StepRecord rec;
          rec.cls = bd.cls;
          rec.d_fc1 = bd.d_fc1;
          rec.d_fc2 = bd.d_fc2;
          rec.sda = bd.total;
          rec.kd_target = l_kdt.value();
          rec.kd_source = l_kds.value();
          rec.total = total.value();
          return rec;
        });
    final_lambda_sda_ = lambda_sda(n_e, n_e);
    final_lambda_e_ = lambda_e(n_e, n_e, cfg_.distill.alpha1, cfg_.distill.alpha2);
  }

  // Phase one adapts the teacher alone; phase two freezes it and trains the
  // student purely on the two distillation losses. The epoch budget is split
  // between the phases so every mode costs the same total optimization work.
  void run_sda_then_kd() {
    const std::size_t n1 = cfg_.epochs / 2;
    const std::size_t n2 = cfg_.epochs - n1;
    opt_.emplace(teacher_->parameters(), cfg_.learning_rate);
    run_epochs(
        n1, true,
        [&](std::size_t e) { return std::pair{lambda_sda(e, n1), 0.0}; },
        [&](const Batch& bs, const Batch& bt, double w_sda, double) {
          auto ts = teacher_->forward(bs.x, true);
          auto tt = teacher_->forward(bt.x, true);
          Tensor pseudo = detached_softmax(tt.logits);
          ClassWeights ws = class_weights(smooth_labels(bs.y, eps_));
          ClassWeights wt = class_weights(pseudo);
          LossBreakdown bd;
          Tensor l_sda = sda_loss(ts.logits, bs.y, ts.fc1, tt.fc1, ts.fc2, tt.fc2, ws, wt,
                                  cfg_.kernels, eps_, w_sda, SdaDiscrepancy::kElmmsd, &bd);
          apply(l_sda);
          StepRecord rec;
          rec.cls = bd.cls;
          rec.d_fc1 = bd.d_fc1;
          rec.d_fc2 = bd.d_fc2;
          rec.sda = bd.total;
          rec.total = bd.total;
          return rec;
        });
    final_lambda_sda_ = lambda_sda(n1, n1);

    opt_.emplace(student_->parameters(), cfg_.learning_rate);
    run_epochs(
        n2, true, [](std::size_t) { return std::pair{0.0, 0.0}; },
        [&](const Batch& bs, const Batch& bt, double, double) {
          Tensor ts_logits, tt_logits;
          {
            // The frozen teacher forwards in inference mode so not even its
            // running statistics move during distillation.
            NoGradGuard guard;
            ts_logits = teacher_->forward(bs.x, false).logits;
            tt_logits = teacher_->forward(bt.x, false).logits;
          }
          auto ss = student_->forward(bs.x, true);
          auto st = student_->forward(bt.x, true);
          Tensor l_kdt = kd_target_loss(st.logits, tt_logits, cfg_.distill);
          Tensor l_kds = kd_source_loss(ss.logits, ts_logits, bs.y, cfg_.distill, eps_);
          Tensor total = add(l_kdt, l_kds);
          apply(total);
          StepRecord rec;
          rec.kd_target = l_kdt.value();
          rec.kd_source = l_kds.value();
          rec.total = total.value();
          return rec;
        });
  }

  // Phase one trains the teacher on source labels while the student distills
  // from it; phase two adapts the student through its own hidden features.
  // The budget splits across the phases just like run_sda_then_kd.
  void run_kd_then_sda() {
    const std::size_t n1 = cfg_.epochs / 2;
    const std::size_t n2 = cfg_.epochs - n1;
    opt_.emplace(concat(teacher_->parameters(), student_->parameters()), cfg_.learning_rate);
    run_epochs(
        n1, false, [](std::size_t) { return std::pair{0.0, 0.0}; },
        [&](const Batch& bs, const Batch&, double, double) {
          auto ts = teacher_->forward(bs.x, true);
          auto ss = student_->forward(bs.x, true);
          Tensor l_cls = smoothed_ce(ts.logits, bs.y, eps_);
          Tensor l_kds = kd_source_loss(ss.logits, ts.logits, bs.y, cfg_.distill, eps_);
          Tensor total = add(l_cls, l_kds);
          apply(total);
          StepRecord rec;
          rec.cls = l_cls.value();
          rec.kd_source = l_kds.value();
          rec.total = total.value();
          return rec;
        });

    opt_.emplace(student_->parameters(), cfg_.learning_rate);
    run_epochs(
        n2, true, [&](std::size_t e) { return std::pair{lambda_sda(e, n2), 0.0}; },
        [&](const Batch& bs, const Batch& bt, double w_sda, double) {
          return student_sda_step(bs, bt, w_sda);
        });
    final_lambda_sda_ = lambda_sda(n2, n2);
  }

  void run_sda_only() {
    const std::size_t n_e = cfg_.epochs;
    opt_.emplace(student_->parameters(), cfg_.learning_rate);
    run_epochs(
        n_e, true, [&](std::size_t e) { return std::pair{lambda_sda(e, n_e), 0.0}; },
        [&](const Batch& bs, const Batch& bt, double w_sda, double) {
          return student_sda_step(bs, bt, w_sda);
        });
    final_lambda_sda_ = lambda_sda(n_e, n_e);
  }

  // Reference run without adaptation: the teacher fits the smoothed source
  // classification loss and never sees target data. The student exists so
  // the result shape matches, but no optimizer touches it.
  void run_source_only() {
    const std::size_t n_e = cfg_.epochs;
    opt_.emplace(teacher_->parameters(), cfg_.learning_rate);
    run_epochs(
        n_e, false, [](std::size_t) { return std::pair{0.0, 0.0}; },
        [&](const Batch& bs, const Batch&, double, double) {
          auto ts = teacher_->forward(bs.x, true);
          Tensor l_cls = smoothed_ce(ts.logits, bs.y, eps_);
          apply(l_cls);
          StepRecord rec;
          rec.cls = l_cls.value();
          rec.total = l_cls.value();
          return rec;
        });
  }

  // Adaptation objective on the student itself. Its single hidden layer
  // stands in for both aligned feature levels, so the discrepancy enters
  // once; pseudo labels come from the student's own target predictions.
  StepRecord student_sda_step(const Batch& bs, const Batch& bt, double w_sda) {
    auto ss = student_->forward(bs.x, true);
    auto st = student_->forward(bt.x, true);
    Tensor pseudo = detached_softmax(st.logits);
    ClassWeights ws = class_weights(smooth_labels(bs.y, eps_));
    ClassWeights wt = class_weights(pseudo);
    Tensor l_cls = smoothed_ce(ss.logits, bs.y, eps_);
    DiscrepancyResult d = elmmsd(ss.fc4, st.fc4, ws, wt, cfg_.kernels);
    Tensor total = add(l_cls, mul(d.value, w_sda));
    apply(total);
    StepRecord rec;
    rec.cls = l_cls.value();
    rec.d_fc1 = d.value.value();
    rec.sda = total.value();
    rec.total = rec.sda;
    return rec;
  }

  static Tensor detached_softmax(const Tensor& logits) {
    NoGradGuard guard;
    return softmax_rows(logits.detach());
  }

  static std::vector<Tensor> concat(std::vector<Tensor> a, const std::vector<Tensor>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  }

  void apply(const Tensor& loss) {
    backward(loss);
    opt_->step();
    opt_->zero_grad();
  }

  void run_epochs(std::size_t n_epochs, bool needs_target, const ScheduleFn& schedule,
                  const StepFn& step_fn) {
    const std::size_t n_train = src_.train.size();
    std::vector<std::size_t> perm(n_train);
    std::iota(perm.begin(), perm.end(), 0);

    for (std::size_t e = 0; e < n_epochs; ++e) {
      const auto [w_sda, w_e] = schedule(e);
      const std::size_t epoch_index = epoch_base_ + e;
      std::shuffle(perm.begin(), perm.end(), rng_);

      double total_sum = 0.0;
      std::size_t step = 0;
      for (std::size_t start = 0; start < n_train; start += cfg_.batch_size, ++step) {
        const std::size_t n = std::min(cfg_.batch_size, n_train - start);
        std::vector<std::size_t> sidx(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                      perm.begin() + static_cast<std::ptrdiff_t>(start + n));
        Batch bs = make_batch(src_.train, sidx, true);
        Batch bt;
        if (needs_target) {
          // Drawing with replacement keeps every step paired even when the
          // target pool is smaller than the source epoch.
          std::uniform_int_distribution<std::size_t> pick(0, tgt_.train.size() - 1);
          std::vector<std::size_t> tidx(n);
          for (std::size_t& i : tidx) i = pick(rng_);
          bt = make_batch(tgt_.train, tidx, false);
        }

        Tape::active().clear();
        StepRecord rec;
        try {
          rec = step_fn(bs, bt, w_sda, w_e);
        } catch (const TensorError& err) {
          // Strict-finite primitives surface divergence as a non-finite
          // input somewhere inside the forward; anything else is a bug.
          if (std::string_view(err.what()).find("non-finite") != std::string_view::npos)
            throw DivergenceError(err.what(), epoch_index, step);
          throw;
        }
        if (!std::isfinite(rec.total))
          throw DivergenceError("loss is non-finite", epoch_index, step);

        rec.epoch = epoch_index;
        rec.step = step;
        rec.lambda_sda = w_sda;
        rec.lambda_e = w_e;
        total_sum += rec.total;
        steps_.push_back(rec);
      }

      EpochRecord epoch_rec;
      epoch_rec.epoch = epoch_index;
      epoch_rec.mean_total = total_sum / static_cast<double>(step);
      epoch_rec.lambda_sda = w_sda;
      epoch_rec.lambda_e = w_e;
      try {
        record_validation(epoch_rec, epoch_index);
      } catch (const TensorError& err) {
        // Parameters that exploded on the last step of the epoch surface
        // here, during the validation forward.
        if (std::string_view(err.what()).find("non-finite") != std::string_view::npos)
          throw DivergenceError(err.what(), epoch_index, step - 1);
        throw;
      }
      epochs_.push_back(epoch_rec);
    }
    epoch_base_ += n_epochs;
  }

  void record_validation(EpochRecord& epoch_rec, std::size_t epoch_index) {
    if (teacher_) {
      epoch_rec.teacher_val_accuracy = eval_accuracy(*teacher_, src_.val, cfg_.batch_size);
      if (epoch_rec.teacher_val_accuracy > best_teacher_acc_) {
        best_teacher_acc_ = epoch_rec.teacher_val_accuracy;
        best_teacher_epoch_ = epoch_index;
        best_teacher_state_ = clone_state(teacher_->named_tensors());
      }
    }
    epoch_rec.student_val_accuracy = eval_accuracy(*student_, src_.val, cfg_.batch_size);
    if (epoch_rec.student_val_accuracy > best_student_acc_) {
      best_student_acc_ = epoch_rec.student_val_accuracy;
      best_student_epoch_ = epoch_index;
      best_student_state_ = clone_state(student_->named_tensors());
    }
  }

  TrainResult finish() {
    Tape::active().clear();
    TrainResult result{std::move(teacher_),
                       std::move(*student_),
                       std::move(steps_),
                       std::move(epochs_),
                       std::move(src_),
                       std::move(tgt_),
                       std::move(best_teacher_state_),
                       std::move(best_student_state_),
                       best_teacher_epoch_,
                       best_student_epoch_,
                       best_teacher_acc_,
                       best_student_acc_,
                       final_lambda_sda_,
                       final_lambda_e_};
    return result;
  }

  ExperimentConfig cfg_;
  double eps_;
  bool source_only_ = false;
  DatasetSplits src_;
  DatasetSplits tgt_;
  std::mt19937_64 rng_;

  std::optional<TeacherModel> teacher_;
  std::optional<StudentModel> student_;
  std::optional<SgdOptimizer> opt_;

  std::vector<StepRecord> steps_;
  std::vector<EpochRecord> epochs_;
  std::size_t epoch_base_ = 0;

  std::vector<NamedTensor> best_teacher_state_;
  std::vector<NamedTensor> best_student_state_;
  std::size_t best_teacher_epoch_ = 0;
  std::size_t best_student_epoch_ = 0;
  double best_teacher_acc_ = -1.0;
  double best_student_acc_ = -1.0;
  double final_lambda_sda_ = 0.0;
  double final_lambda_e_ = 0.0;
};

}  // namespace

double eval_accuracy(TeacherModel& model, const SignalDataset& ds, std::size_t batch_size) {
  return accuracy_over(model, ds, batch_size);
}

double eval_accuracy(StudentModel& model, const SignalDataset& ds, std::size_t batch_size) {
  return accuracy_over(model, ds, batch_size);
}

namespace {

TrainResult run_experiment(const ExperimentConfig& cfg, const SignalDataset& source,
                           const SignalDataset& target, bool source_only) {
  cfg.validate();
  source.validate();
  target.validate();
  if (source.n_classes != target.n_classes)
    throw TensorError("train: source and target disagree on class count");
  if (source.n_classes != cfg.teacher.n_classes)
    throw TensorError("train: config class count differs from the data");
  if (source.window() != cfg.teacher.input_len || target.window() != cfg.teacher.input_len)
    throw TensorError("train: segment window differs from the model input length");

  DatasetSplits src = split_dataset(source, cfg.split, cfg.seed);
  DatasetSplits tgt = split_dataset(target, cfg.split, cfg.seed + 1);
  Trainer trainer(cfg, std::move(src), std::move(tgt), source_only);
  return trainer.run();
}

}  // namespace

TrainResult train_kavi(const ExperimentConfig& cfg, const SignalDataset& source,
                       const SignalDataset& target) {
  return run_experiment(cfg, source, target, false);
}

TrainResult train_source_only(const ExperimentConfig& cfg, const SignalDataset& source,
                              const SignalDataset& target) {
  return run_experiment(cfg, source, target, true);
}

TrainResult train_ablation(const ExperimentConfig& cfg, const SignalDataset& source,
                           const SignalDataset& target) {
  return train_kavi(cfg, source, target);
}

void write_metrics_jsonl(std::ostream& out, const TrainResult& result) {
  using json = nlohmann::ordered_json;
  for (const StepRecord& s : result.steps) {
    json line{{"kind", "step"},           {"epoch", s.epoch},
              {"step", s.step},           {"cls", s.cls},
              {"d_fc1", s.d_fc1},         {"d_fc2", s.d_fc2},
              {"sda", s.sda},             {"kd_target", s.kd_target},
              {"kd_source", s.kd_source}, {"lambda_sda", s.lambda_sda},
              {"lambda_e", s.lambda_e},   {"total", s.total}};
    out << line.dump() << '\n';
  }
  for (const EpochRecord& e : result.epochs) {
    json line{{"kind", "epoch"},
              {"epoch", e.epoch},
              {"mean_total", e.mean_total},
              {"lambda_sda", e.lambda_sda},
              {"lambda_e", e.lambda_e},
              {"teacher_val_accuracy", e.teacher_val_accuracy},
              {"student_val_accuracy", e.student_val_accuracy}};
    out << line.dump() << '\n';
  }
}

}  // namespace kavi
