#include "kavi/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <string_view>
#include <utility>

#include "json.hpp"

#include "kavi/checkpoint.hpp"

namespace kavi {

namespace {

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < logits.dim(1); ++c)
    if (logits.at(row, c) > logits.at(row, best)) best = c;
  return best;
}

template <typename Model>
ClassificationResult classify_over(Model& model, const SignalDataset& ds,
                                   std::size_t batch_size) {
  if (ds.size() == 0) throw TensorError("accuracy_and_confusion: empty dataset");
  if (!ds.labeled()) throw TensorError("accuracy_and_confusion: dataset has no labels");
  if (ds.n_classes == 0) throw TensorError("accuracy_and_confusion: dataset has no classes");
  if (batch_size == 0) throw TensorError("accuracy_and_confusion: batch size must be positive");

  ClassificationResult result;
  result.confusion.n_classes = ds.n_classes;
  result.confusion.counts.assign(ds.n_classes * ds.n_classes, 0);

  NoGradGuard guard;
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, ds.size() - start);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), start);
    SignalDataset rows = subset(ds, idx);
    Tensor logits = model.forward(standardize_segments(rows.segments), false).logits;
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t truth = rows.labels[r];
      if (truth >= ds.n_classes)
        throw TensorError("accuracy_and_confusion: label outside the class range");
      ++result.confusion.counts[truth * ds.n_classes + argmax_row(logits, r)];
    }
  }
  result.accuracy = static_cast<double>(result.confusion.trace()) /
                    static_cast<double>(result.confusion.total());
  return result;
}

// Hinge-loss linear probe separating two feature sets. Each domain is
// shuffled with a fixed seed and cut in half; the probe trains by full-batch
// subgradient descent on the train halves and is scored on the rest, so the
// returned error is a deterministic function of the feature values alone.
double probe_error(const Tensor& fs, const std::vector<std::size_t>& rows_s,
                   const Tensor& ft, const std::vector<std::size_t>& rows_t) {
  const std::size_t dim = fs.dim(1);
  if (ft.dim(1) != dim) throw TensorError("probe: feature widths differ between domains");

  std::mt19937_64 rng(17);
  std::vector<std::size_t> order_s = rows_s;
  std::vector<std::size_t> order_t = rows_t;
  std::shuffle(order_s.begin(), order_s.end(), rng);
  std::shuffle(order_t.begin(), order_t.end(), rng);
  const std::size_t train_s = order_s.size() / 2;
  const std::size_t train_t = order_t.size() / 2;

  // Row-major design matrix with the domain label; train rows first.
  std::vector<double> x;
  std::vector<double> y;
  auto push = [&](const Tensor& f, std::size_t row, double label) {
    for (std::size_t j = 0; j < dim; ++j) x.push_back(f.at(row, j));
    y.push_back(label);
  };
  for (std::size_t i = 0; i < train_s; ++i) push(fs, order_s[i], 1.0);
  for (std::size_t i = 0; i < train_t; ++i) push(ft, order_t[i], -1.0);
  const std::size_t n_train = y.size();
  for (std::size_t i = train_s; i < order_s.size(); ++i) push(fs, order_s[i], 1.0);
  for (std::size_t i = train_t; i < order_t.size(); ++i) push(ft, order_t[i], -1.0);
  const std::size_t n_all = y.size();

  // Standardize every feature with train-half statistics; a dimension that
  // is constant on the train halves carries no signal and is zeroed.
  for (std::size_t j = 0; j < dim; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n_train; ++i) mean += x[i * dim + j];
    mean /= static_cast<double>(n_train);
    double var = 0.0;
    for (std::size_t i = 0; i < n_train; ++i) {
      const double d = x[i * dim + j] - mean;
      var += d * d;
    }
    const double sd = std::sqrt(var / static_cast<double>(n_train));
    for (std::size_t i = 0; i < n_all; ++i) {
      double& v = x[i * dim + j];
      v = sd < 1e-12 ? 0.0 : (v - mean) / sd;
    }
  }

  const std::size_t d1 = dim + 1;  // constant column plays the bias
  constexpr double kLambda = 1e-3;
  constexpr std::size_t kSteps = 500;
  std::vector<double> w(d1, 0.0);
  std::vector<double> grad(d1);
  auto score = [&](std::size_t i) {
    double s = w[dim];
    for (std::size_t j = 0; j < dim; ++j) s += w[j] * x[i * dim + j];
    return s;
  };
  for (std::size_t t = 1; t <= kSteps; ++t) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n_train; ++i) {
      if (y[i] * score(i) >= 1.0) continue;
      for (std::size_t j = 0; j < dim; ++j) grad[j] += y[i] * x[i * dim + j];
      grad[dim] += y[i];
    }
    const double eta = 1.0 / (kLambda * static_cast<double>(t));
    const double shrink = 1.0 - eta * kLambda;
    const double scale = eta / static_cast<double>(n_train);
    for (std::size_t j = 0; j < d1; ++j) w[j] = shrink * w[j] + scale * grad[j];
  }

  std::size_t wrong = 0;
  for (std::size_t i = n_train; i < n_all; ++i) {
    const double predicted = score(i) > 0.0 ? 1.0 : -1.0;
    if (predicted != y[i]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(n_all - n_train);
}

std::vector<std::size_t> all_rows(const Tensor& features) {
  std::vector<std::size_t> rows(features.dim(0));
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

void hash_mix(std::uint64_t& h, std::string_view text) {
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
}

}  // namespace

std::size_t ConfusionMatrix::at(std::size_t truth, std::size_t predicted) const {
  if (truth >= n_classes || predicted >= n_classes)
    throw TensorError("ConfusionMatrix: index outside the class range");
  return counts[truth * n_classes + predicted];
}

std::size_t ConfusionMatrix::row_sum(std::size_t truth) const {
  if (truth >= n_classes) throw TensorError("ConfusionMatrix: index outside the class range");
  std::size_t sum = 0;
  for (std::size_t c = 0; c < n_classes; ++c) sum += counts[truth * n_classes + c];
  return sum;
}

std::size_t ConfusionMatrix::col_sum(std::size_t predicted) const {
  if (predicted >= n_classes)
    throw TensorError("ConfusionMatrix: index outside the class range");
  std::size_t sum = 0;
  for (std::size_t r = 0; r < n_classes; ++r) sum += counts[r * n_classes + predicted];
  return sum;
}

std::size_t ConfusionMatrix::trace() const {
  std::size_t sum = 0;
  for (std::size_t c = 0; c < n_classes; ++c) sum += counts[c * n_classes + c];
  return sum;
}

std::size_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

ClassificationResult accuracy_and_confusion(TeacherModel& model, const SignalDataset& ds,
                                            std::size_t batch_size) {
  return classify_over(model, ds, batch_size);
}

ClassificationResult accuracy_and_confusion(StudentModel& model, const SignalDataset& ds,
                                            std::size_t batch_size) {
  return classify_over(model, ds, batch_size);
}

std::vector<double> precision_per_class(const ConfusionMatrix& confusion) {
  std::vector<double> out(confusion.n_classes, 0.0);
  for (std::size_t c = 0; c < confusion.n_classes; ++c) {
    const std::size_t denom = confusion.col_sum(c);
    if (denom > 0)
      out[c] = static_cast<double>(confusion.at(c, c)) / static_cast<double>(denom);
  }
  return out;
}

std::vector<double> recall_per_class(const ConfusionMatrix& confusion) {
  std::vector<double> out(confusion.n_classes, 0.0);
  for (std::size_t c = 0; c < confusion.n_classes; ++c) {
    const std::size_t denom = confusion.row_sum(c);
    if (denom > 0)
      out[c] = static_cast<double>(confusion.at(c, c)) / static_cast<double>(denom);
  }
  return out;
}

double a_distance_from_error(double zeta) {
  return 2.0 * (1.0 - 2.0 * std::clamp(zeta, 0.0, 0.5));
}

ADistance a_distance(const Tensor& features_s, const Tensor& features_t) {
  if (!features_s.defined() || !features_t.defined() || features_s.rank() != 2 ||
      features_t.rank() != 2)
    throw TensorError("a_distance: features must be 2-d tensors");
  if (features_s.dim(0) < 2 || features_t.dim(0) < 2)
    throw TensorError("a_distance: degenerate domain with fewer than two samples");

  ADistance out;
  out.error = probe_error(features_s, all_rows(features_s), features_t, all_rows(features_t));
  out.value = a_distance_from_error(out.error);
  out.raw = 2.0 * (1.0 - 2.0 * out.error);
  return out;
}

double a_l_distance_from_errors(const std::vector<double>& zetas,
                                const std::vector<double>& priors) {
  if (zetas.size() != priors.size())
    throw TensorError("a_l_distance: one error and one prior per class");
  double sum = 0.0;
  for (std::size_t c = 0; c < zetas.size(); ++c)
    sum += priors[c] * (1.0 - 2.0 * std::clamp(zetas[c], 0.0, 0.5));
  return 2.0 * sum;
}

ALDistance a_l_distance(const Tensor& features_s, const std::vector<std::size_t>& labels_s,
                        const Tensor& features_t,
                        const std::vector<std::size_t>& pseudo_labels_t,
                        std::size_t n_classes) {
  if (!features_s.defined() || !features_t.defined() || features_s.rank() != 2 ||
      features_t.rank() != 2)
    throw TensorError("a_l_distance: features must be 2-d tensors");
  if (features_s.dim(0) != labels_s.size() || features_t.dim(0) != pseudo_labels_t.size())
    throw TensorError("a_l_distance: one label per feature row");
  if (n_classes == 0 || pseudo_labels_t.empty())
    throw TensorError("a_l_distance: no classes or no target samples");
  for (std::size_t l : labels_s)
    if (l >= n_classes) throw TensorError("a_l_distance: label outside the class range");
  for (std::size_t l : pseudo_labels_t)
    if (l >= n_classes) throw TensorError("a_l_distance: label outside the class range");

  // Class priors come from the full target labeling, before any exclusion.
  ALDistance out;
  out.priors.assign(n_classes, 0.0);
  out.class_errors.assign(n_classes, -1.0);
  out.included.assign(n_classes, false);
  for (std::size_t l : pseudo_labels_t)
    out.priors[l] += 1.0 / static_cast<double>(pseudo_labels_t.size());

  std::vector<std::vector<std::size_t>> rows_s(n_classes), rows_t(n_classes);
  for (std::size_t i = 0; i < labels_s.size(); ++i) rows_s[labels_s[i]].push_back(i);
  for (std::size_t i = 0; i < pseudo_labels_t.size(); ++i)
    rows_t[pseudo_labels_t[i]].push_back(i);

  double prior_mass = 0.0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (rows_s[c].size() < 2 || rows_t[c].size() < 2) {
      out.any_excluded = true;
      out.priors[c] = 0.0;
      continue;
    }
    out.included[c] = true;
    out.class_errors[c] = probe_error(features_s, rows_s[c], features_t, rows_t[c]);
    prior_mass += out.priors[c];
  }
  if (prior_mass == 0.0)
    throw TensorError("a_l_distance: no class has two samples in both domains");

  for (std::size_t c = 0; c < n_classes; ++c) {
    if (!out.included[c]) continue;
    out.priors[c] /= prior_mass;
    const double zeta = out.class_errors[c];
    out.value += out.priors[c] * (1.0 - 2.0 * std::clamp(zeta, 0.0, 0.5));
    out.raw += out.priors[c] * (1.0 - 2.0 * zeta);
  }
  out.value *= 2.0;
  out.raw *= 2.0;
  return out;
}

TeacherFeatures extract_teacher_features(TeacherModel& model, const SignalDataset& ds,
                                         std::size_t batch_size) {
  if (ds.size() == 0) throw TensorError("extract_teacher_features: empty dataset");
  if (batch_size == 0)
    throw TensorError("extract_teacher_features: batch size must be positive");

  const std::size_t width = model.config().fc2_width;
  std::vector<double> flat;
  flat.reserve(ds.size() * width);
  TeacherFeatures out;
  out.predictions.reserve(ds.size());

  NoGradGuard guard;
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, ds.size() - start);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), start);
    SignalDataset rows = subset(ds, idx);
    auto acts = model.forward(standardize_segments(rows.segments), false);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < width; ++j) flat.push_back(acts.fc2.at(r, j));
      out.predictions.push_back(argmax_row(acts.logits, r));
    }
  }
  out.fc2 = Tensor::from_data({ds.size(), width}, std::move(flat));
  return out;
}

std::string config_hash(const ExperimentConfig& cfg) {
  std::ostringstream text;
  text << std::setprecision(17);
  const auto& t = cfg.teacher;
  text << t.n_classes << '|' << t.nodes << '|' << t.input_len << '|' << t.ggl_k << '|'
       << t.arma_stacks << '|' << t.fc1_width << '|' << t.fc2_width;
  const auto& s = cfg.student;
  text << '|' << s.n_classes << '|' << s.input_len << '|' << s.conv1_filters << '|'
       << s.conv2_filters << '|' << s.kernel << '|' << s.stride << '|' << s.pool_kernel
       << '|' << s.pool_stride << '|' << s.fc4_width;
  const auto& d = cfg.distill;
  text << '|' << d.tau << '|' << d.lambda_cls << '|' << d.alpha1 << '|' << d.alpha2 << '|'
       << d.tau_squared << '|' << d.kl_reverse;
  for (double b : cfg.kernels.bandwidths) text << '|' << b;
  for (double w : cfg.kernels.mixture_weights) text << '|' << w;
  text << '|' << cfg.eps << '|' << cfg.batch_size << '|' << cfg.learning_rate << '|'
       << cfg.epochs << '|' << cfg.split.train << '|' << cfg.split.val << '|'
       << cfg.split.test << '|' << cfg.seed << '|' << ablation_mode_name(cfg.ablation_mode);

  std::uint64_t h = 14695981039346656037ull;
  hash_mix(h, text.str());
  std::ostringstream hex;
  hex << std::hex << std::setw(16) << std::setfill('0') << h;
  return hex.str();
}

EvalReport evaluate_experiment(TrainResult& result, const ExperimentConfig& cfg,
                               std::size_t batch_size) {
  if (!result.best_student_state.empty())
    restore_state(result.student.named_tensors(), result.best_student_state);
  if (result.teacher && !result.best_teacher_state.empty())
    restore_state(result.teacher->named_tensors(), result.best_teacher_state);

  EvalReport report;
  report.subject = "student";
  report.config_hash = config_hash(cfg);
  report.n_classes = result.target.test.n_classes;

  ClassificationResult cls = accuracy_and_confusion(result.student, result.target.test,
                                                    batch_size);
  report.accuracy = cls.accuracy;
  report.confusion = cls.confusion;
  report.precision = precision_per_class(report.confusion);
  report.recall = recall_per_class(report.confusion);

  report.has_distances = result.teacher.has_value();
  if (result.teacher) {
    TeacherFeatures fs = extract_teacher_features(*result.teacher, result.source.test,
                                                  batch_size);
    TeacherFeatures ft = extract_teacher_features(*result.teacher, result.target.test,
                                                  batch_size);
    ADistance ad = a_distance(fs.fc2, ft.fc2);
    report.a_distance_value = ad.value;
    report.a_distance_raw = ad.raw;
    ALDistance al = a_l_distance(fs.fc2, result.source.test.labels, ft.fc2, ft.predictions,
                                 report.n_classes);
    report.a_l_distance_value = al.value;
    report.a_l_distance_raw = al.raw;
    report.a_l_excluded_class = al.any_excluded;
    report.teacher_cost = cost_report(*result.teacher, cfg.teacher.input_len);
  }
  report.student_cost = cost_report(result.student, cfg.student.input_len);
  return report;
}

namespace {

void check_report(const EvalReport& report) {
  const std::size_t n = report.confusion.n_classes;
  if (n == 0 || report.confusion.counts.size() != n * n || report.confusion.total() == 0)
    throw TensorError("emit_report: empty confusion matrix");
  if (report.n_classes != n || report.precision.size() != n || report.recall.size() != n)
    throw TensorError("emit_report: per-class fields disagree on the class count");
  const double from_counts = static_cast<double>(report.confusion.trace()) /
                             static_cast<double>(report.confusion.total());
  if (std::abs(report.accuracy - from_counts) > 1e-12)
    throw TensorError("emit_report: accuracy inconsistent with the confusion matrix");
}

void write_text_report(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw TensorError("emit_report: cannot open " + path);
  out << std::setprecision(6) << std::fixed;
  out << "subject: " << report.subject << '\n';
  out << "config: " << report.config_hash << '\n';
  out << "classes: " << report.n_classes << '\n';
  out << "accuracy: " << report.accuracy << "\n\n";

  out << "confusion (rows true, columns predicted):\n";
  for (std::size_t r = 0; r < report.n_classes; ++r) {
    for (std::size_t c = 0; c < report.n_classes; ++c)
      out << std::setw(6) << report.confusion.at(r, c);
    out << '\n';
  }
  out << "\nclass  precision  recall\n";
  for (std::size_t c = 0; c < report.n_classes; ++c)
    out << std::setw(5) << c << std::setw(11) << report.precision[c] << std::setw(8)
        << report.recall[c] << '\n';

  out << '\n';
  if (report.has_distances) {
    out << "a_distance: " << report.a_distance_value << " (raw " << report.a_distance_raw
        << ")\n";
    out << "a_l_distance: " << report.a_l_distance_value << " (raw "
        << report.a_l_distance_raw << ")";
    if (report.a_l_excluded_class) out << "  [classes excluded, priors renormalized]";
    out << '\n';
    out << "teacher: " << report.teacher_cost.parameter_count << " params, "
        << report.teacher_cost.model_size_bytes << " bytes, " << report.teacher_cost.flops
        << " flops\n";
  } else {
    out << "domain distances: unavailable (no teacher in this run)\n";
  }
  out << "student: " << report.student_cost.parameter_count << " params, "
      << report.student_cost.model_size_bytes << " bytes, " << report.student_cost.flops
      << " flops\n";
  if (!out) throw TensorError("emit_report: write failed for " + path);
}

nlohmann::ordered_json cost_to_json(const CostReport& cost) {
  return {{"parameter_count", cost.parameter_count},
          {"bytes_per_weight", cost.bytes_per_weight},
          {"model_size_bytes", cost.model_size_bytes},
          {"flops", cost.flops}};
}

CostReport cost_from_json(const nlohmann::json& j) {
  CostReport cost;
  cost.parameter_count = j.at("parameter_count").get<std::size_t>();
  cost.bytes_per_weight = j.at("bytes_per_weight").get<std::size_t>();
  cost.model_size_bytes = j.at("model_size_bytes").get<std::size_t>();
  cost.flops = j.at("flops").get<std::size_t>();
  return cost;
}

}  // namespace

void emit_report(const EvalReport& report, const std::string& base_path) {
  check_report(report);
  write_text_report(report, base_path + ".txt");

  nlohmann::ordered_json line{{"subject", report.subject},
                              {"config_hash", report.config_hash},
                              {"n_classes", report.n_classes},
                              {"accuracy", report.accuracy},
                              {"confusion", report.confusion.counts},
                              {"precision", report.precision},
                              {"recall", report.recall},
                              {"has_distances", report.has_distances},
                              {"a_distance_value", report.a_distance_value},
                              {"a_distance_raw", report.a_distance_raw},
                              {"a_l_distance_value", report.a_l_distance_value},
                              {"a_l_distance_raw", report.a_l_distance_raw},
                              {"a_l_excluded_class", report.a_l_excluded_class},
                              {"teacher_cost", cost_to_json(report.teacher_cost)},
                              {"student_cost", cost_to_json(report.student_cost)}};
  const std::string path = base_path + ".jsonl";
  std::ofstream out(path);
  if (!out) throw TensorError("emit_report: cannot open " + path);
  out << line.dump() << '\n';
  if (!out) throw TensorError("emit_report: write failed for " + path);
}

EvalReport parse_report(const std::string& jsonl_path) {
  std::ifstream in(jsonl_path);
  if (!in) throw TensorError("parse_report: cannot open " + jsonl_path);
  std::string line;
  if (!std::getline(in, line) || line.empty())
    throw TensorError("parse_report: no record in " + jsonl_path);

  const nlohmann::json j = nlohmann::json::parse(line);
  EvalReport report;
  report.subject = j.at("subject").get<std::string>();
  report.config_hash = j.at("config_hash").get<std::string>();
  report.n_classes = j.at("n_classes").get<std::size_t>();
  report.accuracy = j.at("accuracy").get<double>();
  report.confusion.n_classes = report.n_classes;
  report.confusion.counts = j.at("confusion").get<std::vector<std::size_t>>();
  report.precision = j.at("precision").get<std::vector<double>>();
  report.recall = j.at("recall").get<std::vector<double>>();
  report.has_distances = j.at("has_distances").get<bool>();
  report.a_distance_value = j.at("a_distance_value").get<double>();
  report.a_distance_raw = j.at("a_distance_raw").get<double>();
  report.a_l_distance_value = j.at("a_l_distance_value").get<double>();
  report.a_l_distance_raw = j.at("a_l_distance_raw").get<double>();
  report.a_l_excluded_class = j.at("a_l_excluded_class").get<bool>();
  report.teacher_cost = cost_from_json(j.at("teacher_cost"));
  report.student_cost = cost_from_json(j.at("student_cost"));
  return report;
}

}  // namespace kavi
