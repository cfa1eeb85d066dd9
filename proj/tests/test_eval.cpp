#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "kavi/eval.hpp"
#include "kavi/trainer.hpp"

using namespace kavi;

namespace {

TeacherConfig tiny_teacher(std::size_t n_classes, std::size_t input_len) {
  TeacherConfig cfg;
  cfg.n_classes = n_classes;
  cfg.nodes = 12;
  cfg.input_len = input_len;
  cfg.ggl_k = 2;
  cfg.arma_stacks = 2;
  cfg.fc1_width = 16;
  cfg.fc2_width = 12;
  return cfg;
}

StudentConfig tiny_student(std::size_t n_classes, std::size_t input_len) {
  StudentConfig cfg;
  cfg.n_classes = n_classes;
  cfg.input_len = input_len;
  cfg.conv1_filters = 4;
  cfg.conv2_filters = 8;
  cfg.fc4_width = 12;
  return cfg;
}

ExperimentConfig tiny_experiment(std::size_t n_classes = 2, std::size_t input_len = 64) {
  ExperimentConfig cfg;
  cfg.teacher = tiny_teacher(n_classes, input_len);
  cfg.student = tiny_student(n_classes, input_len);
  cfg.batch_size = 16;
  cfg.learning_rate = 0.2;
  cfg.epochs = 4;
  cfg.seed = 5;
  return cfg;
}

SynthSpec small_spec(std::size_t samples_per_class = 30) {
  SynthSpec spec;
  spec.n_classes = 2;
  spec.samples_per_class = samples_per_class;
  spec.window = 64;
  spec.noise_level = 0.02;
  spec.seed = 13;
  spec.classes = {{400.0, 2000.0, 0.05, 1.0}, {500.0, 3000.0, 0.05, 1.2}};
  return spec;
}

// Gaussian cluster of `n` rows around `center`, unit spread.
Tensor gaussian_rows(std::size_t n, std::size_t dim, double center, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(center, 1.0);
  std::vector<double> data(n * dim);
  for (double& v : data) v = normal(rng);
  return Tensor::from_data({n, dim}, std::move(data));
}

SignalDataset shuffled_copy(const SignalDataset& ds, std::uint64_t seed) {
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  return subset(ds, order);
}

}  // namespace

TEST_CASE("confusion matrix arithmetic and bounds") {
  ConfusionMatrix m;
  m.n_classes = 3;
  m.counts = {5, 1, 0,   // true 0
              2, 7, 1,   // true 1
              0, 0, 4};  // true 2

  CHECK(m.at(0, 0) == 5);
  CHECK(m.at(1, 2) == 1);
  CHECK(m.row_sum(0) == 6);
  CHECK(m.row_sum(1) == 10);
  CHECK(m.col_sum(0) == 7);
  CHECK(m.col_sum(2) == 5);
  CHECK(m.trace() == 16);
  CHECK(m.total() == 20);

  CHECK_THROWS(m.at(3, 0));
  CHECK_THROWS(m.row_sum(3));
  CHECK_THROWS(m.col_sum(3));

  std::vector<double> prec = precision_per_class(m);
  std::vector<double> rec = recall_per_class(m);
  REQUIRE(prec.size() == 3);
  REQUIRE(rec.size() == 3);
  CHECK(prec[0] == doctest::Approx(5.0 / 7.0));
  CHECK(prec[1] == doctest::Approx(7.0 / 8.0));
  CHECK(prec[2] == doctest::Approx(4.0 / 5.0));
  CHECK(rec[0] == doctest::Approx(5.0 / 6.0));
  CHECK(rec[1] == doctest::Approx(7.0 / 10.0));
  CHECK(rec[2] == doctest::Approx(1.0));
}

TEST_CASE("a class never predicted has zero precision, never seen has zero recall") {
  ConfusionMatrix m;
  m.n_classes = 2;
  m.counts = {4, 0,
              3, 0};  // nothing ever predicted as class 1
  CHECK(precision_per_class(m)[1] == 0.0);

  ConfusionMatrix empty_row;
  empty_row.n_classes = 2;
  empty_row.counts = {4, 1,
                      0, 0};  // class 1 absent from the data
  CHECK(recall_per_class(empty_row)[1] == 0.0);
}

TEST_CASE("confusion rows account for every sample of every class") {
  SynthSpec spec = small_spec(12);
  SignalDataset ds = synth_dataset(spec, DomainTag::kSource);

  TeacherModel teacher(tiny_teacher(2, 64), 3);
  StudentModel student(tiny_student(2, 64), 4);

  ClassificationResult rt = accuracy_and_confusion(teacher, ds);
  ClassificationResult rs = accuracy_and_confusion(student, ds);
  for (const ClassificationResult& r : {rt, rs}) {
    REQUIRE(r.confusion.n_classes == 2);
    CHECK(r.confusion.total() == ds.size());
    // Row sums recover the per-class sample counts regardless of predictions.
    CHECK(r.confusion.row_sum(0) == 12);
    CHECK(r.confusion.row_sum(1) == 12);
    CHECK(r.accuracy >= 0.0);
    CHECK(r.accuracy <= 1.0);
  }
}

TEST_CASE("classification is invariant to sample order and student chunking") {
  SynthSpec spec = small_spec(20);
  SignalDataset ds = synth_dataset(spec, DomainTag::kSource);

  TeacherModel teacher(tiny_teacher(2, 64), 11);
  StudentModel student(tiny_student(2, 64), 12);

  ClassificationResult base_t = accuracy_and_confusion(teacher, ds);
  ClassificationResult base_s = accuracy_and_confusion(student, ds);

  // With one chunk holding the whole set, reordering rows only permutes the
  // teacher's batch graph, and every graph op is permutation-equivariant.
  SignalDataset mixed = shuffled_copy(ds, 99);
  CHECK(accuracy_and_confusion(teacher, mixed).accuracy == base_t.accuracy);
  CHECK(accuracy_and_confusion(student, mixed).accuracy == base_s.accuracy);
  CHECK(accuracy_and_confusion(teacher, mixed).confusion == base_t.confusion);

  // The student scores samples independently, so chunk size cannot matter.
  // (The teacher has no such property: its graph spans whatever shares a chunk.)
  CHECK(accuracy_and_confusion(student, ds, 5).accuracy == base_s.accuracy);
  CHECK(accuracy_and_confusion(student, ds, 3).confusion == base_s.confusion);

  // Accuracy always re-derives from the counts.
  CHECK(base_t.accuracy ==
        doctest::Approx(double(base_t.confusion.trace()) / double(base_t.confusion.total())));
}

TEST_CASE("probe distance vanishes when the domains coincide") {
  // Same generating distribution on both sides: the probe cannot separate
  // them, so the held-out error sits near one half and the distance near zero.
  Tensor fs = gaussian_rows(200, 8, 0.0, 21);
  Tensor ft = gaussian_rows(200, 8, 0.0, 22);
  ADistance d = a_distance(fs, ft);
  CHECK(std::abs(d.raw) < 0.2);
  CHECK(d.value < 0.2);
  CHECK(d.error > 0.3);
}

TEST_CASE("probe distance saturates for well-separated domains") {
  Tensor fs = gaussian_rows(200, 8, 0.0, 31);
  Tensor ft = gaussian_rows(200, 8, 8.0, 32);  // eight sigma apart
  ADistance d = a_distance(fs, ft);
  CHECK(d.value > 1.8);
  CHECK(d.error < 0.05);
}

TEST_CASE("random re-splits of one pool stay under the null threshold") {
  // Permutation null: split a single pool in half five ways; every resulting
  // estimate must stay within |0.2| of zero.
  Tensor pool = gaussian_rows(400, 6, 0.5, 77);
  const std::size_t dim = 6;
  std::vector<std::size_t> order(400);
  std::iota(order.begin(), order.end(), 0);
  for (std::uint64_t perm = 0; perm < 5; ++perm) {
    std::mt19937_64 rng(1000 + perm);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<double> a, b;
    for (std::size_t i = 0; i < 200; ++i)
      for (std::size_t j = 0; j < dim; ++j) a.push_back(pool.at(order[i], j));
    for (std::size_t i = 200; i < 400; ++i)
      for (std::size_t j = 0; j < dim; ++j) b.push_back(pool.at(order[i], j));
    ADistance d = a_distance(Tensor::from_data({200, dim}, std::move(a)),
                             Tensor::from_data({200, dim}, std::move(b)));
    CHECK(std::abs(d.raw) < 0.2);
  }
}

TEST_CASE("the error-to-distance map is exact and clipped") {
  CHECK(a_distance_from_error(0.25) == 1.0);
  CHECK(a_distance_from_error(0.5) == 0.0);
  CHECK(a_distance_from_error(0.0) == 2.0);
  // Errors past one half come from sampling noise; the clipped map floors at zero.
  CHECK(a_distance_from_error(0.7) == 0.0);
  CHECK(a_distance_from_error(-0.1) == 2.0);
}

TEST_CASE("probe distance rejects malformed feature sets") {
  Tensor flat = Tensor::from_data({8}, std::vector<double>(8, 1.0));
  Tensor fine = gaussian_rows(8, 3, 0.0, 5);
  CHECK_THROWS(a_distance(flat, fine));
  Tensor lone = gaussian_rows(1, 3, 0.0, 6);
  CHECK_THROWS(a_distance(fine, lone));
}

TEST_CASE("class-conditional distance arithmetic is a prior-weighted sum") {
  CHECK(a_l_distance_from_errors({0.0, 0.5}, {0.5, 0.5}) == doctest::Approx(1.0));
  CHECK(a_l_distance_from_errors({0.0, 0.5}, {0.8, 0.2}) == doctest::Approx(1.6));
  CHECK(a_l_distance_from_errors({0.25}, {1.0}) == doctest::Approx(1.0));
  CHECK_THROWS(a_l_distance_from_errors({0.1, 0.2}, {1.0}));
}

TEST_CASE("class-conditional distance on coinciding per-class clusters is small") {
  // Two classes, both domains drawn from the same class-wise distributions.
  Tensor fs_a = gaussian_rows(60, 5, 0.0, 41);
  Tensor fs_b = gaussian_rows(60, 5, 4.0, 42);
  Tensor ft_a = gaussian_rows(60, 5, 0.0, 43);
  Tensor ft_b = gaussian_rows(60, 5, 4.0, 44);

  std::vector<double> s_data, t_data;
  std::vector<std::size_t> s_labels, t_labels;
  for (std::size_t i = 0; i < 60; ++i) {
    for (std::size_t j = 0; j < 5; ++j) s_data.push_back(fs_a.at(i, j));
    s_labels.push_back(0);
  }
  for (std::size_t i = 0; i < 60; ++i) {
    for (std::size_t j = 0; j < 5; ++j) s_data.push_back(fs_b.at(i, j));
    s_labels.push_back(1);
  }
  for (std::size_t i = 0; i < 60; ++i) {
    for (std::size_t j = 0; j < 5; ++j) t_data.push_back(ft_a.at(i, j));
    t_labels.push_back(0);
  }
  for (std::size_t i = 0; i < 60; ++i) {
    for (std::size_t j = 0; j < 5; ++j) t_data.push_back(ft_b.at(i, j));
    t_labels.push_back(1);
  }
  Tensor fs = Tensor::from_data({120, 5}, std::move(s_data));
  Tensor ft = Tensor::from_data({120, 5}, std::move(t_data));

  ALDistance d = a_l_distance(fs, s_labels, ft, t_labels, 2);
  CHECK(d.value < 0.3);
  CHECK_FALSE(d.any_excluded);
  REQUIRE(d.priors.size() == 2);
  CHECK(d.priors[0] == doctest::Approx(0.5));
  CHECK(d.priors[1] == doctest::Approx(0.5));
  CHECK(d.included[0]);
  CHECK(d.included[1]);
}

TEST_CASE("with one shared class the conditional distance is the plain probe distance") {
  Tensor fs = gaussian_rows(80, 4, 0.0, 51);
  Tensor ft = gaussian_rows(80, 4, 3.0, 52);
  std::vector<std::size_t> zeros(80, 0);

  ALDistance dl = a_l_distance(fs, zeros, ft, zeros, 1);
  ADistance da = a_distance(fs, ft);
  CHECK(dl.value == doctest::Approx(da.value));
  CHECK(dl.priors[0] == doctest::Approx(1.0));
}

TEST_CASE("starved classes are excluded and the priors renormalized") {
  Tensor fs = gaussian_rows(62, 4, 0.0, 61);
  Tensor ft = gaussian_rows(62, 4, 2.0, 62);
  // Class 1 exists once in each domain: one target sample is not enough.
  std::vector<std::size_t> s_labels(62, 0);
  std::vector<std::size_t> t_labels(62, 0);
  s_labels.back() = 1;
  t_labels.back() = 1;

  ALDistance d = a_l_distance(fs, s_labels, ft, t_labels, 2);
  CHECK(d.any_excluded);
  CHECK(d.included[0]);
  CHECK_FALSE(d.included[1]);
  CHECK(d.priors[0] == doctest::Approx(1.0));
  CHECK(d.priors[1] == 0.0);
  CHECK(d.class_errors[1] == -1.0);

  // With every class starved there is nothing left to measure.
  std::vector<std::size_t> lone_s(62, 1), lone_t(62, 1);
  lone_s[0] = 0;
  lone_t[0] = 0;
  // Class 0: one sample per domain; class 1 fine -> only class 1 measured.
  ALDistance partial = a_l_distance(fs, lone_s, ft, lone_t, 2);
  CHECK(partial.any_excluded);
  CHECK(partial.priors[1] == doctest::Approx(1.0));

  std::vector<std::size_t> s_one(3, 0), t_one(3, 0);
  Tensor tiny_s = gaussian_rows(3, 4, 0.0, 63);
  Tensor tiny_t = gaussian_rows(3, 4, 0.0, 64);
  s_one = {0, 1, 1};
  t_one = {1, 0, 0};  // class 0: 1 source sample; class 1: 1 target sample
  CHECK_THROWS(a_l_distance(tiny_s, s_one, tiny_t, t_one, 2));
}

TEST_CASE("teacher feature extraction matches the model geometry") {
  SynthSpec spec = small_spec(10);
  SignalDataset ds = synth_dataset(spec, DomainTag::kSource);
  TeacherConfig tc = tiny_teacher(2, 64);
  TeacherModel teacher(tc, 17);

  TeacherFeatures f = extract_teacher_features(teacher, ds);
  REQUIRE(f.fc2.rank() == 2);
  CHECK(f.fc2.dim(0) == ds.size());
  CHECK(f.fc2.dim(1) == tc.fc2_width);
  REQUIRE(f.predictions.size() == ds.size());
  for (std::size_t p : f.predictions) CHECK(p < 2);

  // Deterministic: the same chunking reproduces the features bit for bit.
  // (Chunking itself matters to the teacher, whose graph spans the chunk.)
  TeacherFeatures again = extract_teacher_features(teacher, ds);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(again.predictions[i] == f.predictions[i]);
    for (std::size_t j = 0; j < tc.fc2_width; ++j)
      CHECK(again.fc2.at(i, j) == f.fc2.at(i, j));
  }
}

TEST_CASE("the config fingerprint reacts to every field") {
  ExperimentConfig base = tiny_experiment();
  const std::string h = config_hash(base);
  CHECK(h.size() == 16);
  CHECK(config_hash(base) == h);  // stable

  auto differs = [&](auto mutate) {
    ExperimentConfig c = tiny_experiment();
    mutate(c);
    return config_hash(c) != h;
  };

  CHECK(differs([](ExperimentConfig& c) { c.teacher.nodes = 24; }));
  CHECK(differs([](ExperimentConfig& c) { c.teacher.arma_stacks = 3; }));
  CHECK(differs([](ExperimentConfig& c) { c.student.conv1_filters = 5; }));
  CHECK(differs([](ExperimentConfig& c) { c.student.fc4_width = 13; }));
  CHECK(differs([](ExperimentConfig& c) { c.distill.tau = 10.0; }));
  CHECK(differs([](ExperimentConfig& c) { c.distill.kl_reverse = true; }));
  CHECK(differs([](ExperimentConfig& c) { c.kernels.bandwidths.push_back(1000.0); }));
  CHECK(differs([](ExperimentConfig& c) { c.eps = 0.2; }));
  CHECK(differs([](ExperimentConfig& c) { c.batch_size = 8; }));
  CHECK(differs([](ExperimentConfig& c) { c.learning_rate = 0.21; }));
  CHECK(differs([](ExperimentConfig& c) { c.epochs = 5; }));
  CHECK(differs([](ExperimentConfig& c) { c.split.train = 0.6; }));
  CHECK(differs([](ExperimentConfig& c) { c.seed = 6; }));
  CHECK(differs([](ExperimentConfig& c) { c.ablation_mode = AblationMode::kSdaOnly; }));
}

TEST_CASE("a full evaluation round-trips through the report files") {
  SynthSpec spec = small_spec(24);
  SynthSpec shifted = spec;
  shifted.noise_level = 0.05;
  shifted.seed = 14;
  auto [source, target] = synth_domain_pair(spec, shifted);

  ExperimentConfig cfg = tiny_experiment();
  cfg.epochs = 2;
  TrainResult r = train_kavi(cfg, source, target);
  EvalReport report = evaluate_experiment(r, cfg);

  CHECK(report.subject == "student");
  CHECK(report.config_hash == config_hash(cfg));
  CHECK(report.n_classes == 2);
  CHECK(report.has_distances);
  CHECK(report.confusion.total() > 0);
  CHECK(report.accuracy == doctest::Approx(double(report.confusion.trace()) /
                                           double(report.confusion.total())));
  CHECK(report.teacher_cost.parameter_count > 0);
  CHECK(report.student_cost.parameter_count > 0);
  CHECK(report.student_cost.parameter_count < report.teacher_cost.parameter_count);

  namespace fs = std::filesystem;
  fs::path base = fs::temp_directory_path() / "kavi_eval_report_test";
  emit_report(report, base.string());
  CHECK(fs::file_size(base.string() + ".txt") > 0);

  EvalReport parsed = parse_report(base.string() + ".jsonl");
  CHECK(parsed == report);

  std::remove((base.string() + ".txt").c_str());
  std::remove((base.string() + ".jsonl").c_str());
}

TEST_CASE("runs without a teacher carry no distance block") {
  SynthSpec spec = small_spec(24);
  SynthSpec shifted = spec;
  shifted.seed = 14;
  auto [source, target] = synth_domain_pair(spec, shifted);

  ExperimentConfig cfg = tiny_experiment();
  cfg.epochs = 2;
  cfg.ablation_mode = AblationMode::kSdaOnly;
  TrainResult r = train_kavi(cfg, source, target);
  EvalReport report = evaluate_experiment(r, cfg);

  CHECK_FALSE(report.has_distances);
  CHECK(report.a_distance_value == 0.0);

  namespace fs = std::filesystem;
  fs::path base = fs::temp_directory_path() / "kavi_eval_report_noteacher";
  emit_report(report, base.string());
  EvalReport parsed = parse_report(base.string() + ".jsonl");
  CHECK(parsed == report);
  std::remove((base.string() + ".txt").c_str());
  std::remove((base.string() + ".jsonl").c_str());
}

TEST_CASE("reports that cannot be trusted are rejected") {
  EvalReport hollow;
  CHECK_THROWS(emit_report(hollow, "/tmp/kavi_eval_never_written"));

  EvalReport lying;
  lying.subject = "student";
  lying.n_classes = 2;
  lying.confusion.n_classes = 2;
  lying.confusion.counts = {3, 1, 1, 3};
  lying.precision = {0.75, 0.75};
  lying.recall = {0.75, 0.75};
  lying.accuracy = 0.9;  // counts say 0.75
  CHECK_THROWS(emit_report(lying, "/tmp/kavi_eval_never_written"));
}
