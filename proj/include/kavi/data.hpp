#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "kavi/tensor.hpp"

namespace kavi {

enum class DomainTag { kSource, kTarget };

std::string domain_tag_name(DomainTag tag);
DomainTag parse_domain_tag(const std::string& name);

// Segmented vibration data for one domain. Segments stay raw; standardization
// happens at model-input time so archives round-trip exactly.
struct SignalDataset {
  Tensor segments;                  // n x window
  std::vector<std::size_t> labels;  // size n, or empty when unlabeled
  DomainTag domain = DomainTag::kSource;
  std::size_t n_classes = 0;
  std::vector<std::string> class_names;  // size n_classes
  std::uint64_t seed = 0;

  std::size_t size() const { return segments.defined() ? segments.dim(0) : 0; }
  std::size_t window() const { return segments.defined() ? segments.dim(1) : 0; }
  bool labeled() const { return !labels.empty(); }
  void validate() const;
};

// One health state's signal signature: a periodic impulse train (fault
// passing frequency) ringing a damped resonance.
struct ClassSpec {
  double impulse_hz = 0.0;    // impulse repetition rate at speed factor 1
  double resonance_hz = 0.0;  // ringing carrier
  double damping = 0.0;       // per-sample envelope decay
  double amplitude = 0.0;     // impulse strength at load factor 1
};

// Generation recipe for one domain. Speed scales every impulse rate, load
// scales every amplitude, noise is white; varying them between two specs
// creates a controlled covariate shift between otherwise identical classes.
struct SynthSpec {
  std::size_t n_classes = 10;
  std::size_t samples_per_class = 100;
  std::size_t window = 1024;
  double overlap = 0.5;
  double sample_rate_hz = 10240.0;
  double speed_factor = 1.0;
  double load_factor = 1.0;
  double noise_level = 0.05;
  double timing_jitter = 0.02;  // fractional impulse-spacing wobble
  std::uint64_t seed = 0;
  std::vector<ClassSpec> classes;  // empty: the default geometric ladder

  // Explicit classes when given, otherwise impulse rates on a geometric
  // ladder with resonance bands cycling over three carriers.
  std::vector<ClassSpec> resolved_classes() const;
  void validate() const;
};

// Pure functions of (spec, seed): identical inputs give identical datasets.
SignalDataset synth_dataset(const SynthSpec& spec, DomainTag domain);
std::pair<SignalDataset, SignalDataset> synth_domain_pair(const SynthSpec& source,
                                                          const SynthSpec& target);

// Sliding windows with stride = window * (1 - overlap); segment i starts at
// i * stride.
Tensor segment_signal(const std::vector<double>& raw, std::size_t window,
                      double overlap);

struct SplitRatios {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
};

struct DatasetSplits {
  SignalDataset train, val, test;
};

// Stratified per class by largest-remainder apportionment, so each class's
// split counts deviate from the exact ratios by less than one sample.
DatasetSplits split_dataset(const SignalDataset& ds, const SplitRatios& ratios,
                            std::uint64_t seed);

SignalDataset subset(const SignalDataset& ds, const std::vector<std::size_t>& indices);

// Per-row zero mean, unit variance; near-constant rows map to zeros instead
// of amplifying noise. Data preparation only, never differentiated.
Tensor standardize_segments(const Tensor& segments);

Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t n_classes);

// Archive layout: little-endian 64-bit raw signal files plus a line-oriented
// manifest "<relative-path>\t<class-name>\t<domain>\t<label-index>". Export
// concatenates each class's segments into one file, so loading with zero
// overlap reproduces the exported tensors bit for bit.
void export_archive(const std::string& root, const std::vector<SignalDataset>& datasets,
                    const std::string& manifest_name);
SignalDataset load_archive(const std::string& root, const std::string& manifest_name,
                           DomainTag domain, std::size_t window, double overlap);

}  // namespace kavi
