#include "kavi/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace kavi {

std::string domain_tag_name(DomainTag tag) {
  return tag == DomainTag::kSource ? "source" : "target";
}

DomainTag parse_domain_tag(const std::string& name) {
  if (name == "source") return DomainTag::kSource;
  if (name == "target") return DomainTag::kTarget;
  throw TensorError("parse_domain_tag: unknown domain '" + name + "'");
}

void SignalDataset::validate() const {
  if (!segments.defined() || segments.rank() != 2)
    throw TensorError("SignalDataset: segments must be a rank-2 tensor");
  if (n_classes == 0) throw TensorError("SignalDataset: no classes declared");
  if (class_names.size() != n_classes)
    throw TensorError("SignalDataset: class name list does not match n_classes");
  if (!labels.empty()) {
    if (labels.size() != size())
      throw TensorError("SignalDataset: label count does not match segment count");
    for (std::size_t l : labels)
      if (l >= n_classes) throw TensorError("SignalDataset: label out of range");
  }
  segments.check_finite("SignalDataset segments");
}

std::vector<ClassSpec> SynthSpec::resolved_classes() const {
  if (!classes.empty()) {
    if (classes.size() != n_classes)
      throw TensorError("SynthSpec: explicit class list does not match n_classes");
    return classes;
  }
  std::vector<ClassSpec> ladder(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    ladder[c].impulse_hz = 40.0 * std::pow(1.25, static_cast<double>(c));
    ladder[c].resonance_hz = 800.0 * static_cast<double>(1 + c % 3);
    ladder[c].damping = 0.02;
    ladder[c].amplitude = 1.0 + 0.1 * static_cast<double>(c);
  }
  return ladder;
}

void SynthSpec::validate() const {
  if (n_classes == 0) throw TensorError("SynthSpec: need at least one class");
  if (samples_per_class == 0) throw TensorError("SynthSpec: need at least one sample per class");
  if (window < 16) throw TensorError("SynthSpec: window too short");
  if (overlap < 0.0 || overlap >= 1.0)
    throw TensorError("SynthSpec: overlap must lie in [0, 1)");
  if (sample_rate_hz <= 0.0) throw TensorError("SynthSpec: sample rate must be positive");
  if (speed_factor <= 0.0 || load_factor <= 0.0)
    throw TensorError("SynthSpec: speed and load factors must be positive");
  if (noise_level < 0.0) throw TensorError("SynthSpec: negative noise level");
  if (timing_jitter < 0.0 || timing_jitter > 0.45)
    throw TensorError("SynthSpec: timing jitter must lie in [0, 0.45]");

  const double nyquist = sample_rate_hz / 2.0;
  for (const ClassSpec& cls : resolved_classes()) {
    if (cls.impulse_hz <= 0.0 || cls.resonance_hz <= 0.0)
      throw TensorError("SynthSpec: frequencies must be positive");
    if (cls.resonance_hz >= nyquist)
      throw TensorError("SynthSpec: resonance at or above Nyquist");
    const double scaled = cls.impulse_hz * speed_factor;
    if (scaled >= nyquist) throw TensorError("SynthSpec: impulse rate at or above Nyquist");
    // Every window must see multiple impulses, or a segment can miss the
    // class signature entirely.
    const double spacing = sample_rate_hz / scaled;
    if (spacing > static_cast<double>(window) / 2.0)
      throw TensorError("SynthSpec: impulse spacing exceeds half a window");
    if (cls.damping <= 0.0) throw TensorError("SynthSpec: damping must be positive");
    if (cls.amplitude <= 0.0) throw TensorError("SynthSpec: amplitude must be positive");
  }
}

namespace {

std::size_t segment_stride(std::size_t window, double overlap) {
  const auto stride =
      static_cast<std::size_t>(static_cast<double>(window) * (1.0 - overlap) + 1e-9);
  return std::max<std::size_t>(1, stride);
}

std::mt19937_64 class_rng(std::uint64_t seed, std::size_t c) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(c)};
  return std::mt19937_64(seq);
}

// Damped ringing normalized to unit peak, truncated once the envelope falls
// three decades.
std::vector<double> resonance_kernel(double resonance_hz, double damping,
                                     double sample_rate_hz, std::size_t window) {
  const double omega = 2.0 * std::numbers::pi * resonance_hz / sample_rate_hz;
  const auto decay_len = static_cast<std::size_t>(std::log(1000.0) / damping) + 1;
  const std::size_t len = std::min(window, decay_len);
  std::vector<double> h(len);
  double peak = 0.0;
  for (std::size_t t = 0; t < len; ++t) {
    h[t] = std::exp(-damping * static_cast<double>(t)) *
           std::sin(omega * static_cast<double>(t));
    peak = std::max(peak, std::abs(h[t]));
  }
  if (peak < 1e-9)
    throw TensorError("resonance_kernel: degenerate carrier, kernel is numerically zero");
  for (double& v : h) v /= peak;
  return h;
}

std::vector<double> synth_class_signal(const SynthSpec& spec, const ClassSpec& cls,
                                       std::size_t length, std::mt19937_64& rng) {
  const double spacing = spec.sample_rate_hz / (cls.impulse_hz * spec.speed_factor);
  const double amp = cls.amplitude * spec.load_factor;

  std::vector<double> impulses(length, 0.0);
  std::uniform_real_distribution<double> phase(0.0, spacing);
  std::uniform_real_distribution<double> jitter(-spec.timing_jitter, spec.timing_jitter);
  for (double pos = phase(rng); pos < static_cast<double>(length);
       pos += spacing * (1.0 + jitter(rng))) {
    const auto idx = static_cast<std::size_t>(std::llround(pos));
    if (idx < length) impulses[idx] += amp;
  }

  const std::vector<double> kernel =
      resonance_kernel(cls.resonance_hz, cls.damping, spec.sample_rate_hz, spec.window);
  std::vector<double> signal(length, 0.0);
  for (std::size_t t = 0; t < length; ++t) {
    if (impulses[t] == 0.0) continue;
    const std::size_t reach = std::min(kernel.size(), length - t);
    for (std::size_t k = 0; k < reach; ++k) signal[t + k] += impulses[t] * kernel[k];
  }

  if (spec.noise_level > 0.0) {
    std::normal_distribution<double> noise(0.0, spec.noise_level);
    for (double& v : signal) v += noise(rng);
  }
  return signal;
}

}  // namespace

SignalDataset synth_dataset(const SynthSpec& spec, DomainTag domain) {
  spec.validate();
  const std::vector<ClassSpec> classes = spec.resolved_classes();
  const std::size_t stride = segment_stride(spec.window, spec.overlap);
  const std::size_t length = spec.window + stride * (spec.samples_per_class - 1);

  std::vector<double> segments;
  segments.reserve(spec.n_classes * spec.samples_per_class * spec.window);
  std::vector<std::size_t> labels;
  labels.reserve(spec.n_classes * spec.samples_per_class);

  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    // Seeded per class but not per domain, so identical specs produce
    // identical datasets (the zero-shift baseline).
    std::mt19937_64 rng = class_rng(spec.seed, c);
    const std::vector<double> signal = synth_class_signal(spec, classes[c], length, rng);
    Tensor segs = segment_signal(signal, spec.window, spec.overlap);
    segments.insert(segments.end(), segs.data().begin(), segs.data().end());
    labels.insert(labels.end(), segs.dim(0), c);
  }

  SignalDataset ds;
  ds.segments = Tensor::from_data({labels.size(), spec.window}, std::move(segments));
  ds.labels = std::move(labels);
  ds.domain = domain;
  ds.n_classes = spec.n_classes;
  for (std::size_t c = 0; c < spec.n_classes; ++c)
    ds.class_names.push_back("class_" + std::to_string(c));
  ds.seed = spec.seed;
  ds.validate();
  return ds;
}

std::pair<SignalDataset, SignalDataset> synth_domain_pair(const SynthSpec& source,
                                                          const SynthSpec& target) {
  source.validate();
  target.validate();
  if (source.n_classes != target.n_classes || source.window != target.window ||
      source.sample_rate_hz != target.sample_rate_hz)
    throw TensorError("synth_domain_pair: mismatched class structures");
  const auto sc = source.resolved_classes(), tc = target.resolved_classes();
  for (std::size_t c = 0; c < sc.size(); ++c) {
    if (sc[c].impulse_hz != tc[c].impulse_hz || sc[c].resonance_hz != tc[c].resonance_hz ||
        sc[c].damping != tc[c].damping || sc[c].amplitude != tc[c].amplitude)
      throw TensorError("synth_domain_pair: mismatched class structures");
  }
  return {synth_dataset(source, DomainTag::kSource),
          synth_dataset(target, DomainTag::kTarget)};
}

Tensor segment_signal(const std::vector<double>& raw, std::size_t window,
                      double overlap) {
  if (window == 0) throw TensorError("segment_signal: zero window");
  if (raw.size() < window)
    throw TensorError("segment_signal: signal shorter than one window");
  if (overlap < 0.0 || overlap >= 1.0)
    throw TensorError("segment_signal: overlap must lie in [0, 1)");
  const std::size_t stride = segment_stride(window, overlap);
  const std::size_t count = (raw.size() - window) / stride + 1;
  std::vector<double> out(count * window);
  for (std::size_t i = 0; i < count; ++i)
    std::copy_n(raw.begin() + static_cast<std::ptrdiff_t>(i * stride), window,
                out.begin() + static_cast<std::ptrdiff_t>(i * window));
  return Tensor::from_data({count, window}, std::move(out));
}

SignalDataset subset(const SignalDataset& ds, const std::vector<std::size_t>& indices) {
  const std::size_t w = ds.window();
  std::vector<double> rows(indices.size() * w);
  std::vector<std::size_t> labels;
  labels.reserve(ds.labeled() ? indices.size() : 0);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t i = indices[r];
    if (i >= ds.size()) throw TensorError("subset: index out of range");
    std::copy_n(ds.segments.data().begin() + static_cast<std::ptrdiff_t>(i * w), w,
                rows.begin() + static_cast<std::ptrdiff_t>(r * w));
    if (ds.labeled()) labels.push_back(ds.labels[i]);
  }
  SignalDataset out = ds;
  out.segments = Tensor::from_data({indices.size(), w}, std::move(rows));
  out.labels = std::move(labels);
  return out;
}

DatasetSplits split_dataset(const SignalDataset& ds, const SplitRatios& ratios,
                            std::uint64_t seed) {
  ds.validate();
  if (!ds.labeled()) throw TensorError("split_dataset: stratification needs labels");
  if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9)
    throw TensorError("split_dataset: ratios must sum to 1");
  if (ratios.train <= 0.0 || ratios.val <= 0.0 || ratios.test <= 0.0)
    throw TensorError("split_dataset: ratios must be positive");

  std::vector<std::vector<std::size_t>> by_class(ds.n_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);

  std::vector<std::size_t> train, val, test;
  for (std::size_t c = 0; c < ds.n_classes; ++c) {
    auto& members = by_class[c];
    const std::size_t m = members.size();
    if (m < 3)
      throw TensorError("split_dataset: class " + std::to_string(c) +
                        " has fewer than 3 samples");
    std::mt19937_64 rng = class_rng(seed, c);
    std::shuffle(members.begin(), members.end(), rng);

    // Largest-remainder apportionment keeps every bucket within one sample
    // of its exact share.
    const double shares[3] = {ratios.train * m, ratios.val * m, ratios.test * m};
    std::size_t counts[3];
    double remainders[3];
    std::size_t assigned = 0;
    for (int b = 0; b < 3; ++b) {
      counts[b] = static_cast<std::size_t>(shares[b]);
      remainders[b] = shares[b] - static_cast<double>(counts[b]);
      assigned += counts[b];
    }
    std::size_t order[3] = {0, 1, 2};
    std::stable_sort(order, order + 3,
                     [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
    for (std::size_t leftover = m - assigned, r = 0; r < leftover; ++r) ++counts[order[r]];

    std::size_t cursor = 0;
    for (std::size_t r = 0; r < counts[0]; ++r) train.push_back(members[cursor++]);
    for (std::size_t r = 0; r < counts[1]; ++r) val.push_back(members[cursor++]);
    for (std::size_t r = 0; r < counts[2]; ++r) test.push_back(members[cursor++]);
  }
  return {subset(ds, train), subset(ds, val), subset(ds, test)};
}

Tensor standardize_segments(const Tensor& segments) {
  if (segments.rank() != 2) throw TensorError("standardize_segments: expected rank-2");
  const std::size_t n = segments.dim(0), w = segments.dim(1);
  segments.check_finite("standardize_segments input");
  std::vector<double> out(n * w);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = segments.data().data() + i * w;
    double mean = 0.0;
    for (std::size_t t = 0; t < w; ++t) mean += row[t];
    mean /= static_cast<double>(w);
    double var = 0.0;
    for (std::size_t t = 0; t < w; ++t) var += (row[t] - mean) * (row[t] - mean);
    var /= static_cast<double>(w);
    const double sd = std::sqrt(var);
    const double inv = sd < 1e-12 ? 0.0 : 1.0 / sd;  // constant rows become zeros
    for (std::size_t t = 0; t < w; ++t) out[i * w + t] = (row[t] - mean) * inv;
  }
  return Tensor::from_data({n, w}, std::move(out));
}

Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t n_classes) {
  if (n_classes == 0) throw TensorError("one_hot: need at least one class");
  std::vector<double> rows(labels.size() * n_classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= n_classes) throw TensorError("one_hot: label out of range");
    rows[i * n_classes + labels[i]] = 1.0;
  }
  return Tensor::from_data({labels.size(), n_classes}, std::move(rows));
}

namespace {

void write_f64_le(std::ofstream& file, const std::vector<double>& values) {
  std::string bytes;
  bytes.reserve(values.size() * 8);
  for (double v : values) {
    const auto u = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>((u >> (8 * i)) & 0xffu));
  }
  file.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::vector<double> read_f64_le(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw TensorError("load_archive: missing file " + path);
  std::string bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  if (bytes.size() % 8 != 0)
    throw TensorError("load_archive: " + path + " is not a whole number of 64-bit samples");
  std::vector<double> values(bytes.size() / 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t u = 0;
    for (int b = 0; b < 8; ++b)
      u |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i * 8 + b])) << (8 * b);
    values[i] = std::bit_cast<double>(u);
  }
  return values;
}

struct ManifestEntry {
  std::string path;
  std::string class_name;
  DomainTag domain;
  std::size_t label;
};

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream file(path);
  if (!file) throw TensorError("load_archive: cannot open manifest " + path);
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(file, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 4)
      throw TensorError("load_archive: manifest line " + std::to_string(lineno) +
                        " needs 4 tab-separated fields");
    ManifestEntry e;
    e.path = fields[0];
    e.class_name = fields[1];
    e.domain = parse_domain_tag(fields[2]);
    try {
      std::size_t consumed = 0;
      e.label = std::stoul(fields[3], &consumed);
      if (consumed != fields[3].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw TensorError("load_archive: bad label index on manifest line " +
                        std::to_string(lineno));
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace

void export_archive(const std::string& root, const std::vector<SignalDataset>& datasets,
                    const std::string& manifest_name) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  std::ostringstream manifest;
  std::set<std::string> used_names;

  for (const SignalDataset& ds : datasets) {
    ds.validate();
    if (!ds.labeled()) throw TensorError("export_archive: dataset has no labels");
    const std::size_t w = ds.window();
    for (std::size_t c = 0; c < ds.n_classes; ++c) {
      std::vector<double> samples;
      for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.labels[i] != c) continue;
        const double* row = ds.segments.data().data() + i * w;
        samples.insert(samples.end(), row, row + w);
      }
      if (samples.empty()) continue;
      const std::string name =
          domain_tag_name(ds.domain) + "_" + ds.class_names[c] + ".f64";
      if (!used_names.insert(name).second)
        throw TensorError("export_archive: duplicate file name " + name);
      std::ofstream file(fs::path(root) / name, std::ios::binary | std::ios::trunc);
      if (!file) throw TensorError("export_archive: cannot write " + name);
      write_f64_le(file, samples);
      manifest << name << '\t' << ds.class_names[c] << '\t'
               << domain_tag_name(ds.domain) << '\t' << c << '\n';
    }
  }

  std::ofstream file(fs::path(root) / manifest_name, std::ios::trunc);
  if (!file) throw TensorError("export_archive: cannot write manifest");
  file << manifest.str();
}

SignalDataset load_archive(const std::string& root, const std::string& manifest_name,
                           DomainTag domain, std::size_t window, double overlap) {
  namespace fs = std::filesystem;
  const auto entries = read_manifest((fs::path(root) / manifest_name).string());
  if (entries.empty()) throw TensorError("load_archive: empty manifest");

  // Class structure is shared across domains, so names and labels must agree
  // over the whole manifest, not just the requested domain.
  std::map<std::size_t, std::string> label_to_name;
  for (const ManifestEntry& e : entries) {
    auto [it, inserted] = label_to_name.emplace(e.label, e.class_name);
    if (!inserted && it->second != e.class_name)
      throw TensorError("load_archive: label " + std::to_string(e.label) +
                        " maps to conflicting class names");
  }
  const std::size_t n_classes = label_to_name.rbegin()->first + 1;
  if (label_to_name.size() != n_classes)
    throw TensorError("load_archive: label indices are not contiguous from 0");

  std::vector<double> segments;
  std::vector<std::size_t> labels;
  for (const ManifestEntry& e : entries) {
    if (e.domain != domain) continue;
    const std::vector<double> raw = read_f64_le((fs::path(root) / e.path).string());
    if (!all_finite(raw))
      throw TensorError("load_archive: non-finite samples in " + e.path);
    Tensor segs = segment_signal(raw, window, overlap);
    segments.insert(segments.end(), segs.data().begin(), segs.data().end());
    labels.insert(labels.end(), segs.dim(0), e.label);
  }
  if (labels.empty())
    throw TensorError("load_archive: no " + domain_tag_name(domain) +
                      " entries, dataset would be empty");

  SignalDataset ds;
  ds.segments = Tensor::from_data({labels.size(), window}, std::move(segments));
  ds.labels = std::move(labels);
  ds.domain = domain;
  ds.n_classes = n_classes;
  for (std::size_t c = 0; c < n_classes; ++c) ds.class_names.push_back(label_to_name[c]);
  ds.validate();
  return ds;
}

}  // namespace kavi
