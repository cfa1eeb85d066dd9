#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "kavi/checkpoint.hpp"
#include "kavi/graph.hpp"
#include "kavi/tensor.hpp"

namespace kavi {

// Fully connected layer: weight (in x out) plus bias (out).
struct LinearParams {
  Tensor w;
  Tensor b;
};

// Trainable scale/shift plus running statistics. Training forwards normalize
// with batch moments and update the running buffers in place; inference
// forwards use the frozen buffers.
struct BatchNormState {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  Tensor forward(const Tensor& x, bool training) const;
};

// Uniform on (-sqrt(6/fan_in), sqrt(6/fan_in)), the fan-in scaling that keeps
// forward variance level across ReLU layers.
Tensor kaiming_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng);

struct TeacherConfig {
  std::size_t n_classes = 10;
  std::size_t nodes = 128;      // graph-convolution layer width
  std::size_t input_len = 1024;
  std::size_t ggl_k = 2;        // neighbors kept per row of the instance graph
  std::size_t arma_stacks = 3;  // parallel stacks summed inside each layer
  std::size_t fc1_width = 256;
  std::size_t fc2_width = 128;
};

// Graph-convolutional Teacher: an instance graph built over the minibatch,
// three graph-filter layers (each a sum of parallel stacks, then batch norm
// and ReLU), and a three-layer classifier head. The two hidden head
// activations are exposed because the alignment losses consume them.
class TeacherModel {
public:
  struct Activations {
    Tensor fc1;     // N x fc1_width, post-ReLU
    Tensor fc2;     // N x fc2_width, post-ReLU
    Tensor logits;  // N x n_classes
  };

  TeacherModel(const TeacherConfig& cfg, std::uint64_t seed);

  // x is (N x input_len). Batches smaller than ggl_k+1 clamp the neighbor
  // count so single-sample batches still forward.
  Activations forward(const Tensor& x, bool training);

  const TeacherConfig& config() const { return cfg_; }
  std::vector<Tensor> parameters() const;
  std::vector<NamedTensor> named_tensors() const;

private:
  struct ArmaBlock {
    std::vector<ArmaLayerParams> stacks;
    BatchNormState bn;
  };

  TeacherConfig cfg_;
  std::vector<ArmaBlock> blocks_;
  LinearParams fc1_, fc2_, fc3_;
};

struct StudentConfig {
  std::size_t n_classes = 10;
  std::size_t input_len = 1024;
  std::size_t conv1_filters = 16;
  std::size_t conv2_filters = 32;
  std::size_t kernel = 3;
  std::size_t stride = 2;
  std::size_t pool_kernel = 2;
  std::size_t pool_stride = 2;
  std::size_t fc4_width = 128;
};

// Compact convolutional Student: two strided conv blocks, global average
// pooling, one hidden FC layer and a classifier. The hidden activation is
// exposed because it stands in for the Teacher's head features when the
// Student is adapted directly.
class StudentModel {
public:
  struct Activations {
    Tensor fc4;     // N x fc4_width, post-ReLU
    Tensor logits;  // N x n_classes
  };

  StudentModel(const StudentConfig& cfg, std::uint64_t seed);

  Activations forward(const Tensor& x, bool training);

  const StudentConfig& config() const { return cfg_; }
  std::vector<Tensor> parameters() const;
  std::vector<NamedTensor> named_tensors() const;

private:
  StudentConfig cfg_;
  Tensor conv1_w_, conv1_b_;
  BatchNormState bn1_;
  Tensor conv2_w_, conv2_b_;
  BatchNormState bn2_;
  LinearParams fc4_, fc5_;
};

// Accounting conventions shared by the cost reports: a multiply-accumulate
// costs 2, bias adds / batch norm / activations / pooling cost 1 per output
// element, and graph mixing is charged per adjacency nonzero.
std::size_t dense_flops(std::size_t in, std::size_t out);
std::size_t conv1d_flops(std::size_t c_in, std::size_t c_out, std::size_t kernel,
                         std::size_t out_len);
std::size_t conv1d_out_len(std::size_t len, std::size_t kernel, std::size_t stride,
                           std::size_t padding);

struct CostReport {
  std::size_t parameter_count = 0;
  std::size_t bytes_per_weight = 4;
  std::size_t model_size_bytes = 0;  // parameter_count * bytes_per_weight
  std::size_t flops = 0;             // one forward pass, per sample

  friend bool operator==(const CostReport&, const CostReport&) = default;
};

// Per-sample forward cost. The Teacher's similarity row is charged against a
// reference graph of `ref_batch` nodes (graphs are minibatch-sized, so the
// per-sample cost depends on the batch); size defaults to the 32-bit
// deployment figure, pass 8 for the 64-bit training footprint.
CostReport cost_report(const TeacherModel& model, std::size_t input_len,
                       std::size_t ref_batch = 128, std::size_t bytes_per_weight = 4);
CostReport cost_report(const StudentModel& model, std::size_t input_len,
                       std::size_t bytes_per_weight = 4);

}  // namespace kavi
