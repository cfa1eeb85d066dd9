#include "kavi/models.hpp"

#include <cmath>
#include <utility>

#include "kavi/ops.hpp"

namespace kavi {

Tensor kaiming_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  if (fan_in == 0) throw TensorError("kaiming_uniform: fan_in must be positive");
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = dist(rng);
  return Tensor::from_data(std::move(shape), std::move(data), true);
}

Tensor BatchNormState::forward(const Tensor& x, bool training) const {
  return batch_norm(x, gamma, beta, running_mean.mutable_data(),
                    running_var.mutable_data(), training, momentum, eps);
}

namespace {

BatchNormState make_batch_norm(std::size_t width) {
  BatchNormState bn;
  bn.gamma = Tensor::full({width}, 1.0, true);
  bn.beta = Tensor::zeros({width}, true);
  bn.running_mean = Tensor::zeros({width});
  bn.running_var = Tensor::full({width}, 1.0);
  return bn;
}

LinearParams make_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  LinearParams fc;
  fc.w = kaiming_uniform({in, out}, in, rng);
  fc.b = Tensor::zeros({out}, true);
  return fc;
}

void push_linear(std::vector<NamedTensor>& out, const std::string& prefix,
                 const LinearParams& fc) {
  out.emplace_back(prefix + ".w", fc.w);
  out.emplace_back(prefix + ".b", fc.b);
}

void push_batch_norm(std::vector<NamedTensor>& out, const std::string& prefix,
                     const BatchNormState& bn) {
  out.emplace_back(prefix + ".gamma", bn.gamma);
  out.emplace_back(prefix + ".beta", bn.beta);
  out.emplace_back(prefix + ".running_mean", bn.running_mean);
  out.emplace_back(prefix + ".running_var", bn.running_var);
}

std::size_t tensor_count(const std::vector<Tensor>& tensors) {
  std::size_t total = 0;
  for (const Tensor& t : tensors) total += t.size();
  return total;
}

}  // namespace

TeacherModel::TeacherModel(const TeacherConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.n_classes < 2 || cfg.nodes == 0 || cfg.input_len == 0 || cfg.ggl_k == 0 ||
      cfg.arma_stacks == 0 || cfg.fc1_width == 0 || cfg.fc2_width == 0)
    throw TensorError("TeacherModel: invalid dimensions");
  std::mt19937_64 rng(seed);
  std::size_t d_in = cfg.input_len;
  for (std::size_t layer = 0; layer < 3; ++layer) {
    ArmaBlock block;
    for (std::size_t s = 0; s < cfg.arma_stacks; ++s) {
      ArmaLayerParams stack;
      stack.w = kaiming_uniform({d_in, cfg.nodes}, d_in, rng);
      stack.v = kaiming_uniform({d_in, cfg.nodes}, d_in, rng);
      block.stacks.push_back(std::move(stack));
    }
    block.bn = make_batch_norm(cfg.nodes);
    blocks_.push_back(std::move(block));
    d_in = cfg.nodes;
  }
  fc1_ = make_linear(cfg.nodes, cfg.fc1_width, rng);
  fc2_ = make_linear(cfg.fc1_width, cfg.fc2_width, rng);
  fc3_ = make_linear(cfg.fc2_width, cfg.n_classes, rng);
}

TeacherModel::Activations TeacherModel::forward(const Tensor& x, bool training) {
  if (x.rank() != 2 || x.dim(1) != cfg_.input_len)
    throw TensorError("TeacherModel::forward: expected (N x " +
                      std::to_string(cfg_.input_len) + "), got " +
                      shape_to_string(x.shape()));
  const std::size_t k = std::min(cfg_.ggl_k, x.dim(0));
  InstanceGraph graph = build_instance_graph(x, k, /*isolate_zero_rows=*/true);

  Tensor h = x;
  for (const ArmaBlock& block : blocks_) {
    h = armaK_forward(graph, h, block.stacks);
    h = block.bn.forward(h, training);
    h = relu(h);
  }
  Tensor a1 = relu(linear(h, fc1_.w, fc1_.b));
  Tensor a2 = relu(linear(a1, fc2_.w, fc2_.b));
  Tensor logits = linear(a2, fc3_.w, fc3_.b);
  return {a1, a2, logits};
}

std::vector<Tensor> TeacherModel::parameters() const {
  std::vector<Tensor> params;
  for (const ArmaBlock& block : blocks_) {
    for (const ArmaLayerParams& stack : block.stacks) {
      params.push_back(stack.w);
      params.push_back(stack.v);
    }
    params.push_back(block.bn.gamma);
    params.push_back(block.bn.beta);
  }
  for (const LinearParams* fc : {&fc1_, &fc2_, &fc3_}) {
    params.push_back(fc->w);
    params.push_back(fc->b);
  }
  return params;
}

std::vector<NamedTensor> TeacherModel::named_tensors() const {
  std::vector<NamedTensor> named;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const std::string prefix = "arma" + std::to_string(l + 1);
    for (std::size_t s = 0; s < blocks_[l].stacks.size(); ++s) {
      const std::string stack = prefix + ".stack" + std::to_string(s + 1);
      named.emplace_back(stack + ".w", blocks_[l].stacks[s].w);
      named.emplace_back(stack + ".v", blocks_[l].stacks[s].v);
    }
    push_batch_norm(named, prefix + ".bn", blocks_[l].bn);
  }
  push_linear(named, "fc1", fc1_);
  push_linear(named, "fc2", fc2_);
  push_linear(named, "fc3", fc3_);
  return named;
}

StudentModel::StudentModel(const StudentConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.n_classes < 2 || cfg.input_len == 0 || cfg.conv1_filters == 0 ||
      cfg.conv2_filters == 0 || cfg.kernel == 0 || cfg.stride == 0 ||
      cfg.pool_kernel == 0 || cfg.pool_stride == 0 || cfg.fc4_width == 0)
    throw TensorError("StudentModel: invalid dimensions");
  std::mt19937_64 rng(seed);
  conv1_w_ = kaiming_uniform({cfg.conv1_filters, 1, cfg.kernel}, cfg.kernel, rng);
  conv1_b_ = Tensor::zeros({cfg.conv1_filters}, true);
  bn1_ = make_batch_norm(cfg.conv1_filters);
  conv2_w_ = kaiming_uniform({cfg.conv2_filters, cfg.conv1_filters, cfg.kernel},
                             cfg.conv1_filters * cfg.kernel, rng);
  conv2_b_ = Tensor::zeros({cfg.conv2_filters}, true);
  bn2_ = make_batch_norm(cfg.conv2_filters);
  fc4_ = make_linear(cfg.conv2_filters, cfg.fc4_width, rng);
  fc5_ = make_linear(cfg.fc4_width, cfg.n_classes, rng);
}

StudentModel::Activations StudentModel::forward(const Tensor& x, bool training) {
  if (x.rank() != 2 || x.dim(1) != cfg_.input_len)
    throw TensorError("StudentModel::forward: expected (N x " +
                      std::to_string(cfg_.input_len) + "), got " +
                      shape_to_string(x.shape()));
  const std::size_t n = x.dim(0);
  const std::size_t pad = cfg_.kernel / 2;

  Tensor h = reshape(x, {n, 1, cfg_.input_len});
  h = conv1d(h, conv1_w_, conv1_b_, cfg_.stride, pad);
  h = bn1_.forward(h, training);
  h = relu(h);
  h = maxpool1d(h, cfg_.pool_kernel, cfg_.pool_stride);
  h = conv1d(h, conv2_w_, conv2_b_, cfg_.stride, pad);
  h = bn2_.forward(h, training);
  h = relu(h);
  h = global_avg_pool1d(h);

  Tensor a4 = relu(linear(h, fc4_.w, fc4_.b));
  Tensor logits = linear(a4, fc5_.w, fc5_.b);
  return {a4, logits};
}

std::vector<Tensor> StudentModel::parameters() const {
  std::vector<Tensor> params{conv1_w_, conv1_b_, bn1_.gamma, bn1_.beta,
                             conv2_w_, conv2_b_, bn2_.gamma, bn2_.beta};
  for (const LinearParams* fc : {&fc4_, &fc5_}) {
    params.push_back(fc->w);
    params.push_back(fc->b);
  }
  return params;
}

std::vector<NamedTensor> StudentModel::named_tensors() const {
  std::vector<NamedTensor> named;
  named.emplace_back("conv1.w", conv1_w_);
  named.emplace_back("conv1.b", conv1_b_);
  push_batch_norm(named, "conv1.bn", bn1_);
  named.emplace_back("conv2.w", conv2_w_);
  named.emplace_back("conv2.b", conv2_b_);
  push_batch_norm(named, "conv2.bn", bn2_);
  push_linear(named, "fc4", fc4_);
  push_linear(named, "fc5", fc5_);
  return named;
}

std::size_t dense_flops(std::size_t in, std::size_t out) { return 2 * in * out + out; }

std::size_t conv1d_flops(std::size_t c_in, std::size_t c_out, std::size_t kernel,
                         std::size_t out_len) {
  return 2 * kernel * c_in * c_out * out_len + c_out * out_len;
}

std::size_t conv1d_out_len(std::size_t len, std::size_t kernel, std::size_t stride,
                           std::size_t padding) {
  if (len + 2 * padding < kernel) throw TensorError("conv1d_out_len: kernel exceeds input");
  return (len + 2 * padding - kernel) / stride + 1;
}

CostReport cost_report(const TeacherModel& model, std::size_t input_len,
                       std::size_t ref_batch, std::size_t bytes_per_weight) {
  const TeacherConfig& cfg = model.config();
  CostReport report;
  report.parameter_count = tensor_count(model.parameters());
  report.bytes_per_weight = bytes_per_weight;
  report.model_size_bytes = report.parameter_count * bytes_per_weight;

  // Graph construction: 2 per element for the squared-norm accumulation, 1
  // for the rescale, then one similarity row against the reference graph.
  std::size_t flops = 3 * input_len + 2 * input_len * ref_batch;

  std::size_t d_in = input_len;
  for (std::size_t layer = 0; layer < 3; ++layer) {
    const std::size_t w = cfg.nodes;
    // Per stack: dense XW and XV, sparse mixing at ggl_k nonzeros per row,
    // the skip add, and the per-stack ReLU.
    const std::size_t per_stack =
        2 * d_in * w + 2 * d_in * w + 2 * cfg.ggl_k * w + w + w;
    flops += cfg.arma_stacks * per_stack;
    flops += (cfg.arma_stacks - 1) * w;  // summing the stacks
    flops += 2 * w;                      // batch norm + ReLU
    d_in = w;
  }
  flops += dense_flops(cfg.nodes, cfg.fc1_width) + cfg.fc1_width;
  flops += dense_flops(cfg.fc1_width, cfg.fc2_width) + cfg.fc2_width;
  flops += dense_flops(cfg.fc2_width, cfg.n_classes);
  report.flops = flops;
  return report;
}

CostReport cost_report(const StudentModel& model, std::size_t input_len,
                       std::size_t bytes_per_weight) {
  const StudentConfig& cfg = model.config();
  CostReport report;
  report.parameter_count = tensor_count(model.parameters());
  report.bytes_per_weight = bytes_per_weight;
  report.model_size_bytes = report.parameter_count * bytes_per_weight;

  const std::size_t pad = cfg.kernel / 2;
  const std::size_t l1 = conv1d_out_len(input_len, cfg.kernel, cfg.stride, pad);
  const std::size_t l1p = conv1d_out_len(l1, cfg.pool_kernel, cfg.pool_stride, 0);
  const std::size_t l2 = conv1d_out_len(l1p, cfg.kernel, cfg.stride, pad);

  std::size_t flops = conv1d_flops(1, cfg.conv1_filters, cfg.kernel, l1);
  flops += 2 * l1 * cfg.conv1_filters;   // batch norm + ReLU
  flops += l1p * cfg.conv1_filters;      // max pooling, per output element
  flops += conv1d_flops(cfg.conv1_filters, cfg.conv2_filters, cfg.kernel, l2);
  flops += 2 * l2 * cfg.conv2_filters;
  flops += l2 * cfg.conv2_filters;       // global average pooling
  flops += dense_flops(cfg.conv2_filters, cfg.fc4_width) + cfg.fc4_width;
  flops += dense_flops(cfg.fc4_width, cfg.n_classes);
  report.flops = flops;
  return report;
}

}  // namespace kavi
