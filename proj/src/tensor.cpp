#include "kavi/tensor.hpp"

#include <cmath>
#include <sstream>

namespace kavi {

namespace {
bool g_strict_finite = true;
}

void set_strict_finite(bool enabled) { g_strict_finite = enabled; }
bool strict_finite() { return g_strict_finite; }

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ", ";
        out << shape[i];
    }
    out << ']';
    return out.str();
}

bool all_finite(const std::vector<double>& values) {
    for (double v : values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// TensorNode
// ---------------------------------------------------------------------------

std::vector<double>& TensorNode::grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
}

void TensorNode::accumulate_grad(const std::vector<double>& g) {
    auto& buf = grad_buffer();
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::wrap(std::shared_ptr<TensorNode> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto node = std::make_shared<TensorNode>();
    node->data.assign(shape_numel(shape), value);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return wrap(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw TensorError("from_data: shape " + shape_to_string(shape) + " does not match " +
                          std::to_string(data.size()) + " values");
    }
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return wrap(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({}, {value}, requires_grad);
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t.mutable_data()[i * n + i] = 1.0;
    return t;
}

const Shape& Tensor::shape() const {
    if (!node_) throw TensorError("shape(): undefined tensor");
    return node_->shape;
}

std::size_t Tensor::dim(std::size_t i) const {
    const Shape& s = shape();
    if (i >= s.size()) throw TensorError("dim(): index out of range");
    return s[i];
}

std::size_t Tensor::size() const {
    if (!node_) return 0;
    return node_->data.size();
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
    if (!node_) throw TensorError("set_requires_grad(): undefined tensor");
    node_->requires_grad = value;
}

const std::vector<double>& Tensor::data() const {
    if (!node_) throw TensorError("data(): undefined tensor");
    return node_->data;
}

std::vector<double>& Tensor::mutable_data() const {
    if (!node_) throw TensorError("mutable_data(): undefined tensor");
    return node_->data;
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->data.size(); }

const std::vector<double>& Tensor::grad() const {
    if (!node_) throw TensorError("grad(): undefined tensor");
    if (!has_grad()) throw TensorError("grad(): no gradient populated; run backward first");
    return node_->grad;
}

void Tensor::zero_grad() const {
    if (!node_) return;
    node_->grad.assign(node_->data.size(), 0.0);
}

double Tensor::value() const {
    if (size() != 1) {
        throw TensorError("value(): tensor with shape " + shape_to_string(shape()) +
                          " is not a scalar");
    }
    return node_->data[0];
}

double Tensor::at(std::size_t i) const {
    if (rank() != 1) throw TensorError("at(i): rank-1 tensor required");
    return node_->data.at(i);
}

double Tensor::at(std::size_t i, std::size_t j) const {
    if (rank() != 2) throw TensorError("at(i,j): rank-2 tensor required");
    return node_->data.at(i * dim(1) + j);
}

double Tensor::at(std::size_t i, std::size_t j, std::size_t k) const {
    if (rank() != 3) throw TensorError("at(i,j,k): rank-3 tensor required");
    return node_->data.at((i * dim(1) + j) * dim(2) + k);
}

Tensor Tensor::detach() const {
    if (!node_) return {};
    auto node = std::make_shared<TensorNode>();
    node->shape = node_->shape;
    node->data = node_->data;
    node->requires_grad = false;
    return wrap(std::move(node));
}

void Tensor::check_finite(const char* what) const {
    if (!node_) throw TensorError(std::string(what) + ": undefined tensor");
    if (!all_finite(node_->data)) {
        throw TensorError(std::string(what) + ": non-finite values detected");
    }
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Tape& Tape::active() {
    thread_local Tape tape;
    return tape;
}

std::int64_t Tape::record(TapeEntry entry) {
    entries_.push_back(std::move(entry));
    return static_cast<std::int64_t>(entries_.size()) - 1;
}

void Tape::backward(const Tensor& root) {
    if (!root.defined()) throw TensorError("backward: undefined root");
    if (root.size() != 1) {
        throw TensorError("backward: root must be scalar, got shape " +
                          shape_to_string(root.shape()));
    }
    if (consumed_) {
        throw TensorError("backward: tape already consumed; run a new forward pass");
    }
    consumed_ = true;

    auto root_node = root.node();
    root_node->grad_buffer()[0] = 1.0;
    if (root_node->tape_pos < 0) return;  // root is a leaf; nothing upstream

    // Entries are in execution order, so a reverse scan visits every node
    // after all of its consumers.
    std::vector<char> needed(entries_.size(), 0);
    needed[static_cast<std::size_t>(root_node->tape_pos)] = 1;
    for (std::int64_t i = root_node->tape_pos; i >= 0; --i) {
        if (!needed[static_cast<std::size_t>(i)]) continue;
        const TapeEntry& entry = entries_[static_cast<std::size_t>(i)];
        entry.backward();
        for (const auto& input : entry.inputs) {
            if (input->tape_pos >= 0) needed[static_cast<std::size_t>(input->tape_pos)] = 1;
        }
    }
}

void Tape::clear() {
    entries_.clear();
    consumed_ = false;
}

void backward(const Tensor& root) { Tape::active().backward(root); }

NoGradGuard::NoGradGuard() : previous_(Tape::active().recording()) {
    Tape::active().set_recording(false);
}

NoGradGuard::~NoGradGuard() { Tape::active().set_recording(previous_); }

// ---------------------------------------------------------------------------
// Op plumbing
// ---------------------------------------------------------------------------

namespace detail {

Tensor make_op_result(const char* op_name,
                      const std::vector<Tensor>& inputs,
                      Shape out_shape,
                      std::vector<double> out_data,
                      const BackwardBinder& bind_backward) {
    bool any_grad = false;
    for (const Tensor& t : inputs) {
        if (!t.defined()) throw TensorError(std::string(op_name) + ": undefined input");
        if (g_strict_finite && !all_finite(t.data())) {
            throw TensorError(std::string(op_name) + ": non-finite input detected");
        }
        any_grad = any_grad || t.requires_grad();
    }
    if (shape_numel(out_shape) != out_data.size()) {
        throw TensorError(std::string(op_name) + ": internal shape/data mismatch");
    }

    auto out = std::make_shared<TensorNode>();
    out->shape = std::move(out_shape);
    out->data = std::move(out_data);

    Tape& tape = Tape::active();
    if (any_grad && tape.recording()) {
        out->requires_grad = true;
        TapeEntry entry;
        entry.op_name = op_name;
        entry.output = out;
        entry.inputs.reserve(inputs.size());
        for (const Tensor& t : inputs) entry.inputs.push_back(t.node());
        entry.backward = bind_backward(out, entry.inputs);
        out->tape_pos = tape.record(std::move(entry));
    }
    return Tensor::wrap(std::move(out));
}

}  // namespace detail

}  // namespace kavi
