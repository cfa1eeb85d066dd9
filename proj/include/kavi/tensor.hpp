#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace kavi {

class TensorError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);
bool all_finite(const std::vector<double>& values);

// Strict mode makes every primitive reject non-finite inputs instead of
// letting NaN/Inf flow into losses. On by default.
void set_strict_finite(bool enabled);
bool strict_finite();

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;      // sized lazily on first accumulation
    bool requires_grad = false;
    std::int64_t tape_pos = -1;    // entry that produced this node, -1 for leaves

    std::size_t numel() const { return data.size(); }
    void accumulate_grad(const std::vector<double>& g);
    std::vector<double>& grad_buffer();  // allocates zeros on demand
};

// Dense 64-bit tensor with value semantics over a shared node. Data is
// immutable once the node has been consumed by a primitive; grad buffers
// are the only mutable state after construction.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor identity(std::size_t n);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t i) const;
    std::size_t size() const;
    bool requires_grad() const;
    void set_requires_grad(bool value);

    const std::vector<double>& data() const;
    std::vector<double>& mutable_data() const;

    bool has_grad() const;
    const std::vector<double>& grad() const;
    void zero_grad() const;

    double value() const;                       // scalar tensors only
    double at(std::size_t i) const;
    double at(std::size_t i, std::size_t j) const;
    double at(std::size_t i, std::size_t j, std::size_t k) const;

    // Copy of the values with no tape history and no grad requirement.
    Tensor detach() const;

    void check_finite(const char* what) const;

    std::shared_ptr<TensorNode> node() const { return node_; }
    static Tensor wrap(std::shared_ptr<TensorNode> node);

private:
    std::shared_ptr<TensorNode> node_;
};

// ---------------------------------------------------------------------------
// Computation tape
// ---------------------------------------------------------------------------

struct TapeEntry {
    std::vector<std::shared_ptr<TensorNode>> inputs;
    std::shared_ptr<TensorNode> output;
    std::function<void()> backward;  // reads output->grad, accumulates into inputs
    const char* op_name = "";
};

// Records primitive applications in execution order (hence topological
// order). One backward pass per forward; clear() starts the next one.
class Tape {
public:
    static Tape& active();

    bool recording() const { return enabled_; }
    void set_recording(bool enabled) { enabled_ = enabled; }

    std::int64_t record(TapeEntry entry);
    std::size_t size() const { return entries_.size(); }
    bool consumed() const { return consumed_; }

    // Reverse-mode sweep from a scalar root. Populates grad buffers of every
    // reachable node that requires grad; visits each entry at most once.
    void backward(const Tensor& root);

    void clear();

private:
    std::vector<TapeEntry> entries_;
    bool enabled_ = true;
    bool consumed_ = false;
};

void backward(const Tensor& root);

// Disables tape recording for inference-style forwards.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

namespace detail {

using BackwardFn = std::function<void()>;
using BackwardBinder = std::function<BackwardFn(
    const std::shared_ptr<TensorNode>& out,
    const std::vector<std::shared_ptr<TensorNode>>& inputs)>;

// Shared helper for primitive implementations: validates inputs under strict
// mode, builds the output node, and records a tape entry when any input
// requires grad. The binder is only invoked when recording happens.
Tensor make_op_result(const char* op_name,
                      const std::vector<Tensor>& inputs,
                      Shape out_shape,
                      std::vector<double> out_data,
                      const BackwardBinder& bind_backward);

}  // namespace detail

}  // namespace kavi
