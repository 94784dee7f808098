// SPDX-License-Identifier: Apache-2.0
//
// Dense 64-bit tensor with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a shared graph node. Ops create new nodes
// that remember their inputs and a backward rule whenever at least one input
// requires a gradient and gradient recording is enabled. Calling backward() on
// a scalar visits the reachable graph once in reverse topological order and
// accumulates gradients additively into every node that requires them.
//
// Storage is row-major: for an image tensor [B,C,H,W] the flat index of
// (b,c,y,x) is ((b*C + c)*H + y)*W + x.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace collagan {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Raised when tensor extents do not fit an operation. The message names the
/// offending axis.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a computation produces or consumes a non-finite value.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

struct Node;
using BackwardFn = std::function<void(Node& self)>;

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first needed
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    BackwardFn backward_fn;  // empty for leaves

    bool is_leaf() const { return !backward_fn; }
    std::vector<double>& ensure_grad();
};

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }

    const Shape& shape() const;
    std::int64_t dim(int axis) const;
    int rank() const { return static_cast<int>(shape().size()); }
    std::int64_t numel() const;

    std::span<const double> data() const;
    /// Mutable view of the values. Only meaningful for leaves (parameters,
    /// inputs); mutating an interior node does not re-run its producers.
    std::span<double> mutable_data();
    double item() const;
    double at(std::initializer_list<std::int64_t> index) const;

    bool requires_grad() const;
    void set_requires_grad(bool value);

    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();
    /// Releases the gradient buffer; has_grad() is false afterwards.
    void clear_grad();

    /// Copy of the values with no graph history.
    Tensor detach() const;
    Tensor clone() const { return detach(); }

    /// Reverse-mode sweep from this scalar. Leaf gradients accumulate across
    /// calls; interior gradients are recomputed on every call.
    void backward() const;

    /// Identity of the underlying node (two handles can alias one node).
    const void* id() const { return node_.get(); }

    // Used by op implementations.
    static Tensor make_result(Shape shape, std::vector<double> data,
                              std::initializer_list<Tensor> inputs,
                              detail::BackwardFn backward_fn);
    static Tensor make_result(Shape shape, std::vector<double> data,
                              const std::vector<Tensor>& inputs,
                              detail::BackwardFn backward_fn);
    std::shared_ptr<detail::Node> node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_mode_enabled();

/// Throws NumericError naming `what` if any value is NaN or infinite.
void check_finite(const Tensor& t, const std::string& what);

}  // namespace collagan
