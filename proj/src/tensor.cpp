// SPDX-License-Identifier: Apache-2.0

#include "collagan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace collagan {

namespace {
thread_local bool g_grad_enabled = true;
}

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto e : shape) {
        if (e < 0) throw ShapeError("negative extent in shape " + shape_to_string(shape));
        n *= e;
    }
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::vector<double>& detail::Node::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto n = static_cast<std::size_t>(shape_numel(shape));
    return from_data(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape)) {
        throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_to_string(shape));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from_data({}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
    if (!node_) throw std::logic_error("use of undefined tensor");
    return node_->shape;
}

std::int64_t Tensor::dim(int axis) const {
    const auto& s = shape();
    if (axis < 0) axis += static_cast<int>(s.size());
    if (axis < 0 || axis >= static_cast<int>(s.size())) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_to_string(s));
    }
    return s[static_cast<std::size_t>(axis)];
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(node_ ? node_->data.size() : 0); }

std::span<const double> Tensor::data() const {
    shape();
    return node_->data;
}

std::span<double> Tensor::mutable_data() {
    shape();
    return node_->data;
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_to_string(shape()));
    return node_->data[0];
}

double Tensor::at(std::initializer_list<std::int64_t> index) const {
    const auto& s = shape();
    if (index.size() != s.size()) throw ShapeError("index rank mismatch for shape " + shape_to_string(s));
    std::int64_t flat = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        if (i < 0 || i >= s[axis]) throw ShapeError("index out of range on axis " + std::to_string(axis));
        flat = flat * s[axis] + i;
        ++axis;
    }
    return node_->data[static_cast<std::size_t>(flat)];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
    shape();
    node_->requires_grad = value;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    shape();
    return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
    shape();
    return node_->ensure_grad();
}

void Tensor::zero_grad() {
    shape();
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::clear_grad() {
    shape();
    node_->grad.clear();
    node_->grad.shrink_to_fit();
}

Tensor Tensor::detach() const {
    shape();
    return from_data(node_->shape, node_->data, false);
}

Tensor Tensor::make_result(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                           detail::BackwardFn backward_fn) {
    return make_result(std::move(shape), std::move(data), std::vector<Tensor>(inputs), std::move(backward_fn));
}

Tensor Tensor::make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                           detail::BackwardFn backward_fn) {
    Tensor out = from_data(std::move(shape), std::move(data), false);
    if (!g_grad_enabled) return out;
    bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->inputs.reserve(inputs.size());
    for (const auto& t : inputs) out.node_->inputs.push_back(t.node_);
    out.node_->backward_fn = std::move(backward_fn);
    return out;
}

void Tensor::backward() const {
    if (numel() != 1) {
        throw ShapeError("backward() requires a scalar loss, got shape " + shape_to_string(shape()));
    }
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order (inputs before users).
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->inputs.size()) {
            detail::Node* child = n->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    for (auto* n : order) {
        if (!n->is_leaf()) n->grad.assign(n->data.size(), 0.0);
    }
    node_->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->is_leaf()) continue;
        for (auto& in : n->inputs) {
            if (in->requires_grad) in->ensure_grad();
        }
        n->backward_fn(*n);
    }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_mode_enabled() { return g_grad_enabled; }

void check_finite(const Tensor& t, const std::string& what) {
    for (double v : t.data()) {
        if (!std::isfinite(v)) throw NumericError("non-finite value in " + what);
    }
}

}  // namespace collagan
