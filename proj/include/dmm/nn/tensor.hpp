#pragma once

// Tensors with a dynamically recorded reverse-mode graph.
//
// Every op result keeps its parents and a backward function that maps the
// output gradient to parent gradients using ordinary differentiable ops, so
// gradients can themselves be differentiated (needed for the input-gradient
// penalty of the critic).

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "dmm/errors.hpp"

namespace dmm::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape)
{
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        s += (i ? "," : "") + std::to_string(shape[i]);
    }
    return s + "]";
}

template <class T>
class Tensor;

namespace detail {

template <class T>
struct Node {
    using BackwardFn =
        std::function<std::vector<Tensor<T>>(const Tensor<T>& out, const Tensor<T>& grad, const std::vector<bool>& needs)>;

    Shape shape;
    std::vector<T> value;
    std::vector<std::shared_ptr<Node>> parents;
    BackwardFn backward;
    const char* op = "leaf";
    bool requires_grad = false;
};

inline bool& grad_mode_flag()
{
    thread_local bool enabled = true;
    return enabled;
}

} // namespace detail

inline bool grad_mode_enabled() { return detail::grad_mode_flag(); }

/// Scoped switch for graph recording.
class GradMode {
public:
    explicit GradMode(bool enabled) : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = enabled; }
    ~GradMode() { detail::grad_mode_flag() = previous_; }
    GradMode(const GradMode&) = delete;
    GradMode& operator=(const GradMode&) = delete;

private:
    bool previous_;
};

struct NoGrad : GradMode {
    NoGrad() : GradMode(false) {}
};

template <class T>
class Tensor {
public:
    using Node = detail::Node<T>;
    using value_type = T;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor constant(Shape shape, std::vector<T> values)
    {
        if (numel_of(shape) != values.size()) {
            throw ShapeError("constant of shape " + shape_str(shape) + " given " + std::to_string(values.size()) +
                             " values");
        }
        auto node = std::make_shared<Node>();
        node->shape = std::move(shape);
        node->value = std::move(values);
        return Tensor(std::move(node));
    }

    static Tensor zeros(Shape shape)
    {
        const std::size_t n = numel_of(shape);
        return constant(std::move(shape), std::vector<T>(n, T(0)));
    }

    static Tensor full(Shape shape, T v)
    {
        const std::size_t n = numel_of(shape);
        return constant(std::move(shape), std::vector<T>(n, v));
    }

    static Tensor scalar(T v) { return constant({1}, {v}); }

    /// Leaf that gradients are taken with respect to.
    static Tensor parameter(Shape shape, std::vector<T> values)
    {
        Tensor t = constant(std::move(shape), std::move(values));
        t.node_->requires_grad = true;
        return t;
    }

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->value.size(); }
    std::span<const T> values() const { return node_->value; }
    /// Direct access for leaves (parameter updates, loading).
    std::vector<T>& mutable_values() { return node_->value; }
    T item() const
    {
        if (numel() != 1) {
            throw ShapeError("item() on tensor of shape " + shape_str(shape()));
        }
        return node_->value[0];
    }
    T operator[](std::size_t i) const { return node_->value[i]; }

    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
    const char* op() const { return node_->op; }
    std::size_t parent_count() const { return node_->parents.size(); }
    Tensor parent(std::size_t i) const { return Tensor(node_->parents.at(i)); }

    /// Same values, cut from the graph.
    Tensor detach() const { return constant(shape(), node_->value); }

    Node* node() const noexcept { return node_.get(); }
    const std::shared_ptr<Node>& node_ptr() const noexcept { return node_; }

private:
    std::shared_ptr<Node> node_;
};

namespace detail {

template <class T>
void check_finite(const char* op, const std::vector<T>& v)
{
    // all-ones exponent marks Inf/NaN; the branch-free sweep vectorizes
    using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    constexpr Bits exp_mask = sizeof(T) == 4 ? Bits(0x7f800000u) : Bits(0x7ff0000000000000ull);
    Bits bad = 0;
    for (const T x : v) {
        bad |= static_cast<Bits>((std::bit_cast<Bits>(x) & exp_mask) == exp_mask);
    }
    if (bad) {
        throw NumericError(std::string("non-finite value produced by ") + op);
    }
}

/// Builds an op result, recording the graph only when some input needs gradients.
template <class T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> values, std::initializer_list<Tensor<T>> inputs,
                      typename Node<T>::BackwardFn backward)
{
    check_finite(op, values);
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->op = op;
    if (grad_mode_enabled()) {
        bool any = false;
        for (const auto& in : inputs) {
            any = any || in.requires_grad();
        }
        if (any) {
            node->requires_grad = true;
            node->backward = std::move(backward);
            node->parents.reserve(inputs.size());
            for (const auto& in : inputs) {
                node->parents.push_back(in.node_ptr());
            }
        }
    }
    return Tensor<T>(std::move(node));
}

template <class T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> values, const std::vector<Tensor<T>>& inputs,
                      typename Node<T>::BackwardFn backward)
{
    check_finite(op, values);
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->op = op;
    if (grad_mode_enabled()) {
        const bool any = std::any_of(inputs.begin(), inputs.end(), [](const auto& in) { return in.requires_grad(); });
        if (any) {
            node->requires_grad = true;
            node->backward = std::move(backward);
            for (const auto& in : inputs) {
                node->parents.push_back(in.node_ptr());
            }
        }
    }
    return Tensor<T>(std::move(node));
}

} // namespace detail

} // namespace dmm::nn
