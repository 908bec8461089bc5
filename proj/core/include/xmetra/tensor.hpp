#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "xmetra/errors.hpp"

namespace xmetra {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until backward reaches this node
    Tape* tape = nullptr;      // nullptr = detached
    bool leaf = false;

    std::size_t numel() const { return values.size(); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(values.size(), 0.0);
    }
};

}  // namespace detail

// Dense f64 tensor. A cheap handle: copies share the underlying node.
// Detached tensors are plain values; tensors attached to a Tape take part
// in reverse-mode differentiation.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor from(Shape shape, std::vector<double> values);
    static Tensor scalar(double value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t size() const;
    const std::vector<double>& values() const;
    double value() const;           // requires size() == 1
    double at(std::size_t i) const; // flat row-major index

    bool attached() const;
    Tape* tape() const;
    // Value copy with no tape linkage; never receives gradient.
    Tensor detach() const;

    bool has_grad() const;
    const std::vector<double>& grad() const;

private:
    friend class Tape;
    friend struct OpKit;
    explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::TensorNode> node_;
};

// Record of one define-by-run forward pass. Rebuilt per evaluation; a single
// backward pass is allowed per tape.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Register a watched leaf: a copy of `src` attached to this tape.
    // Gradients accumulate on the returned tensor during backward.
    Tensor leaf(const Tensor& src);

    // Reverse sweep from a scalar loss recorded on this tape. After the call
    // every watched leaf holds a gradient (zeros when unreachable).
    void backward(const Tensor& loss);

    bool backward_run() const { return backward_run_; }
    std::size_t node_count() const { return nodes_.size(); }

private:
    friend struct OpKit;
    struct OpNode {
        std::function<void()> backprop;
    };
    void record(std::function<void()> backprop);

    std::vector<OpNode> nodes_;
    std::vector<std::shared_ptr<detail::TensorNode>> leaves_;
    bool backward_run_ = false;
};

}  // namespace xmetra
