#include "xmetra/tensor.hpp"

#include <sstream>

namespace xmetra {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

// ---------------------------------------------------------------- Tensor

Tensor Tensor::zeros(Shape shape) {
    return full(std::move(shape), 0.0);
}

Tensor Tensor::full(Shape shape, double value) {
    for (std::size_t d : shape)
        if (d == 0) throw ShapeError("tensor: zero dimension in shape " + shape_str(shape));
    auto node = std::make_shared<detail::TensorNode>();
    node->values.assign(shape_numel(shape), value);
    node->shape = std::move(shape);
    return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
    if (values.size() != shape_numel(shape))
        throw ShapeError("tensor: " + std::to_string(values.size()) +
                         " values do not fill shape " + shape_str(shape));
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) {
    return from({1}, {value});
}

const Shape& Tensor::shape() const {
    if (!node_) throw UsageError("tensor: undefined");
    return node_->shape;
}

std::size_t Tensor::size() const {
    if (!node_) throw UsageError("tensor: undefined");
    return node_->values.size();
}

const std::vector<double>& Tensor::values() const {
    if (!node_) throw UsageError("tensor: undefined");
    return node_->values;
}

double Tensor::value() const {
    if (size() != 1)
        throw ContractError("tensor: value() on non-scalar of shape " + shape_str(shape()));
    return node_->values[0];
}

double Tensor::at(std::size_t i) const {
    return values().at(i);
}

bool Tensor::attached() const {
    return node_ && node_->tape != nullptr;
}

Tape* Tensor::tape() const {
    return node_ ? node_->tape : nullptr;
}

Tensor Tensor::detach() const {
    if (!node_) throw UsageError("tensor: undefined");
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = node_->shape;
    node->values = node_->values;
    return Tensor(std::move(node));
}

bool Tensor::has_grad() const {
    return node_ && !node_->grad.empty();
}

const std::vector<double>& Tensor::grad() const {
    if (!node_) throw UsageError("tensor: undefined");
    if (node_->grad.empty())
        throw UsageError("tensor: no gradient present (backward not run or tensor detached)");
    return node_->grad;
}

// ------------------------------------------------------------------ Tape

Tensor Tape::leaf(const Tensor& src) {
    if (!src.defined()) throw UsageError("tape: leaf() on undefined tensor");
    if (backward_run_) throw UsageError("tape: cannot record after backward");
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = src.node_->shape;
    node->values = src.node_->values;
    node->tape = this;
    node->leaf = true;
    leaves_.push_back(node);
    return Tensor(std::move(node));
}

void Tape::record(std::function<void()> backprop) {
    if (backward_run_) throw UsageError("tape: cannot record after backward");
    nodes_.push_back(OpNode{std::move(backprop)});
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined()) throw ContractError("backward: undefined loss");
    if (loss.size() != 1)
        throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    if (loss.node_->tape != this)
        throw ContractError("backward: loss was not recorded on this tape");
    if (backward_run_) throw UsageError("backward: already run on this tape; re-record the forward pass");
    backward_run_ = true;

    loss.node_->grad.assign(1, 1.0);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        it->backprop();
    }
    // Unreachable watched leaves hold zero.
    for (auto& leaf : leaves_) leaf->ensure_grad();
}

}  // namespace xmetra
