#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "xmetra/tensor.hpp"

namespace xmetra {

using GradMap = std::map<std::string, std::vector<double>>;
// Parameter names excluded from optimizer updates.
using FreezeMask = std::set<std::string>;

// Flat named-parameter collection (the meta-learner's theta). Values are
// detached tensors; training steps produce fresh states.
class ModelState {
public:
    void add(std::string name, Tensor value);
    bool has(const std::string& name) const;
    const Tensor& at(const std::string& name) const;
    void set(const std::string& name, Tensor value);  // shape-checked replace
    const std::map<std::string, Tensor>& params() const { return params_; }
    std::size_t total_size() const;
    bool empty() const { return params_.empty(); }

    // Checkpoint format: JSON {"params": {name: {"shape": [...], "values": [...]}}}
    void save_json(const std::string& path) const;
    static ModelState load_json(const std::string& path);

private:
    std::map<std::string, Tensor> params_;
};

bool same_values(const ModelState& a, const ModelState& b);  // bit-exact compare

// Tape-watched view of a ModelState for one forward pass.
struct BoundParams {
    std::map<std::string, Tensor> leaves;
    const Tensor& at(const std::string& name) const;
};

// Train/eval switch for a forward pass; the dropout seed makes training
// masks replayable.
struct ForwardMode {
    bool training = false;
    std::uint64_t dropout_seed = 0;
};

// Attach every parameter to `tape` as a watched leaf.
BoundParams bind(const ModelState& state, Tape& tape);
// Plain detached view for evaluation-only forwards.
BoundParams bind_eval(const ModelState& state);

// Gradients of all bound leaves after backward (zeros when unreachable).
GradMap collect_grads(const BoundParams& bound);
GradMap zero_grads_like(const ModelState& state);
void accumulate(GradMap& into, const GradMap& grads);

struct OptimizerState {
    enum class Kind { Sgd, Adam };
    Kind kind = Kind::Sgd;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;  // decoupled, applied at the update
    std::int64_t step_count = 0;
    std::map<std::string, std::vector<double>> first_moment;
    std::map<std::string, std::vector<double>> second_moment;

    static OptimizerState sgd(double lr);
    static OptimizerState adam(double lr, double weight_decay = 0.0);
};

// theta' = theta - alpha * grad. Result is detached (first-order semantics).
ModelState sgd_step(const ModelState& params, const GradMap& grads, double alpha,
                    const FreezeMask& frozen = {});

// Bias-corrected Adam with decoupled weight decay; advances `state` in place.
// Frozen parameters keep values and moments untouched.
ModelState adam_step(const ModelState& params, const GradMap& grads, OptimizerState& state,
                     const FreezeMask& frozen = {});

// Dispatch on state.kind at state.learning_rate.
ModelState optimizer_step(const ModelState& params, const GradMap& grads, OptimizerState& state,
                          const FreezeMask& frozen = {});

}  // namespace xmetra
