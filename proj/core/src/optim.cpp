#include "xmetra/optim.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace xmetra {

void ModelState::add(std::string name, Tensor value) {
    if (!value.defined()) throw ContractError("ModelState::add: undefined tensor for " + name);
    if (params_.count(name)) throw ContractError("ModelState::add: duplicate parameter " + name);
    params_.emplace(std::move(name), value.detach());
}

bool ModelState::has(const std::string& name) const { return params_.count(name) != 0; }

const Tensor& ModelState::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("ModelState: unknown parameter " + name);
    return it->second;
}

void ModelState::set(const std::string& name, Tensor value) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("ModelState: unknown parameter " + name);
    if (value.shape() != it->second.shape())
        throw ShapeError("ModelState::set: shape " + shape_str(value.shape()) +
                         " does not match " + shape_str(it->second.shape()) + " for " + name);
    it->second = value.detach();
}

std::size_t ModelState::total_size() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.size();
    return n;
}

void ModelState::save_json(const std::string& path) const {
    nlohmann::json j;
    auto& p = j["params"];
    for (const auto& [name, t] : params_) {
        p[name] = {{"shape", t.shape()}, {"values", t.values()}};
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out << j.dump() << '\n';
    if (!out) throw IoError("failed writing checkpoint: " + path);
}

ModelState ModelState::load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("checkpoint " + path + ": " + e.what());
    }
    if (!j.contains("params")) throw ParseError("checkpoint " + path + ": missing params object");
    ModelState state;
    for (const auto& [name, entry] : j["params"].items()) {
        Shape shape = entry.at("shape").get<Shape>();
        std::vector<double> values = entry.at("values").get<std::vector<double>>();
        state.add(name, Tensor::from(std::move(shape), std::move(values)));
    }
    return state;
}

bool same_values(const ModelState& a, const ModelState& b) {
    if (a.params().size() != b.params().size()) return false;
    for (const auto& [name, t] : a.params()) {
        if (!b.has(name)) return false;
        const Tensor& u = b.at(name);
        if (t.shape() != u.shape() || t.values() != u.values()) return false;
    }
    return true;
}

const Tensor& BoundParams::at(const std::string& name) const {
    auto it = leaves.find(name);
    if (it == leaves.end()) throw ContractError("BoundParams: unknown parameter " + name);
    return it->second;
}

BoundParams bind(const ModelState& state, Tape& tape) {
    BoundParams bound;
    for (const auto& [name, t] : state.params()) bound.leaves.emplace(name, tape.leaf(t));
    return bound;
}

BoundParams bind_eval(const ModelState& state) {
    BoundParams bound;
    for (const auto& [name, t] : state.params()) bound.leaves.emplace(name, t);
    return bound;
}

GradMap collect_grads(const BoundParams& bound) {
    GradMap grads;
    for (const auto& [name, t] : bound.leaves) {
        if (!t.has_grad())
            throw ContractError("collect_grads: no gradient on " + name + " (backward not run?)");
        grads.emplace(name, t.grad());
    }
    return grads;
}

GradMap zero_grads_like(const ModelState& state) {
    GradMap grads;
    for (const auto& [name, t] : state.params())
        grads.emplace(name, std::vector<double>(t.size(), 0.0));
    return grads;
}

void accumulate(GradMap& into, const GradMap& grads) {
    for (const auto& [name, g] : grads) {
        auto it = into.find(name);
        if (it == into.end()) {
            into.emplace(name, g);
            continue;
        }
        if (it->second.size() != g.size())
            throw ContractError("accumulate: gradient size mismatch for " + name);
        for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
    }
}

OptimizerState OptimizerState::sgd(double lr) {
    OptimizerState s;
    s.kind = Kind::Sgd;
    s.learning_rate = lr;
    return s;
}

OptimizerState OptimizerState::adam(double lr, double weight_decay) {
    OptimizerState s;
    s.kind = Kind::Adam;
    s.learning_rate = lr;
    s.weight_decay = weight_decay;
    return s;
}

namespace {

const std::vector<double>& grad_for(const GradMap& grads, const std::string& name,
                                    std::size_t size) {
    auto it = grads.find(name);
    if (it == grads.end())
        throw ContractError("optimizer step: missing gradient entry for " + name);
    if (it->second.size() != size)
        throw ContractError("optimizer step: gradient size mismatch for " + name);
    return it->second;
}

}  // namespace

ModelState sgd_step(const ModelState& params, const GradMap& grads, double alpha,
                    const FreezeMask& frozen) {
    if (alpha < 0.0) throw ContractError("sgd_step: negative learning rate");
    ModelState next;
    for (const auto& [name, t] : params.params()) {
        const std::vector<double>& g = grad_for(grads, name, t.size());
        if (frozen.count(name)) {
            next.add(name, t);
            continue;
        }
        std::vector<double> v = t.values();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= alpha * g[i];
        next.add(name, Tensor::from(t.shape(), std::move(v)));
    }
    return next;
}

ModelState adam_step(const ModelState& params, const GradMap& grads, OptimizerState& state,
                     const FreezeMask& frozen) {
    if (state.kind != OptimizerState::Kind::Adam)
        throw ContractError("adam_step: optimizer state kind is not ADAM");
    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);
    ModelState next;
    for (const auto& [name, param] : params.params()) {
        const std::vector<double>& g = grad_for(grads, name, param.size());
        if (frozen.count(name)) {
            next.add(name, param);
            continue;
        }
        auto& m = state.first_moment[name];
        auto& v = state.second_moment[name];
        if (m.empty()) m.assign(param.size(), 0.0);
        if (v.empty()) v.assign(param.size(), 0.0);
        if (m.size() != param.size() || v.size() != param.size())
            throw ContractError("adam_step: moment shape mismatch for " + name);
        std::vector<double> out = param.values();
        for (std::size_t i = 0; i < out.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            out[i] -= state.learning_rate *
                      (mhat / (std::sqrt(vhat) + state.epsilon) + state.weight_decay * out[i]);
        }
        next.add(name, Tensor::from(param.shape(), std::move(out)));
    }
    return next;
}

ModelState optimizer_step(const ModelState& params, const GradMap& grads, OptimizerState& state,
                          const FreezeMask& frozen) {
    if (state.kind == OptimizerState::Kind::Adam) return adam_step(params, grads, state, frozen);
    return sgd_step(params, grads, state.learning_rate, frozen);
}

}  // namespace xmetra
