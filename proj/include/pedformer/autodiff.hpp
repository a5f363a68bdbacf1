#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tensor.hpp"

namespace pedformer {

using Rng = std::mt19937_64;

/// A named trainable tensor with its accumulated gradient.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    /// L2 coefficient added to the gradient by the optimizer.
    double weight_decay = 0.0;
};

/// Owns the parameters of one model. Names are unique.
///
/// Parameters live behind stable pointers, so layers may keep `Parameter*`
/// handles across moves of the store.
class ParameterStore {
public:
    ParameterStore() = default;
    ParameterStore(ParameterStore&&) noexcept = default;
    ParameterStore& operator=(ParameterStore&&) noexcept = default;
    ParameterStore(const ParameterStore&) = delete;
    ParameterStore& operator=(const ParameterStore&) = delete;

    Parameter& add(std::string name, Tensor init, double weight_decay = 0.0) {
        if (index_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
        auto p = std::make_unique<Parameter>();
        p->name = name;
        p->grad = Tensor(init.shape());
        p->value = std::move(init);
        p->weight_decay = weight_decay;
        Parameter& ref = *p;
        index_.emplace(std::move(name), p.get());
        params_.push_back(std::move(p));
        return ref;
    }

    Parameter* find(std::string_view name) {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : it->second;
    }
    const Parameter* find(std::string_view name) const {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : it->second;
    }
    Parameter& at(std::string_view name) {
        if (auto* p = find(name)) return *p;
        throw ContractError("no parameter named '" + std::string(name) + "'");
    }

    std::size_t size() const noexcept { return params_.size(); }

    /// Total number of scalar weights.
    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p->value.size();
        return n;
    }

    /// Parameters in registration order.
    std::vector<Parameter*> list() const {
        std::vector<Parameter*> out;
        out.reserve(params_.size());
        for (const auto& p : params_) out.push_back(p.get());
        return out;
    }

    void zero_grad() {
        for (auto& p : params_) std::fill(p->grad.values().begin(), p->grad.values().end(), 0.0);
    }

    std::map<std::string, Tensor> gradients() const {
        std::map<std::string, Tensor> out;
        for (const auto& p : params_) out.emplace(p->name, p->grad);
        return out;
    }

    std::map<std::string, Tensor> snapshot() const {
        std::map<std::string, Tensor> out;
        for (const auto& p : params_) out.emplace(p->name, p->value);
        return out;
    }

    /// Overwrites values by name; every parameter must be present with its exact shape.
    void restore(const std::map<std::string, Tensor>& values) {
        for (auto& p : params_) {
            auto it = values.find(p->name);
            if (it == values.end()) throw ContractError("missing value for parameter '" + p->name + "'");
            if (it->second.shape() != p->value.shape())
                throw DimensionError("parameter '" + p->name + "' expects " + shape_str(p->value.shape()) +
                                     ", got " + shape_str(it->second.shape()));
            p->value = it->second;
        }
    }

private:
    std::vector<std::unique_ptr<Parameter>> params_;
    std::map<std::string, Parameter*, std::less<>> index_;
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
public:
    Var() = default;

    Tape& tape() const { return *tape_; }
    std::size_t id() const noexcept { return id_; }
    bool valid() const noexcept { return tape_ != nullptr; }

    inline const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    double item() const { return value().item(); }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Records a forward computation in evaluation order and replays it backwards.
///
/// Nodes are appended as operations execute, so every node's inputs precede it.
/// One tape serves one forward/backward pass and must stay on one thread.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    struct Node {
        std::string_view op;
        Tensor value;
        std::vector<double> grad;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        Parameter* param = nullptr;
        bool requires_grad = false;
    };

    /// With `grad_enabled == false` nothing is kept for the backward pass.
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value) {
        check_finite("constant", value);
        Node n;
        n.op = "constant";
        n.value = std::move(value);
        nodes_.push_back(std::move(n));
        return Var(this, nodes_.size() - 1);
    }

    /// Leaf for a parameter. Repeated calls return the same node.
    Var param(Parameter& p) {
        if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
        Node n;
        n.op = "parameter";
        n.value = p.value;
        n.param = &p;
        n.requires_grad = grad_enabled_;
        nodes_.push_back(std::move(n));
        param_nodes_.emplace(&p, nodes_.size() - 1);
        return Var(this, nodes_.size() - 1);
    }

    /// Appends the result of an operation. `op` must have static storage duration.
    Var record(std::string_view op, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
        check_finite(op, value);
        Node n;
        n.op = op;
        n.value = std::move(value);
        if (grad_enabled_) {
            for (auto i : inputs) n.requires_grad = n.requires_grad || nodes_.at(i).requires_grad;
        }
        if (n.requires_grad) {
            n.inputs = std::move(inputs);
            n.backward = std::move(backward);
        }
        nodes_.push_back(std::move(n));
        return Var(this, nodes_.size() - 1);
    }

    const Node& node(std::size_t id) const { return nodes_.at(id); }
    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    std::size_t size() const noexcept { return nodes_.size(); }
    const std::deque<Node>& nodes() const noexcept { return nodes_; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    bool grad_enabled() const noexcept { return grad_enabled_; }

    /// Gradient buffer of a node, allocated on first use.
    std::span<double> grad(std::size_t id) {
        auto& n = nodes_[id];
        if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
        return n.grad;
    }

    /// Negates the backward contribution of every node with this op name.
    /// Exists to prove that gradient checks catch broken rules.
    void inject_fault(std::string op) { fault_op_ = std::move(op); }

    void set_check_finite(bool on) noexcept { check_finite_ = on; }

    /// Propagates d(loss)/d(node) to every node and adds the result into the
    /// `grad` of each parameter reached.
    void backward(Var loss) {
        if (loss.tape_ != this) throw ContractError("backward: loss belongs to another tape");
        if (backward_done_) throw ContractError("backward: tape already replayed");
        const auto& ln = nodes_.at(loss.id_);
        if (ln.value.size() != 1)
            throw ContractError("backward: loss must be scalar, got shape " + shape_str(ln.value.shape()));
        backward_done_ = true;
        if (!ln.requires_grad) return;
        grad(loss.id_)[0] += 1.0;
        for (std::size_t i = loss.id_ + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || n.grad.empty()) continue;
            if (n.param) {
                auto& g = n.param->grad.values();
                for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
                continue;
            }
            if (!n.backward) continue;
            if (!fault_op_.empty() && n.op == fault_op_)
                for (auto& g : n.grad) g = -g;
            n.backward(*this, i);
        }
    }

private:
    void check_finite(std::string_view op, const Tensor& t) const {
        if (!check_finite_) return;
        for (double v : t.values())
            if (!std::isfinite(v)) throw NonFiniteError("non-finite value produced by op '" + std::string(op) + "'");
    }

    std::deque<Node> nodes_;
    std::unordered_map<const Parameter*, std::size_t> param_nodes_;
    std::string fault_op_;
    bool grad_enabled_ = true;
    bool check_finite_ = true;
    bool backward_done_ = false;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

/// Runs backward and returns the gradient of every parameter in `store`.
/// Parameters the loss does not reach report zeros (after `zero_grad`).
inline std::map<std::string, Tensor> backward(Var loss, ParameterStore& store) {
    loss.tape().backward(loss);
    return store.gradients();
}

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot_uniform(const Shape& shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Tensor t(shape);
    for (auto& v : t.values()) v = dist(rng);
    return t;
}

}  // namespace pedformer
