#pragma once

#include <span>
#include <string>
#include <vector>

#include "decoder.hpp"
#include "json_config.hpp"

namespace pedformer {

inline constexpr double kProbabilityClamp = 1e-7;

struct ClassWeights {
    double crossing = 1.0;
    double non_crossing = 1.0;
};

/// Crossing weight N_noncross / N_cross; non-crossing weight 1. Falls back to
/// 1 when either class is absent.
inline ClassWeights class_weights(std::size_t crossing, std::size_t non_crossing) {
    ClassWeights w;
    if (crossing > 0 && non_crossing > 0) w.crossing = static_cast<double>(non_crossing) / static_cast<double>(crossing);
    return w;
}

struct LossWeights {
    double trajectory = 0.6;
    double action = 1.0;
    double location = 1.0;
    ClassWeights classes;

    static LossWeights pie() { return {0.6, 1.0, 1.0, {}}; }
    static LossWeights jaad() { return {0.5, 1.0, 1.0, {}}; }
};

inline nlohmann::json to_json(const LossWeights& w) {
    return {{"trajectory", w.trajectory}, {"action", w.action}, {"location", w.location}};
}

inline void loss_weights_from_json(const nlohmann::json& j, LossWeights& w, std::vector<std::string>& problems,
                                   const std::string& scope) {
    JsonFields f(j, scope, problems);
    f.read("trajectory", w.trajectory);
    f.read("action", w.action);
    f.read("location", w.location);
    if (w.trajectory < 0 || w.action < 0 || w.location < 0) problems.push_back(scope + ": loss weights must be non-negative");
}

/// Sum over steps and coordinates of log(cosh(pred - target)).
inline Var logcosh_loss(Var pred, Var target) {
    detail::require_same_shape(pred.value(), target.value(), "logcosh_loss");
    return sum(log_cosh(sub(pred, target)));
}

/// Weighted negative log-likelihood of a binary label, probability clamped.
inline Var bce_action(Var prob, int label, const ClassWeights& w) {
    if (prob.value().size() != 1) throw DimensionError("bce_action: expected a single probability, got " + shape_str(prob.shape()));
    if (label != 0 && label != 1) throw ContractError("bce_action: label must be 0 or 1");
    const Var p = clamp(prob, kProbabilityClamp, 1.0 - kProbabilityClamp);
    const Var ll = label == 1 ? log(p) : log(affine(p, -1.0, 1.0));
    return reshape(affine(ll, -(label == 1 ? w.crossing : w.non_crossing)), {1});
}

/// -log(distribution[target]), probability clamped.
inline Var ce_discrete(Var distribution, std::size_t target) {
    if (target >= distribution.value().size())
        throw ContractError("ce_discrete: target cell " + std::to_string(target) + " outside " +
                            std::to_string(distribution.value().size()) + " cells");
    return reshape(affine(log(clamp(pick(distribution, target), kProbabilityClamp, 1.0 - kProbabilityClamp)), -1.0), {1});
}

/// Ground truth for one sample.
struct Targets {
    Tensor boxes;  // tau x 4, normalized
    int crossing = 0;
    std::size_t cell = 0;
};

/// Per-task losses of one batch, each already averaged over the batch.
struct LossTerms {
    Var total;
    Var trajectory;
    Var action;
    Var location;
};

/// Weighted sum of the three task losses, averaged over the batch.
inline LossTerms total_loss(std::span<const PredictionVars> preds, std::span<const Targets> targets, const LossWeights& w) {
    if (preds.empty() || preds.size() != targets.size()) throw ContractError("total_loss: prediction and target counts differ");
    Tape& t = preds[0].boxes.tape();
    const double inv = 1.0 / static_cast<double>(preds.size());
    Var traj, act, loc;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const Var l = logcosh_loss(preds[i].boxes, t.constant(targets[i].boxes));
        const Var a = bce_action(preds[i].crossing, targets[i].crossing, w.classes);
        const Var c = ce_discrete(preds[i].cells, targets[i].cell);
        traj = i == 0 ? l : add(traj, l);
        act = i == 0 ? a : add(act, a);
        loc = i == 0 ? c : add(loc, c);
    }
    traj = affine(traj, inv);
    act = affine(act, inv);
    loc = affine(loc, inv);
    const Var total = add(add(affine(traj, w.trajectory), affine(act, w.action)), affine(loc, w.location));
    return {total, traj, act, loc};
}

}  // namespace pedformer
