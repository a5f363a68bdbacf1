#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "autodiff.hpp"

namespace pedformer {

/// Builds a scalar loss on the given tape. Must be deterministic.
using LossFn = std::function<Var(Tape&)>;

struct ParamCheck {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;  // at worst_index
    double numeric = 0.0;   // at worst_index
    bool pass = true;
};

struct GradCheckReport {
    std::vector<ParamCheck> params;
    double max_rel_error = 0.0;
    std::string worst_param;
    bool pass = true;

    std::vector<std::string> failing() const {
        std::vector<std::string> out;
        for (const auto& p : params)
            if (!p.pass) out.push_back(p.name);
        return out;
    }
};

/// |a - n| / max(1e-8, |a| + |n|).
inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

/// Compares reverse-mode gradients of `loss` against central differences
/// with step `h`, entry by entry, for every listed parameter.
///
/// `fault_op` is forwarded to Tape::inject_fault for negative controls.
/// Parameter values and accumulated gradients are left as they were found.
inline GradCheckReport grad_check(const LossFn& loss, const std::vector<Parameter*>& params, double h, double tol,
                                  const std::string& fault_op = {}) {
    std::vector<Tensor> saved_grads;
    saved_grads.reserve(params.size());
    for (auto* p : params) {
        saved_grads.push_back(p->grad);
        std::fill(p->grad.values().begin(), p->grad.values().end(), 0.0);
    }

    std::vector<Tensor> analytic;
    {
        Tape tape;
        if (!fault_op.empty()) tape.inject_fault(fault_op);
        tape.backward(loss(tape));
        for (auto* p : params) analytic.push_back(p->grad);
    }
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->grad = saved_grads[i];

    auto eval = [&] {
        Tape tape(false);
        return loss(tape).item();
    };

    GradCheckReport report;
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = *params[i];
        ParamCheck pc;
        pc.name = p.name;
        for (std::size_t k = 0; k < p.value.size(); ++k) {
            const double orig = p.value[k];
            p.value[k] = orig + h;
            const double up = eval();
            p.value[k] = orig - h;
            const double down = eval();
            p.value[k] = orig;
            const double numeric = (up - down) / (2.0 * h);
            const double err = relative_error(analytic[i][k], numeric);
            if (k == 0 || err > pc.max_rel_error) {
                pc.max_rel_error = err;
                pc.worst_index = k;
                pc.analytic = analytic[i][k];
                pc.numeric = numeric;
            }
        }
        pc.pass = pc.max_rel_error < tol;
        if (report.worst_param.empty() || pc.max_rel_error > report.max_rel_error) {
            report.max_rel_error = pc.max_rel_error;
            report.worst_param = pc.name;
        }
        report.pass = report.pass && pc.pass;
        report.params.push_back(std::move(pc));
    }
    return report;
}

}  // namespace pedformer
