#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "autodiff.hpp"

namespace pedformer {

/// RMSProp with optional L2 on parameters whose weight_decay is non-zero:
///
///     g <- g + weight_decay * theta
///     s <- rho * s + (1 - rho) * g^2
///     theta <- theta - lr * g / (sqrt(s) + eps)
class RmsProp {
public:
    struct Options {
        double rho = 0.9;
        double eps = 1e-7;
        /// Global gradient-norm clip; 0 disables.
        double clip_norm = 0.0;
    };

    RmsProp() = default;
    explicit RmsProp(Options opt) : opt_(opt) {}

    const Options& options() const { return opt_; }

    /// Applies one update from the accumulated gradients in `params`.
    void step(const std::vector<Parameter*>& params, double lr) {
        if (state_.size() != params.size()) {
            state_.clear();
            for (auto* p : params) state_.emplace_back(p->value.size(), 0.0);
        }
        std::vector<std::vector<double>> grads(params.size());
        double norm2 = 0.0;
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto* p = params[i];
            auto& g = grads[i];
            g.assign(p->grad.data().begin(), p->grad.data().end());
            if (p->weight_decay != 0.0)
                for (std::size_t k = 0; k < g.size(); ++k) g[k] += p->weight_decay * p->value[k];
            for (double v : g) norm2 += v * v;
        }
        double scale = 1.0;
        if (opt_.clip_norm > 0.0) {
            const double norm = std::sqrt(norm2);
            if (norm > opt_.clip_norm) scale = opt_.clip_norm / norm;
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto* p = params[i];
            auto& s = state_[i];
            auto theta = p->value.data();
            for (std::size_t k = 0; k < s.size(); ++k) {
                const double g = grads[i][k] * scale;
                s[k] = opt_.rho * s[k] + (1.0 - opt_.rho) * g * g;
                theta[k] -= lr * g / (std::sqrt(s[k]) + opt_.eps);
            }
        }
    }

    const std::vector<std::vector<double>>& state() const { return state_; }

private:
    Options opt_;
    std::vector<std::vector<double>> state_;
};

/// Multiplies the learning rate by `factor` after `patience` consecutive
/// epochs without an improvement larger than `threshold`.
class PlateauScheduler {
public:
    struct Options {
        double factor = 0.2;
        std::size_t patience = 10;
        double threshold = 1e-4;
        double min_lr = 1e-7;
    };

    explicit PlateauScheduler(double lr) : PlateauScheduler(lr, Options{}) {}
    PlateauScheduler(double lr, Options opt) : lr_(lr), opt_(opt) {}

    double lr() const { return lr_; }
    std::size_t reductions() const { return reductions_; }

    /// Records one validation loss; returns the learning rate for the next epoch.
    double observe(double val_loss) {
        if (val_loss < best_ - opt_.threshold) {
            best_ = val_loss;
            stale_ = 0;
        } else if (++stale_ >= opt_.patience) {
            const double next = std::max(opt_.min_lr, lr_ * opt_.factor);
            if (next < lr_) ++reductions_;
            lr_ = next;
            stale_ = 0;
        }
        return lr_;
    }

private:
    double lr_;
    Options opt_;
    double best_ = std::numeric_limits<double>::infinity();
    std::size_t stale_ = 0;
    std::size_t reductions_ = 0;
};

}  // namespace pedformer
