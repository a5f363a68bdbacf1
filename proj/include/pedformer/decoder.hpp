#pragma once

#include <string>
#include <vector>

#include "layers.hpp"
#include "model_config.hpp"

namespace pedformer {

/// Differentiable outputs of one forward pass.
struct PredictionVars {
    Var boxes;      // tau x 4, normalized
    Var crossing;   // 1 x 1 probability
    Var cells;      // 1 x N*M distribution
};

/// Repeats a 1 x n row tau times: tau x n.
inline Var repeat_rows(Var row_vec, std::size_t times) {
    return matmul(row_vec.tape().constant(Tensor({times, 1}, 1.0)), row_vec);
}

/// Context rows Psi^t = psi_cm + psi_int + em^t (concatenation), tau x C.
inline Var decoder_context(Var summary, Var future_ego) {
    return concat({repeat_rows(summary, future_ego.shape()[0]), future_ego}, 1);
}

/// Bidirectional shared decoder, three task decoders and the prediction heads.
///
///     h_sd   = [LSTM_fwd(Psi), LSTM_bwd(Psi)]
///     x^t    = sigmoid(h_sd^t) * h_sd^t  +  Psi^t   (concatenated)
///     h_j    = LSTM_j(x)    j in {trajectory, action, location}
class GatedDecoder {
public:
    GatedDecoder() = default;

    GatedDecoder(const ModelConfig& cfg, std::size_t context_dim, ParameterStore& store, Rng& rng,
                 const std::string& name = "decoder")
        : cfg_(cfg), context_dim_(context_dim) {
        const std::size_t h = cfg.lstm_hidden;
        if (cfg.decoder != DecoderVariant::task_based) {
            forward_ = Lstm::create(store, name + ".shared_fwd", context_dim, h, rng);
            backward_ = Lstm::create(store, name + ".shared_bwd", context_dim, h, rng);
        }
        if (cfg.decoder == DecoderVariant::shared_only) {
            traj_head_ = Linear::create(store, name + ".traj_head", 2 * h, 4, rng);
            act_head_ = Linear::create(store, name + ".act_head", 2 * h, 1, rng);
            cell_head_ = Linear::create(store, name + ".cell_head", 2 * h, cfg.num_cells(), rng);
            return;
        }
        const std::size_t in = cfg.decoder == DecoderVariant::task_based ? context_dim : 2 * h + context_dim;
        traj_ = Lstm::create(store, name + ".traj", in, h, rng, CellActivation::tanh);
        act_ = Lstm::create(store, name + ".act", in, h, rng, CellActivation::softsign);
        cell_ = Lstm::create(store, name + ".cell", in, h, rng, CellActivation::softsign);
        traj_head_ = Linear::create(store, name + ".traj_head", h, 4, rng);
        act_head_ = Linear::create(store, name + ".act_head", h, 1, rng);
        cell_head_ = Linear::create(store, name + ".cell_head", h, cfg.num_cells(), rng);
    }

    std::size_t context_dim() const { return context_dim_; }

    /// tau x 2H: forward and backward hidden states per step.
    Var shared_decode(Var context) const {
        const auto fwd = forward_.run(context);
        const auto bwd = backward_.run(context, true);
        return concat({fwd.hidden_sequence(), bwd.hidden_sequence()}, 1);
    }

    /// Self-gated shared output concatenated with the context.
    Var gate_input(Var shared, Var context) const {
        const bool gated = cfg_.decoder == DecoderVariant::gated_hybrid && !cfg_.unit_gate;
        return concat({gated ? self_gate(shared) : shared, context}, 1);
    }

    LstmTrace task_decode(Var input, const Lstm& unit) const { return unit.run(input); }

    /// Per-step boxes; in delta mode `last_box` (1 x 4) is added to every row.
    Var predict_trajectory(Var hidden, const Var* last_box = nullptr) const {
        Var boxes = traj_head_(hidden);
        if (cfg_.trajectory_mode == TrajectoryMode::delta && last_box) boxes = add(boxes, repeat_rows(*last_box, boxes.shape()[0]));
        return boxes;
    }

    /// Mean over steps of the per-step sigmoid: 1 x 1.
    Var predict_action(Var hidden) const { return mean_rows(sigmoid(act_head_(hidden))); }

    /// Mean over steps of the per-step softmax: 1 x N*M.
    Var predict_discrete_location(Var hidden) const { return mean_rows(softmax(cell_head_(hidden), 1)); }

    PredictionVars decode(Var context, const Var* last_box = nullptr) const {
        if (context.shape()[1] != context_dim_)
            throw DimensionError("decoder: context width " + std::to_string(context.shape()[1]) + ", expected " +
                                 std::to_string(context_dim_));
        if (cfg_.decoder == DecoderVariant::shared_only) {
            const Var h = shared_decode(context);
            return {predict_trajectory(h, last_box), predict_action(h), predict_discrete_location(h)};
        }
        const Var x = cfg_.decoder == DecoderVariant::task_based ? context : gate_input(shared_decode(context), context);
        return {predict_trajectory(task_decode(x, traj_).hidden_sequence(), last_box),
                predict_action(task_decode(x, act_).hidden_sequence()),
                predict_discrete_location(task_decode(x, cell_).hidden_sequence())};
    }

    const Lstm& trajectory_unit() const { return traj_; }
    const Lstm& action_unit() const { return act_; }
    const Lstm& location_unit() const { return cell_; }
    const Lstm& shared_forward_unit() const { return forward_; }
    const Lstm& shared_backward_unit() const { return backward_; }
    const Linear& trajectory_head() const { return traj_head_; }
    const Linear& action_head() const { return act_head_; }
    const Linear& location_head() const { return cell_head_; }

private:
    ModelConfig cfg_;
    std::size_t context_dim_ = 0;
    Lstm forward_, backward_;
    Lstm traj_, act_, cell_;
    Linear traj_head_, act_head_, cell_head_;
};

}  // namespace pedformer
