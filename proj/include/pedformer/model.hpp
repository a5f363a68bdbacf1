#pragma once

#include <optional>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "decoder.hpp"
#include "encoder.hpp"
#include "saim.hpp"

namespace pedformer {

/// Everything one forward pass reads, already scaled for the network.
struct ModelInput {
    ObservedInputs observed;
    Tensor future_ego;  // tau x 3
    Tensor patches;     // np x (4 ps^2); empty when the scene module is off
    Tensor last_box;    // 1 x 4, last observed normalized box
};

/// Scales a sample's features; `map` is required unless the scene module is off.
inline ModelInput make_model_input(const Sample& s, const SemanticMap* map, const ModelConfig& cfg) {
    const std::size_t o = s.obs_len(), tau = s.pred_len();
    if (o != cfg.obs_len || tau != cfg.pred_len)
        throw DimensionError("sample has o=" + std::to_string(o) + ", tau=" + std::to_string(tau) + " but the model expects o=" +
                             std::to_string(cfg.obs_len) + ", tau=" + std::to_string(cfg.pred_len));
    ModelInput in;
    in.observed.location = s.obs_boxes;
    in.observed.velocity = s.obs_velocities;
    for (auto& v : in.observed.velocity.data()) v *= cfg.velocity_gain;
    in.observed.cells = s.obs_cells;
    for (auto c : s.obs_cells)
        if (c >= cfg.num_cells()) throw DimensionError("sample cell id " + std::to_string(c) + " exceeds the grid");
    in.observed.ego = Tensor({o, 3});
    in.future_ego = Tensor({tau, 3});
    for (std::size_t t = 0; t < o + tau; ++t)
        for (std::size_t k = 0; k < 3; ++k) {
            const double v = s.ego.at(t, k) / cfg.ego_scale[k];
            if (t < o) in.observed.ego.at(t, k) = v;
            else in.future_ego.at(t - o, k) = v;
        }
    in.last_box = Tensor({1, 4});
    for (std::size_t k = 0; k < 4; ++k) in.last_box[k] = s.obs_boxes.at(o - 1, k);
    if (cfg.saim != SaimVariant::off) {
        if (!map) throw ContractError("scene map '" + s.map_ref + "' is required by the scene module");
        in.patches = scene_patches(*map, cfg);
    }
    return in;
}

/// Plain-value predictions for one sample.
struct Prediction {
    Tensor boxes;                 // tau x 4, normalized
    double crossing_prob = 0.0;
    std::vector<double> cells;    // N*M distribution
};

inline Prediction to_prediction(const PredictionVars& v) {
    return {v.boxes.value(), v.crossing.item(), v.cells.value().values()};
}

/// Multi-task predictor: cross-modal encoder, scene interaction module and
/// gated decoder over one parameter store.
class PedFormer {
public:
    explicit PedFormer(const ModelConfig& cfg, std::uint64_t seed = 0) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(seed);
        encoder_ = CrossModalEncoder(cfg_, store_, rng);
        std::size_t context = encoder_.output_dim() + 3;
        if (cfg_.saim != SaimVariant::off) {
            saim_ = SceneInteraction(cfg_, store_, rng);
            context += saim_.output_dim();
        }
        decoder_ = GatedDecoder(cfg_, context, store_, rng);
    }

    PedFormer(PedFormer&&) noexcept = default;
    PedFormer& operator=(PedFormer&&) noexcept = default;
    PedFormer(const PedFormer&) = delete;
    PedFormer& operator=(const PedFormer&) = delete;

    const ModelConfig& config() const { return cfg_; }
    ParameterStore& parameters() { return store_; }
    const ParameterStore& parameters() const { return store_; }
    const CrossModalEncoder& encoder() const { return encoder_; }
    const SceneInteraction& scene() const { return saim_; }
    const GatedDecoder& decoder() const { return decoder_; }

    /// Context rows for the decoder: tau x (|psi_cm| + |psi_int| + 3).
    Var context(Tape& t, const ModelInput& in) const {
        const Var cm = encoder_.encode(t, in.observed);
        Var summary = cm;
        if (cfg_.saim != SaimVariant::off)
            summary = concat({cm, saim_.encode(t, in.patches, in.observed.location, in.observed.ego)}, 1);
        return decoder_context(summary, t.constant(in.future_ego));
    }

    PredictionVars forward(Tape& t, const ModelInput& in) const {
        const Var last = t.constant(in.last_box);
        return decoder_.decode(context(t, in), &last);
    }

    Prediction predict(const ModelInput& in) const {
        Tape t(false);
        return to_prediction(forward(t, in));
    }

    /// Input and recurrent weight matrices of every recurrent unit.
    std::vector<Parameter*> recurrent_parameters() const {
        std::vector<Parameter*> out;
        for (auto* p : store_.list()) {
            const auto& n = p->name;
            if (n.ends_with(".lstm.w") || n.ends_with(".lstm.u")) out.push_back(p);
        }
        return out;
    }

    Checkpoint to_checkpoint(nlohmann::json meta = nlohmann::json::object()) const {
        meta["model"] = to_json(cfg_);
        return make_checkpoint(store_, std::move(meta));
    }

    /// Copies tensors into the matching parameters; names and shapes must agree.
    void load(const Checkpoint& ckpt) {
        std::vector<std::string> problems;
        for (auto* p : store_.list()) {
            auto it = ckpt.tensors.find(p->name);
            if (it == ckpt.tensors.end()) problems.push_back("checkpoint lacks parameter '" + p->name + "'");
            else if (it->second.shape() != p->value.shape())
                problems.push_back("parameter '" + p->name + "' has shape " + shape_str(it->second.shape()) + " in checkpoint, " +
                                   shape_str(p->value.shape()) + " in model");
        }
        for (const auto& [name, _] : ckpt.tensors)
            if (!store_.find(name)) problems.push_back("checkpoint has unknown parameter '" + name + "'");
        if (!problems.empty()) throw ConfigError(problems);
        for (auto* p : store_.list()) p->value = ckpt.tensors.at(p->name);
    }

    /// Rebuilds a model from a checkpoint carrying its configuration.
    static PedFormer from_checkpoint(const Checkpoint& ckpt) {
        if (!ckpt.meta.contains("model")) throw ConfigError("checkpoint has no model configuration");
        PedFormer m(model_config_from_json(ckpt.meta.at("model")));
        m.load(ckpt);
        return m;
    }

private:
    ModelConfig cfg_;
    ParameterStore store_;
    CrossModalEncoder encoder_;
    SceneInteraction saim_;
    GatedDecoder decoder_;
};

}  // namespace pedformer
