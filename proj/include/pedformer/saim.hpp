#pragma once

#include <string>
#include <vector>

#include "layers.hpp"
#include "model_config.hpp"
#include "semantic_map.hpp"

namespace pedformer {

/// Splits a map into ps x ps patches in row-major patch order. Each row holds
/// one patch flattened channel-major, then by pixel row, then by pixel column.
inline Tensor patchify(const SemanticMap& map, std::size_t ps) {
    if (ps == 0 || map.height % ps != 0 || map.width % ps != 0)
        throw DimensionError("patchify: map " + std::to_string(map.height) + "x" + std::to_string(map.width) +
                             " is not divisible into " + std::to_string(ps) + "x" + std::to_string(ps) + " patches");
    const std::size_t pr = map.height / ps, pc = map.width / ps;
    const std::size_t feat = kNumChannels * ps * ps;
    Tensor out({pr * pc, feat});
    double* o = out.data().data();
    for (std::size_t py = 0; py < pr; ++py)
        for (std::size_t px = 0; px < pc; ++px) {
            double* dst = o + (py * pc + px) * feat;
            for (std::size_t c = 0; c < kNumChannels; ++c)
                for (std::size_t y = 0; y < ps; ++y)
                    for (std::size_t x = 0; x < ps; ++x)
                        *dst++ = map.at(static_cast<Channel>(c), py * ps + y, px * ps + x);
        }
    return out;
}

/// Resizes (when needed) and patchifies a map for the given configuration.
inline Tensor scene_patches(const SemanticMap& map, const ModelConfig& cfg) {
    return patchify(resize_nearest(map, cfg.map_height, cfg.map_width), cfg.patch_size);
}

/// Scene interaction encoder.
///
///     Gamma = MHA(xi, xi, xi)                      xi = patches W_p + PE
///     phi_q = Linear(LSTM([coords W_l, ego W_e]))  last hidden state
///     c     = softmax(phi_q W_G Gamma^T) Gamma
///     psi   = tanh([c, phi_q] W_c)
class SceneInteraction {
public:
    SceneInteraction() = default;

    SceneInteraction(const ModelConfig& cfg, ParameterStore& store, Rng& rng, const std::string& name = "saim")
        : cfg_(cfg) {
        const std::size_t d = cfg.d_embed;
        const std::size_t feat = kNumChannels * cfg.patch_size * cfg.patch_size;
        const MultiHeadAttention::Options opt{cfg.scene_heads, cfg.scale_attention, cfg.attention_bias};
        patch_embed_ = Linear::create(store, name + ".patch_embed", feat, d, rng);
        const std::size_t in = cfg.scene_positional_encoding ? 2 * d : d;
        for (std::size_t s = 0; s < cfg.scene_stack; ++s)
            scene_attention_.push_back(
                MultiHeadAttention::create(store, name + ".scene_attn" + std::to_string(s), s == 0 ? in : d, s == 0 ? in : d, d, d, opt, rng));
        if (cfg.saim == SaimVariant::full) {
            coord_embed_ = Linear::create(store, name + ".coord_embed", 4, d, rng);
            ego_embed_ = Linear::create(store, name + ".ego_embed", 3, d, rng);
            dynamics_ = Lstm::create(store, name + ".dynamics", 2 * d, cfg.dynamics_hidden, rng);
            query_embed_ = Linear::create(store, name + ".query_embed", cfg.dynamics_hidden, d, rng);
        }
        if (cfg.saim == SaimVariant::no_global_attention) {
            summary_ = &store.add(name + ".summary", glorot_uniform({1, cfg.num_patches()}, cfg.num_patches(), 1, rng));
            output_ = Linear::create(store, name + ".output", d, cfg.interaction_dim, rng, false);
        } else {
            w_gamma_ = &store.add(name + ".w_gamma", glorot_uniform({d, d}, d, d, rng));
            output_ = Linear::create(store, name + ".output", 2 * d, cfg.interaction_dim, rng, false);
        }
    }

    std::size_t output_dim() const { return cfg_.interaction_dim; }

    /// Linear patch embedding, positional encoding concatenated when enabled.
    Var patch_embed(Tape& t, const Tensor& patches) const {
        Var xi = patch_embed_(t.constant(patches));
        if (cfg_.scene_positional_encoding)
            xi = concat({xi, t.constant(positional_encoding(patches.dim(0), cfg_.d_embed))}, 1);
        return xi;
    }

    /// Self-attention over patches: np x d.
    Var scene_attention(Var xi) const {
        for (const auto& a : scene_attention_) xi = a(xi, xi, xi);
        return xi;
    }

    /// Dynamics query phi_q (1 x d) from observed boxes (o x 4) and ego-motion (o x 3).
    Var encode_dynamics(Tape& t, const Tensor& boxes, const Tensor& ego) const {
        if (boxes.dim(0) != ego.dim(0)) throw ContractError("encode_dynamics: boxes and ego-motion lengths differ");
        const Var x = concat({coord_embed_(t.constant(boxes)), ego_embed_(t.constant(ego))}, 1);
        const auto trace = dynamics_.run(x);
        return query_embed_(trace.hidden.back());
    }

    /// Weights of the query over patches: softmax(phi_q W_G Gamma^T), 1 x np.
    Var patch_weights(Var gamma, Var query) const {
        Tape& t = gamma.tape();
        return softmax(matmul(matmul(query, t.param(*w_gamma_)), transpose(gamma)), 1);
    }

    /// Context vector c, a convex combination of the rows of Gamma.
    Var context(Var gamma, Var query) const { return matmul(patch_weights(gamma, query), gamma); }

    /// Attention of the query over patch encodings, then the bounded output layer.
    Var global_attention(Var gamma, Var query) const {
        return pedformer::tanh(output_(concat({context(gamma, query), query}, 1)));
    }

    const std::vector<MultiHeadAttention>& scene_attention_units() const { return scene_attention_; }
    Parameter* w_gamma() const { return w_gamma_; }

    /// Interaction encoding psi_int, 1 x interaction_dim.
    Var encode(Tape& t, const Tensor& patches, const Tensor& boxes, const Tensor& ego) const {
        if (patches.dim(0) != cfg_.num_patches())
            throw DimensionError("saim: expected " + std::to_string(cfg_.num_patches()) + " patches, got " +
                                 std::to_string(patches.dim(0)));
        const Var gamma = scene_attention(patch_embed(t, patches));
        switch (cfg_.saim) {
        case SaimVariant::no_global_attention: {
            const Var pooled = matmul(t.param(*summary_), gamma);
            return pedformer::tanh(output_(pooled));
        }
        case SaimVariant::no_motion: return global_attention(gamma, row(gamma, gamma.shape()[0] - 1));
        case SaimVariant::full: return global_attention(gamma, encode_dynamics(t, boxes, ego));
        case SaimVariant::off: break;
        }
        throw ContractError("saim: module is disabled");
    }

    /// Convenience overload starting from a per-pixel label map.
    Var encode(Tape& t, const LabelMap& labels, const ClassGrouping& grouping, const Tensor& boxes, const Tensor& ego) const {
        return encode(t, scene_patches(channelize(labels, grouping), cfg_), boxes, ego);
    }

private:
    ModelConfig cfg_;
    Linear patch_embed_;
    std::vector<MultiHeadAttention> scene_attention_;
    Linear coord_embed_, ego_embed_, query_embed_;
    Lstm dynamics_;
    Parameter* w_gamma_ = nullptr;
    Parameter* summary_ = nullptr;
    Linear output_;
};

}  // namespace pedformer
