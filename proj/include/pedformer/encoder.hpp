#pragma once

#include <string>
#include <utility>
#include <vector>

#include "layers.hpp"
#include "model_config.hpp"

namespace pedformer {

/// Per-step observed features of one sample, already scaled for the network.
struct ObservedInputs {
    Tensor location;                 // o x 4, normalized box
    Tensor velocity;                 // o x 4
    std::vector<std::size_t> cells;  // o discrete-location ids
    Tensor ego;                      // o x 3

    std::size_t length() const { return cells.size(); }
};

/// Embeds the non-scene modalities and fuses them into one summary vector.
///
/// cross_modal: one attention unit per ordered modality pair (j, m), querying
/// stream j against keys and values of stream m. Unit outputs are concatenated
/// per step together with a positional encoding, optionally projected to
/// model_width, and passed through the transformer layers.
///
/// modality_transformers: an independent transformer per modality stream,
/// outputs concatenated per step.
///
/// shared_transformer: embedded streams concatenated, then one transformer.
class CrossModalEncoder {
public:
    struct Unit {
        std::size_t query = 0;
        std::size_t key = 0;
        MultiHeadAttention attention;
    };

    CrossModalEncoder() = default;

    CrossModalEncoder(const ModelConfig& cfg, ParameterStore& store, Rng& rng, const std::string& name = "encoder")
        : cfg_(cfg) {
        const std::size_t d = cfg.d_embed;
        const MultiHeadAttention::Options opt{cfg.num_heads, cfg.scale_attention, cfg.attention_bias};
        for (auto m : cfg.modalities) {
            const std::string n = name + ".embed." + to_string(m);
            switch (m) {
            case Modality::location:
            case Modality::velocity: embed_.push_back(Linear::create(store, n, 4, d, rng)); break;
            case Modality::ego_motion: embed_.push_back(Linear::create(store, n, 3, d, rng)); break;
            case Modality::discrete_location:
                embed_.emplace_back();
                cell_embed_ = Embedding::create(store, n, cfg.num_cells(), d, rng);
                break;
            }
        }
        const std::size_t sw = stream_width();
        const std::size_t count = cfg.modalities.size();
        if (cfg.encoder == EncoderVariant::cross_modal) {
            for (std::size_t j = 0; j < count; ++j)
                for (std::size_t m = 0; m < count; ++m) {
                    if (j == m) continue;
                    const std::string n = name + ".unit." + to_string(cfg.modalities[j]) + "_" + to_string(cfg.modalities[m]);
                    units_.push_back({j, m, MultiHeadAttention::create(store, n, sw, sw, d, d, opt, rng)});
                }
        }
        if (cfg.encoder == EncoderVariant::modality_transformers) {
            per_modality_.resize(count);
            for (std::size_t j = 0; j < count; ++j)
                for (std::size_t l = 0; l < cfg.num_layers; ++l)
                    per_modality_[j].push_back(TransformerLayer::create(
                        store, name + ".layer" + std::to_string(l) + "." + to_string(cfg.modalities[j]), sw, cfg.ffn_hidden,
                        opt, rng));
            return;
        }
        const std::size_t fused = fused_width();
        if (cfg.model_width != 0) projection_ = Linear::create(store, name + ".project", fused, cfg.model_width, rng);
        for (std::size_t l = 0; l < cfg.num_layers; ++l)
            layers_.push_back(
                TransformerLayer::create(store, name + ".layer" + std::to_string(l), transformer_width(), cfg.ffn_hidden, opt, rng));
    }

    /// Width of one embedded modality stream (embedding plus positional encoding).
    std::size_t stream_width() const { return cfg_.positional_encoding ? 2 * cfg_.d_embed : cfg_.d_embed; }

    /// Width of the fused sequence entering the projection (or the transformer).
    std::size_t fused_width() const {
        const std::size_t m = cfg_.modalities.size();
        const std::size_t pe = cfg_.positional_encoding ? cfg_.d_embed : 0;
        switch (cfg_.encoder) {
        case EncoderVariant::cross_modal: return m * (m - 1) * cfg_.d_embed + pe;
        case EncoderVariant::shared_transformer: return m * cfg_.d_embed + pe;
        case EncoderVariant::modality_transformers: return m * stream_width();
        }
        return 0;
    }

    std::size_t transformer_width() const {
        if (cfg_.encoder == EncoderVariant::modality_transformers) return stream_width();
        return cfg_.model_width != 0 ? cfg_.model_width : fused_width();
    }

    /// Dimension of the summary vector.
    std::size_t output_dim() const {
        if (cfg_.encoder == EncoderVariant::modality_transformers) return fused_width();
        return transformer_width();
    }

    const std::vector<Unit>& units() const { return units_; }

    /// Embedded streams, one o x d matrix per modality (no positional encoding).
    std::vector<Var> embed(Tape& t, const ObservedInputs& in) const {
        const std::size_t o = in.length();
        if (in.location.dim(0) != o || in.velocity.dim(0) != o || in.ego.dim(0) != o)
            throw ContractError("encoder: modality streams have unequal lengths");
        std::vector<Var> out;
        for (std::size_t j = 0; j < cfg_.modalities.size(); ++j) {
            switch (cfg_.modalities[j]) {
            case Modality::location: out.push_back(embed_[j](t.constant(in.location))); break;
            case Modality::velocity: out.push_back(embed_[j](t.constant(in.velocity))); break;
            case Modality::ego_motion: out.push_back(embed_[j](t.constant(in.ego))); break;
            case Modality::discrete_location: out.push_back(cell_embed_(t, in.cells)); break;
            }
        }
        return out;
    }

    /// Embedded streams with the positional encoding concatenated (when enabled).
    std::vector<Var> embed_streams(Tape& t, const ObservedInputs& in) const {
        auto streams = embed(t, in);
        if (!cfg_.positional_encoding) return streams;
        const Var pe = t.constant(positional_encoding(in.length(), cfg_.d_embed));
        for (auto& s : streams) s = concat({s, pe}, 1);
        return streams;
    }

    /// Outputs of every pair unit concatenated per step: o x (m(m-1) d).
    Var cross_attend_all(std::span<const Var> streams) const {
        if (streams.size() != cfg_.modalities.size()) throw ContractError("cross_attend_all: wrong number of streams");
        for (const auto& s : streams)
            if (s.shape()[0] != streams[0].shape()[0]) throw ContractError("cross_attend_all: streams have unequal lengths");
        std::vector<Var> outs;
        outs.reserve(units_.size());
        for (const auto& u : units_) outs.push_back(u.attention(streams[u.query], streams[u.key], streams[u.key]));
        return concat(std::span<const Var>(outs), 1);
    }

    /// Projection (when configured) followed by the transformer layers.
    Var transformer_encode(Var fused) const {
        Var x = projection_.weight ? projection_(fused) : fused;
        for (const auto& l : layers_) x = l(x);
        return x;
    }

    /// Summary vector psi_cm, 1 x output_dim().
    Var encode(Tape& t, const ObservedInputs& in) const {
        const std::size_t o = in.length();
        Var seq;
        switch (cfg_.encoder) {
        case EncoderVariant::cross_modal: {
            const auto streams = embed_streams(t, in);
            Var fused = cross_attend_all(streams);
            if (cfg_.positional_encoding) fused = concat({fused, t.constant(positional_encoding(o, cfg_.d_embed))}, 1);
            seq = transformer_encode(fused);
            break;
        }
        case EncoderVariant::shared_transformer: {
            auto parts = embed(t, in);
            if (cfg_.positional_encoding) parts.push_back(t.constant(positional_encoding(o, cfg_.d_embed)));
            seq = transformer_encode(concat(std::span<const Var>(parts), 1));
            break;
        }
        case EncoderVariant::modality_transformers: {
            auto streams = embed_streams(t, in);
            for (std::size_t j = 0; j < streams.size(); ++j)
                for (const auto& l : per_modality_[j]) streams[j] = l(streams[j]);
            seq = concat(std::span<const Var>(streams), 1);
            break;
        }
        }
        return cfg_.pooling == Pooling::last ? row(seq, o - 1) : mean_rows(seq);
    }

private:
    ModelConfig cfg_;
    std::vector<Linear> embed_;
    Embedding cell_embed_;
    std::vector<Unit> units_;
    Linear projection_;
    std::vector<TransformerLayer> layers_;
    std::vector<std::vector<TransformerLayer>> per_modality_;
};

}  // namespace pedformer
