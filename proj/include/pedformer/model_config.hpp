#pragma once

#include <array>
#include <string>
#include <vector>

#include "json.hpp"

#include "data.hpp"
#include "json_config.hpp"

namespace pedformer {

enum class Modality { location, velocity, discrete_location, ego_motion };
enum class EncoderVariant { cross_modal, modality_transformers, shared_transformer };
enum class SaimVariant { off, no_global_attention, no_motion, full };
enum class DecoderVariant { task_based, shared_only, hybrid, gated_hybrid };
enum class Pooling { last, mean };
enum class TrajectoryMode { absolute, delta };

namespace detail {

template <class E, std::size_t N>
const char* enum_name(E value, const std::array<const char*, N>& names) {
    return names.at(static_cast<std::size_t>(value));
}

template <class E, std::size_t N>
E enum_parse(const std::string& s, const std::array<const char*, N>& names, const char* what) {
    for (std::size_t i = 0; i < N; ++i)
        if (s == names[i]) return static_cast<E>(i);
    std::string options;
    for (auto* n : names) options += std::string(options.empty() ? "" : "|") + n;
    throw ConfigError("unknown " + std::string(what) + " '" + s + "' (expected " + options + ")");
}

inline constexpr std::array<const char*, 4> kModalityNames{"location", "velocity", "discrete_location", "ego_motion"};
inline constexpr std::array<const char*, 3> kEncoderNames{"cross_modal", "modality_transformers", "shared_transformer"};
inline constexpr std::array<const char*, 4> kSaimNames{"off", "no_global_attention", "no_motion", "full"};
inline constexpr std::array<const char*, 4> kDecoderNames{"task_based", "shared_only", "hybrid", "gated_hybrid"};
inline constexpr std::array<const char*, 2> kPoolingNames{"last", "mean"};
inline constexpr std::array<const char*, 2> kTrajectoryNames{"absolute", "delta"};

}  // namespace detail

inline const char* to_string(Modality v) { return detail::enum_name(v, detail::kModalityNames); }
inline const char* to_string(EncoderVariant v) { return detail::enum_name(v, detail::kEncoderNames); }
inline const char* to_string(SaimVariant v) { return detail::enum_name(v, detail::kSaimNames); }
inline const char* to_string(DecoderVariant v) { return detail::enum_name(v, detail::kDecoderNames); }
inline const char* to_string(Pooling v) { return detail::enum_name(v, detail::kPoolingNames); }
inline const char* to_string(TrajectoryMode v) { return detail::enum_name(v, detail::kTrajectoryNames); }

inline Modality parse_modality(const std::string& s) { return detail::enum_parse<Modality>(s, detail::kModalityNames, "modality"); }
inline EncoderVariant parse_encoder_variant(const std::string& s) {
    return detail::enum_parse<EncoderVariant>(s, detail::kEncoderNames, "encoder variant");
}
inline SaimVariant parse_saim_variant(const std::string& s) { return detail::enum_parse<SaimVariant>(s, detail::kSaimNames, "saim variant"); }
inline DecoderVariant parse_decoder_variant(const std::string& s) {
    return detail::enum_parse<DecoderVariant>(s, detail::kDecoderNames, "decoder variant");
}
inline Pooling parse_pooling(const std::string& s) { return detail::enum_parse<Pooling>(s, detail::kPoolingNames, "pooling"); }
inline TrajectoryMode parse_trajectory_mode(const std::string& s) {
    return detail::enum_parse<TrajectoryMode>(s, detail::kTrajectoryNames, "trajectory mode");
}

/// Architecture hyper-parameters. Defaults follow the published setup, with a
/// projection of the fused encoder input down to `model_width`.
struct ModelConfig {
    std::size_t obs_len = 15;
    std::size_t pred_len = 30;
    GridSpec grid;

    // Cross-modal encoder.
    std::vector<Modality> modalities{Modality::location, Modality::velocity, Modality::discrete_location,
                                     Modality::ego_motion};
    std::size_t d_embed = 64;
    std::size_t num_heads = 4;
    std::size_t num_layers = 2;
    std::size_t ffn_hidden = 128;
    /// Transformer width. 0 feeds the fused attention outputs plus positional
    /// encoding straight in (832 wide with the defaults).
    std::size_t model_width = 128;
    bool scale_attention = false;
    bool attention_bias = false;
    bool positional_encoding = true;
    Pooling pooling = Pooling::last;
    /// Divisors applied to (speed, vx, vz) before embedding.
    std::array<double, 3> ego_scale{30.0, 10.0, 10.0};
    /// Multiplier applied to per-frame normalized box differences.
    double velocity_gain = 100.0;

    // Scene interaction.
    std::size_t map_height = 216;
    std::size_t map_width = 384;
    std::size_t patch_size = 12;
    std::size_t scene_heads = 4;
    std::size_t scene_stack = 1;
    bool scene_positional_encoding = true;
    std::size_t dynamics_hidden = 128;
    std::size_t interaction_dim = 128;

    // Decoder.
    std::size_t lstm_hidden = 128;
    TrajectoryMode trajectory_mode = TrajectoryMode::absolute;
    /// Diagnostic: replace sigma(h) by 1 in the gated input.
    bool unit_gate = false;

    EncoderVariant encoder = EncoderVariant::cross_modal;
    SaimVariant saim = SaimVariant::full;
    DecoderVariant decoder = DecoderVariant::gated_hybrid;

    std::size_t num_cells() const { return grid.num_cells(); }
    std::size_t num_patches() const { return (map_height / patch_size) * (map_width / patch_size); }

    /// Throws ConfigError listing every violated constraint.
    void validate() const {
        std::vector<std::string> p;
        auto need = [&](bool ok, const std::string& msg) {
            if (!ok) p.push_back(msg);
        };
        need(obs_len >= 1, "model.obs_len must be >= 1");
        need(pred_len >= 1, "model.pred_len must be >= 1");
        need(d_embed >= 1, "model.d_embed must be >= 1");
        need(num_heads >= 1 && d_embed % num_heads == 0, "model.d_embed must be divisible by model.num_heads");
        need(num_layers >= 1, "model.num_layers must be >= 1");
        need(ffn_hidden >= 1, "model.ffn_hidden must be >= 1");
        need(model_width == 0 || model_width % num_heads == 0, "model.model_width must be divisible by model.num_heads");
        need(!modalities.empty(), "model.modalities must not be empty");
        need(encoder != EncoderVariant::cross_modal || modalities.size() >= 2,
             "cross-modal encoding needs at least two modalities");
        need(patch_size >= 1 && map_height % patch_size == 0 && map_width % patch_size == 0,
             "model.map_height and model.map_width must be divisible by model.patch_size");
        need(scene_heads >= 1 && d_embed % scene_heads == 0, "model.d_embed must be divisible by model.scene_heads");
        need(scene_stack >= 1, "model.scene_stack must be >= 1");
        need(dynamics_hidden >= 1 && interaction_dim >= 1 && lstm_hidden >= 1, "recurrent and interaction sizes must be >= 1");
        for (double s : ego_scale) need(s > 0, "model.ego_scale entries must be positive");
        need(velocity_gain > 0, "model.velocity_gain must be positive");
        try {
            grid.validate();
        } catch (const ConfigError& e) {
            p.insert(p.end(), e.problems().begin(), e.problems().end());
        }
        if (!p.empty()) throw ConfigError(p);
    }
};

inline nlohmann::json grid_to_json(const GridSpec& g) {
    return {{"rows", g.rows}, {"cols", g.cols}, {"cell_px", g.cell_px}, {"image_width", g.image_size.width},
            {"image_height", g.image_size.height}};
}

inline void grid_from_json(const nlohmann::json& j, GridSpec& g, std::vector<std::string>& problems, const std::string& scope) {
    JsonFields f(j, scope, problems);
    f.read("rows", g.rows);
    f.read("cols", g.cols);
    f.read("cell_px", g.cell_px);
    f.read("image_width", g.image_size.width);
    f.read("image_height", g.image_size.height);
}

inline nlohmann::json to_json(const ModelConfig& c) {
    nlohmann::json mods = nlohmann::json::array();
    for (auto m : c.modalities) mods.push_back(to_string(m));
    return {{"obs_len", c.obs_len},
            {"pred_len", c.pred_len},
            {"grid", grid_to_json(c.grid)},
            {"modalities", mods},
            {"d_embed", c.d_embed},
            {"num_heads", c.num_heads},
            {"num_layers", c.num_layers},
            {"ffn_hidden", c.ffn_hidden},
            {"model_width", c.model_width},
            {"scale_attention", c.scale_attention},
            {"attention_bias", c.attention_bias},
            {"positional_encoding", c.positional_encoding},
            {"pooling", to_string(c.pooling)},
            {"ego_scale", c.ego_scale},
            {"velocity_gain", c.velocity_gain},
            {"map_height", c.map_height},
            {"map_width", c.map_width},
            {"patch_size", c.patch_size},
            {"scene_heads", c.scene_heads},
            {"scene_stack", c.scene_stack},
            {"scene_positional_encoding", c.scene_positional_encoding},
            {"dynamics_hidden", c.dynamics_hidden},
            {"interaction_dim", c.interaction_dim},
            {"lstm_hidden", c.lstm_hidden},
            {"trajectory_mode", to_string(c.trajectory_mode)},
            {"unit_gate", c.unit_gate},
            {"encoder", to_string(c.encoder)},
            {"saim", to_string(c.saim)},
            {"decoder", to_string(c.decoder)}};
}

/// Overlays the keys present in `j` onto `c`. Problems are appended, not thrown.
inline void model_config_from_json(const nlohmann::json& j, ModelConfig& c, std::vector<std::string>& problems,
                                   const std::string& scope = "model") {
    JsonFields f(j, scope, problems);
    f.read("obs_len", c.obs_len);
    f.read("pred_len", c.pred_len);
    f.nested("grid", [&](const nlohmann::json& g) { grid_from_json(g, c.grid, problems, scope + ".grid"); });
    f.nested("modalities", [&](const nlohmann::json& m) {
        if (!m.is_array()) {
            problems.push_back(scope + ".modalities: expected an array");
            return;
        }
        c.modalities.clear();
        for (const auto& e : m) {
            try {
                c.modalities.push_back(parse_modality(e.get<std::string>()));
            } catch (const std::exception& ex) {
                problems.push_back(scope + ".modalities: " + ex.what());
            }
        }
    });
    f.read("d_embed", c.d_embed);
    f.read("num_heads", c.num_heads);
    f.read("num_layers", c.num_layers);
    f.read("ffn_hidden", c.ffn_hidden);
    f.read("model_width", c.model_width);
    f.read("scale_attention", c.scale_attention);
    f.read("attention_bias", c.attention_bias);
    f.read("positional_encoding", c.positional_encoding);
    f.read_enum("pooling", c.pooling, parse_pooling);
    f.read("ego_scale", c.ego_scale);
    f.read("velocity_gain", c.velocity_gain);
    f.read("map_height", c.map_height);
    f.read("map_width", c.map_width);
    f.read("patch_size", c.patch_size);
    f.read("scene_heads", c.scene_heads);
    f.read("scene_stack", c.scene_stack);
    f.read("scene_positional_encoding", c.scene_positional_encoding);
    f.read("dynamics_hidden", c.dynamics_hidden);
    f.read("interaction_dim", c.interaction_dim);
    f.read("lstm_hidden", c.lstm_hidden);
    f.read_enum("trajectory_mode", c.trajectory_mode, parse_trajectory_mode);
    f.read("unit_gate", c.unit_gate);
    f.read_enum("encoder", c.encoder, parse_encoder_variant);
    f.read_enum("saim", c.saim, parse_saim_variant);
    f.read_enum("decoder", c.decoder, parse_decoder_variant);
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    std::vector<std::string> problems;
    model_config_from_json(j, c, problems);
    if (!problems.empty()) throw ConfigError(problems);
    return c;
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

/// Published sizes, with the fused encoder input used at full width.
inline ModelConfig paper_model_config() {
    ModelConfig c;
    c.model_width = 0;
    return c;
}

/// Small enough to train on a laptop CPU in minutes.
inline ModelConfig desk_model_config() {
    ModelConfig c;
    c.d_embed = 32;
    c.num_heads = 4;
    c.ffn_hidden = 64;
    c.model_width = 64;
    c.scene_heads = 4;
    c.map_height = 48;
    c.map_width = 96;
    c.dynamics_hidden = 64;
    c.interaction_dim = 64;
    c.lstm_hidden = 64;
    return c;
}

/// Sized for exhaustive finite-difference checks: every limit the gradient
/// check enforces (d <= 16, o <= 4, tau <= 3, map <= 24x24) holds.
inline ModelConfig tiny_model_config() {
    ModelConfig c;
    c.obs_len = 4;
    c.pred_len = 3;
    c.grid = GridSpec{3, 4, 480, ImageSize{1920, 1080}};
    c.d_embed = 8;
    c.num_heads = 2;
    c.num_layers = 2;
    c.ffn_hidden = 8;
    c.model_width = 16;
    c.map_height = 24;
    c.map_width = 24;
    c.patch_size = 12;
    c.scene_heads = 2;
    c.dynamics_hidden = 8;
    c.interaction_dim = 8;
    c.lstm_hidden = 8;
    return c;
}

}  // namespace pedformer
