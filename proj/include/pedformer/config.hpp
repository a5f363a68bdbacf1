#pragma once

#include <algorithm>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "model_config.hpp"
#include "objectives.hpp"
#include "synthetic.hpp"
#include "trainer.hpp"

namespace pedformer {

/// Complete configuration of a run: architecture, training protocol, loss
/// weights and synthetic scenario.
struct RunConfig {
    std::string preset = "desk";
    std::string profile = "pie";
    ModelConfig model = desk_model_config();
    TrainConfig train;
    LossWeights loss = LossWeights::pie();
    ScenarioConfig scenario = ScenarioConfig::pie();

    void validate() const {
        std::vector<std::string> p;
        const auto collect = [&](auto&& fn) {
            try {
                fn();
            } catch (const ConfigError& e) {
                p.insert(p.end(), e.problems().begin(), e.problems().end());
            }
        };
        collect([&] { model.validate(); });
        collect([&] { train.validate(); });
        collect([&] { scenario.validate(); });
        if (scenario.obs_len != model.obs_len || scenario.pred_len != model.pred_len)
            p.emplace_back("scenario.obs_len/pred_len (" + std::to_string(scenario.obs_len) + "/" + std::to_string(scenario.pred_len) +
                           ") must equal model.obs_len/pred_len (" + std::to_string(model.obs_len) + "/" +
                           std::to_string(model.pred_len) + ")");
        if (loss.trajectory < 0 || loss.action < 0 || loss.location < 0) p.emplace_back("loss weights must be non-negative");
        if (!p.empty()) throw ConfigError(p);
    }
};

inline ModelConfig preset_model_config(const std::string& name) {
    if (name == "paper") return paper_model_config();
    if (name == "desk") return desk_model_config();
    if (name == "tiny") return tiny_model_config();
    throw ConfigError("unknown preset '" + name + "' (expected paper|desk|tiny)");
}

/// Applies the profile's learning rate, loss weights and scenario.
inline void apply_profile(RunConfig& c, const std::string& profile) {
    if (profile == "pie") {
        c.train.learning_rate = 1e-4;
        c.loss = LossWeights::pie();
        c.scenario = ScenarioConfig::pie();
    } else if (profile == "jaad") {
        c.train.learning_rate = 5e-5;
        c.loss = LossWeights::jaad();
        c.scenario = ScenarioConfig::jaad();
    } else {
        throw ConfigError("unknown profile '" + profile + "' (expected pie|jaad)");
    }
    c.profile = profile;
}

inline nlohmann::json to_json(const RunConfig& c) {
    return {{"preset", c.preset},
            {"profile", c.profile},
            {"model", to_json(c.model)},
            {"train", to_json(c.train)},
            {"loss", to_json(c.loss)},
            {"scenario", to_json(c.scenario)}};
}

/// Builds a configuration from defaults, then "preset" and "profile", then the
/// remaining sections. The scenario inherits the model's observation and
/// prediction lengths unless it sets them. Every problem is reported at once.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig c;
    std::vector<std::string> problems;
    if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
    try {
        if (j.contains("preset")) {
            c.preset = j.at("preset").get<std::string>();
            c.model = preset_model_config(c.preset);
        }
        if (j.contains("profile")) apply_profile(c, j.at("profile").get<std::string>());
    } catch (const nlohmann::json::exception&) {
        problems.emplace_back("preset and profile must be strings");
    } catch (const ConfigError& e) {
        problems.insert(problems.end(), e.problems().begin(), e.problems().end());
    }
    {
        JsonFields f(j, "config", problems);
        std::string ignored;
        f.read("preset", ignored);
        f.read("profile", ignored);
        f.nested("model", [&](const nlohmann::json& m) { model_config_from_json(m, c.model, problems); });
        f.nested("train", [&](const nlohmann::json& t) { train_config_from_json(t, c.train, problems); });
        f.nested("loss", [&](const nlohmann::json& l) { loss_weights_from_json(l, c.loss, problems, "loss"); });
        f.nested("scenario", [&](const nlohmann::json& s) { scenario_from_json(s, c.scenario, problems); });
    }
    const auto* sc = j.contains("scenario") && j.at("scenario").is_object() ? &j.at("scenario") : nullptr;
    if (!sc || !sc->contains("obs_len")) c.scenario.obs_len = c.model.obs_len;
    if (!sc || !sc->contains("pred_len")) c.scenario.pred_len = c.model.pred_len;
    try {
        c.validate();
    } catch (const ConfigError& e) {
        for (const auto& msg : e.problems())
            if (std::find(problems.begin(), problems.end(), msg) == problems.end()) problems.push_back(msg);
    }
    if (!problems.empty()) throw ConfigError(problems);
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    return run_config_from_json(j);
}

}  // namespace pedformer
