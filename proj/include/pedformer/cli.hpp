#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "pedformer.hpp"

namespace pedformer::cli {

inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;
inline constexpr int kUsage = 2;

/// Raised for invalid invocations; maps to exit code 2.
struct UsageError : Error {
    using Error::Error;
};

/// --seed if given, else PEDFORMER_SEED, else `fallback`.
inline std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t fallback) {
    if (flag) return *flag;
    if (const char* env = std::getenv("PEDFORMER_SEED")) {
        try {
            std::size_t used = 0;
            const auto v = std::stoull(env, &used);
            if (used != std::string(env).size()) throw std::invalid_argument(env);
            return v;
        } catch (const std::exception&) {
            throw UsageError(std::string("PEDFORMER_SEED='") + env + "' is not an unsigned integer");
        }
    }
    return fallback;
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file '" + path + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write '" + path.string() + "'");
    os << text;
}

inline void require_directory(const std::string& dir, const char* what) {
    if (!std::filesystem::is_directory(dir)) throw UsageError(std::string(what) + " directory '" + dir + "' does not exist");
}

/// Model configuration differences that change tensor dimensions.
inline std::vector<std::string> dimension_mismatches(const ModelConfig& a, const ModelConfig& b) {
    std::vector<std::string> out;
    const auto cmp = [&](const char* name, std::size_t x, std::size_t y) {
        if (x != y) out.push_back(std::string(name) + ": checkpoint " + std::to_string(x) + ", config " + std::to_string(y));
    };
    cmp("obs_len", a.obs_len, b.obs_len);
    cmp("pred_len", a.pred_len, b.pred_len);
    cmp("grid cells", a.num_cells(), b.num_cells());
    cmp("modalities", a.modalities.size(), b.modalities.size());
    cmp("d_embed", a.d_embed, b.d_embed);
    cmp("num_heads", a.num_heads, b.num_heads);
    cmp("num_layers", a.num_layers, b.num_layers);
    cmp("ffn_hidden", a.ffn_hidden, b.ffn_hidden);
    cmp("model_width", a.model_width, b.model_width);
    cmp("map_height", a.map_height, b.map_height);
    cmp("map_width", a.map_width, b.map_width);
    cmp("patch_size", a.patch_size, b.patch_size);
    cmp("dynamics_hidden", a.dynamics_hidden, b.dynamics_hidden);
    cmp("interaction_dim", a.interaction_dim, b.interaction_dim);
    cmp("lstm_hidden", a.lstm_hidden, b.lstm_hidden);
    if (a.encoder != b.encoder) out.push_back(std::string("encoder: checkpoint ") + to_string(a.encoder) + ", config " + to_string(b.encoder));
    if (a.saim != b.saim) out.push_back(std::string("saim: checkpoint ") + to_string(a.saim) + ", config " + to_string(b.saim));
    if (a.decoder != b.decoder) out.push_back(std::string("decoder: checkpoint ") + to_string(a.decoder) + ", config " + to_string(b.decoder));
    return out;
}

/// Flags shared by the commands that assemble a RunConfig.
struct RunFlags {
    std::string config;
    std::string preset;
    std::string profile;
    std::optional<std::size_t> epochs, batch_size;
    std::optional<double> lr;
    std::optional<std::uint64_t> seed;
    std::string encoder, saim, decoder;

    void attach(CLI::App* app) {
        app->add_option("--config", config, "JSON configuration file");
        app->add_option("--preset", preset, "Model size preset")->check(CLI::IsMember({"paper", "desk", "tiny"}));
        app->add_option("--profile", profile, "Dataset profile (learning rate, loss weights, scenario)")
            ->check(CLI::IsMember({"pie", "jaad"}));
        app->add_option("--epochs", epochs, "Training epochs");
        app->add_option("--batch-size", batch_size, "Samples per optimizer step");
        app->add_option("--lr", lr, "Initial learning rate");
        app->add_option("--seed", seed, "Random seed (falls back to PEDFORMER_SEED)");
        app->add_option("--encoder", encoder, "cross_modal|modality_transformers|shared_transformer");
        app->add_option("--saim", saim, "off|no_global_attention|no_motion|full");
        app->add_option("--decoder", decoder, "task_based|shared_only|hybrid|gated_hybrid");
    }

    /// Defaults, then the file, then flags.
    RunConfig resolve() const {
        nlohmann::json j = config.empty() ? nlohmann::json::object() : read_json_file(config);
        if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
        if (!preset.empty()) j["preset"] = preset;
        if (!profile.empty()) j["profile"] = profile;
        RunConfig c = run_config_from_json(j);
        std::vector<std::string> problems;
        const auto variant = [&](const std::string& v, auto parse, auto& field) {
            if (v.empty()) return;
            try {
                field = parse(v);
            } catch (const ConfigError& e) {
                problems.push_back(e.what());
            }
        };
        variant(encoder, parse_encoder_variant, c.model.encoder);
        variant(saim, parse_saim_variant, c.model.saim);
        variant(decoder, parse_decoder_variant, c.model.decoder);
        if (epochs) c.train.epochs = *epochs;
        if (batch_size) c.train.batch_size = *batch_size;
        if (lr) c.train.learning_rate = *lr;
        c.train.seed = resolve_seed(seed, c.train.seed);
        if (!problems.empty()) throw ConfigError(problems);
        c.validate();
        return c;
    }
};

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct GenDataFlags {
    std::string out, config, preset, profile;
    std::optional<std::size_t> tracks;
    std::optional<std::uint64_t> seed;
    bool ego_dependent = false;
};

inline int cmd_gen_data(const GenDataFlags& f, std::ostream& out) {
    RunFlags rf;
    rf.config = f.config;
    rf.preset = f.preset;
    rf.profile = f.profile;
    ScenarioConfig sc = rf.resolve().scenario;
    if (f.tracks) sc.tracks = *f.tracks;
    if (f.ego_dependent) sc.ego_dependent_crossing = true;
    const auto seed = resolve_seed(f.seed, 0);
    sc.validate();
    const auto corpus = generate_synthetic(sc, seed);
    const auto manifest = corpus_manifest(corpus, sc, seed);
    write_corpus(f.out, corpus, manifest);
    out << "wrote " << corpus.tracks.size() << " tracks and " << corpus.maps.size() << " scene maps to " << f.out
        << " (crossing ratio " << manifest.at("crossing_ratio").get<double>() << ")\n";
    return kOk;
}

/// Rejects a synthetic corpus whose windows were cut for other lengths.
inline void check_corpus_windows(const std::string& data, const ModelConfig& model) {
    const auto path = std::filesystem::path(data) / "manifest.json";
    if (!std::filesystem::exists(path)) return;
    const auto m = read_json_file(path.string());
    if (!m.contains("scenario")) return;
    const auto& s = m.at("scenario");
    const auto o = s.value("obs_len", model.obs_len), tau = s.value("pred_len", model.pred_len);
    if (o != model.obs_len || tau != model.pred_len)
        throw ConfigError("corpus '" + data + "' was generated for obs_len/pred_len " + std::to_string(o) + "/" + std::to_string(tau) +
                          " but the model uses " + std::to_string(model.obs_len) + "/" + std::to_string(model.pred_len) +
                          "; regenerate it with the same --preset or --config");
}

struct TrainFlags {
    RunFlags run;
    std::string data, out;
    bool quiet = false;
};

inline int cmd_train(const TrainFlags& f, std::ostream& out) {
    require_directory(f.data, "data");
    const RunConfig cfg = f.run.resolve();
    check_corpus_windows(f.data, cfg.model);
    const auto corpus = CorpusReader::open(f.data);
    for (const auto& d : corpus.diagnostics) out << "skipped track: " << d << '\n';
    const auto split = split_by_track(corpus.tracks, cfg.train.val_fraction, cfg.train.seed);
    const auto maps = [&](const std::string& key) { return corpus.map(key); };
    const auto train_set = build_examples(split.train, cfg.model, maps);
    const auto val_set = build_examples(split.val, cfg.model, maps);
    if (train_set.empty()) throw UsageError("no training samples in '" + f.data + "'");

    std::filesystem::create_directories(f.out);
    const std::filesystem::path dir(f.out);
    write_text(dir / "config.json", to_json(cfg).dump(2) + "\n");
    std::ofstream log(dir / "epochs.csv", std::ios::binary);
    log << EpochLog::csv_header() << '\n';
    if (!f.quiet)
        out << "training on " << train_set.size() << " samples (" << split.train.size() << " tracks), validating on " << val_set.size()
            << " samples (" << split.val.size() << " tracks)\n";

    PedFormer model(cfg.model, cfg.train.seed);
    const auto result = train(model, train_set, val_set, cfg.train, cfg.loss, [&](const EpochLog& row) {
        log << row.csv_row() << '\n';
        log.flush();
        if (!f.quiet)
            out << "epoch " << row.epoch << " lr " << row.lr << " train " << row.train.total << " val " << row.val_loss << " ade "
                << row.val.ade << '\n';
    });
    auto ckpt = result.best;
    ckpt.meta["run"] = to_json(cfg);
    save_checkpoint((dir / "model.ckpt").string(), ckpt);
    nlohmann::json summary{{"epochs_completed", result.log.size()},
                           {"best_epoch", result.best_epoch},
                           {"aborted", result.aborted},
                           {"class_weights", {{"crossing", result.class_weights.crossing}, {"non_crossing", result.class_weights.non_crossing}}},
                           {"train_samples", train_set.size()},
                           {"val_samples", val_set.size()}};
    if (std::isfinite(result.best_loss)) summary["best_loss"] = result.best_loss;
    if (result.aborted) summary["abort_reason"] = result.abort_reason;
    write_text(dir / "summary.json", summary.dump(2) + "\n");
    if (result.aborted) {
        out << "training aborted: " << result.abort_reason << " (kept checkpoint of epoch " << result.best_epoch << ")\n";
        return kFailure;
    }
    out << "saved " << (dir / "model.ckpt").string() << " (best epoch " << result.best_epoch << ")\n";
    return kOk;
}

struct EvalFlags {
    std::string checkpoint, data, out, predictions, config, split = "all";
};

/// Examples of the requested split, cut with the checkpoint's configuration.
inline std::vector<Example> load_split(const PedFormer& model, const Checkpoint& ckpt, const std::string& data, const std::string& split) {
    require_directory(data, "data");
    check_corpus_windows(data, model.config());
    const auto corpus = CorpusReader::open(data);
    std::vector<TrackSequence> tracks = corpus.tracks;
    if (split != "all") {
        TrainConfig tc;
        if (ckpt.meta.contains("train")) {
            std::vector<std::string> ignored;
            train_config_from_json(ckpt.meta.at("train"), tc, ignored);
        }
        const auto s = split_by_track(corpus.tracks, tc.val_fraction, tc.seed);
        tracks = split == "val" ? s.val : s.train;
    }
    return build_examples(tracks, model.config(), [&](const std::string& key) { return corpus.map(key); });
}

inline PedFormer load_model(const std::string& path, const std::string& config, Checkpoint& ckpt) {
    if (!std::filesystem::exists(path)) throw UsageError("checkpoint '" + path + "' does not exist");
    ckpt = load_checkpoint(path);
    PedFormer model = PedFormer::from_checkpoint(ckpt);
    if (!config.empty()) {
        RunFlags rf;
        rf.config = config;
        const auto requested = rf.resolve().model;
        const auto diff = dimension_mismatches(model.config(), requested);
        if (!diff.empty()) throw ConfigError(diff);
    }
    return model;
}

inline int cmd_eval(const EvalFlags& f, std::ostream& out) {
    Checkpoint ckpt;
    const PedFormer model = load_model(f.checkpoint, f.config, ckpt);
    const auto examples = load_split(model, ckpt, f.data, f.split);
    if (examples.empty()) throw UsageError("evaluation split is empty");
    MetricReport report;
    if (!f.predictions.empty()) {
        std::ifstream in(f.predictions);
        if (!in) throw UsageError("cannot open predictions '" + f.predictions + "'");
        std::vector<PredictionRecord> preds;
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) preds.push_back(PredictionRecord::from_json(nlohmann::json::parse(line)));
        report = evaluate_predictions(match_predictions(preds, examples));
    } else {
        report = evaluate(model, examples);
    }
    const std::filesystem::path dir(f.out);
    write_text(dir / "metrics.json", report.to_json().dump(2) + "\n");
    write_text(dir / "metrics.csv", MetricReport::csv_header() + "\n" + report.csv_row() + "\n");
    out << MetricReport::csv_header() << '\n' << report.csv_row() << '\n';
    return kOk;
}

inline int cmd_predict(const EvalFlags& f, std::ostream& out) {
    Checkpoint ckpt;
    const PedFormer model = load_model(f.checkpoint, f.config, ckpt);
    const auto examples = load_split(model, ckpt, f.data, f.split);
    if (examples.empty()) throw UsageError("prediction split is empty");
    std::string text;
    for (const auto& r : predict(model, examples)) text += r.to_json().dump() + "\n";
    write_text(f.out, text);
    out << "wrote " << examples.size() << " predictions to " << f.out << '\n';
    return kOk;
}

struct GradCheckFlags {
    std::string config, fault, only = "all", json;
    double tol = 1e-3;
    double primitive_tol = 1e-5;
    double h = 0.0;
    std::optional<std::uint64_t> seed;
};

inline int cmd_gradcheck(const GradCheckFlags& f, std::ostream& out) {
    ModelConfig cfg = tiny_model_config();
    if (!f.config.empty()) {
        auto j = read_json_file(f.config);
        if (j.is_object() && !j.contains("preset")) j["preset"] = "tiny";
        cfg = run_config_from_json(j).model;
    }
    std::vector<std::string> too_big;
    if (cfg.d_embed > 16) too_big.push_back("gradcheck needs model.d_embed <= 16, got " + std::to_string(cfg.d_embed));
    if (cfg.obs_len > 4) too_big.push_back("gradcheck needs model.obs_len <= 4, got " + std::to_string(cfg.obs_len));
    if (cfg.pred_len > 3) too_big.push_back("gradcheck needs model.pred_len <= 3, got " + std::to_string(cfg.pred_len));
    if (cfg.map_height > 24 || cfg.map_width > 24)
        too_big.push_back("gradcheck needs a scene map of at most 24x24, got " + std::to_string(cfg.map_height) + "x" +
                          std::to_string(cfg.map_width));
    if (!too_big.empty()) throw ConfigError(too_big);
    const auto seed = resolve_seed(f.seed, 11);
    std::vector<GradCheckCase> cases;
    if (f.only != "modules") {
        auto prim = primitive_cases(seed);
        for (auto& c : prim) c.tol = f.primitive_tol;
        cases.insert(cases.end(), prim.begin(), prim.end());
    }
    if (f.only != "primitives") {
        auto mods = module_cases(cfg, seed, f.tol);
        cases.insert(cases.end(), mods.begin(), mods.end());
    }
    bool pass = true;
    std::map<std::string, double> group_max;
    nlohmann::json report = nlohmann::json::array();
    out << std::left << std::setw(22) << "check" << std::setw(20) << "module" << std::setw(14) << "max_rel_err" << std::setw(10)
        << "tol" << "result\n";
    for (const auto& c : cases) {
        const auto r = c.run(f.h > 0 ? f.h : c.step, c.tol, f.fault);
        pass = pass && r.pass;
        group_max[c.group] = std::max(group_max[c.group], r.max_rel_error);
        out << std::setw(22) << c.name << std::setw(20) << c.group << std::setw(14) << std::setprecision(3) << std::scientific
            << r.max_rel_error << std::setw(10) << c.tol << std::defaultfloat << (r.pass ? "PASS" : "FAIL");
        if (!r.pass) {
            out << "  failing:";
            for (const auto& n : r.failing()) out << ' ' << n;
        }
        out << '\n';
        nlohmann::json params = nlohmann::json::array();
        for (const auto& p : r.params)
            params.push_back({{"name", p.name}, {"max_rel_error", p.max_rel_error}, {"pass", p.pass}, {"analytic", p.analytic}, {"numeric", p.numeric}});
        report.push_back({{"check", c.name}, {"module", c.group}, {"tol", c.tol}, {"max_rel_error", r.max_rel_error},
                          {"worst_param", r.worst_param}, {"pass", r.pass}, {"params", params}});
    }
    out << "per-module maximum relative error:\n";
    for (const auto& [g, e] : group_max) out << "  " << std::setw(20) << g << std::scientific << std::setprecision(3) << e << std::defaultfloat << '\n';
    out << (pass ? "gradient check PASSED" : "gradient check FAILED") << '\n';
    if (!f.json.empty()) write_text(f.json, nlohmann::json{{"pass", pass}, {"checks", report}}.dump(2) + "\n");
    return pass ? kOk : kFailure;
}

struct PlotFlags {
    std::string log, out;
};

inline int cmd_plot(const PlotFlags& f, std::ostream& out) {
    if (!std::filesystem::exists(f.log)) throw UsageError("log file '" + f.log + "' does not exist");
    const auto table = read_csv_file(f.log);
    const std::filesystem::path dir(f.out);
    std::filesystem::create_directories(dir);
    const auto present = [&](std::vector<std::string> names) {
        std::vector<std::string> kept;
        for (auto& n : names)
            if (std::find(table.header.begin(), table.header.end(), n) != table.header.end()) kept.push_back(n);
        return kept;
    };
    const std::vector<std::pair<std::string, std::vector<std::string>>> charts{
        {"loss", present({"train_loss", "traj_loss", "act_loss", "dl_loss", "val_loss"})},
        {"displacement", present({"ade", "fde", "arb", "frb"})},
        {"classification", present({"fiou", "acc", "auc", "f1", "prec"})},
        {"learning_rate", present({"lr"})}};
    std::size_t written = 0;
    for (const auto& [name, cols] : charts) {
        if (cols.empty()) continue;
        write_text(dir / (name + ".svg"), render_svg(name, table_series(table, cols)));
        ++written;
    }
    write_text(dir / "curves.csv", tidy_csv(table));
    out << "wrote " << written << " charts and curves.csv to " << f.out << '\n';
    return kOk;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Multi-task pedestrian trajectory, crossing-action and location forecasting", "pedformer"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every command");

    GenDataFlags gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic corpus (tracks, scene maps, manifest)");
    gen_cmd->add_option("--out", gen.out, "Output directory")->required();
    gen_cmd->add_option("--tracks", gen.tracks, "Number of pedestrian tracks");
    gen_cmd->add_option("--seed", gen.seed, "Random seed (falls back to PEDFORMER_SEED)");
    gen_cmd->add_option("--profile", gen.profile, "Scenario profile")->check(CLI::IsMember({"pie", "jaad"}));
    gen_cmd->add_option("--preset", gen.preset, "Model preset whose window lengths the corpus follows")
        ->check(CLI::IsMember({"paper", "desk", "tiny"}));
    gen_cmd->add_option("--config", gen.config, "Run configuration whose scenario section is used");
    gen_cmd->add_flag("--ego-dependent-crossing", gen.ego_dependent, "Tie crossing behaviour to slow ego speed");

    TrainFlags tr;
    auto* train_cmd = app.add_subcommand("train", "Train a model on a corpus");
    tr.run.attach(train_cmd);
    train_cmd->add_option("--data", tr.data, "Corpus directory")->required();
    train_cmd->add_option("--out", tr.out, "Output directory")->required();
    train_cmd->add_flag("--quiet", tr.quiet, "Only print the final summary");

    EvalFlags ev;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint (or a prediction dump) on a corpus");
    eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
    eval_cmd->add_option("--data", ev.data, "Corpus directory")->required();
    eval_cmd->add_option("--out", ev.out, "Output directory for metrics.json and metrics.csv")->required();
    eval_cmd->add_option("--predictions", ev.predictions, "Score this prediction dump instead of running the model");
    eval_cmd->add_option("--config", ev.config, "Configuration the checkpoint must match");
    eval_cmd->add_option("--split", ev.split, "Tracks to use")->check(CLI::IsMember({"all", "train", "val"}));

    EvalFlags pr;
    auto* predict_cmd = app.add_subcommand("predict", "Write per-sample predictions as JSON Lines");
    predict_cmd->add_option("--checkpoint", pr.checkpoint, "Checkpoint file")->required();
    predict_cmd->add_option("--data", pr.data, "Corpus directory")->required();
    predict_cmd->add_option("--out", pr.out, "Output JSONL file")->required();
    predict_cmd->add_option("--config", pr.config, "Configuration the checkpoint must match");
    predict_cmd->add_option("--split", pr.split, "Tracks to use")->check(CLI::IsMember({"all", "train", "val"}));

    GradCheckFlags gc;
    auto* gc_cmd = app.add_subcommand("gradcheck", "Compare reverse-mode gradients with central differences");
    gc_cmd->add_option("--config", gc.config, "JSON configuration (tiny preset by default)");
    gc_cmd->add_option("--tol", gc.tol, "Relative-error tolerance of module and end-to-end checks");
    gc_cmd->add_option("--primitive-tol", gc.primitive_tol, "Relative-error tolerance of primitive checks");
    gc_cmd->add_option("--step", gc.h, "Finite-difference step for every check (default: 1e-4 for primitives and end-to-end, 3e-4 for modules)");
    gc_cmd->add_option("--inject-fault", gc.fault, "Negate the backward rule of this op (negative control)");
    gc_cmd->add_option("--only", gc.only, "Subset to run")->check(CLI::IsMember({"all", "primitives", "modules"}));
    gc_cmd->add_option("--json", gc.json, "Write the full report as JSON");
    gc_cmd->add_option("--seed", gc.seed, "Seed of the random inputs (falls back to PEDFORMER_SEED)");

    PlotFlags pl;
    auto* plot_cmd = app.add_subcommand("plot", "Render an epoch log as SVG charts and a tidy CSV");
    plot_cmd->add_option("--log", pl.log, "Epoch log CSV")->required();
    plot_cmd->add_option("--out", pl.out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        for (auto* sub : app.get_subcommands()) {
            err << sub->help();
            return kUsage;
        }
        err << app.help();
        return kUsage;
    }

    try {
        if (gen_cmd->parsed()) return cmd_gen_data(gen, out);
        if (train_cmd->parsed()) return cmd_train(tr, out);
        if (eval_cmd->parsed()) return cmd_eval(ev, out);
        if (predict_cmd->parsed()) return cmd_predict(pr, out);
        if (gc_cmd->parsed()) return cmd_gradcheck(gc, out);
        if (plot_cmd->parsed()) return cmd_plot(pl, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const ConfigError& e) {
        err << "configuration error:\n";
        for (const auto& p : e.problems()) err << "  - " << p << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kUsage;
}

}  // namespace pedformer::cli
