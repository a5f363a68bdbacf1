#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "metrics.hpp"
#include "model.hpp"
#include "objectives.hpp"
#include "optim.hpp"
#include "synthetic.hpp"

namespace pedformer {

struct TrainConfig {
    double learning_rate = 1e-4;
    std::size_t batch_size = 8;
    std::size_t epochs = 200;
    double lr_reduce_factor = 0.2;
    std::size_t lr_patience = 10;
    double lr_threshold = 1e-4;
    double min_lr = 1e-7;
    double l2_recurrent = 1e-4;
    double rho = 0.9;
    double eps = 1e-7;
    double clip_norm = 0.0;
    double val_fraction = 0.15;
    std::uint64_t seed = 0;

    void validate() const {
        std::vector<std::string> p;
        if (!(learning_rate > 0)) p.emplace_back("train.learning_rate must be positive");
        if (batch_size == 0) p.emplace_back("train.batch_size must be >= 1");
        if (!(lr_reduce_factor > 0 && lr_reduce_factor < 1)) p.emplace_back("train.lr_reduce_factor must lie in (0, 1)");
        if (lr_patience == 0) p.emplace_back("train.lr_patience must be >= 1");
        if (l2_recurrent < 0) p.emplace_back("train.l2_recurrent must be non-negative");
        if (!(rho > 0 && rho < 1)) p.emplace_back("train.rho must lie in (0, 1)");
        if (!(eps > 0)) p.emplace_back("train.eps must be positive");
        if (clip_norm < 0) p.emplace_back("train.clip_norm must be non-negative");
        if (!(val_fraction >= 0 && val_fraction < 1)) p.emplace_back("train.val_fraction must lie in [0, 1)");
        if (!p.empty()) throw ConfigError(p);
    }
};

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},   {"epochs", c.epochs},
            {"lr_reduce_factor", c.lr_reduce_factor}, {"lr_patience", c.lr_patience}, {"lr_threshold", c.lr_threshold},
            {"min_lr", c.min_lr},               {"l2_recurrent", c.l2_recurrent}, {"rho", c.rho},
            {"eps", c.eps},                     {"clip_norm", c.clip_norm},       {"val_fraction", c.val_fraction},
            {"seed", c.seed}};
}

inline void train_config_from_json(const nlohmann::json& j, TrainConfig& c, std::vector<std::string>& problems,
                                   const std::string& scope = "train") {
    JsonFields f(j, scope, problems);
    f.read("learning_rate", c.learning_rate);
    f.read("batch_size", c.batch_size);
    f.read("epochs", c.epochs);
    f.read("lr_reduce_factor", c.lr_reduce_factor);
    f.read("lr_patience", c.lr_patience);
    f.read("lr_threshold", c.lr_threshold);
    f.read("min_lr", c.min_lr);
    f.read("l2_recurrent", c.l2_recurrent);
    f.read("rho", c.rho);
    f.read("eps", c.eps);
    f.read("clip_norm", c.clip_norm);
    f.read("val_fraction", c.val_fraction);
    f.read("seed", c.seed);
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// A sample with its scene map at model resolution (null when unused).
struct Example {
    Sample sample;
    std::shared_ptr<const SemanticMap> map;

    ModelInput input(const ModelConfig& cfg) const { return make_model_input(sample, map.get(), cfg); }
    Targets targets() const { return {sample.future_boxes, sample.crossing_label, sample.final_cell}; }
};

using MapSource = std::function<SemanticMap(const std::string& key)>;

/// Cuts windows from every track and attaches the scene map of each window.
inline std::vector<Example> build_examples(const std::vector<TrackSequence>& tracks, const ModelConfig& cfg, const MapSource& maps,
                                           WindowStats* stats = nullptr) {
    WindowSpec spec;
    spec.obs_len = cfg.obs_len;
    spec.pred_len = cfg.pred_len;
    std::vector<Example> out;
    for (const auto& track : tracks) {
        if (!(track.image_size == cfg.grid.image_size))
            throw ConfigError("track " + track.ped_id + " has image size " + std::to_string(track.image_size.width) + "x" +
                              std::to_string(track.image_size.height) + " but the grid expects " +
                              std::to_string(cfg.grid.image_size.width) + "x" + std::to_string(cfg.grid.image_size.height));
        for (auto& s : sample_windows(track, spec, cfg.grid, stats)) {
            Example e;
            if (cfg.saim != SaimVariant::off) {
                if (!maps) throw ContractError("scene maps are required by the scene module");
                e.map = std::make_shared<const SemanticMap>(resize_nearest(maps(s.map_ref), cfg.map_height, cfg.map_width));
            }
            e.sample = std::move(s);
            out.push_back(std::move(e));
        }
    }
    return out;
}

inline std::vector<Example> build_examples(const CorpusReader& corpus, const ModelConfig& cfg, WindowStats* stats = nullptr) {
    return build_examples(corpus.tracks, cfg, [&](const std::string& key) { return corpus.map(key); }, stats);
}

inline std::vector<Example> build_examples(const SyntheticCorpus& corpus, const ModelConfig& cfg, WindowStats* stats = nullptr) {
    return build_examples(
        corpus.tracks, cfg,
        [&](const std::string& key) {
            auto it = corpus.maps.find(key);
            if (it == corpus.maps.end()) throw Error("missing scene map '" + key + "'");
            return it->second;
        },
        stats);
}

struct TrackSplit {
    std::vector<TrackSequence> train;
    std::vector<TrackSequence> val;
};

/// Holds out round(fraction * n) whole tracks (at least one when the fraction
/// is positive and n >= 2), chosen by a seeded shuffle of track ids.
inline TrackSplit split_by_track(const std::vector<TrackSequence>& tracks, double fraction, std::uint64_t seed) {
    std::vector<std::string> ids;
    for (const auto& t : tracks) ids.push_back(t.ped_id);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x5eedu};
    Rng rng(seq);
    for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng() % i]);
    std::size_t n_val = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(ids.size())));
    if (fraction > 0 && n_val == 0 && ids.size() >= 2) n_val = 1;
    const std::set<std::string> val_ids(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(std::min(n_val, ids.size())));
    TrackSplit split;
    for (const auto& t : tracks) (val_ids.count(t.ped_id) ? split.val : split.train).push_back(t);
    return split;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// One prediction in pixel space with its top discrete-location cells.
struct PredictionRecord {
    std::string ped_id;
    std::int64_t start_frame = 0;
    BoxSequence boxes;
    double crossing_prob = 0.0;
    std::vector<std::pair<std::size_t, double>> top_cells;

    nlohmann::json to_json() const {
        nlohmann::json boxes_j = nlohmann::json::array();
        for (const auto& b : boxes) boxes_j.push_back({b[0], b[1], b[2], b[3]});
        nlohmann::json cells = nlohmann::json::array();
        for (const auto& [c, p] : top_cells) cells.push_back({{"cell", c}, {"prob", p}});
        return {{"ped_id", ped_id}, {"start_frame", start_frame}, {"future_boxes", boxes_j}, {"crossing_prob", crossing_prob},
                {"top5_cells", cells}};
    }

    static PredictionRecord from_json(const nlohmann::json& j) {
        PredictionRecord r;
        try {
            r.ped_id = j.at("ped_id").get<std::string>();
            r.start_frame = j.at("start_frame").get<std::int64_t>();
            for (const auto& b : j.at("future_boxes")) {
                const auto v = b.get<std::vector<double>>();
                if (v.size() != 4) throw ParseError("prediction box needs 4 values");
                r.boxes.push_back({v[0], v[1], v[2], v[3]});
            }
            r.crossing_prob = j.at("crossing_prob").get<double>();
            for (const auto& c : j.at("top5_cells")) r.top_cells.emplace_back(c.at("cell").get<std::size_t>(), c.at("prob").get<double>());
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("prediction record: ") + e.what());
        }
        return r;
    }
};

inline BoxSequence to_pixel_boxes(const Tensor& normalized, ImageSize image) {
    BoxSequence out;
    for (std::size_t t = 0; t < normalized.dim(0); ++t)
        out.push_back(denormalize_box({normalized.at(t, 0), normalized.at(t, 1), normalized.at(t, 2), normalized.at(t, 3)}, image));
    return out;
}

inline std::vector<std::pair<std::size_t, double>> top_k_cells(const std::vector<double>& dist, std::size_t k) {
    std::vector<std::size_t> idx(dist.size());
    std::iota(idx.begin(), idx.end(), 0);
    k = std::min(k, idx.size());
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), [&](std::size_t a, std::size_t b) {
        return dist[a] > dist[b] || (dist[a] == dist[b] && a < b);
    });
    std::vector<std::pair<std::size_t, double>> out;
    for (std::size_t i = 0; i < k; ++i) out.emplace_back(idx[i], dist[idx[i]]);
    return out;
}

inline std::vector<PredictionRecord> predict(const PedFormer& model, const std::vector<Example>& examples) {
    std::vector<PredictionRecord> out;
    for (const auto& e : examples) {
        const auto p = model.predict(e.input(model.config()));
        out.push_back({e.sample.ped_id, e.sample.start_frame, to_pixel_boxes(p.boxes, e.sample.image_size), p.crossing_prob,
                       top_k_cells(p.cells, 5)});
    }
    return out;
}

/// Pairs prediction records with ground truth by (ped_id, start_frame).
inline std::vector<EvaluatedSample> match_predictions(const std::vector<PredictionRecord>& preds,
                                                      const std::vector<Example>& examples) {
    std::map<std::pair<std::string, std::int64_t>, const PredictionRecord*> index;
    for (const auto& p : preds) index[{p.ped_id, p.start_frame}] = &p;
    std::vector<EvaluatedSample> out;
    for (const auto& e : examples) {
        auto it = index.find({e.sample.ped_id, e.sample.start_frame});
        if (it == index.end())
            throw Error("no prediction for " + e.sample.ped_id + " starting at frame " + std::to_string(e.sample.start_frame));
        const auto truth = to_pixel_boxes(e.sample.future_boxes, e.sample.image_size);
        if (it->second->boxes.size() != truth.size())
            throw DimensionError("prediction for " + e.sample.ped_id + " has " + std::to_string(it->second->boxes.size()) +
                                 " steps, ground truth has " + std::to_string(truth.size()));
        out.push_back({it->second->boxes, truth, it->second->crossing_prob, e.sample.crossing_label});
    }
    return out;
}

/// Metrics over a split, computed from the same records `predict` emits.
inline MetricReport evaluate(const PedFormer& model, const std::vector<Example>& examples) {
    if (examples.empty()) throw Error("evaluation split is empty");
    return evaluate_predictions(match_predictions(predict(model, examples), examples));
}

struct BatchLoss {
    double total = 0, trajectory = 0, action = 0, location = 0;
};

/// Mean losses over `examples` without recording gradients.
inline BatchLoss mean_loss(const PedFormer& model, const std::vector<Example>& examples, const LossWeights& w,
                           std::size_t batch_size = 32) {
    BatchLoss sum;
    if (examples.empty()) return sum;
    for (std::size_t b = 0; b < examples.size(); b += batch_size) {
        const std::size_t end = std::min(examples.size(), b + batch_size);
        Tape t(false);
        std::vector<PredictionVars> preds;
        std::vector<Targets> targets;
        for (std::size_t i = b; i < end; ++i) {
            preds.push_back(model.forward(t, examples[i].input(model.config())));
            targets.push_back(examples[i].targets());
        }
        const auto l = total_loss(preds, targets, w);
        const double n = static_cast<double>(end - b);
        sum.total += l.total.item() * n;
        sum.trajectory += l.trajectory.item() * n;
        sum.action += l.action.item() * n;
        sum.location += l.location.item() * n;
    }
    const double n = static_cast<double>(examples.size());
    return {sum.total / n, sum.trajectory / n, sum.action / n, sum.location / n};
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct EpochLog {
    std::size_t epoch = 0;
    double lr = 0;
    BatchLoss train;
    double val_loss = std::numeric_limits<double>::quiet_NaN();
    MetricReport val;

    static std::string csv_header() {
        return "epoch,lr,train_loss,traj_loss,act_loss,dl_loss,val_loss," + MetricReport::csv_header();
    }

    std::string csv_row() const {
        std::ostringstream os;
        os.precision(10);
        os << epoch << ',' << lr << ',' << train.total << ',' << train.trajectory << ',' << train.action << ',' << train.location << ',';
        if (!std::isnan(val_loss)) os << val_loss;
        os << ',' << val.csv_row();
        return os.str();
    }
};

struct TrainResult {
    std::vector<EpochLog> log;
    Checkpoint best;
    std::size_t best_epoch = 0;
    double best_loss = std::numeric_limits<double>::infinity();
    bool aborted = false;
    std::string abort_reason;
    ClassWeights class_weights;
};

using EpochCallback = std::function<void(const EpochLog&)>;

inline ClassWeights corpus_class_weights(const std::vector<Example>& examples) {
    std::size_t pos = 0;
    for (const auto& e : examples) pos += e.sample.crossing_label == 1 ? 1 : 0;
    return class_weights(pos, examples.size() - pos);
}

/// Marks the recurrent weight matrices for L2 and clears it everywhere else.
inline void apply_recurrent_l2(PedFormer& model, double l2) {
    for (auto* p : model.parameters().list()) p->weight_decay = 0.0;
    for (auto* p : model.recurrent_parameters()) p->weight_decay = l2;
}

/// RMSProp training with a plateau schedule on the validation loss (the
/// training loss when there is no validation split). Keeps the checkpoint of
/// the best epoch; a non-finite loss stops training and restores it.
inline TrainResult train(PedFormer& model, const std::vector<Example>& train_set, const std::vector<Example>& val_set,
                         const TrainConfig& cfg, LossWeights weights, const EpochCallback& on_epoch = {}) {
    cfg.validate();
    TrainResult result;
    weights.classes = corpus_class_weights(train_set);
    result.class_weights = weights.classes;
    apply_recurrent_l2(model, cfg.l2_recurrent);
    const auto params = model.parameters().list();
    const auto meta = [&](std::size_t epoch, double loss) {
        nlohmann::json m{{"epoch", epoch}, {"train", to_json(cfg)}, {"loss_weights", to_json(weights)},
                         {"class_weights", {{"crossing", weights.classes.crossing}, {"non_crossing", weights.classes.non_crossing}}}};
        if (std::isfinite(loss)) m["selection_loss"] = loss;
        return m;
    };
    result.best = model.to_checkpoint(meta(0, std::numeric_limits<double>::quiet_NaN()));
    if (cfg.epochs == 0) return result;
    if (train_set.empty()) throw Error("training split is empty");

    RmsProp opt({cfg.rho, cfg.eps, cfg.clip_norm});
    PlateauScheduler sched(cfg.learning_rate, {cfg.lr_reduce_factor, cfg.lr_patience, cfg.lr_threshold, cfg.min_lr});
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                          static_cast<std::uint32_t>(epoch)};
        Rng rng(seq);
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

        EpochLog row;
        row.epoch = epoch;
        row.lr = sched.lr();
        BatchLoss sum;
        try {
            for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
                const std::size_t end = std::min(order.size(), b + cfg.batch_size);
                model.parameters().zero_grad();
                Tape t;
                std::vector<PredictionVars> preds;
                std::vector<Targets> targets;
                for (std::size_t i = b; i < end; ++i) {
                    const auto& e = train_set[order[i]];
                    preds.push_back(model.forward(t, e.input(model.config())));
                    targets.push_back(e.targets());
                }
                const auto l = total_loss(preds, targets, weights);
                if (!std::isfinite(l.total.item())) throw NonFiniteError("training loss is not finite");
                t.backward(l.total);
                opt.step(params, sched.lr());
                const double n = static_cast<double>(end - b);
                sum.total += l.total.item() * n;
                sum.trajectory += l.trajectory.item() * n;
                sum.action += l.action.item() * n;
                sum.location += l.location.item() * n;
            }
            for (auto* p : params)
                for (double v : p->value.data())
                    if (!std::isfinite(v)) throw NonFiniteError("parameter '" + p->name + "' became non-finite");
            const double n = static_cast<double>(order.size());
            row.train = {sum.total / n, sum.trajectory / n, sum.action / n, sum.location / n};
            if (!val_set.empty()) {
                row.val_loss = mean_loss(model, val_set, weights).total;
                row.val = evaluate(model, val_set);
            }
        } catch (const NonFiniteError& e) {
            result.aborted = true;
            result.abort_reason = "epoch " + std::to_string(epoch) + ": " + e.what();
            model.load(result.best);
            return result;
        }
        const double selection = val_set.empty() ? row.train.total : row.val_loss;
        if (selection < result.best_loss) {
            result.best_loss = selection;
            result.best_epoch = epoch;
            result.best = model.to_checkpoint(meta(epoch, selection));
        }
        sched.observe(selection);
        result.log.push_back(row);
        if (on_epoch) on_epoch(row);
    }
    return result;
}

}  // namespace pedformer
