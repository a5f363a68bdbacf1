// Generates a small synthetic corpus in memory, trains the tiny model for a
// few epochs and prints validation metrics and one prediction.

#include <iostream>

#include "pedformer/pedformer.hpp"

int main() {
    using namespace pedformer;

    ModelConfig model_cfg = tiny_model_config();

    ScenarioConfig scenario = ScenarioConfig::pie();
    scenario.tracks = 24;
    scenario.obs_len = model_cfg.obs_len;
    scenario.pred_len = model_cfg.pred_len;
    const SyntheticCorpus corpus = generate_synthetic(scenario, 1);

    const TrackSplit split = split_by_track(corpus.tracks, 0.25, 1);
    const auto maps = [&](const std::string& key) { return corpus.maps.at(key); };
    const auto train_set = build_examples(split.train, model_cfg, maps);
    const auto val_set = build_examples(split.val, model_cfg, maps);

    TrainConfig train_cfg;
    train_cfg.epochs = 3;
    train_cfg.seed = 1;

    PedFormer model(model_cfg, train_cfg.seed);
    const TrainResult result = train(model, train_set, val_set, train_cfg, LossWeights::pie(), [](const EpochLog& e) {
        std::cout << "epoch " << e.epoch << "  train loss " << e.train.total << "  val loss " << e.val_loss << '\n';
    });
    model.load(result.best);

    const MetricReport report = evaluate(model, val_set);
    std::cout << report.to_json().dump(2) << '\n';

    const PredictionRecord first = predict(model, {val_set.front()}).front();
    std::cout << first.to_json().dump() << '\n';
    return 0;
}
