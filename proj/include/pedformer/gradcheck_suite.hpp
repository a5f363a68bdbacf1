#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "model.hpp"
#include "objectives.hpp"

namespace pedformer {

/// Default finite-difference steps.
inline constexpr double kPrimitiveStep = 1e-4;
inline constexpr double kModuleStep = 3e-4;
inline constexpr double kEndToEndStep = 1e-4;

/// One named gradient check over a freshly built set of parameters.
struct GradCheckCase {
    std::string name;
    std::string group;  // "primitive" or the module name
    double tol = 1e-5;
    std::function<GradCheckReport(double h, double tol, const std::string& fault)> run;
    double step = kPrimitiveStep;
};

struct GradCheckResult {
    std::string name;
    std::string group;
    double tol = 0;
    GradCheckReport report;
};

namespace detail {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = lo + (hi - lo) * static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return t;
}

/// Random values whose magnitude lies in [lo, hi] with random sign.
inline Tensor away_from_zero(Shape shape, Rng& rng, double lo, double hi) {
    Tensor t = random_tensor(std::move(shape), rng, lo, hi);
    for (auto& v : t.values())
        if (rng() & 1) v = -v;
    return t;
}

/// Holds parameters for one primitive check and contracts the op output with
/// a fixed random weight so every output entry contributes to the loss.
struct PrimitiveFixture {
    std::shared_ptr<ParameterStore> store = std::make_shared<ParameterStore>();
    std::vector<Parameter*> params;
    std::uint64_t seed = 0;

    Parameter& add(const std::string& name, Tensor value) {
        auto& p = store->add(name, std::move(value));
        params.push_back(&p);
        return p;
    }

    static Var contract(Var out, std::uint64_t seed) {
        Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
        const Var w = out.tape().constant(random_tensor(out.shape(), rng));
        return sum(mul(out, w));
    }
};

inline GradCheckCase primitive(std::string name, std::function<void(PrimitiveFixture&, Rng&)> setup,
                               std::function<Var(Tape&, const std::vector<Parameter*>&)> op, std::uint64_t seed) {
    GradCheckCase c;
    c.name = name;
    c.group = "primitive";
    c.tol = 1e-5;
    c.run = [setup, op, seed](double h, double tol, const std::string& fault) {
        PrimitiveFixture fx;
        Rng rng(seed);
        setup(fx, rng);
        const auto params = fx.params;
        return grad_check(
            [&](Tape& t) { return PrimitiveFixture::contract(op(t, params), seed); }, params, h, tol, fault);
    };
    return c;
}

inline Var P(Tape& t, const std::vector<Parameter*>& ps, std::size_t i) { return t.param(*ps.at(i)); }

/// Random inputs shaped for `cfg`, with a binary scene map.
inline ModelInput random_model_input(const ModelConfig& cfg, Rng& rng) {
    ModelInput in;
    const std::size_t o = cfg.obs_len, tau = cfg.pred_len;
    in.observed.location = random_tensor({o, 4}, rng, 0.1, 0.9);
    in.observed.velocity = random_tensor({o, 4}, rng, -0.5, 0.5);
    for (std::size_t t = 0; t < o; ++t) in.observed.cells.push_back(rng() % cfg.num_cells());
    in.observed.ego = random_tensor({o, 3}, rng);
    in.future_ego = random_tensor({tau, 3}, rng);
    in.last_box = Tensor({1, 4});
    for (std::size_t k = 0; k < 4; ++k) in.last_box[k] = in.observed.location.at(o - 1, k);
    if (cfg.saim != SaimVariant::off) {
        in.patches = Tensor({cfg.num_patches(), kNumChannels * cfg.patch_size * cfg.patch_size});
        for (auto& v : in.patches.values()) v = (rng() % 3 == 0) ? 1.0 : 0.0;
    }
    return in;
}

inline Targets random_targets(const ModelConfig& cfg, Rng& rng, int label) {
    return {random_tensor({cfg.pred_len, 4}, rng, 0.1, 0.9), label, static_cast<std::size_t>(rng() % cfg.num_cells())};
}

}  // namespace detail

/// Limits that keep an exhaustive finite-difference check affordable.
inline void require_gradcheck_scale(const ModelConfig& cfg) {
    std::vector<std::string> p;
    if (cfg.d_embed > 16) p.push_back("gradient check needs d_embed <= 16 (got " + std::to_string(cfg.d_embed) + ")");
    if (cfg.obs_len > 4) p.push_back("gradient check needs obs_len <= 4 (got " + std::to_string(cfg.obs_len) + ")");
    if (cfg.pred_len > 3) p.push_back("gradient check needs pred_len <= 3 (got " + std::to_string(cfg.pred_len) + ")");
    if (cfg.map_height > 24 || cfg.map_width > 24)
        p.push_back("gradient check needs maps no larger than 24x24 (got " + std::to_string(cfg.map_height) + "x" +
                    std::to_string(cfg.map_width) + ")");
    if (!p.empty()) throw ConfigError(p);
}

/// Every differentiable primitive on small random inputs. Inputs of kinked or
/// restricted ops are kept away from the kinks and domain edges.
inline std::vector<GradCheckCase> primitive_cases(std::uint64_t seed = 7) {
    using detail::away_from_zero;
    using detail::P;
    using detail::PrimitiveFixture;
    using detail::primitive;
    using detail::random_tensor;
    using Ps = std::vector<Parameter*>;
    std::vector<GradCheckCase> c;
    auto two = [](Shape a, Shape b) {
        return [a, b](PrimitiveFixture& fx, Rng& rng) {
            fx.add("a", random_tensor(a, rng));
            fx.add("b", random_tensor(b, rng));
        };
    };
    auto one = [](Shape a, double lo = -2.0, double hi = 2.0) {
        return [a, lo, hi](PrimitiveFixture& fx, Rng& rng) { fx.add("x", random_tensor(a, rng, lo, hi)); };
    };
    c.push_back(primitive("matmul", two({3, 4}, {4, 2}), [](Tape& t, const Ps& p) { return matmul(P(t, p, 0), P(t, p, 1)); }, seed));
    c.push_back(primitive("transpose", one({3, 2}), [](Tape& t, const Ps& p) { return transpose(P(t, p, 0)); }, seed + 1));
    c.push_back(primitive("add", two({2, 3}, {2, 3}), [](Tape& t, const Ps& p) { return add(P(t, p, 0), P(t, p, 1)); }, seed + 2));
    c.push_back(primitive("sub", two({2, 3}, {2, 3}), [](Tape& t, const Ps& p) { return sub(P(t, p, 0), P(t, p, 1)); }, seed + 3));
    c.push_back(primitive("mul", two({2, 3}, {2, 3}), [](Tape& t, const Ps& p) { return mul(P(t, p, 0), P(t, p, 1)); }, seed + 4));
    c.push_back(primitive("affine", one({2, 3}), [](Tape& t, const Ps& p) { return affine(P(t, p, 0), -1.7, 0.3); }, seed + 5));
    c.push_back(primitive("add_row", two({3, 4}, {4}), [](Tape& t, const Ps& p) { return add_row(P(t, p, 0), P(t, p, 1)); }, seed + 6));
    c.push_back(primitive("tanh", one({2, 3}), [](Tape& t, const Ps& p) { return pedformer::tanh(P(t, p, 0)); }, seed + 7));
    c.push_back(primitive("sigmoid", one({2, 3}), [](Tape& t, const Ps& p) { return sigmoid(P(t, p, 0)); }, seed + 8));
    c.push_back(primitive(
        "softsign", [](PrimitiveFixture& fx, Rng& rng) { fx.add("x", away_from_zero({2, 3}, rng, 0.1, 2.0)); },
        [](Tape& t, const Ps& p) { return softsign(P(t, p, 0)); }, seed + 9));
    c.push_back(primitive(
        "relu", [](PrimitiveFixture& fx, Rng& rng) { fx.add("x", away_from_zero({2, 3}, rng, 0.1, 2.0)); },
        [](Tape& t, const Ps& p) { return relu(P(t, p, 0)); }, seed + 10));
    c.push_back(primitive("exp", one({2, 3}), [](Tape& t, const Ps& p) { return pedformer::exp(P(t, p, 0)); }, seed + 11));
    c.push_back(primitive("log", one({2, 3}, 0.2, 3.0), [](Tape& t, const Ps& p) { return pedformer::log(P(t, p, 0)); }, seed + 12));
    c.push_back(primitive("log_cosh", one({2, 3}, -3.0, 3.0), [](Tape& t, const Ps& p) { return log_cosh(P(t, p, 0)); }, seed + 13));
    c.push_back(primitive(
        "clamp",
        [](PrimitiveFixture& fx, Rng&) { fx.add("x", Tensor({2, 3}, {-1.5, -0.3, 0.2, 0.7, 1.4, -0.8})); },
        [](Tape& t, const Ps& p) { return clamp(P(t, p, 0), -1.0, 1.0); }, seed + 14));
    c.push_back(primitive("softmax_rows", one({3, 4}), [](Tape& t, const Ps& p) { return softmax(P(t, p, 0), 1); }, seed + 15));
    c.push_back(primitive("softmax_cols", one({3, 4}), [](Tape& t, const Ps& p) { return softmax(P(t, p, 0), 0); }, seed + 16));
    c.push_back(primitive(
        "layer_norm",
        [](PrimitiveFixture& fx, Rng& rng) {
            fx.add("x", random_tensor({3, 5}, rng));
            fx.add("gain", random_tensor({5}, rng, 0.5, 1.5));
            fx.add("bias", random_tensor({5}, rng));
        },
        [](Tape& t, const Ps& p) { return layer_norm(P(t, p, 0), P(t, p, 1), P(t, p, 2)); }, seed + 17));
    c.push_back(primitive("concat_cols", two({2, 3}, {2, 2}), [](Tape& t, const Ps& p) { return concat({P(t, p, 0), P(t, p, 1)}, 1); },
                          seed + 18));
    c.push_back(primitive("concat_rows", two({2, 3}, {1, 3}), [](Tape& t, const Ps& p) { return concat({P(t, p, 0), P(t, p, 1)}, 0); },
                          seed + 19));
    c.push_back(primitive("slice", one({3, 5}), [](Tape& t, const Ps& p) { return slice(P(t, p, 0), 1, 1, 3); }, seed + 20));
    c.push_back(primitive("reshape", one({2, 6}), [](Tape& t, const Ps& p) { return reshape(P(t, p, 0), {3, 4}); }, seed + 21));
    c.push_back(primitive(
        "embedding", one({5, 3}),
        [](Tape& t, const Ps& p) {
            const std::vector<std::size_t> idx{4, 0, 4, 2};
            return embedding(P(t, p, 0), idx);
        },
        seed + 22));
    c.push_back(primitive("pick", one({2, 3}), [](Tape& t, const Ps& p) { return pick(P(t, p, 0), 4); }, seed + 23));
    c.push_back(primitive("sum", one({2, 3}), [](Tape& t, const Ps& p) { return sum(P(t, p, 0)); }, seed + 24));
    c.push_back(primitive("mean", one({2, 3}), [](Tape& t, const Ps& p) { return mean(P(t, p, 0)); }, seed + 25));
    c.push_back(primitive("mean_rows", one({3, 4}), [](Tape& t, const Ps& p) { return mean_rows(P(t, p, 0)); }, seed + 26));
    c.push_back(primitive("self_gate", one({2, 3}), [](Tape& t, const Ps& p) { return self_gate(P(t, p, 0)); }, seed + 27));
    return c;
}

/// Module-level and end-to-end checks on a configuration within the limits
/// of require_gradcheck_scale.
inline std::vector<GradCheckCase> module_cases(const ModelConfig& cfg, std::uint64_t seed = 11, double tol = 1e-3) {
    require_gradcheck_scale(cfg);
    using detail::random_tensor;
    std::vector<GradCheckCase> c;
    auto make = [&](std::string name, std::string group,
                    std::function<GradCheckReport(double, double, const std::string&)> run) {
        const double step = name == "end_to_end" ? kEndToEndStep : kModuleStep;
        c.push_back({std::move(name), std::move(group), tol, std::move(run), step});
    };

    make("lstm", "layers", [cfg, seed](double h, double tol, const std::string& fault) {
        ParameterStore store;
        Rng rng(seed);
        const auto unit = Lstm::create(store, "unit", 3, cfg.lstm_hidden, rng, CellActivation::softsign);
        const Tensor x = random_tensor({3, 3}, rng);
        return grad_check([&](Tape& t) { return detail::PrimitiveFixture::contract(unit.run(t.constant(x)).hidden_sequence(), seed); },
                          store.list(), h, tol, fault);
    });
    make("multi_head_attention", "layers", [cfg, seed](double h, double tol, const std::string& fault) {
        ParameterStore store;
        Rng rng(seed + 1);
        const auto att = MultiHeadAttention::create(store, "attn", 2 * cfg.d_embed, 2 * cfg.d_embed, cfg.d_embed, cfg.d_embed,
                                                    {cfg.num_heads, cfg.scale_attention, true}, rng);
        const Tensor q = random_tensor({cfg.obs_len, 2 * cfg.d_embed}, rng);
        const Tensor kv = random_tensor({cfg.obs_len, 2 * cfg.d_embed}, rng);
        return grad_check(
            [&](Tape& t) { return detail::PrimitiveFixture::contract(att(t.constant(q), t.constant(kv), t.constant(kv)), seed); },
            store.list(), h, tol, fault);
    });
    make("transformer_layer", "layers", [cfg, seed](double h, double tol, const std::string& fault) {
        ParameterStore store;
        Rng rng(seed + 2);
        const auto layer = TransformerLayer::create(store, "layer", cfg.d_embed, cfg.ffn_hidden, {cfg.num_heads, cfg.scale_attention, true}, rng);
        const Tensor x = random_tensor({cfg.obs_len, cfg.d_embed}, rng);
        return grad_check([&](Tape& t) { return detail::PrimitiveFixture::contract(layer(t.constant(x)), seed); }, store.list(), h,
                          tol, fault);
    });
    make("encoder", "crossmodal_encoder", [cfg, seed](double h, double tol, const std::string& fault) {
        ParameterStore store;
        Rng rng(seed + 3);
        const CrossModalEncoder enc(cfg, store, rng);
        const auto in = detail::random_model_input(cfg, rng);
        return grad_check([&](Tape& t) { return detail::PrimitiveFixture::contract(enc.encode(t, in.observed), seed); }, store.list(),
                          h, tol, fault);
    });
    if (cfg.saim != SaimVariant::off)
        make("scene_interaction", "saim", [cfg, seed](double h, double tol, const std::string& fault) {
            ParameterStore store;
            Rng rng(seed + 4);
            const SceneInteraction saim(cfg, store, rng);
            const auto in = detail::random_model_input(cfg, rng);
            return grad_check(
                [&](Tape& t) {
                    return detail::PrimitiveFixture::contract(saim.encode(t, in.patches, in.observed.location, in.observed.ego), seed);
                },
                store.list(), h, tol, fault);
        });
    make("decoder", "gated_decoder", [cfg, seed](double h, double tol, const std::string& fault) {
        ParameterStore store;
        Rng rng(seed + 5);
        const std::size_t context = 2 * cfg.d_embed + 3;
        const GatedDecoder dec(cfg, context, store, rng);
        const Tensor ctx = random_tensor({cfg.pred_len, context}, rng);
        const Tensor last = random_tensor({1, 4}, rng, 0.1, 0.9);
        const auto target = detail::random_targets(cfg, rng, 1);
        return grad_check(
            [&](Tape& t) {
                const Var lb = t.constant(last);
                const auto out = dec.decode(t.constant(ctx), &lb);
                const std::vector<PredictionVars> preds{out};
                const std::vector<Targets> targets{target};
                return total_loss(preds, targets, LossWeights::pie()).total;
            },
            store.list(), h, tol, fault);
    });
    make("total_loss", "objectives", [cfg, seed](double h, double tol, const std::string& fault) {
        ParameterStore store;
        Rng rng(seed + 6);
        auto& boxes = store.add("pred.boxes", random_tensor({cfg.pred_len, 4}, rng, 0.1, 0.9));
        auto& prob = store.add("pred.prob", random_tensor({1, 1}, rng, 0.2, 0.8));
        Tensor cells = random_tensor({1, cfg.num_cells()}, rng, 0.1, 1.0);
        double s = 0;
        for (double v : cells.values()) s += v;
        for (auto& v : cells.values()) v /= s;
        auto& dist = store.add("pred.cells", std::move(cells));
        const auto target = detail::random_targets(cfg, rng, 1);
        LossWeights w = LossWeights::pie();
        w.classes = class_weights(1, 3);
        return grad_check(
            [&](Tape& t) {
                const std::vector<PredictionVars> preds{{t.param(boxes), t.param(prob), t.param(dist)}};
                const std::vector<Targets> targets{target};
                return total_loss(preds, targets, w).total;
            },
            store.list(), h, tol, fault);
    });
    make("end_to_end", "model", [cfg, seed](double h, double tol, const std::string& fault) {
        PedFormer model(cfg, seed + 7);
        Rng rng(seed + 8);
        const std::vector<ModelInput> inputs{detail::random_model_input(cfg, rng), detail::random_model_input(cfg, rng)};
        const std::vector<Targets> targets{detail::random_targets(cfg, rng, 1), detail::random_targets(cfg, rng, 0)};
        LossWeights w = LossWeights::pie();
        w.classes = class_weights(1, 1);
        return grad_check(
            [&](Tape& t) {
                std::vector<PredictionVars> preds;
                for (const auto& in : inputs) preds.push_back(model.forward(t, in));
                return total_loss(preds, targets, w).total;
            },
            model.parameters().list(), h, tol, fault);
    });
    return c;
}

/// Runs every case; non-positive `h` or `tol_override` keep each case's own value.
inline std::vector<GradCheckResult> run_grad_checks(const std::vector<GradCheckCase>& cases, double h = 0.0,
                                                    const std::string& fault = {}, double tol_override = 0.0) {
    std::vector<GradCheckResult> out;
    for (const auto& c : cases) {
        const double tol = tol_override > 0 ? tol_override : c.tol;
        out.push_back({c.name, c.group, tol, c.run(h > 0 ? h : c.step, tol, fault)});
    }
    return out;
}

}  // namespace pedformer
