#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace pedformer;
using testutil::random_tensor;

namespace {

ObservedInputs random_observed(const ModelConfig& cfg, Rng& rng) {
    ObservedInputs in;
    const std::size_t o = cfg.obs_len;
    in.location = random_tensor({o, 4}, rng);
    in.velocity = random_tensor({o, 4}, rng);
    in.ego = random_tensor({o, 3}, rng);
    for (std::size_t t = 0; t < o; ++t) in.cells.push_back(rng() % cfg.num_cells());
    return in;
}

Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

ModelConfig encoder_config(std::size_t d = 8, std::size_t o = 5) {
    ModelConfig c = tiny_model_config();
    c.d_embed = d;
    c.obs_len = o;
    return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// Positional encoding
// ---------------------------------------------------------------------------

TEST(PositionalEncoding, PositionZeroAlternatesZeroOne) {
    const Tensor pe = positional_encoding(3, 8);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_DOUBLE_EQ(pe.at(0, i), i % 2 ? 1.0 : 0.0);
}

TEST(PositionalEncoding, DistinctPositionsGiveDistinctRows) {
    const Tensor pe = positional_encoding(30, 16);
    for (std::size_t a = 0; a < 30; ++a)
        for (std::size_t b = a + 1; b < 30; ++b) {
            double d = 0;
            for (std::size_t i = 0; i < 16; ++i) d += (pe.at(a, i) - pe.at(b, i)) * (pe.at(a, i) - pe.at(b, i));
            EXPECT_GT(d, 0.0);
        }
}

TEST(PositionalEncoding, MatchesTrigonometricOracle) {
    const std::size_t len = 15, dim = 64;
    const Tensor pe = positional_encoding(len, dim);
    for (std::size_t p = 0; p < len; ++p)
        for (std::size_t i = 0; i < dim; i += 2) {
            const long double angle = static_cast<long double>(p) / std::pow(10000.0L, static_cast<long double>(i) / dim);
            EXPECT_NEAR(pe.at(p, i), static_cast<double>(std::sin(angle)), 1e-12);
            EXPECT_NEAR(pe.at(p, i + 1), static_cast<double>(std::cos(angle)), 1e-12);
        }
}

// ---------------------------------------------------------------------------
// Multi-head attention
// ---------------------------------------------------------------------------

TEST(MultiHeadAttention, SingleKeyIgnoresQuery) {
    Rng rng(1);
    ParameterStore store;
    const auto mha = MultiHeadAttention::create(store, "a", 6, 6, 8, 5, {2, false, false}, rng);
    const Tensor v = random_tensor({1, 6}, rng);
    const Tensor expected = [&] {
        Tape t;
        return matmul(matmul(t.constant(v), t.constant(mha.wv->value)), t.constant(mha.wo->value)).value();
    }();
    for (int trial = 0; trial < 3; ++trial) {
        Tape t;
        const Var out = mha(t.constant(random_tensor({4, 6}, rng, -5, 5)), t.constant(v), t.constant(v));
        for (std::size_t r = 0; r < 4; ++r)
            for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(out.value().at(r, c), expected[c], 1e-12);
    }
}

TEST(MultiHeadAttention, SharpOneHotKeysPermuteValues) {
    Rng rng(2);
    ParameterStore store;
    auto mha = MultiHeadAttention::create(store, "a", 3, 3, 3, 3, {1, false, false}, rng);
    for (auto* p : {mha.wq, mha.wk, mha.wv, mha.wo}) p->value = identity(3);
    // query i matches key perm[i]
    const std::vector<std::size_t> perm{2, 0, 1};
    Tensor q({3, 3}), k = identity(3);
    for (std::size_t i = 0; i < 3; ++i) q.at(i, perm[i]) = 60.0;
    const Tensor v = random_tensor({3, 3}, rng);
    Tape t;
    const Tensor out = mha(t.constant(q), t.constant(k), t.constant(v)).value();
    // dense oracle: softmax(q k^T) v
    for (std::size_t i = 0; i < 3; ++i) {
        std::vector<double> logits(3);
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t c = 0; c < 3; ++c) logits[j] += q.at(i, c) * k.at(j, c);
        const double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0;
        for (auto& l : logits) z += (l = std::exp(l - mx));
        for (std::size_t c = 0; c < 3; ++c) {
            double o = 0;
            for (std::size_t j = 0; j < 3; ++j) o += logits[j] / z * v.at(j, c);
            EXPECT_NEAR(out.at(i, c), o, 1e-12);
            EXPECT_NEAR(out.at(i, c), v.at(perm[i], c), 1e-20);
        }
    }
}

TEST(MultiHeadAttention, OutputShape) {
    Rng rng(3);
    ParameterStore store;
    const auto mha = MultiHeadAttention::create(store, "a", 64, 64, 64, 64, {4, false, false}, rng);
    Tape t;
    const Var x = t.constant(random_tensor({15, 64}, rng));
    EXPECT_EQ(mha(x, x, x).shape(), (Shape{15, 64}));
}

TEST(MultiHeadAttention, WidthNotDivisibleByHeadsIsConfigError) {
    Rng rng(3);
    ParameterStore store;
    EXPECT_THROW(MultiHeadAttention::create(store, "a", 10, 10, 10, 10, {4, false, false}, rng), ConfigError);
}

TEST(MultiHeadAttention, WeightRowsSumToOne) {
    Rng rng(4);
    ParameterStore store;
    for (bool scaled : {false, true}) {
        const auto mha = MultiHeadAttention::create(store, scaled ? "s" : "u", 16, 16, 16, 16, {4, scaled, false}, rng);
        Tape t;
        const Var q = t.constant(random_tensor({7, 16}, rng, -3, 3)), k = t.constant(random_tensor({9, 16}, rng, -3, 3));
        const auto ws = mha.weights(q, k);
        ASSERT_EQ(ws.size(), 4u);
        for (const auto& w : ws) {
            EXPECT_EQ(w.shape(), (Shape{7, 9}));
            for (std::size_t r = 0; r < 7; ++r) {
                double s = 0;
                for (std::size_t c = 0; c < 9; ++c) s += w.value().at(r, c);
                EXPECT_NEAR(s, 1.0, 1e-10);
            }
        }
    }
}

TEST(MultiHeadAttention, JointKeyValuePermutationLeavesOutputUnchanged) {
    Rng rng(5);
    ParameterStore store;
    const auto mha = MultiHeadAttention::create(store, "a", 8, 8, 8, 8, {2, false, false}, rng);
    const Tensor q = random_tensor({5, 8}, rng), kv = random_tensor({6, 8}, rng);
    const std::vector<std::size_t> perm{3, 5, 0, 1, 4, 2};
    Tensor pkv({6, 8});
    for (std::size_t r = 0; r < 6; ++r)
        for (std::size_t c = 0; c < 8; ++c) pkv.at(r, c) = kv.at(perm[r], c);
    Tape t;
    const Tensor a = mha(t.constant(q), t.constant(kv), t.constant(kv)).value();
    const Tensor b = mha(t.constant(q), t.constant(pkv), t.constant(pkv)).value();
    EXPECT_LT(max_abs_diff(a, b), 1e-12);
}

// ---------------------------------------------------------------------------
// Transformer layer
// ---------------------------------------------------------------------------

TEST(TransformerLayer, ZeroFeedForwardReducesToTwoNorms) {
    Rng rng(6);
    ParameterStore store;
    auto layer = TransformerLayer::create(store, "l", 6, 5, {2, false, false}, rng);
    for (auto* p : {layer.ff1.weight, layer.ff1.bias, layer.ff2.weight, layer.ff2.bias})
        std::fill(p->value.values().begin(), p->value.values().end(), 0.0);
    const Tensor x = random_tensor({1, 6}, rng);
    Tape t;
    const Var xv = t.constant(x);
    const Tensor out = layer(xv).value();
    const Var attended = matmul(matmul(xv, t.constant(layer.attention.wv->value)), t.constant(layer.attention.wo->value));
    const Var ones = t.constant(Tensor({6}, 1.0)), zeros = t.constant(Tensor({6}));
    const Tensor expected = layer_norm(layer_norm(add(xv, attended), ones, zeros), ones, zeros).value();
    EXPECT_LT(max_abs_diff(out, expected), 1e-12);
}

TEST(TransformerLayer, PreservesShape) {
    Rng rng(7);
    ParameterStore store;
    const auto layer = TransformerLayer::create(store, "l", 32, 16, {4, false, false}, rng);
    Tape t;
    EXPECT_EQ(layer(t.constant(random_tensor({15, 32}, rng))).shape(), (Shape{15, 32}));
}

TEST(TransformerLayer, TwoLayerGradientCheck) {
    Rng rng(8);
    ParameterStore store;
    std::vector<TransformerLayer> layers;
    for (int l = 0; l < 2; ++l)
        layers.push_back(TransformerLayer::create(store, "l" + std::to_string(l), 4, 6, {2, false, false}, rng));
    auto& x = store.add("x", random_tensor({3, 4}, rng));
    const Tensor w = random_tensor({3, 4}, rng);
    const auto report = grad_check(
        [&](Tape& t) {
            Var h = t.param(x);
            for (const auto& l : layers) h = l(h);
            return sum(mul(h, t.constant(w)));
        },
        store.list(), 1e-5, 1e-4);
    EXPECT_TRUE(report.pass) << report.worst_param << " " << report.max_rel_error;
}

// ---------------------------------------------------------------------------
// Cross-modal encoder
// ---------------------------------------------------------------------------

TEST(CrossModalEncoder, TwoModalitiesGiveTwoUnits) {
    auto cfg = encoder_config();
    cfg.modalities = {Modality::location, Modality::velocity};
    Rng rng(1);
    ParameterStore store;
    const CrossModalEncoder enc(cfg, store, rng);
    ASSERT_EQ(enc.units().size(), 2u);
    EXPECT_EQ(enc.units()[0].query, 0u);
    EXPECT_EQ(enc.units()[0].key, 1u);
    EXPECT_EQ(enc.units()[1].query, 1u);
    EXPECT_EQ(enc.units()[1].key, 0u);
}

TEST(CrossModalEncoder, FourModalitiesGiveTwelveUnitsOfWidth768) {
    ModelConfig cfg;
    cfg.obs_len = 3;
    Rng rng(2);
    ParameterStore store;
    const CrossModalEncoder enc(cfg, store, rng);
    EXPECT_EQ(enc.units().size(), 12u);
    Tape t;
    const auto streams = enc.embed_streams(t, random_observed(cfg, rng));
    EXPECT_EQ(enc.cross_attend_all(streams).shape(), (Shape{3, 768}));
    EXPECT_EQ(enc.fused_width(), 832u);
    EXPECT_EQ(paper_model_config().model_width, 0u);
    ParameterStore s2;
    const CrossModalEncoder full(paper_model_config(), s2, rng);
    EXPECT_EQ(full.output_dim(), 832u);
}

TEST(CrossModalEncoder, ZeroValuesSilenceExactlyTheUnitsKeyedOnThatModality) {
    const auto cfg = encoder_config();
    ASSERT_FALSE(cfg.attention_bias);
    Rng rng(3);
    ParameterStore store;
    const CrossModalEncoder enc(cfg, store, rng);
    const std::size_t d = cfg.d_embed;
    for (std::size_t m = 0; m < 4; ++m) {
        Tape t;
        auto streams = enc.embed_streams(t, random_observed(cfg, rng));
        streams[m] = t.constant(Tensor(streams[m].shape()));
        const Tensor fused = enc.cross_attend_all(streams).value();
        for (std::size_t u = 0; u < enc.units().size(); ++u) {
            double mag = 0;
            for (std::size_t r = 0; r < cfg.obs_len; ++r)
                for (std::size_t c = u * d; c < (u + 1) * d; ++c) mag += std::abs(fused.at(r, c));
            if (enc.units()[u].key == m) EXPECT_EQ(mag, 0.0) << "unit " << u;
            else EXPECT_GT(mag, 0.0) << "unit " << u;
        }
    }
}

TEST(CrossModalEncoder, UnequalStreamLengthsAreContractError) {
    const auto cfg = encoder_config();
    Rng rng(4);
    ParameterStore store;
    const CrossModalEncoder enc(cfg, store, rng);
    Tape t;
    auto streams = enc.embed_streams(t, random_observed(cfg, rng));
    streams[2] = slice(streams[2], 0, 0, 2);
    EXPECT_THROW(enc.cross_attend_all(streams), ContractError);
    auto in = random_observed(cfg, rng);
    in.ego = random_tensor({2, 3}, rng);
    EXPECT_THROW(enc.encode(t, in), ContractError);
}

TEST(CrossModalEncoder, ParameterCountMatchesClosedForm) {
    for (std::size_t d : {8u, 16u})
        for (std::size_t width : {0u, 16u})
            for (std::size_t layers : {1u, 2u}) {
                auto cfg = encoder_config(d);
                cfg.model_width = width;
                cfg.num_layers = layers;
                cfg.ffn_hidden = 12;
                Rng rng(5);
                ParameterStore store;
                const CrossModalEncoder enc(cfg, store, rng);
                const std::size_t m = 4, cells = cfg.num_cells(), f = cfg.ffn_hidden, sw = 2 * d;
                const std::size_t embed = 2 * (4 * d + d) + (3 * d + d) + cells * d;
                const std::size_t units = m * (m - 1) * (3 * sw * d + d * d);
                const std::size_t fused = m * (m - 1) * d + d;
                const std::size_t D = width ? width : fused;
                const std::size_t projection = width ? fused * D + D : 0;
                const std::size_t per_layer = 4 * D * D + 4 * D + (D * f + f) + (f * D + D);
                EXPECT_EQ(store.count(), embed + units + projection + layers * per_layer)
                    << "d=" << d << " width=" << width << " layers=" << layers;
                EXPECT_EQ(enc.output_dim(), D);
            }
}

TEST(CrossModalEncoder, EncodingIsDeterministicFiniteAndSensitiveToLastStep) {
    const auto cfg = encoder_config();
    Rng rng(6);
    ParameterStore store;
    const CrossModalEncoder enc(cfg, store, rng);
    for (int trial = 0; trial < 10; ++trial) {
        const auto in = random_observed(cfg, rng);
        Tape t1, t2;
        const Tensor a = enc.encode(t1, in).value(), b = enc.encode(t2, in).value();
        EXPECT_EQ(a, b);
        EXPECT_EQ(a.shape(), (Shape{1, enc.output_dim()}));
        for (double v : a.values()) EXPECT_TRUE(std::isfinite(v));
        auto moved = in;
        moved.location.at(cfg.obs_len - 1, 0) += 0.1;
        Tape t3;
        EXPECT_GT(max_abs_diff(enc.encode(t3, moved).value(), a), 0.0);
    }
}

TEST(CrossModalEncoder, VariantsProduceDocumentedWidths) {
    auto cfg = encoder_config();
    Rng rng(7);
    for (auto v : {EncoderVariant::cross_modal, EncoderVariant::modality_transformers, EncoderVariant::shared_transformer}) {
        cfg.encoder = v;
        ParameterStore store;
        const CrossModalEncoder enc(cfg, store, rng);
        Tape t;
        const Var psi = enc.encode(t, random_observed(cfg, rng));
        EXPECT_EQ(psi.shape(), (Shape{1, enc.output_dim()})) << to_string(v);
        if (v == EncoderVariant::modality_transformers) EXPECT_EQ(enc.output_dim(), 4 * 2 * cfg.d_embed);
        else EXPECT_EQ(enc.output_dim(), cfg.model_width);
    }
}

TEST(CrossModalEncoder, MeanPoolingDiffersFromLastStep) {
    auto cfg = encoder_config();
    Rng rng(8);
    ParameterStore s1, s2;
    Rng r1(9), r2(9);
    const CrossModalEncoder last(cfg, s1, r1);
    cfg.pooling = Pooling::mean;
    const CrossModalEncoder mean(cfg, s2, r2);
    const auto in = random_observed(cfg, rng);
    Tape t;
    EXPECT_GT(max_abs_diff(last.encode(t, in).value(), mean.encode(t, in).value()), 0.0);
}

TEST(CrossModalEncoder, FullEncoderGradientCheck) {
    auto cfg = tiny_model_config();
    ASSERT_EQ(cfg.d_embed, 8u);
    ASSERT_EQ(cfg.obs_len, 4u);
    for (const auto& c : module_cases(cfg)) {
        if (c.name != "encoder") continue;
        const auto r = c.run(c.step, 1e-3, "");
        EXPECT_TRUE(r.pass) << r.worst_param << " " << r.max_rel_error;
        return;
    }
    FAIL() << "no encoder case";
}
