#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "test_util.hpp"

using namespace pedformer;
using testutil::random_tensor;

namespace {

double logcosh_value(const Tensor& pred, const Tensor& target) {
    Tape t;
    return logcosh_loss(t.constant(pred), t.constant(target)).item();
}

double bce_value(double p, int label, ClassWeights w = {}) {
    Tape t;
    return bce_action(t.constant(Tensor({1, 1}, p)), label, w).item();
}

double ce_value(const Tensor& dist, std::size_t target) {
    Tape t;
    return ce_discrete(t.constant(dist), target).item();
}

Tensor uniform_distribution(std::size_t n) { return Tensor({1, n}, 1.0 / static_cast<double>(n)); }

Box random_box(std::mt19937_64& rng, double lo = 0.0, double hi = 100.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    const double x1 = u(rng), y1 = u(rng);
    std::uniform_real_distribution<double> w(0.5, 40.0);
    return {x1, y1, x1 + w(rng), y1 + w(rng)};
}

BoxSequence random_sequence(std::mt19937_64& rng, std::size_t n) {
    BoxSequence s;
    for (std::size_t i = 0; i < n; ++i) s.push_back(random_box(rng));
    return s;
}

double oracle_ade(const BoxSequence& p, const BoxSequence& g) {
    double s = 0;
    for (std::size_t t = 0; t < p.size(); ++t) {
        const double px = (p[t][0] + p[t][2]) / 2, py = (p[t][1] + p[t][3]) / 2;
        const double gx = (g[t][0] + g[t][2]) / 2, gy = (g[t][1] + g[t][3]) / 2;
        s += std::sqrt((px - gx) * (px - gx) + (py - gy) * (py - gy));
    }
    return s / static_cast<double>(p.size());
}

double oracle_rmse(const Box& a, const Box& b) {
    double s = 0;
    for (int k = 0; k < 4; ++k) s += std::pow(a[k] - b[k], 2);
    return std::sqrt(s / 4);
}

double oracle_iou(const Box& a, const Box& b) {
    const double ix = std::max(0.0, std::min(a[2], b[2]) - std::max(a[0], b[0]));
    const double iy = std::max(0.0, std::min(a[3], b[3]) - std::max(a[1], b[1]));
    const double inter = ix * iy;
    return inter / ((a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter);
}

double oracle_auc(const std::vector<double>& s, const std::vector<int>& y) {
    double num = 0, pairs = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (y[i] == 1 && y[j] == 0) {
                pairs += 1;
                num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
            }
    return num / pairs;
}

}  // namespace

// ---------------------------------------------------------------------------
// Log-cosh trajectory loss
// ---------------------------------------------------------------------------

TEST(LogCosh, ZeroForIdenticalBoxes) {
    const Tensor b = Tensor::matrix({{0.1, 0.2, 0.3, 0.4}, {0.5, 0.6, 0.7, 0.8}});
    EXPECT_EQ(logcosh_value(b, b), 0.0);
}

TEST(LogCosh, UnitDifferenceConstant) {
    const double v = logcosh_value(Tensor({1, 1}, 1.0), Tensor({1, 1}, 0.0));
    EXPECT_NEAR(v, 0.433780830483027, 1e-12);
    EXPECT_NEAR(v, std::log(std::cosh(1.0)), 1e-15);
}

TEST(LogCosh, LargeDifferenceIsLinearMinusLog2) {
    EXPECT_NEAR(logcosh_value(Tensor({1, 1}, 50.0), Tensor({1, 1}, 0.0)), 50.0 - std::numbers::ln2, 1e-12);
    EXPECT_NEAR(logcosh_value(Tensor({1, 1}, -30.0), Tensor({1, 1}, 0.0)), std::log(std::cosh(30.0)), 1e-9);
    EXPECT_TRUE(std::isfinite(logcosh_value(Tensor({1, 1}, 1000.0), Tensor({1, 1}, 0.0))));
}

TEST(LogCosh, SymmetricAndNonNegative) {
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        const Tensor a = random_tensor({3, 4}, rng, -5, 5), b = random_tensor({3, 4}, rng, -5, 5);
        const double ab = logcosh_value(a, b);
        EXPECT_GE(ab, 0.0);
        EXPECT_DOUBLE_EQ(ab, logcosh_value(b, a));
    }
}

TEST(LogCosh, ShapeMismatchRejected) {
    Tape t;
    EXPECT_THROW(logcosh_loss(t.constant(Tensor({2, 4})), t.constant(Tensor({3, 4}))), DimensionError);
}

// ---------------------------------------------------------------------------
// Weighted binary cross-entropy
// ---------------------------------------------------------------------------

TEST(Bce, HalfProbabilityGivesLn2) {
    EXPECT_NEAR(bce_value(0.5, 1), std::numbers::ln2, 1e-12);
    EXPECT_NEAR(bce_value(0.5, 0), std::numbers::ln2, 1e-12);
}

TEST(Bce, PieClassWeightIsThree) {
    const auto w = class_weights(995, 2985);
    EXPECT_DOUBLE_EQ(w.crossing, 3.0);
    EXPECT_DOUBLE_EQ(w.non_crossing, 1.0);
    EXPECT_NEAR(bce_value(0.5, 1, w), 3.0 * std::numbers::ln2, 1e-12);
    EXPECT_NEAR(bce_value(0.5, 0, w), std::numbers::ln2, 1e-12);
}

TEST(Bce, DegenerateCountsFallBackToUnitWeights) {
    const auto w = class_weights(0, 10);
    EXPECT_EQ(w.crossing, 1.0);
    EXPECT_EQ(w.non_crossing, 1.0);
}

TEST(Bce, ConfidentCorrectApproachesZeroAndStaysFinite) {
    EXPECT_LT(bce_value(1.0 - 1e-9, 1), 1e-6);
    EXPECT_LT(bce_value(1e-9, 0), 1e-6);
    EXPECT_TRUE(std::isfinite(bce_value(0.0, 1)));
    EXPECT_NEAR(bce_value(0.0, 1), -std::log(kProbabilityClamp), 1e-9);
}

TEST(Bce, InvalidInputsRejected) {
    Tape t;
    EXPECT_THROW(bce_action(t.constant(Tensor({1, 1}, 0.5)), 2, {}), ContractError);
    EXPECT_THROW(bce_action(t.constant(Tensor({1, 2}, 0.5)), 1, {}), DimensionError);
}

// ---------------------------------------------------------------------------
// Discrete-location cross-entropy
// ---------------------------------------------------------------------------

TEST(CrossEntropy, UniformOver576IsLn576) {
    EXPECT_NEAR(ce_value(uniform_distribution(576), 17), std::log(576.0), 1e-12);
    EXPECT_NEAR(std::log(576.0), 6.356107660695892, 1e-12);
}

TEST(CrossEntropy, OneHotCorrectAndWrong) {
    Tensor d({1, 576}, 0.0);
    d[42] = 1.0;
    EXPECT_NEAR(ce_value(d, 42), 0.0, 1e-6);
    EXPECT_NEAR(ce_value(d, 7), -std::log(kProbabilityClamp), 1e-9);
    EXPECT_NEAR(-std::log(kProbabilityClamp), 16.11809565095832, 1e-9);
}

TEST(CrossEntropy, OutOfRangeTargetRejected) {
    Tape t;
    EXPECT_THROW(ce_discrete(t.constant(uniform_distribution(12)), 12), ContractError);
}

// ---------------------------------------------------------------------------
// Combined loss
// ---------------------------------------------------------------------------

namespace {

struct LossFixture {
    Tensor boxes[2];
    double probs[2];
    Tensor cells[2];
    std::vector<Targets> targets;

    explicit LossFixture(std::size_t seed) {
        Rng rng(seed);
        for (int i = 0; i < 2; ++i) {
            boxes[i] = random_tensor({3, 4}, rng, 0, 1);
            probs[i] = std::uniform_real_distribution<double>(0.1, 0.9)(rng);
            cells[i] = random_tensor({1, 12}, rng, 0.1, 1);
            double s = 0;
            for (double v : cells[i].values()) s += v;
            for (auto& v : cells[i].values()) v /= s;
        }
        targets = {{random_tensor({3, 4}, rng, 0, 1), 1, 3}, {random_tensor({3, 4}, rng, 0, 1), 0, 11}};
    }

    LossTerms run(Tape& t, const LossWeights& w) const {
        std::vector<PredictionVars> p;
        for (int i = 0; i < 2; ++i)
            p.push_back({t.constant(boxes[i]), t.constant(Tensor({1, 1}, probs[i])), t.constant(cells[i])});
        return total_loss(p, targets, w);
    }
};

}  // namespace

TEST(TotalLoss, ZeroWeightsGiveZero) {
    const LossFixture f(1);
    Tape t;
    EXPECT_EQ(f.run(t, {0, 0, 0, {}}).total.item(), 0.0);
}

TEST(TotalLoss, TrajectoryOnlyIsScaledTrajectoryLoss) {
    const LossFixture f(2);
    Tape t;
    const auto terms = f.run(t, {0.6, 0, 0, {}});
    EXPECT_NEAR(terms.total.item(), 0.6 * terms.trajectory.item(), 1e-15);
}

TEST(TotalLoss, MatchesHandSummedOracle) {
    const LossFixture f(3);
    LossWeights w{0.6, 1.0, 1.0, class_weights(1, 3)};
    Tape t;
    const auto terms = f.run(t, w);
    double traj = 0, act = 0, loc = 0;
    for (int i = 0; i < 2; ++i) {
        for (std::size_t k = 0; k < 12; ++k) traj += std::log(std::cosh(f.boxes[i][k] - f.targets[i].boxes[k]));
        act += f.targets[i].crossing == 1 ? -3.0 * std::log(f.probs[i]) : -std::log(1 - f.probs[i]);
        loc += -std::log(f.cells[i][f.targets[i].cell]);
    }
    traj /= 2;
    act /= 2;
    loc /= 2;
    EXPECT_NEAR(terms.trajectory.item(), traj, 1e-12);
    EXPECT_NEAR(terms.action.item(), act, 1e-12);
    EXPECT_NEAR(terms.location.item(), loc, 1e-12);
    EXPECT_NEAR(terms.total.item(), 0.6 * traj + act + loc, 1e-12);
}

TEST(TotalLoss, CountMismatchRejected) {
    const LossFixture f(4);
    Tape t;
    std::vector<PredictionVars> p{{t.constant(f.boxes[0]), t.constant(Tensor({1, 1}, 0.5)), t.constant(f.cells[0])}};
    EXPECT_THROW(total_loss(p, f.targets, LossWeights::pie()), ContractError);
}

TEST(TotalLoss, GradientMatchesFiniteDifferences) {
    for (const auto& c : module_cases(tiny_model_config())) {
        if (c.name != "total_loss") continue;
        const auto r = c.run(1e-6, 1e-5, "");
        EXPECT_TRUE(r.pass) << r.worst_param << " " << r.max_rel_error;
        return;
    }
    FAIL() << "total_loss case missing";
}

TEST(TotalLoss, ProfileWeights) {
    EXPECT_EQ(LossWeights::pie().trajectory, 0.6);
    EXPECT_EQ(LossWeights::jaad().trajectory, 0.5);
    EXPECT_EQ(LossWeights::pie().action, 1.0);
    EXPECT_EQ(LossWeights::pie().location, 1.0);
}

// ---------------------------------------------------------------------------
// Displacement metrics
// ---------------------------------------------------------------------------

TEST(Displacement, IdenticalSequencesGiveZero) {
    std::mt19937_64 rng(1);
    const auto s = random_sequence(rng, 5);
    const auto d = ade_fde(s, s);
    const auto b = arb_frb(s, s);
    EXPECT_EQ(d.average, 0.0);
    EXPECT_EQ(d.final, 0.0);
    EXPECT_EQ(b.average, 0.0);
    EXPECT_EQ(b.final, 0.0);
}

TEST(Displacement, ThreeFourFiveOffset) {
    const BoxSequence gt{{0, 0, 10, 10}, {5, 5, 15, 15}};
    const BoxSequence pred{{3, 4, 13, 14}, {8, 9, 18, 19}};
    const auto d = ade_fde(pred, gt);
    EXPECT_EQ(d.average, 5.0);
    EXPECT_EQ(d.final, 5.0);
}

TEST(Displacement, UniformCoordinateShiftGivesRmseShift) {
    const BoxSequence gt{{0, 0, 10, 10}, {1, 1, 4, 4}};
    const BoxSequence pred{{2, 2, 12, 12}, {3, 3, 6, 6}};
    const auto b = arb_frb(pred, gt);
    EXPECT_EQ(b.average, 2.0);
    EXPECT_EQ(b.final, 2.0);
}

TEST(Displacement, SingleStepAverageEqualsFinal) {
    std::mt19937_64 rng(2);
    for (int i = 0; i < 20; ++i) {
        const auto p = random_sequence(rng, 1), g = random_sequence(rng, 1);
        EXPECT_EQ(ade_fde(p, g).average, ade_fde(p, g).final);
        EXPECT_EQ(arb_frb(p, g).average, arb_frb(p, g).final);
    }
}

TEST(Displacement, MismatchedOrEmptyRejected) {
    std::mt19937_64 rng(3);
    EXPECT_THROW(ade_fde(random_sequence(rng, 2), random_sequence(rng, 3)), DimensionError);
    EXPECT_THROW(arb_frb({}, {}), DimensionError);
}

TEST(Displacement, MatchesLoopOraclesOnRandomInstances) {
    std::mt19937_64 rng(4);
    for (int i = 0; i < 100; ++i) {
        const std::size_t n = 1 + i % 30;
        const auto p = random_sequence(rng, n), g = random_sequence(rng, n);
        const auto d = ade_fde(p, g);
        const auto b = arb_frb(p, g);
        EXPECT_NEAR(d.average, oracle_ade(p, g), 1e-9);
        EXPECT_NEAR(d.final, oracle_ade({p.back()}, {g.back()}), 1e-9);
        double arb = 0;
        for (std::size_t t = 0; t < n; ++t) arb += oracle_rmse(p[t], g[t]);
        EXPECT_NEAR(b.average, arb / static_cast<double>(n), 1e-9);
        EXPECT_NEAR(b.final, oracle_rmse(p.back(), g.back()), 1e-9);
    }
}

// ---------------------------------------------------------------------------
// Final IoU
// ---------------------------------------------------------------------------

TEST(FinalIou, HandCases) {
    EXPECT_EQ(*fiou({0, 0, 2, 2}, {0, 0, 2, 2}), 1.0);
    EXPECT_EQ(*fiou({0, 0, 1, 1}, {5, 5, 6, 6}), 0.0);
    EXPECT_EQ(*fiou({0, 0, 2, 2}, {1, 1, 3, 3}), 1.0 / 7.0);
    EXPECT_EQ(*fiou({0, 0, 1, 1}, {1, 0, 2, 1}), 0.0);
}

TEST(FinalIou, SymmetricAndScaleInvariant) {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 50; ++i) {
        const Box a = random_box(rng, 0, 30), b = random_box(rng, 0, 30);
        EXPECT_NEAR(*fiou(a, b), *fiou(b, a), 1e-15);
        const Box sa{a[0] * 3, a[1] * 3, a[2] * 3, a[3] * 3}, sb{b[0] * 3, b[1] * 3, b[2] * 3, b[3] * 3};
        EXPECT_NEAR(*fiou(sa, sb), *fiou(a, b), 1e-12);
        EXPECT_GE(*fiou(a, b), 0.0);
        EXPECT_LE(*fiou(a, b), 1.0);
    }
}

TEST(FinalIou, DegenerateTruthIsSkippedAndCounted) {
    EXPECT_FALSE(fiou({0, 0, 1, 1}, {2, 2, 2, 5}).has_value());
    std::vector<EvaluatedSample> s{{{{0, 0, 2, 2}}, {{0, 0, 2, 2}}, 0.9, 1}, {{{0, 0, 2, 2}}, {{1, 1, 1, 1}}, 0.1, 0}};
    const auto r = evaluate_predictions(s);
    EXPECT_EQ(r.skipped_fiou, 1u);
    EXPECT_EQ(r.fiou, 1.0);
}

TEST(FinalIou, MatchesOracleOnRandomInstances) {
    std::mt19937_64 rng(6);
    for (int i = 0; i < 100; ++i) {
        const Box a = random_box(rng, 0, 50), b = random_box(rng, 0, 50);
        EXPECT_NEAR(*fiou(a, b), oracle_iou(a, b), 1e-9);
    }
}

// ---------------------------------------------------------------------------
// Classification metrics
// ---------------------------------------------------------------------------

TEST(Classification, PerfectSeparation) {
    const auto m = classification_metrics({0.9, 0.1}, {1, 0});
    EXPECT_EQ(m.accuracy, 1.0);
    EXPECT_EQ(*m.auc, 1.0);
    EXPECT_EQ(m.f1, 1.0);
    EXPECT_EQ(m.precision, 1.0);
}

TEST(Classification, InvertedScoresGiveZeroAuc) { EXPECT_EQ(*roc_auc({0.1, 0.2, 0.8, 0.9}, {1, 1, 0, 0}), 0.0); }

TEST(Classification, HandComputedCounts) {
    const auto m = classification_metrics({0.8, 0.6, 0.4, 0.3, 0.7, 0.2}, {1, 0, 1, 0, 1, 0});
    EXPECT_DOUBLE_EQ(m.accuracy, 4.0 / 6.0);
    EXPECT_DOUBLE_EQ(m.precision, 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(m.f1, 2.0 / 3.0);
    EXPECT_NEAR(*m.auc, oracle_auc({0.8, 0.6, 0.4, 0.3, 0.7, 0.2}, {1, 0, 1, 0, 1, 0}), 1e-15);
    EXPECT_NEAR(*m.auc, 8.0 / 9.0, 1e-15);
}

TEST(Classification, TiesCountHalf) { EXPECT_EQ(*roc_auc({0.5, 0.5}, {1, 0}), 0.5); }

TEST(Classification, SingleClassHasNoAuc) {
    EXPECT_FALSE(roc_auc({0.1, 0.7}, {1, 1}).has_value());
    EXPECT_FALSE(classification_metrics({0.1, 0.7}, {0, 0}).auc.has_value());
}

TEST(Classification, NoPredictedPositivesGivesZeroPrecision) {
    const auto m = classification_metrics({0.1, 0.2}, {1, 0});
    EXPECT_EQ(m.precision, 0.0);
    EXPECT_EQ(m.f1, 0.0);
    EXPECT_EQ(m.accuracy, 0.5);
}

TEST(Classification, AucInvariantUnderMonotoneTransform) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<double> s, t;
    std::vector<int> y;
    for (int i = 0; i < 40; ++i) {
        s.push_back(u(rng));
        t.push_back(std::exp(3 * s.back()) - 5);
        y.push_back(u(rng) < 0.4 ? 1 : 0);
    }
    EXPECT_NEAR(*roc_auc(s, y), *roc_auc(t, y), 1e-15);
}

TEST(Classification, AucMatchesPairwiseOracleOnRandomInstances) {
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<int> level(0, 9);
    for (int i = 0; i < 100; ++i) {
        const std::size_t n = 2 + i % 40;
        std::vector<double> s;
        std::vector<int> y;
        for (std::size_t k = 0; k < n; ++k) {
            s.push_back(level(rng) / 10.0);
            y.push_back(k == 1 ? 0 : k % 2 == 0 ? 1 : level(rng) < 3);
        }
        EXPECT_NEAR(*roc_auc(s, y), oracle_auc(s, y), 1e-9);
    }
}

TEST(Classification, LengthMismatchRejected) {
    EXPECT_THROW(roc_auc({0.1}, {1, 0}), DimensionError);
    EXPECT_THROW(classification_metrics({0.1}, {1, 0}), DimensionError);
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

TEST(Report, EvaluatePredictionsAggregates) {
    std::vector<EvaluatedSample> s{{{{0, 0, 10, 10}, {0, 0, 10, 10}}, {{3, 4, 13, 14}, {3, 4, 13, 14}}, 0.9, 1},
                                   {{{0, 0, 2, 2}, {0, 0, 2, 2}}, {{0, 0, 2, 2}, {1, 1, 3, 3}}, 0.2, 0}};
    const auto r = evaluate_predictions(s);
    EXPECT_EQ(r.samples, 2u);
    EXPECT_NEAR(r.ade, (5.0 + std::sqrt(2.0) / 2) / 2, 1e-12);
    EXPECT_NEAR(r.fde, (5.0 + std::sqrt(2.0)) / 2, 1e-12);
    EXPECT_NEAR(r.fiou, (oracle_iou({0, 0, 10, 10}, {3, 4, 13, 14}) + 1.0 / 7.0) / 2, 1e-12);
    EXPECT_EQ(r.accuracy, 1.0);
    EXPECT_EQ(*r.auc, 1.0);
}

TEST(Report, JsonAndCsvLayout) {
    MetricReport r;
    r.ade = 1.5;
    r.fiou = 0.25;
    r.samples = 3;
    const auto j = r.to_json();
    for (const char* k : {"ade", "fde", "arb", "frb", "fiou", "acc", "auc", "f1", "prec", "samples", "skipped_fiou"})
        EXPECT_TRUE(j.contains(k)) << k;
    EXPECT_TRUE(j["auc"].is_null());
    EXPECT_EQ(j["ade"].get<double>(), 1.5);
    EXPECT_EQ(MetricReport::csv_header(), "ade,fde,arb,frb,fiou,acc,auc,f1,prec");
    EXPECT_EQ(r.csv_row(), "1.5,0,0,0,0.25,0,,0,0");
    r.auc = 0.75;
    EXPECT_EQ(r.csv_row(), "1.5,0,0,0,0.25,0,0.75,0,0");
}

TEST(Report, EmptyInputGivesZeroSamples) { EXPECT_EQ(evaluate_predictions({}).samples, 0u); }
