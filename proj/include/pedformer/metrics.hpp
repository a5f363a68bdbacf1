#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "data.hpp"

namespace pedformer {

using BoxSequence = std::vector<Box>;

struct DisplacementErrors {
    double average = 0.0;
    double final = 0.0;
};

inline void require_aligned(const BoxSequence& pred, const BoxSequence& gt, const char* op) {
    if (pred.empty() || pred.size() != gt.size())
        throw DimensionError(std::string(op) + ": sequences must be non-empty and of equal length (" + std::to_string(pred.size()) +
                             " vs " + std::to_string(gt.size()) + ")");
}

inline double center_distance(const Box& a, const Box& b) {
    const double dx = 0.5 * (a[0] + a[2]) - 0.5 * (b[0] + b[2]);
    const double dy = 0.5 * (a[1] + a[3]) - 0.5 * (b[1] + b[3]);
    return std::hypot(dx, dy);
}

inline double box_rmse(const Box& a, const Box& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < 4; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return std::sqrt(s / 4.0);
}

/// Mean and final-step distance between box centers.
inline DisplacementErrors ade_fde(const BoxSequence& pred, const BoxSequence& gt) {
    require_aligned(pred, gt, "ade_fde");
    DisplacementErrors e;
    for (std::size_t t = 0; t < pred.size(); ++t) e.average += center_distance(pred[t], gt[t]);
    e.average /= static_cast<double>(pred.size());
    e.final = center_distance(pred.back(), gt.back());
    return e;
}

/// Mean and final-step RMSE over the four box coordinates.
inline DisplacementErrors arb_frb(const BoxSequence& pred, const BoxSequence& gt) {
    require_aligned(pred, gt, "arb_frb");
    DisplacementErrors e;
    for (std::size_t t = 0; t < pred.size(); ++t) e.average += box_rmse(pred[t], gt[t]);
    e.average /= static_cast<double>(pred.size());
    e.final = box_rmse(pred.back(), gt.back());
    return e;
}

inline double box_area(const Box& b) { return std::max(0.0, b[2] - b[0]) * std::max(0.0, b[3] - b[1]); }

/// Intersection over union; nullopt when the reference box has no area.
inline std::optional<double> fiou(const Box& pred, const Box& gt) {
    if (!(gt[2] > gt[0]) || !(gt[3] > gt[1])) return std::nullopt;
    const double iw = std::max(0.0, std::min(pred[2], gt[2]) - std::max(pred[0], gt[0]));
    const double ih = std::max(0.0, std::min(pred[3], gt[3]) - std::max(pred[1], gt[1]));
    const double inter = iw * ih;
    const double uni = box_area(pred) + box_area(gt) - inter;
    return uni > 0 ? inter / uni : 0.0;
}

struct ClassificationMetrics {
    double accuracy = 0.0;
    std::optional<double> auc;
    double f1 = 0.0;
    double precision = 0.0;
};

/// Area under the ROC curve from midranks; nullopt unless both classes occur.
inline std::optional<double> roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw DimensionError("roc_auc: score and label counts differ");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    double pos = 0, rank_sum = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (labels[i] == 1) {
            pos += 1;
            rank_sum += rank[i];
        }
    const double neg = static_cast<double>(n) - pos;
    if (pos == 0 || neg == 0) return std::nullopt;
    return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

/// Accuracy, F1 and precision at `threshold` (probability >= threshold is
/// positive), and ROC AUC. Precision and F1 are 0 without predicted positives.
inline ClassificationMetrics classification_metrics(const std::vector<double>& probs, const std::vector<int>& labels,
                                                    double threshold = 0.5) {
    if (probs.size() != labels.size()) throw DimensionError("classification_metrics: probability and label counts differ");
    ClassificationMetrics m;
    if (probs.empty()) return m;
    double tp = 0, fp = 0, fn = 0, correct = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const bool p = probs[i] >= threshold, y = labels[i] == 1;
        if (p == y) correct += 1;
        if (p && y) tp += 1;
        if (p && !y) fp += 1;
        if (!p && y) fn += 1;
    }
    m.accuracy = correct / static_cast<double>(probs.size());
    m.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    m.f1 = m.precision + recall > 0 ? 2 * m.precision * recall / (m.precision + recall) : 0.0;
    m.auc = roc_auc(probs, labels);
    return m;
}

/// Dataset-level evaluation summary. Distances in pixels.
struct MetricReport {
    double ade = 0, fde = 0, arb = 0, frb = 0, fiou = 0;
    double accuracy = 0;
    std::optional<double> auc;
    double f1 = 0, precision = 0;
    std::size_t samples = 0;
    std::size_t skipped_fiou = 0;

    nlohmann::json to_json() const {
        return {{"ade", ade},
                {"fde", fde},
                {"arb", arb},
                {"frb", frb},
                {"fiou", fiou},
                {"acc", accuracy},
                {"auc", auc ? nlohmann::json(*auc) : nlohmann::json(nullptr)},
                {"f1", f1},
                {"prec", precision},
                {"samples", samples},
                {"skipped_fiou", skipped_fiou}};
    }

    static std::string csv_header() { return "ade,fde,arb,frb,fiou,acc,auc,f1,prec"; }

    /// One CSV row; an undefined AUC is written as an empty field.
    std::string csv_row() const {
        std::ostringstream os;
        os.precision(10);
        os << ade << ',' << fde << ',' << arb << ',' << frb << ',' << fiou << ',' << accuracy << ',';
        if (auc) os << *auc;
        os << ',' << f1 << ',' << precision;
        return os.str();
    }
};

/// One evaluated sample in pixel space.
struct EvaluatedSample {
    BoxSequence predicted;
    BoxSequence truth;
    double crossing_prob = 0.0;
    int crossing_label = 0;
};

/// Averages trajectory metrics over samples; FIoU skips degenerate truth boxes.
inline MetricReport evaluate_predictions(const std::vector<EvaluatedSample>& samples) {
    MetricReport r;
    r.samples = samples.size();
    if (samples.empty()) return r;
    std::vector<double> probs;
    std::vector<int> labels;
    double fiou_sum = 0;
    std::size_t fiou_n = 0;
    for (const auto& s : samples) {
        const auto d = ade_fde(s.predicted, s.truth);
        const auto b = arb_frb(s.predicted, s.truth);
        r.ade += d.average;
        r.fde += d.final;
        r.arb += b.average;
        r.frb += b.final;
        if (auto f = fiou(s.predicted.back(), s.truth.back())) {
            fiou_sum += *f;
            ++fiou_n;
        } else {
            ++r.skipped_fiou;
        }
        probs.push_back(s.crossing_prob);
        labels.push_back(s.crossing_label);
    }
    const double n = static_cast<double>(samples.size());
    r.ade /= n;
    r.fde /= n;
    r.arb /= n;
    r.frb /= n;
    r.fiou = fiou_n ? fiou_sum / static_cast<double>(fiou_n) : 0.0;
    const auto c = classification_metrics(probs, labels);
    r.accuracy = c.accuracy;
    r.auc = c.auc;
    r.f1 = c.f1;
    r.precision = c.precision;
    return r;
}

}  // namespace pedformer
