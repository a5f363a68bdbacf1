#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "tensor.hpp"

namespace pedformer {

/// (x1, y1, x2, y2): top-left and bottom-right corners.
using Box = std::array<double, 4>;

struct ImageSize {
    std::size_t width = 1920;
    std::size_t height = 1080;
    friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

/// Vehicle speed s and velocity components along x and z.
struct EgoMotion {
    double speed = 0.0;
    double vx = 0.0;
    double vz = 0.0;
    friend bool operator==(const EgoMotion&, const EgoMotion&) = default;
};

struct TrackFrame {
    std::int64_t index = 0;
    Box box{};
    int crossing = 0;
    EgoMotion ego;
    friend bool operator==(const TrackFrame&, const TrackFrame&) = default;
};

/// Annotated frames of one pedestrian, contiguous in frame index.
struct TrackSequence {
    std::string ped_id;
    std::vector<TrackFrame> frames;
    double fps = 30.0;
    ImageSize image_size;

    bool is_crossing() const {
        return std::any_of(frames.begin(), frames.end(), [](const TrackFrame& f) { return f.crossing != 0; });
    }
    /// Position (not frame index) of the first frame labeled crossing.
    std::optional<std::size_t> event_position() const {
        for (std::size_t i = 0; i < frames.size(); ++i)
            if (frames[i].crossing) return i;
        return std::nullopt;
    }
    friend bool operator==(const TrackSequence&, const TrackSequence&) = default;
};

/// Image-plane grid used for discrete locations. Labels are row-major.
struct GridSpec {
    std::size_t rows = 18;
    std::size_t cols = 32;
    std::size_t cell_px = 60;
    ImageSize image_size;

    std::size_t num_cells() const { return rows * cols; }

    void validate() const {
        std::vector<std::string> problems;
        if (rows == 0 || cols == 0 || cell_px == 0) problems.emplace_back("grid: rows, cols and cell_px must be positive");
        if (rows * cell_px < image_size.height) problems.emplace_back("grid: rows * cell_px must cover the image height");
        if (cols * cell_px < image_size.width) problems.emplace_back("grid: cols * cell_px must cover the image width");
        if (!problems.empty()) throw ConfigError(problems);
    }

    /// Pixel center of a cell.
    std::pair<double, double> center(std::size_t cell) const {
        const double c = static_cast<double>(cell % cols), r = static_cast<double>(cell / cols);
        const double px = static_cast<double>(cell_px);
        return {(c + 0.5) * px, (r + 0.5) * px};
    }
};

/// One training/evaluation instance cut from a track.
struct Sample {
    std::string ped_id;
    std::int64_t start_frame = 0;
    Tensor obs_boxes;       // o x 4, normalized
    Tensor obs_velocities;  // o x 4
    std::vector<std::size_t> obs_cells;
    Tensor ego;           // (o + tau) x 3: observation then prediction horizon
    Tensor future_boxes;  // tau x 4, normalized
    int crossing_label = 0;
    std::size_t final_cell = 0;
    std::string map_ref;  // scene frame at the last observed step
    ImageSize image_size;

    std::size_t obs_len() const { return obs_cells.size(); }
    std::size_t pred_len() const { return future_boxes.dim(0); }
    std::int64_t last_observed_frame() const { return start_frame + static_cast<std::int64_t>(obs_len()) - 1; }
};

inline std::string map_key(const std::string& ped_id, std::int64_t frame) {
    return ped_id + "@" + std::to_string(frame);
}

// ---------------------------------------------------------------------------
// Feature derivation
// ---------------------------------------------------------------------------

/// Divides x by width and y by height, clamped to [0, 1]. Zero-area boxes
/// (before or after clamping) are rejected.
inline std::optional<Box> normalize_box(const Box& box, ImageSize image) {
    const double w = static_cast<double>(image.width), h = static_cast<double>(image.height);
    Box out{std::clamp(box[0] / w, 0.0, 1.0), std::clamp(box[1] / h, 0.0, 1.0), std::clamp(box[2] / w, 0.0, 1.0),
            std::clamp(box[3] / h, 0.0, 1.0)};
    if (!(out[2] > out[0]) || !(out[3] > out[1])) return std::nullopt;
    return out;
}

inline Box denormalize_box(const Box& box, ImageSize image) {
    const double w = static_cast<double>(image.width), h = static_cast<double>(image.height);
    return {box[0] * w, box[1] * h, box[2] * w, box[3] * h};
}

/// v_t = box_t - box_{t-1} on all four coordinates; v_0 = 0.
inline std::vector<Box> compute_velocity(const std::vector<Box>& boxes) {
    std::vector<Box> out(boxes.size(), Box{});
    for (std::size_t t = 1; t < boxes.size(); ++t)
        for (std::size_t k = 0; k < 4; ++k) out[t][k] = boxes[t][k] - boxes[t - 1][k];
    return out;
}

namespace detail {

/// Nearest cell center along one axis; ties go to the lower index.
inline std::size_t nearest_center(double x, std::size_t cell_px, std::size_t count) {
    const double px = static_cast<double>(cell_px);
    double guess = std::floor(x / px);
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (double c = guess - 1; c <= guess + 1; c += 1.0) {
        if (c < 0 || c >= static_cast<double>(count)) continue;
        const double d = std::abs(x - (c + 0.5) * px);
        if (d < best_d) {
            best_d = d;
            best = static_cast<std::size_t>(c);
        }
    }
    if (best_d == std::numeric_limits<double>::infinity()) best = x < 0 ? 0 : count - 1;
    return best;
}

}  // namespace detail

/// Row-major index of the cell whose center is nearest the box center.
///
/// Squared distance separates into row and column terms, so the nearest cell
/// is the nearest row paired with the nearest column; picking the lower index
/// on each axis yields the smallest overall index among tied cells.
inline std::size_t discretize_location(const Box& box_px, const GridSpec& grid) {
    const double cx = 0.5 * (box_px[0] + box_px[2]);
    const double cy = 0.5 * (box_px[1] + box_px[3]);
    const auto col = detail::nearest_center(cx, grid.cell_px, grid.cols);
    const auto r = detail::nearest_center(cy, grid.cell_px, grid.rows);
    return r * grid.cols + col;
}

// ---------------------------------------------------------------------------
// Windowing
// ---------------------------------------------------------------------------

struct WindowSpec {
    std::size_t obs_len = 15;
    std::size_t pred_len = 30;
    /// 0 selects ceil(obs_len / 2), i.e. 50% observation overlap.
    std::size_t stride = 0;
    /// Time to event bounds in seconds, applied to crossing tracks.
    double tte_min_s = 1.0;
    double tte_max_s = 2.0;

    std::size_t effective_stride() const { return stride ? stride : (obs_len + 1) / 2; }
};

/// Start positions (indices into track.frames) of the windows to keep.
///
/// Crossing tracks keep windows whose last observed frame lies between
/// tte_min and tte_max seconds before the first crossing frame.
inline std::vector<std::size_t> window_starts(const TrackSequence& track, const WindowSpec& spec) {
    std::vector<std::size_t> out;
    const std::size_t len = spec.obs_len + spec.pred_len;
    if (spec.obs_len == 0 || spec.pred_len == 0 || track.frames.size() < len) return out;
    const auto event = track.event_position();
    const double lo = spec.tte_min_s * track.fps, hi = spec.tte_max_s * track.fps;
    for (std::size_t s = 0; s + len <= track.frames.size(); s += spec.effective_stride()) {
        if (event) {
            const double tte = static_cast<double>(*event) - static_cast<double>(s + spec.obs_len - 1);
            if (tte < lo || tte > hi) continue;
        }
        out.push_back(s);
    }
    return out;
}

struct WindowStats {
    std::size_t kept = 0;
    std::size_t rejected_degenerate = 0;
};

/// Cuts samples from a track. Windows containing a zero-area box are dropped
/// and counted in `stats`.
inline std::vector<Sample> sample_windows(const TrackSequence& track, const WindowSpec& spec, const GridSpec& grid,
                                          WindowStats* stats = nullptr) {
    std::vector<Sample> out;
    const std::size_t o = spec.obs_len, tau = spec.pred_len;
    const int label = track.is_crossing() ? 1 : 0;
    for (auto s : window_starts(track, spec)) {
        std::vector<Box> norm;
        bool ok = true;
        for (std::size_t i = s; i < s + o + tau && ok; ++i) {
            auto b = normalize_box(track.frames[i].box, track.image_size);
            if (!b) ok = false;
            else norm.push_back(*b);
        }
        if (!ok) {
            if (stats) ++stats->rejected_degenerate;
            continue;
        }
        Sample smp;
        smp.ped_id = track.ped_id;
        smp.start_frame = track.frames[s].index;
        smp.image_size = track.image_size;
        smp.crossing_label = label;
        smp.obs_boxes = Tensor({o, 4});
        smp.obs_velocities = Tensor({o, 4});
        smp.future_boxes = Tensor({tau, 4});
        smp.ego = Tensor({o + tau, 3});
        const std::vector<Box> obs(norm.begin(), norm.begin() + static_cast<std::ptrdiff_t>(o));
        const auto vel = compute_velocity(obs);
        for (std::size_t t = 0; t < o; ++t) {
            for (std::size_t k = 0; k < 4; ++k) {
                smp.obs_boxes.at(t, k) = obs[t][k];
                smp.obs_velocities.at(t, k) = vel[t][k];
            }
            smp.obs_cells.push_back(discretize_location(track.frames[s + t].box, grid));
        }
        for (std::size_t t = 0; t < tau; ++t)
            for (std::size_t k = 0; k < 4; ++k) smp.future_boxes.at(t, k) = norm[o + t][k];
        for (std::size_t t = 0; t < o + tau; ++t) {
            const auto& e = track.frames[s + t].ego;
            smp.ego.at(t, 0) = e.speed;
            smp.ego.at(t, 1) = e.vx;
            smp.ego.at(t, 2) = e.vz;
        }
        smp.final_cell = discretize_location(track.frames[s + o + tau - 1].box, grid);
        smp.map_ref = map_key(track.ped_id, track.frames[s + o - 1].index);
        out.push_back(std::move(smp));
        if (stats) ++stats->kept;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Track files (JSON Lines)
// ---------------------------------------------------------------------------

inline nlohmann::json track_to_json(const TrackSequence& track) {
    nlohmann::json frames = nlohmann::json::array();
    for (const auto& f : track.frames)
        frames.push_back({{"f", f.index},
                          {"box", {f.box[0], f.box[1], f.box[2], f.box[3]}},
                          {"cross", f.crossing},
                          {"ego", {f.ego.speed, f.ego.vx, f.ego.vz}}});
    return {{"ped_id", track.ped_id},
            {"fps", track.fps},
            {"image_size", {track.image_size.width, track.image_size.height}},
            {"frames", std::move(frames)}};
}

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& obj, const char* field, std::size_t line) {
    if (!obj.is_object() || !obj.contains(field))
        throw ParseError("line " + std::to_string(line) + ": missing required field '" + field + "'");
    return obj.at(field);
}

template <class T>
T field_as(const nlohmann::json& obj, const char* field, std::size_t line) {
    try {
        return require_field(obj, field, line).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ParseError("line " + std::to_string(line) + ": field '" + field + "' has the wrong type");
    }
}

}  // namespace detail

/// Parses one JSON line. Structural problems throw ParseError; invariant
/// violations return an explanation instead of a track.
inline std::variant<TrackSequence, std::string> parse_track(const std::string& text, std::size_t line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("line " + std::to_string(line) + ": invalid JSON (" + e.what() + ")");
    }
    TrackSequence track;
    track.ped_id = detail::field_as<std::string>(j, "ped_id", line);
    track.fps = detail::field_as<double>(j, "fps", line);
    const auto size = detail::field_as<std::vector<std::size_t>>(j, "image_size", line);
    if (size.size() != 2) throw ParseError("line " + std::to_string(line) + ": field 'image_size' needs [w, h]");
    track.image_size = {size[0], size[1]};
    const auto& frames = detail::require_field(j, "frames", line);
    if (!frames.is_array()) throw ParseError("line " + std::to_string(line) + ": field 'frames' must be an array");
    const std::string where = "line " + std::to_string(line) + " (" + track.ped_id + ")";
    if (!(track.fps > 0)) return where + ": fps must be positive";
    if (track.image_size.width == 0 || track.image_size.height == 0) return where + ": empty image size";
    for (const auto& fj : frames) {
        TrackFrame f;
        f.index = detail::field_as<std::int64_t>(fj, "f", line);
        const auto box = detail::field_as<std::vector<double>>(fj, "box", line);
        if (box.size() != 4) throw ParseError("line " + std::to_string(line) + ": field 'box' needs 4 values");
        const auto ego = detail::field_as<std::vector<double>>(fj, "ego", line);
        if (ego.size() != 3) throw ParseError("line " + std::to_string(line) + ": field 'ego' needs 3 values");
        f.crossing = detail::field_as<int>(fj, "cross", line);
        if (f.crossing != 0 && f.crossing != 1) return where + ": 'cross' must be 0 or 1 at frame " + std::to_string(f.index);
        if (!(box[0] < box[2]) || !(box[1] < box[3]))
            return where + ": box must satisfy x1 < x2 and y1 < y2 at frame " + std::to_string(f.index);
        const double w = static_cast<double>(track.image_size.width), h = static_cast<double>(track.image_size.height);
        f.box = {std::clamp(box[0], 0.0, w), std::clamp(box[1], 0.0, h), std::clamp(box[2], 0.0, w),
                 std::clamp(box[3], 0.0, h)};
        if (!(f.box[0] < f.box[2]) || !(f.box[1] < f.box[3]))
            return where + ": box lies outside the image at frame " + std::to_string(f.index);
        f.ego = {ego[0], ego[1], ego[2]};
        if (!track.frames.empty() && f.index != track.frames.back().index + 1)
            return where + ": frame indices must be contiguous and increasing (frame " + std::to_string(f.index) + ")";
        track.frames.push_back(f);
    }
    return track;
}

/// Reads a track stream. Rejected tracks are skipped and explained in
/// `diagnostics`; malformed lines throw ParseError naming the line.
inline std::vector<TrackSequence> parse_annotations(std::istream& in, std::vector<std::string>* diagnostics = nullptr) {
    std::vector<TrackSequence> tracks;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto parsed = parse_track(text, line);
        if (auto* t = std::get_if<TrackSequence>(&parsed)) tracks.push_back(std::move(*t));
        else if (diagnostics) diagnostics->push_back(std::get<std::string>(parsed));
    }
    return tracks;
}

inline std::vector<TrackSequence> load_annotations(const std::string& path, std::vector<std::string>* diagnostics = nullptr) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open track file '" + path + "'");
    return parse_annotations(in, diagnostics);
}

inline void save_annotations(const std::string& path, const std::vector<TrackSequence>& tracks) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write track file '" + path + "'");
    for (const auto& t : tracks) out << track_to_json(t).dump() << '\n';
}

}  // namespace pedformer
