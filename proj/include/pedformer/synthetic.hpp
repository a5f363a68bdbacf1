#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "autodiff.hpp"
#include "data.hpp"
#include "json_config.hpp"
#include "semantic_map.hpp"

namespace pedformer {

/// Parameters of the synthetic driving scenarios.
struct ScenarioConfig {
    std::string profile = "pie";
    std::size_t tracks = 200;
    double fps = 30.0;
    ImageSize image_size;
    std::size_t obs_len = 15;
    std::size_t pred_len = 30;
    /// Fraction of tracks that contain a crossing event.
    double crossing_ratio = 0.25;
    /// Extra frames drawn before the earliest admissible event and after the last window.
    std::size_t pre_margin = 12;
    std::size_t post_margin = 7;
    /// Windows per non-crossing track; 0 matches the yield of a crossing
    /// track, whose admissible window ends span fps + 1 frames.
    std::size_t windows_per_track = 0;
    /// Ego speed range in km/h and lateral velocity bound in m/s.
    double ego_speed_max = 45.0;
    double ego_lateral_max = 0.5;
    std::size_t ego_knot_frames = 30;
    /// Depth proxy: per frame, boxes scale by 1 / (1 - v_z * dt * depth_scale).
    double depth_scale = 0.005;
    /// Image shift in pixels per frame per m/s of lateral ego velocity.
    double lateral_px = 2.0;
    /// Pedestrian image-plane speeds in px/frame.
    double walk_speed_max = 1.5;
    double cross_speed_min = 4.0;
    double cross_speed_max = 8.0;
    std::size_t segment_min = 15;
    std::size_t segment_max = 45;
    /// Crossing pedestrians appear only with slow ego speed, others with fast.
    bool ego_dependent_crossing = false;
    double slow_speed_max = 12.0;
    double fast_speed_min = 25.0;
    std::size_t max_vehicles = 3;
    std::size_t max_bikes = 1;
    std::size_t max_persons = 2;
    /// Resolution of the rendered semantic maps.
    std::size_t map_height = 216;
    std::size_t map_width = 384;

    static ScenarioConfig pie() { return {}; }

    static ScenarioConfig jaad() {
        ScenarioConfig c;
        c.profile = "jaad";
        c.crossing_ratio = 0.204;
        c.ego_speed_max = 35.0;
        return c;
    }

    std::size_t stride() const { return (obs_len + 1) / 2; }

    std::size_t non_crossing_windows() const {
        if (windows_per_track) return windows_per_track;
        const double span = std::round(fps) + 1.0;
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(span / static_cast<double>(stride()))));
    }

    void validate() const {
        std::vector<std::string> p;
        if (!(fps >= 1.0)) p.emplace_back("scenario.fps must be >= 1");
        if (obs_len == 0 || pred_len == 0) p.emplace_back("scenario.obs_len and scenario.pred_len must be positive");
        if (!(crossing_ratio >= 0.0 && crossing_ratio <= 1.0)) p.emplace_back("scenario.crossing_ratio must lie in [0, 1]");
        if (ego_knot_frames == 0) p.emplace_back("scenario.ego_knot_frames must be positive");
        if (segment_min == 0 || segment_max < segment_min) p.emplace_back("scenario: need 0 < segment_min <= segment_max");
        if (cross_speed_max < cross_speed_min) p.emplace_back("scenario: cross_speed_max < cross_speed_min");
        if (map_height == 0 || map_width == 0) p.emplace_back("scenario: map size must be positive");
        if (depth_scale < 0 || ego_speed_max < 0 || walk_speed_max < 0) p.emplace_back("scenario: scales and speeds must be non-negative");
        if (!p.empty()) throw ConfigError(p);
    }
};

inline nlohmann::json to_json(const ScenarioConfig& c) {
    return {{"profile", c.profile},
            {"tracks", c.tracks},
            {"fps", c.fps},
            {"image_width", c.image_size.width},
            {"image_height", c.image_size.height},
            {"obs_len", c.obs_len},
            {"pred_len", c.pred_len},
            {"crossing_ratio", c.crossing_ratio},
            {"pre_margin", c.pre_margin},
            {"post_margin", c.post_margin},
            {"windows_per_track", c.windows_per_track},
            {"ego_speed_max", c.ego_speed_max},
            {"ego_lateral_max", c.ego_lateral_max},
            {"ego_knot_frames", c.ego_knot_frames},
            {"depth_scale", c.depth_scale},
            {"lateral_px", c.lateral_px},
            {"walk_speed_max", c.walk_speed_max},
            {"cross_speed_min", c.cross_speed_min},
            {"cross_speed_max", c.cross_speed_max},
            {"segment_min", c.segment_min},
            {"segment_max", c.segment_max},
            {"ego_dependent_crossing", c.ego_dependent_crossing},
            {"slow_speed_max", c.slow_speed_max},
            {"fast_speed_min", c.fast_speed_min},
            {"max_vehicles", c.max_vehicles},
            {"max_bikes", c.max_bikes},
            {"max_persons", c.max_persons},
            {"map_height", c.map_height},
            {"map_width", c.map_width}};
}

/// Overlays keys onto `c`. A "profile" key first resets `c` to that profile.
inline void scenario_from_json(const nlohmann::json& j, ScenarioConfig& c, std::vector<std::string>& problems,
                               const std::string& scope = "scenario") {
    if (j.is_object() && j.contains("profile") && j.at("profile").is_string()) {
        const auto name = j.at("profile").get<std::string>();
        if (name == "pie") c = ScenarioConfig::pie();
        else if (name == "jaad") c = ScenarioConfig::jaad();
        else problems.push_back(scope + ".profile: unknown profile '" + name + "' (expected pie|jaad)");
    }
    JsonFields f(j, scope, problems);
    std::string profile = c.profile;
    f.read("profile", profile);
    f.read("tracks", c.tracks);
    f.read("fps", c.fps);
    f.read("image_width", c.image_size.width);
    f.read("image_height", c.image_size.height);
    f.read("obs_len", c.obs_len);
    f.read("pred_len", c.pred_len);
    f.read("crossing_ratio", c.crossing_ratio);
    f.read("pre_margin", c.pre_margin);
    f.read("post_margin", c.post_margin);
    f.read("windows_per_track", c.windows_per_track);
    f.read("ego_speed_max", c.ego_speed_max);
    f.read("ego_lateral_max", c.ego_lateral_max);
    f.read("ego_knot_frames", c.ego_knot_frames);
    f.read("depth_scale", c.depth_scale);
    f.read("lateral_px", c.lateral_px);
    f.read("walk_speed_max", c.walk_speed_max);
    f.read("cross_speed_min", c.cross_speed_min);
    f.read("cross_speed_max", c.cross_speed_max);
    f.read("segment_min", c.segment_min);
    f.read("segment_max", c.segment_max);
    f.read("ego_dependent_crossing", c.ego_dependent_crossing);
    f.read("slow_speed_max", c.slow_speed_max);
    f.read("fast_speed_min", c.fast_speed_min);
    f.read("max_vehicles", c.max_vehicles);
    f.read("max_bikes", c.max_bikes);
    f.read("max_persons", c.max_persons);
    f.read("map_height", c.map_height);
    f.read("map_width", c.map_width);
}

/// Tracks plus semantic maps keyed by map_key(ped_id, frame).
struct SyntheticCorpus {
    std::vector<TrackSequence> tracks;
    std::map<std::string, SemanticMap> maps;
};

namespace synth {

/// Uniform double in [a, b) from the top 53 bits of one draw.
inline double uniform(Rng& rng, double a, double b) {
    return a + (b - a) * static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [a, b].
inline std::size_t uniform_int(Rng& rng, std::size_t a, std::size_t b) {
    if (b <= a) return a;
    return a + static_cast<std::size_t>(rng() % (b - a + 1));
}

inline double round_to(double v, double step) { return std::round(v / step) * step; }

/// Whether track i carries a crossing event: spreads floor(n * ratio) events
/// evenly over the first n tracks.
inline bool is_crossing_track(std::size_t i, double ratio) {
    return std::floor(static_cast<double>(i + 1) * ratio) > std::floor(static_cast<double>(i) * ratio);
}

/// Smoothstep interpolation between random knots.
inline std::vector<double> smooth_profile(Rng& rng, std::size_t length, std::size_t knot_every, double lo, double hi) {
    const std::size_t knots = length / knot_every + 2;
    std::vector<double> k(knots);
    for (auto& v : k) v = uniform(rng, lo, hi);
    std::vector<double> out(length);
    for (std::size_t t = 0; t < length; ++t) {
        const std::size_t i = t / knot_every;
        const double u = static_cast<double>(t % knot_every) / static_cast<double>(knot_every);
        const double w = u * u * (3.0 - 2.0 * u);
        out[t] = k[i] + (k[i + 1] - k[i]) * w;
    }
    return out;
}

/// An image-plane box moved by its own velocity and by the ego camera motion.
struct Agent {
    std::uint16_t label = labels::person;
    double cx = 0, bottom = 0, width = 0, height = 0;
    double vx = 0;

    Box box() const { return {cx - width / 2, bottom - height, cx + width / 2, bottom}; }

    void apply_ego(double scale, double shift, const ImageSize& img) {
        const double ox = static_cast<double>(img.width) / 2, oy = static_cast<double>(img.height) / 2;
        cx = ox + (cx - ox) * scale + shift;
        bottom = oy + (bottom - oy) * scale;
        width *= scale;
        height *= scale;
    }
};

inline Box clamp_box(Box b, const ImageSize& img) {
    const double w = static_cast<double>(img.width), h = static_cast<double>(img.height);
    b[0] = std::clamp(b[0], 0.0, w - 2.0);
    b[1] = std::clamp(b[1], 0.0, h - 2.0);
    b[2] = std::clamp(b[2], b[0] + 2.0, w);
    b[3] = std::clamp(b[3], b[1] + 2.0, h);
    for (auto& v : b) v = round_to(v, 0.01);
    return b;
}

inline void fill_box(LabelMap& map, const Box& box_px, const ImageSize& img, std::uint16_t label) {
    const double sx = static_cast<double>(map.width) / static_cast<double>(img.width);
    const double sy = static_cast<double>(map.height) / static_cast<double>(img.height);
    const auto x0 = static_cast<long>(std::floor(box_px[0] * sx)), x1 = static_cast<long>(std::ceil(box_px[2] * sx));
    const auto y0 = static_cast<long>(std::floor(box_px[1] * sy)), y1 = static_cast<long>(std::ceil(box_px[3] * sy));
    for (long y = std::max(0L, y0); y < std::min<long>(static_cast<long>(map.height), y1); ++y)
        for (long x = std::max(0L, x0); x < std::min<long>(static_cast<long>(map.width), x1); ++x)
            map.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = label;
}

/// Static layout: sky, buildings, sidewalks and a road widening toward the camera.
inline LabelMap static_layout(std::size_t height, std::size_t width) {
    LabelMap m(height, width, labels::building);
    const double horizon = 0.4 * static_cast<double>(height);
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
            const double fy = static_cast<double>(y), fx = static_cast<double>(x) / static_cast<double>(width);
            if (fy < 0.25 * static_cast<double>(height)) {
                m.at(y, x) = labels::sky;
            } else if (fy >= horizon) {
                const double depth = (fy - horizon) / (static_cast<double>(height) - horizon);
                const double half_road = 0.05 + 0.45 * depth;
                const double half_walk = half_road + 0.04 + 0.12 * depth;
                const double d = std::abs(fx - 0.5);
                m.at(y, x) = d < half_road ? labels::road : d < half_walk ? labels::sidewalk : labels::vegetation;
            }
        }
    return m;
}

}  // namespace synth

/// Simulates one track and renders maps at the last observed frame of every
/// window the sampler will keep.
inline void generate_track(const ScenarioConfig& cfg, std::uint64_t seed, std::size_t index, SyntheticCorpus& out) {
    using synth::uniform;
    using synth::uniform_int;
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), static_cast<std::uint32_t>(index),
                      static_cast<std::uint32_t>(static_cast<std::uint64_t>(index) >> 32)};
    Rng rng(seq);
    const auto fps = static_cast<std::size_t>(std::lround(cfg.fps));
    const std::size_t o = cfg.obs_len, tau = cfg.pred_len;
    const bool crossing = synth::is_crossing_track(index, cfg.crossing_ratio);
    const ImageSize img = cfg.image_size;
    const double w = static_cast<double>(img.width), h = static_cast<double>(img.height);

    std::size_t length = 0, event = 0;
    if (crossing) {
        event = 2 * fps + o - 1 + uniform_int(rng, 0, cfg.pre_margin);
        length = std::max(event + 1, event - fps + tau + 1) + uniform_int(rng, 0, cfg.post_margin);
    } else {
        length = o + tau + cfg.stride() * (cfg.non_crossing_windows() - 1) + uniform_int(rng, 0, cfg.post_margin);
    }

    double speed_lo = 0.0, speed_hi = cfg.ego_speed_max;
    if (cfg.ego_dependent_crossing) {
        if (crossing) speed_hi = std::min(cfg.slow_speed_max, cfg.ego_speed_max);
        else speed_lo = std::min(cfg.fast_speed_min, cfg.ego_speed_max);
    }
    const auto speed = synth::smooth_profile(rng, length, cfg.ego_knot_frames, speed_lo, speed_hi);
    const auto lateral = synth::smooth_profile(rng, length, cfg.ego_knot_frames, -cfg.ego_lateral_max, cfg.ego_lateral_max);

    // Target pedestrian on a sidewalk, left or right of the road.
    synth::Agent ped;
    ped.label = labels::person;
    ped.height = uniform(rng, 90.0, 220.0);
    ped.width = 0.4 * ped.height;
    ped.bottom = uniform(rng, 0.62 * h, 0.85 * h);
    const bool left = uniform(rng, 0.0, 1.0) < 0.5;
    ped.cx = left ? uniform(rng, 0.12 * w, 0.35 * w) : uniform(rng, 0.65 * w, 0.88 * w);

    std::vector<synth::Agent> others;
    const auto add_agents = [&](std::size_t count, std::uint16_t label, double hmin, double hmax, double aspect) {
        for (std::size_t k = 0; k < count; ++k) {
            synth::Agent a;
            a.label = label;
            a.height = uniform(rng, hmin, hmax);
            a.width = aspect * a.height;
            a.bottom = uniform(rng, 0.5 * h, 0.95 * h);
            a.cx = uniform(rng, 0.05 * w, 0.95 * w);
            a.vx = uniform(rng, -3.0, 3.0);
            others.push_back(a);
        }
    };
    add_agents(uniform_int(rng, 1, cfg.max_vehicles), labels::car, 120.0, 320.0, 1.6);
    add_agents(uniform_int(rng, 0, cfg.max_bikes), labels::bicycle, 100.0, 200.0, 0.6);
    add_agents(uniform_int(rng, 0, cfg.max_persons), labels::person, 80.0, 200.0, 0.4);

    const double cross_start = crossing ? static_cast<double>(event) - uniform(rng, static_cast<double>(fps), 2.0 * static_cast<double>(fps)) : 0.0;
    const double cross_speed = uniform(rng, cfg.cross_speed_min, cfg.cross_speed_max);
    const double toward_center = left ? 1.0 : -1.0;

    // Frames at which maps are needed: last observed frame of each kept window.
    TrackSequence track;
    track.ped_id = "ped_" + std::to_string(100000 + index).substr(1);
    track.fps = cfg.fps;
    track.image_size = img;

    std::size_t next_segment = 0;
    const double dt = 1.0 / cfg.fps;
    std::vector<std::vector<synth::Agent>> scene_at(length);
    for (std::size_t t = 0; t < length; ++t) {
        if (t > 0) {
            const double vz = speed[t] / 3.6;
            const double scale = 1.0 / (1.0 - vz * dt * cfg.depth_scale);
            const double shift = -lateral[t] * cfg.lateral_px;
            ped.apply_ego(scale, shift, img);
            for (auto& a : others) a.apply_ego(scale, shift, img);
            if (t >= next_segment) {
                ped.vx = uniform(rng, -cfg.walk_speed_max, cfg.walk_speed_max);
                next_segment = t + uniform_int(rng, cfg.segment_min, cfg.segment_max);
            }
            const bool moving_across = crossing && static_cast<double>(t) >= cross_start;
            ped.cx += moving_across ? toward_center * cross_speed : ped.vx;
            for (auto& a : others) a.cx += a.vx;
        } else {
            ped.vx = 0.0;
            next_segment = uniform_int(rng, cfg.segment_min, cfg.segment_max);
        }
        TrackFrame f;
        f.index = static_cast<std::int64_t>(t);
        f.box = synth::clamp_box(ped.box(), img);
        f.crossing = crossing && t >= event ? 1 : 0;
        f.ego = {synth::round_to(speed[t], 1e-4), synth::round_to(lateral[t], 1e-4), synth::round_to(speed[t] / 3.6, 1e-4)};
        track.frames.push_back(f);
        scene_at[t] = others;
        scene_at[t].push_back(ped);
    }

    WindowSpec spec;
    spec.obs_len = o;
    spec.pred_len = tau;
    for (auto s : window_starts(track, spec)) {
        const std::size_t t = s + o - 1;
        LabelMap labels_map = synth::static_layout(cfg.map_height, cfg.map_width);
        for (const auto& a : scene_at[t]) {
            if (a.label == labels::bicycle) {
                const Box b = a.box();
                synth::fill_box(labels_map, {b[0], b[1], b[2], b[1] + 0.5 * (b[3] - b[1])}, img, labels::rider);
                synth::fill_box(labels_map, {b[0], b[1] + 0.5 * (b[3] - b[1]), b[2], b[3]}, img, labels::bicycle);
            } else {
                synth::fill_box(labels_map, a.box(), img, a.label);
            }
        }
        auto map = channelize(labels_map, ClassGrouping::cityscapes(), track.frames[t].index);
        out.maps.emplace(map_key(track.ped_id, track.frames[t].index), std::move(map));
    }
    out.tracks.push_back(std::move(track));
}

/// Deterministic in (cfg, seed); each track draws from its own seeded stream.
inline SyntheticCorpus generate_synthetic(const ScenarioConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    SyntheticCorpus corpus;
    for (std::size_t i = 0; i < cfg.tracks; ++i) generate_track(cfg, seed, i, corpus);
    return corpus;
}

// ---------------------------------------------------------------------------
// Corpus directory: tracks.jsonl, maps/<ped_id>@<frame>.semmap, manifest.json
// ---------------------------------------------------------------------------

struct CorpusStats {
    std::size_t tracks = 0;
    std::size_t crossing_tracks = 0;
    std::size_t samples = 0;
    std::size_t crossing_samples = 0;
    std::size_t min_length = 0, max_length = 0;
    double mean_length = 0.0;

    double crossing_ratio() const { return tracks ? static_cast<double>(crossing_tracks) / static_cast<double>(tracks) : 0.0; }
    double sample_crossing_ratio() const {
        return samples ? static_cast<double>(crossing_samples) / static_cast<double>(samples) : 0.0;
    }
};

inline CorpusStats corpus_stats(const std::vector<TrackSequence>& tracks, const WindowSpec& spec) {
    CorpusStats s;
    s.tracks = tracks.size();
    double total = 0;
    for (const auto& t : tracks) {
        const std::size_t n = t.frames.size();
        if (s.min_length == 0 || n < s.min_length) s.min_length = n;
        s.max_length = std::max(s.max_length, n);
        total += static_cast<double>(n);
        const auto windows = window_starts(t, spec).size();
        s.samples += windows;
        if (t.is_crossing()) {
            ++s.crossing_tracks;
            s.crossing_samples += windows;
        }
    }
    s.mean_length = s.tracks ? total / static_cast<double>(s.tracks) : 0.0;
    return s;
}

inline std::filesystem::path map_path(const std::filesystem::path& dir, const std::string& key) {
    return dir / "maps" / (key + ".semmap");
}

inline nlohmann::json corpus_manifest(const SyntheticCorpus& corpus, const ScenarioConfig& cfg, std::uint64_t seed) {
    WindowSpec spec;
    spec.obs_len = cfg.obs_len;
    spec.pred_len = cfg.pred_len;
    const auto s = corpus_stats(corpus.tracks, spec);
    return {{"seed", seed},
            {"scenario", to_json(cfg)},
            {"tracks", s.tracks},
            {"crossing_tracks", s.crossing_tracks},
            {"crossing_ratio", s.crossing_ratio()},
            {"samples", s.samples},
            {"crossing_samples", s.crossing_samples},
            {"sample_crossing_ratio", s.sample_crossing_ratio()},
            {"maps", corpus.maps.size()},
            {"track_length", {{"min", s.min_length}, {"max", s.max_length}, {"mean", s.mean_length}}}};
}

inline void write_corpus(const std::filesystem::path& dir, const SyntheticCorpus& corpus, const nlohmann::json& manifest) {
    std::error_code ec;
    std::filesystem::create_directories(dir / "maps", ec);
    if (ec) throw Error("cannot create corpus directory '" + dir.string() + "': " + ec.message());
    save_annotations((dir / "tracks.jsonl").string(), corpus.tracks);
    for (const auto& [key, map] : corpus.maps) save_semantic_map(map_path(dir, key).string(), map);
    std::ofstream os(dir / "manifest.json", std::ios::binary);
    if (!os) throw Error("cannot write manifest in '" + dir.string() + "'");
    os << manifest.dump(2) << '\n';
}

/// Track annotations of a corpus directory; maps are read on demand.
struct CorpusReader {
    std::filesystem::path dir;
    std::vector<TrackSequence> tracks;
    std::vector<std::string> diagnostics;

    static CorpusReader open(const std::filesystem::path& dir) {
        if (!std::filesystem::is_directory(dir)) throw Error("data directory '" + dir.string() + "' does not exist");
        CorpusReader r;
        r.dir = dir;
        r.tracks = load_annotations((dir / "tracks.jsonl").string(), &r.diagnostics);
        return r;
    }

    bool has_map(const std::string& key) const { return std::filesystem::exists(map_path(dir, key)); }
    SemanticMap map(const std::string& key) const { return load_semantic_map(map_path(dir, key).string()); }
};

}  // namespace pedformer
