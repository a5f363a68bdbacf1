#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "tensor.hpp"

namespace pedformer {

enum class Channel : std::uint8_t { persons = 0, bikes = 1, vehicles = 2, static_context = 3 };

inline constexpr std::size_t kNumChannels = 4;
inline constexpr std::array<const char*, kNumChannels> kChannelNames{"persons", "bikes", "vehicles", "static"};

/// Four binary occupancy masks of one frame, stored channel-major.
struct SemanticMap {
    std::int64_t frame = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> data;  // kNumChannels * height * width

    SemanticMap() = default;
    SemanticMap(std::size_t h, std::size_t w, std::int64_t frame_index = 0)
        : frame(frame_index), height(h), width(w), data(kNumChannels * h * w, 0) {}

    std::uint8_t& at(Channel c, std::size_t y, std::size_t x) {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    std::uint8_t at(Channel c, std::size_t y, std::size_t x) const {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }

    friend bool operator==(const SemanticMap&, const SemanticMap&) = default;
};

/// Per-pixel class ids from a segmenter (or the synthetic renderer).
struct LabelMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint16_t> labels;

    LabelMap() = default;
    LabelMap(std::size_t h, std::size_t w, std::uint16_t fill = 0) : height(h), width(w), labels(h * w, fill) {}

    std::uint16_t& at(std::size_t y, std::size_t x) { return labels[y * width + x]; }
    std::uint16_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
};

/// Cityscapes-style label ids used by the synthetic renderer.
namespace labels {
inline constexpr std::uint16_t unlabeled = 0;
inline constexpr std::uint16_t road = 7;
inline constexpr std::uint16_t sidewalk = 8;
inline constexpr std::uint16_t building = 11;
inline constexpr std::uint16_t vegetation = 21;
inline constexpr std::uint16_t sky = 23;
inline constexpr std::uint16_t person = 24;
inline constexpr std::uint16_t rider = 25;
inline constexpr std::uint16_t car = 26;
inline constexpr std::uint16_t truck = 27;
inline constexpr std::uint16_t bus = 28;
inline constexpr std::uint16_t motorcycle = 32;
inline constexpr std::uint16_t bicycle = 33;
}  // namespace labels

/// Maps label ids to channels.
struct ClassGrouping {
    std::map<std::uint16_t, Channel> table;

    static ClassGrouping cityscapes() {
        ClassGrouping g;
        for (std::uint16_t id = 0; id <= 23; ++id) g.table[id] = Channel::static_context;
        g.table[labels::person] = Channel::persons;
        g.table[labels::rider] = Channel::bikes;
        g.table[labels::motorcycle] = Channel::bikes;
        g.table[labels::bicycle] = Channel::bikes;
        for (std::uint16_t id : {26, 27, 28, 29, 30, 31}) g.table[id] = Channel::vehicles;
        return g;
    }

    static ClassGrouping from_json(const nlohmann::json& j) {
        ClassGrouping g;
        std::vector<std::string> problems;
        if (!j.is_object()) throw ConfigError("class grouping must be a JSON object of id -> channel name");
        for (const auto& [key, value] : j.items()) {
            std::uint16_t id = 0;
            try {
                const auto parsed = std::stoul(key);
                if (parsed > 0xffff) throw std::out_of_range(key);
                id = static_cast<std::uint16_t>(parsed);
            } catch (const std::exception&) {
                problems.push_back("class grouping: '" + key + "' is not a label id");
                continue;
            }
            const auto name = value.is_string() ? value.get<std::string>() : std::string();
            bool found = false;
            for (std::size_t c = 0; c < kNumChannels; ++c)
                if (name == kChannelNames[c]) {
                    g.table[id] = static_cast<Channel>(c);
                    found = true;
                }
            if (!found) problems.push_back("class grouping: label " + key + " maps to unknown channel '" + name + "'");
        }
        if (!problems.empty()) throw ConfigError(problems);
        return g;
    }

    nlohmann::json to_json() const {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [id, c] : table) j[std::to_string(id)] = kChannelNames[static_cast<std::size_t>(c)];
        return j;
    }
};

struct ChannelizeStats {
    std::size_t unknown_pixels = 0;
};

/// One-hot channel masks; ids missing from the grouping fall into the static
/// channel and are counted.
inline SemanticMap channelize(const LabelMap& labels, const ClassGrouping& grouping, std::int64_t frame = 0,
                              ChannelizeStats* stats = nullptr) {
    SemanticMap map(labels.height, labels.width, frame);
    for (std::size_t y = 0; y < labels.height; ++y)
        for (std::size_t x = 0; x < labels.width; ++x) {
            auto it = grouping.table.find(labels.at(y, x));
            Channel c = Channel::static_context;
            if (it != grouping.table.end()) c = it->second;
            else if (stats) ++stats->unknown_pixels;
            map.at(c, y, x) = 1;
        }
    return map;
}

/// Nearest-neighbour resampling; keeps masks binary and one-hot.
inline SemanticMap resize_nearest(const SemanticMap& src, std::size_t height, std::size_t width) {
    if (src.height == height && src.width == width) return src;
    if (src.height == 0 || src.width == 0) throw DimensionError("resize_nearest: empty map");
    SemanticMap out(height, width, src.frame);
    for (std::size_t y = 0; y < height; ++y) {
        const std::size_t sy = std::min(src.height - 1, (2 * y + 1) * src.height / (2 * height));
        for (std::size_t x = 0; x < width; ++x) {
            const std::size_t sx = std::min(src.width - 1, (2 * x + 1) * src.width / (2 * width));
            for (std::size_t c = 0; c < kNumChannels; ++c)
                out.at(static_cast<Channel>(c), y, x) = src.at(static_cast<Channel>(c), sy, sx);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// File format: "SEMMAP01", one-line JSON header, then raw channel-major bytes.
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 8> kSemanticMapMagic{'S', 'E', 'M', 'M', 'A', 'P', '0', '1'};

inline std::string serialize_semantic_map(const SemanticMap& map) {
    std::string out(kSemanticMapMagic.begin(), kSemanticMapMagic.end());
    const nlohmann::json header{{"frame", map.frame}, {"width", map.width}, {"height", map.height}, {"channels", kNumChannels}};
    out += header.dump();
    out += '\n';
    out.append(reinterpret_cast<const char*>(map.data.data()), map.data.size());
    return out;
}

inline SemanticMap deserialize_semantic_map(const std::string& bytes) {
    if (bytes.size() < 9 || !std::equal(kSemanticMapMagic.begin(), kSemanticMapMagic.end(), bytes.begin()))
        throw ParseError("semantic map: bad magic");
    const auto nl = bytes.find('\n', 8);
    if (nl == std::string::npos) throw ParseError("semantic map: unterminated header");
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + static_cast<std::ptrdiff_t>(nl));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("semantic map: bad header: ") + e.what());
    }
    if (h.value("channels", 0) != static_cast<int>(kNumChannels)) throw ParseError("semantic map: expected 4 channels");
    SemanticMap map(h.at("height").get<std::size_t>(), h.at("width").get<std::size_t>(), h.at("frame").get<std::int64_t>());
    if (bytes.size() - nl - 1 != map.data.size())
        throw ParseError("semantic map: payload has " + std::to_string(bytes.size() - nl - 1) + " bytes, expected " +
                         std::to_string(map.data.size()));
    std::copy(bytes.begin() + static_cast<std::ptrdiff_t>(nl + 1), bytes.end(), map.data.begin());
    return map;
}

inline void save_semantic_map(const std::string& path, const SemanticMap& map) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write semantic map '" + path + "'");
    const auto bytes = serialize_semantic_map(map);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline SemanticMap load_semantic_map(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open semantic map '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return deserialize_semantic_map(bytes);
}

}  // namespace pedformer
