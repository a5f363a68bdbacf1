#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>

#include "json.hpp"

#include "autodiff.hpp"

namespace pedformer {

/// Parameter container on disk:
///
///     "PFCKPT01"                      8-byte magic
///     {"meta":..., "tensors":{...}}\n  JSON index, one line
///     payload                          little-endian float64 values
///
/// Each index entry maps a parameter name to its shape and the byte offset of
/// its first value, measured from the start of the payload.
struct Checkpoint {
    nlohmann::json meta;
    std::map<std::string, Tensor> tensors;
};

inline constexpr std::array<char, 8> kCheckpointMagic{'P', 'F', 'C', 'K', 'P', 'T', '0', '1'};

namespace detail {

inline void put_f64_le(std::string& out, double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

inline double get_f64_le(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
    nlohmann::json index;
    index["meta"] = ckpt.meta;
    index["tensors"] = nlohmann::json::object();
    std::string payload;
    for (const auto& [name, t] : ckpt.tensors) {
        index["tensors"][name] = {{"shape", t.shape()}, {"offset", payload.size()}};
        for (double v : t.values()) detail::put_f64_le(payload, v);
    }
    std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
    out += index.dump();
    out += '\n';
    out += payload;
    return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
    if (bytes.size() < 9 || !std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin()))
        throw ParseError("checkpoint: bad magic");
    const auto nl = bytes.find('\n', 8);
    if (nl == std::string::npos) throw ParseError("checkpoint: unterminated index");
    nlohmann::json index;
    try {
        index = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + static_cast<std::ptrdiff_t>(nl));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint: index is not valid JSON: ") + e.what());
    }
    const auto* payload = reinterpret_cast<const unsigned char*>(bytes.data()) + nl + 1;
    const std::size_t payload_size = bytes.size() - nl - 1;
    Checkpoint ckpt;
    ckpt.meta = index.value("meta", nlohmann::json::object());
    for (const auto& [name, entry] : index.at("tensors").items()) {
        const auto shape = entry.at("shape").get<Shape>();
        const auto offset = entry.at("offset").get<std::size_t>();
        const std::size_t n = shape_size(shape);
        if (offset + 8 * n > payload_size) throw ParseError("checkpoint: tensor '" + name + "' runs past payload");
        std::vector<double> values(n);
        for (std::size_t i = 0; i < n; ++i) values[i] = detail::get_f64_le(payload + offset + 8 * i);
        ckpt.tensors.emplace(name, Tensor(shape, std::move(values)));
    }
    return ckpt;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write checkpoint '" + path + "'");
    const auto bytes = serialize_checkpoint(ckpt);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw Error("failed writing checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open checkpoint '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

inline Checkpoint make_checkpoint(const ParameterStore& store, nlohmann::json meta = nlohmann::json::object()) {
    return Checkpoint{std::move(meta), store.snapshot()};
}

}  // namespace pedformer
