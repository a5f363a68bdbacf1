#pragma once

#include <filesystem>
#include <random>
#include <fstream>
#include <iterator>
#include <string>

#include <unistd.h>

#include "pedformer/pedformer.hpp"

namespace testutil {

using namespace pedformer;

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    Tensor t(shape);
    for (auto& v : t.values()) v = d(rng);
    return t;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        static std::size_t counter = 0;
        path = std::filesystem::temp_directory_path() /
               ("pedformer_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string str(const std::string& child = "") const { return child.empty() ? path.string() : (path / child).string(); }
};

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Small model with τ=2 and a coarse grid for fast structural tests.
inline ModelConfig small_config() {
    ModelConfig c = tiny_model_config();
    c.pred_len = 2;
    return c;
}

}  // namespace testutil
