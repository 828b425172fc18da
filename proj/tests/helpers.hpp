#pragma once

#include "ovhhir/common.hpp"
#include "ovhhir/video.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>

namespace ovhhir::testing {

inline FrameSequence random_clip(Rng & rng, int64_t t, int64_t h, int64_t w) {
    FrameSequence clip;
    clip.t = t;
    clip.h = h;
    clip.w = w;
    clip.pixels.resize(static_cast<size_t>(t * h * w * 3));
    for (auto & p : clip.pixels) {
        p = static_cast<uint8_t>(rng.uniform_int(0, 255));
    }
    return clip;
}

// person1 keeps pixels with label 1, person2 label 2, background label 0
inline MaskSet random_disjoint_masks(Rng & rng, int64_t t, int64_t h, int64_t w) {
    MaskSet m;
    m.t = t;
    m.h = h;
    m.w = w;
    m.person1.resize(static_cast<size_t>(t * h * w));
    m.person2.resize(static_cast<size_t>(t * h * w));
    for (size_t i = 0; i < m.person1.size(); i++) {
        int64_t label = rng.uniform_int(0, 2);
        m.person1[i] = label == 1 ? 1 : 0;
        m.person2[i] = label == 2 ? 1 : 0;
    }
    return m;
}

// unique scratch directory under the system temp dir, removed on destruction
class TempDir {
  public:
    explicit TempDir(const std::string & tag = "scratch") {
        auto base = std::filesystem::temp_directory_path();
        for (int i = 0;; i++) {
            auto p = base / (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(i));
            if (std::filesystem::create_directories(p)) {
                path_ = p;
                break;
            }
        }
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir &) = delete;
    TempDir & operator=(const TempDir &) = delete;

    const std::filesystem::path & path() const { return path_; }

  private:
    std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path & p, const std::string & content) {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    os << content;
}

inline std::string read_file(const std::filesystem::path & p) {
    std::ifstream is(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

} // namespace ovhhir::testing
