#pragma once

#include "ovhhir/common.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ovhhir {

// Decoded clip: T frames of H x W x 3 interleaved 8-bit RGB.
struct FrameSequence {
    int64_t t = 0;
    int64_t h = 0;
    int64_t w = 0;
    double fps = 25.0;
    std::vector<uint8_t> pixels; // t*h*w*3, row-major, RGB

    uint8_t & at(int64_t f, int64_t y, int64_t x, int64_t c) {
        return pixels[static_cast<size_t>((((f * h) + y) * w + x) * 3 + c)];
    }
    uint8_t at(int64_t f, int64_t y, int64_t x, int64_t c) const {
        return pixels[static_cast<size_t>((((f * h) + y) * w + x) * 3 + c)];
    }

    void validate() const;
};

// Per-frame binary masks for both people. Values are 0/1 bytes in memory,
// bit-packed on disk.
struct MaskSet {
    int64_t t = 0;
    int64_t h = 0;
    int64_t w = 0;
    std::vector<uint8_t> person1; // t*h*w
    std::vector<uint8_t> person2;

    uint8_t p1(int64_t f, int64_t y, int64_t x) const {
        return person1[static_cast<size_t>((f * h + y) * w + x)];
    }
    uint8_t p2(int64_t f, int64_t y, int64_t x) const {
        return person2[static_cast<size_t>((f * h + y) * w + x)];
    }

    void validate() const;
};

// The three masked instances of one clip.
struct StreamTriplet {
    FrameSequence p1;
    FrameSequence p2;
    FrameSequence bg;
};

// Splits a clip into person-1 / person-2 / background streams. Masked-out
// pixels are zeroed. Background keeps pixels covered by neither person.
StreamTriplet apply_masks(const FrameSequence & clip, const MaskSet & masks);

// Uniform deterministic sampling: index i = floor(i*T/k), i in [0, k).
std::vector<int64_t> sample_frames(int64_t total, int64_t k = 16);

// Gathers the frames at `indices` (any order, duplicates allowed).
FrameSequence take_frames(const FrameSequence & clip, const std::vector<int64_t> & indices);
MaskSet take_frames(const MaskSet & masks, const std::vector<int64_t> & indices);

// Aspect-preserving resize with zero letterbox padding, nearest-neighbor.
FrameSequence letterbox(const FrameSequence & clip, int64_t out_h, int64_t out_w);

// Raw clip container: "RVID" magic, LE u32 T, H, W, then T*H*W*3 RGB bytes.
FrameSequence load_clip(const std::filesystem::path & path);
FrameSequence load_clip(const std::filesystem::path & path, int64_t target_h, int64_t target_w);
void save_clip(const FrameSequence & clip, const std::filesystem::path & path);

// Mask file: LE u32 T, H, W, then two bit-packed T*H*W planes (person1 then
// person2), row-major, MSB-first, each plane padded to a byte boundary.
MaskSet load_masks(const std::filesystem::path & path);
void save_masks(const MaskSet & masks, const std::filesystem::path & path);

} // namespace ovhhir
