#include "ovhhir/video.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

namespace ovhhir {

namespace {

constexpr char CLIP_MAGIC[4] = {'R', 'V', 'I', 'D'};
constexpr char MASK_MAGIC[4] = {'R', 'M', 'S', 'K'};

void write_u32(std::ostream & os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char *>(b), 4);
}

uint32_t read_u32(std::istream & is, const std::string & what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char *>(b), 4)) {
        throw data_error("truncated header while reading " + what);
    }
    return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
           static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

} // namespace

void FrameSequence::validate() const {
    if (t < 1) {
        throw data_error("empty clip: T = " + std::to_string(t));
    }
    if (h < 1 || w < 1) {
        throw data_error("degenerate frame size " + std::to_string(h) + "x" + std::to_string(w));
    }
    if (static_cast<int64_t>(pixels.size()) != t * h * w * 3) {
        throw data_error("pixel buffer size mismatch");
    }
}

void MaskSet::validate() const {
    size_t n = static_cast<size_t>(t * h * w);
    if (person1.size() != n || person2.size() != n) {
        throw data_error("mask buffer size mismatch");
    }
    for (uint8_t v : person1) {
        if (v > 1) {
            throw data_error("person1 mask holds a non-binary value");
        }
    }
    for (uint8_t v : person2) {
        if (v > 1) {
            throw data_error("person2 mask holds a non-binary value");
        }
    }
}

StreamTriplet apply_masks(const FrameSequence & clip, const MaskSet & masks) {
    clip.validate();
    if (masks.t != clip.t) {
        throw data_error("mask/clip alignment: T = " + std::to_string(masks.t) + " vs " +
                         std::to_string(clip.t));
    }
    if (masks.h != clip.h) {
        throw data_error("mask/clip alignment: H = " + std::to_string(masks.h) + " vs " +
                         std::to_string(clip.h));
    }
    if (masks.w != clip.w) {
        throw data_error("mask/clip alignment: W = " + std::to_string(masks.w) + " vs " +
                         std::to_string(clip.w));
    }
    masks.validate();

    StreamTriplet out;
    out.p1 = clip;
    out.p2 = clip;
    out.bg = clip;
    int64_t n = clip.t * clip.h * clip.w;
    for (int64_t i = 0; i < n; i++) {
        uint8_t m1 = masks.person1[static_cast<size_t>(i)];
        uint8_t m2 = masks.person2[static_cast<size_t>(i)];
        uint8_t keep_bg = (m1 | m2) ? 0 : 1;
        for (int64_t c = 0; c < 3; c++) {
            size_t px = static_cast<size_t>(i * 3 + c);
            out.p1.pixels[px] = static_cast<uint8_t>(out.p1.pixels[px] * m1);
            out.p2.pixels[px] = static_cast<uint8_t>(out.p2.pixels[px] * m2);
            out.bg.pixels[px] = static_cast<uint8_t>(out.bg.pixels[px] * keep_bg);
        }
    }
    return out;
}

std::vector<int64_t> sample_frames(int64_t total, int64_t k) {
    if (total < 1) {
        throw config_error("sample_frames: T must be >= 1, got " + std::to_string(total));
    }
    if (k < 1) {
        throw config_error("sample_frames: k must be >= 1, got " + std::to_string(k));
    }
    std::vector<int64_t> out(static_cast<size_t>(k));
    for (int64_t i = 0; i < k; i++) {
        out[static_cast<size_t>(i)] = (i * total) / k;
    }
    return out;
}

FrameSequence take_frames(const FrameSequence & clip, const std::vector<int64_t> & indices) {
    clip.validate();
    FrameSequence out;
    out.t = static_cast<int64_t>(indices.size());
    out.h = clip.h;
    out.w = clip.w;
    out.fps = clip.fps;
    out.pixels.resize(static_cast<size_t>(out.t * out.h * out.w * 3));
    int64_t frame_bytes = clip.h * clip.w * 3;
    for (size_t i = 0; i < indices.size(); i++) {
        int64_t f = indices[i];
        if (f < 0 || f >= clip.t) {
            throw data_error("frame index " + std::to_string(f) + " out of " +
                             std::to_string(clip.t));
        }
        std::memcpy(out.pixels.data() + static_cast<int64_t>(i) * frame_bytes,
                    clip.pixels.data() + f * frame_bytes, static_cast<size_t>(frame_bytes));
    }
    return out;
}

MaskSet take_frames(const MaskSet & masks, const std::vector<int64_t> & indices) {
    MaskSet out;
    out.t = static_cast<int64_t>(indices.size());
    out.h = masks.h;
    out.w = masks.w;
    int64_t frame_px = masks.h * masks.w;
    out.person1.resize(static_cast<size_t>(out.t * frame_px));
    out.person2.resize(static_cast<size_t>(out.t * frame_px));
    for (size_t i = 0; i < indices.size(); i++) {
        int64_t f = indices[i];
        if (f < 0 || f >= masks.t) {
            throw data_error("mask frame index out of range");
        }
        std::memcpy(out.person1.data() + static_cast<int64_t>(i) * frame_px,
                    masks.person1.data() + f * frame_px, static_cast<size_t>(frame_px));
        std::memcpy(out.person2.data() + static_cast<int64_t>(i) * frame_px,
                    masks.person2.data() + f * frame_px, static_cast<size_t>(frame_px));
    }
    return out;
}

FrameSequence letterbox(const FrameSequence & clip, int64_t out_h, int64_t out_w) {
    clip.validate();
    if (out_h < 1 || out_w < 1) {
        throw config_error("letterbox: target size must be positive");
    }
    double s = std::min(static_cast<double>(out_h) / static_cast<double>(clip.h),
                        static_cast<double>(out_w) / static_cast<double>(clip.w));
    int64_t sh = std::min(out_h, std::max<int64_t>(1, static_cast<int64_t>(clip.h * s + 0.5)));
    int64_t sw = std::min(out_w, std::max<int64_t>(1, static_cast<int64_t>(clip.w * s + 0.5)));
    int64_t y0 = (out_h - sh) / 2;
    int64_t x0 = (out_w - sw) / 2;

    FrameSequence out;
    out.t = clip.t;
    out.h = out_h;
    out.w = out_w;
    out.fps = clip.fps;
    out.pixels.assign(static_cast<size_t>(out.t * out_h * out_w * 3), 0);
    for (int64_t f = 0; f < clip.t; f++) {
        for (int64_t y = 0; y < sh; y++) {
            int64_t sy = std::min(clip.h - 1, (2 * y + 1) * clip.h / (2 * sh));
            for (int64_t x = 0; x < sw; x++) {
                int64_t sx = std::min(clip.w - 1, (2 * x + 1) * clip.w / (2 * sw));
                for (int64_t c = 0; c < 3; c++) {
                    out.at(f, y0 + y, x0 + x, c) = clip.at(f, sy, sx, c);
                }
            }
        }
    }
    return out;
}

FrameSequence load_clip(const std::filesystem::path & path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw data_error("cannot open clip file: " + path.string());
    }
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, CLIP_MAGIC, 4) != 0) {
        throw data_error("not a raw clip file (bad magic): " + path.string());
    }
    FrameSequence out;
    out.t = read_u32(is, "clip T");
    out.h = read_u32(is, "clip H");
    out.w = read_u32(is, "clip W");
    if (out.t == 0) {
        throw data_error("empty clip (zero frames): " + path.string());
    }
    if (out.h == 0 || out.w == 0) {
        throw data_error("degenerate frame size in " + path.string());
    }
    size_t n = static_cast<size_t>(out.t * out.h * out.w * 3);
    out.pixels.resize(n);
    if (!is.read(reinterpret_cast<char *>(out.pixels.data()), static_cast<std::streamsize>(n))) {
        throw data_error("truncated clip payload: " + path.string());
    }
    return out;
}

FrameSequence load_clip(const std::filesystem::path & path, int64_t target_h, int64_t target_w) {
    FrameSequence clip = load_clip(path);
    if (clip.h == target_h && clip.w == target_w) {
        return clip;
    }
    return letterbox(clip, target_h, target_w);
}

void save_clip(const FrameSequence & clip, const std::filesystem::path & path) {
    clip.validate();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw data_error("cannot write clip file: " + path.string());
    }
    os.write(CLIP_MAGIC, 4);
    write_u32(os, static_cast<uint32_t>(clip.t));
    write_u32(os, static_cast<uint32_t>(clip.h));
    write_u32(os, static_cast<uint32_t>(clip.w));
    os.write(reinterpret_cast<const char *>(clip.pixels.data()),
             static_cast<std::streamsize>(clip.pixels.size()));
    if (!os) {
        throw data_error("short write: " + path.string());
    }
}

namespace {

std::vector<uint8_t> pack_bits(const std::vector<uint8_t> & plane) {
    std::vector<uint8_t> out((plane.size() + 7) / 8, 0);
    for (size_t i = 0; i < plane.size(); i++) {
        if (plane[i]) {
            out[i / 8] |= static_cast<uint8_t>(0x80u >> (i % 8));
        }
    }
    return out;
}

std::vector<uint8_t> unpack_bits(std::istream & is, size_t count, const std::string & what) {
    size_t nbytes = (count + 7) / 8;
    std::vector<uint8_t> packed(nbytes);
    if (!is.read(reinterpret_cast<char *>(packed.data()), static_cast<std::streamsize>(nbytes))) {
        throw data_error("truncated mask plane: " + what);
    }
    std::vector<uint8_t> out(count);
    for (size_t i = 0; i < count; i++) {
        out[i] = (packed[i / 8] >> (7 - i % 8)) & 1;
    }
    return out;
}

} // namespace

MaskSet load_masks(const std::filesystem::path & path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw data_error("cannot open mask file: " + path.string());
    }
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, MASK_MAGIC, 4) != 0) {
        throw data_error("not a mask file (bad magic): " + path.string());
    }
    MaskSet out;
    out.t = read_u32(is, "mask T");
    out.h = read_u32(is, "mask H");
    out.w = read_u32(is, "mask W");
    size_t n = static_cast<size_t>(out.t * out.h * out.w);
    if (n == 0) {
        throw data_error("empty mask file: " + path.string());
    }
    out.person1 = unpack_bits(is, n, "person1 in " + path.string());
    out.person2 = unpack_bits(is, n, "person2 in " + path.string());
    return out;
}

void save_masks(const MaskSet & masks, const std::filesystem::path & path) {
    masks.validate();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw data_error("cannot write mask file: " + path.string());
    }
    os.write(MASK_MAGIC, 4);
    write_u32(os, static_cast<uint32_t>(masks.t));
    write_u32(os, static_cast<uint32_t>(masks.h));
    write_u32(os, static_cast<uint32_t>(masks.w));
    auto p1 = pack_bits(masks.person1);
    auto p2 = pack_bits(masks.person2);
    os.write(reinterpret_cast<const char *>(p1.data()), static_cast<std::streamsize>(p1.size()));
    os.write(reinterpret_cast<const char *>(p2.data()), static_cast<std::streamsize>(p2.size()));
    if (!os) {
        throw data_error("short write: " + path.string());
    }
}

} // namespace ovhhir
