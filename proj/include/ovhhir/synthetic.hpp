#pragma once

#include "ovhhir/corpus.hpp"
#include "ovhhir/video.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace ovhhir {

struct SyntheticSpec {
    int64_t height = 48;
    int64_t width = 64;
    uint64_t seed = 7;
};

struct SyntheticRecord {
    std::string id;
    std::string label;   // hard label == canonical class name
    std::string caption; // distinct target sentence containing the class word
    FrameSequence clip;
    MaskSet masks;
};

// Eight deterministic records over two classes ("hug", "punch"): textured
// background, two moving disjoint person boxes, clip lengths from 12 to 40
// frames so frame sampling is exercised both ways.
std::vector<SyntheticRecord> make_synthetic_records(const SyntheticSpec & spec = SyntheticSpec());

// Writes clips/, masks/, sources.json and rules.json under `dir` so the
// corpus can be ingested by the regular data-building pipeline. Returns the
// sources.json path.
std::filesystem::path write_synthetic_corpus(const std::filesystem::path & dir,
                                             const SyntheticSpec & spec = SyntheticSpec());

} // namespace ovhhir
