#pragma once

#include "ovhhir/graph.hpp"
#include "ovhhir/params.hpp"
#include "ovhhir/video.hpp"

#include <string>

namespace ovhhir {

struct EncoderConfig {
    int64_t frame_size = 32;
    int64_t patch = 8;
    int64_t dim = 32;
    int64_t depth = 2;
    int64_t heads = 4;

    int64_t patch_dim() const { return patch * patch * 3; }
    int64_t patches_per_frame() const;
    void validate() const;
};

// Patch transformer over single frames, one instance per stream kind
// ("encoder.person", "encoder.bg"). Weights are registered frozen and the
// forward is a pure function of (weights, frame), so per-frame features can
// be computed once and cached.
class FrameEncoder {
  public:
    FrameEncoder(std::string prefix, EncoderConfig cfg);

    // Seeds each array from root.fork(<param name>), so values do not depend
    // on registration order.
    void register_params(ParamStore & store, const Rng & root) const;

    // P x dim token rows for one frame
    Graph::Node * encode_frame(Graph & g, ParamStore & store, const FrameSequence & clip,
                               int64_t t) const;
    Tensor encode_frame_values(ParamStore & store, const FrameSequence & clip, int64_t t) const;

    // (T*P) x dim, frame-major; row t*P+p is patch p of frame t
    Tensor encode_sequence(ParamStore & store, const FrameSequence & clip) const;

    const EncoderConfig & config() const { return cfg_; }
    const std::string & prefix() const { return prefix_; }

  private:
    std::string prefix_;
    EncoderConfig cfg_;
};

// pixels scaled to [-1, 1], P x (patch*patch*3), patches row-major over the
// grid, pixel rows then columns then RGB inside each patch
Tensor patchify_frame(const FrameSequence & clip, int64_t t, const EncoderConfig & cfg);

} // namespace ovhhir
