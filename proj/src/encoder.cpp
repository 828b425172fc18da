#include "ovhhir/encoder.hpp"

#include <cmath>

namespace ovhhir {

int64_t EncoderConfig::patches_per_frame() const {
    validate();
    int64_t g = frame_size / patch;
    return g * g;
}

void EncoderConfig::validate() const {
    if (frame_size < 1 || patch < 1) throw config_error("encoder: non-positive frame/patch size");
    if (frame_size % patch != 0)
        throw config_error("encoder: patch size " + std::to_string(patch) +
                           " does not divide frame size " + std::to_string(frame_size));
    if (dim < 1 || depth < 1 || heads < 1) throw config_error("encoder: non-positive dim/depth/heads");
    if (dim % heads != 0)
        throw config_error("encoder: heads " + std::to_string(heads) + " do not divide dim " +
                           std::to_string(dim));
}

FrameEncoder::FrameEncoder(std::string prefix, EncoderConfig cfg)
    : prefix_(std::move(prefix)), cfg_(cfg) {
    cfg_.validate();
    if (prefix_.empty()) throw config_error("encoder with empty parameter prefix");
}

Tensor patchify_frame(const FrameSequence & clip, int64_t t, const EncoderConfig & cfg) {
    if (clip.h != cfg.frame_size || clip.w != cfg.frame_size)
        throw config_error("encoder expects " + std::to_string(cfg.frame_size) + "x" +
                           std::to_string(cfg.frame_size) + " frames, clip is " +
                           std::to_string(clip.h) + "x" + std::to_string(clip.w));
    if (t < 0 || t >= clip.t)
        throw config_error("frame index " + std::to_string(t) + " outside clip of " +
                           std::to_string(clip.t) + " frames");
    int64_t grid = cfg.frame_size / cfg.patch;
    Tensor out({grid * grid, cfg.patch_dim()});
    for (int64_t pr = 0; pr < grid; ++pr)
        for (int64_t pc = 0; pc < grid; ++pc) {
            int64_t row = pr * grid + pc;
            int64_t col = 0;
            for (int64_t y = 0; y < cfg.patch; ++y)
                for (int64_t x = 0; x < cfg.patch; ++x)
                    for (int64_t c = 0; c < 3; ++c)
                        out(row, col++) =
                            clip.at(t, pr * cfg.patch + y, pc * cfg.patch + x, c) / 255.0 * 2.0 -
                            1.0;
        }
    return out;
}

void FrameEncoder::register_params(ParamStore & store, const Rng & root) const {
    auto randn = [&](const std::string & name, std::vector<int64_t> shape, double stddev) {
        Rng r = root.fork(name);
        store.add(name, Tensor::randn(std::move(shape), r, stddev), /*trainable=*/false);
    };
    auto fill = [&](const std::string & name, std::vector<int64_t> shape, double v) {
        store.add(name, Tensor::full(std::move(shape), v), /*trainable=*/false);
    };

    int64_t d = cfg_.dim, pd = cfg_.patch_dim(), P = cfg_.patches_per_frame();
    randn(prefix_ + ".patch_embed.w", {pd, d}, 1.0 / std::sqrt(double(pd)));
    fill(prefix_ + ".patch_embed.b", {d}, 0.0);
    randn(prefix_ + ".pos", {P, d}, 0.5);
    for (int64_t i = 0; i < cfg_.depth; ++i) {
        std::string blk = prefix_ + ".blk" + std::to_string(i);
        fill(blk + ".ln1.gain", {d}, 1.0);
        fill(blk + ".ln1.bias", {d}, 0.0);
        double w_std = 1.0 / std::sqrt(double(d));
        for (const char * m : {"wq", "wk", "wv", "wo"})
            randn(blk + ".attn." + m, {d, d}, w_std);
        // no key bias: softmax cancels a per-row constant score shift
        for (const char * m : {"bq", "bv", "bo"}) fill(blk + ".attn." + m, {d}, 0.0);
        fill(blk + ".ln2.gain", {d}, 1.0);
        fill(blk + ".ln2.bias", {d}, 0.0);
        randn(blk + ".ffn.w1", {d, 4 * d}, w_std);
        fill(blk + ".ffn.b1", {4 * d}, 0.0);
        randn(blk + ".ffn.w2", {4 * d, d}, 1.0 / std::sqrt(double(4 * d)));
        fill(blk + ".ffn.b2", {d}, 0.0);
    }
    fill(prefix_ + ".ln_f.gain", {d}, 1.0);
    fill(prefix_ + ".ln_f.bias", {d}, 0.0);
}

Graph::Node * FrameEncoder::encode_frame(Graph & g, ParamStore & store, const FrameSequence & clip,
                                         int64_t t) const {
    auto P = [&](const std::string & suffix) -> Graph::Node * {
        return g.param(store.at(prefix_ + suffix));
    };
    Graph::Node * x = g.input(patchify_frame(clip, t, cfg_));
    x = g.add_bias(g.matmul(x, P(".patch_embed.w")), P(".patch_embed.b"));
    x = g.add(x, P(".pos"));
    for (int64_t i = 0; i < cfg_.depth; ++i) {
        std::string blk = ".blk" + std::to_string(i);
        Graph::Node * pre = g.layernorm(x, P(blk + ".ln1.gain"), P(blk + ".ln1.bias"));
        Graph::Node * q = g.add_bias(g.matmul(pre, P(blk + ".attn.wq")), P(blk + ".attn.bq"));
        Graph::Node * k = g.matmul(pre, P(blk + ".attn.wk"));
        Graph::Node * v = g.add_bias(g.matmul(pre, P(blk + ".attn.wv")), P(blk + ".attn.bv"));
        Graph::Node * a = g.attend(q, k, v, int(cfg_.heads), /*causal=*/false);
        x = g.add(x, g.add_bias(g.matmul(a, P(blk + ".attn.wo")), P(blk + ".attn.bo")));
        Graph::Node * pre2 = g.layernorm(x, P(blk + ".ln2.gain"), P(blk + ".ln2.bias"));
        Graph::Node * h = g.gelu(g.add_bias(g.matmul(pre2, P(blk + ".ffn.w1")), P(blk + ".ffn.b1")));
        x = g.add(x, g.add_bias(g.matmul(h, P(blk + ".ffn.w2")), P(blk + ".ffn.b2")));
    }
    return g.layernorm(x, P(".ln_f.gain"), P(".ln_f.bias"));
}

Tensor FrameEncoder::encode_frame_values(ParamStore & store, const FrameSequence & clip,
                                         int64_t t) const {
    Graph g;
    return encode_frame(g, store, clip, t)->value;
}

Tensor FrameEncoder::encode_sequence(ParamStore & store, const FrameSequence & clip) const {
    int64_t P = cfg_.patches_per_frame();
    Tensor out({clip.t * P, cfg_.dim});
    for (int64_t t = 0; t < clip.t; ++t) {
        Tensor f = encode_frame_values(store, clip, t);
        std::copy(f.data.begin(), f.data.end(), out.data.begin() + size_t(t * P * cfg_.dim));
    }
    return out;
}

} // namespace ovhhir
