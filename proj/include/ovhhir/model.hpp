#pragma once

#include "ovhhir/aggregator.hpp"
#include "ovhhir/corpus.hpp"
#include "ovhhir/encoder.hpp"
#include "ovhhir/fusion_lm.hpp"
#include "ovhhir/video.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>

namespace ovhhir {

struct ModelConfig {
    EncoderConfig encoder;   // shared by the person and background encoders
    QFormerConfig qformer;   // per-branch aggregator
    LmConfig lm;             // lm.vocab is stamped from the tokenizer at build time
    int64_t frames_per_clip = 16;
    bool background_branch = true;

    void validate() const;
    std::string to_json() const;
    static ModelConfig from_json(const std::string & text);
};

// Frozen per-frame features of the three streams of one clip; pure function
// of the weights, so callers may cache these per record.
struct StreamTokens {
    Tensor p1;      // (t*p) x encoder dim
    Tensor p2;
    Tensor bg;      // empty when the background branch is disabled
    int64_t t = 0;
    int64_t p = 0;
};

// The assembled pipeline: two frozen frame encoders, one trainable Q-Former
// branch per stream, and a frozen causal LM that consumes the mixed rows.
class OvhhirModel {
  public:
    OvhhirModel(ModelConfig cfg, Tokenizer tok, uint64_t seed);

    ParamStore & params() { return store_; }
    const ParamStore & params() const { return store_; }
    const Tokenizer & tokenizer() const { return tok_; }
    const ModelConfig & config() const { return cfg_; }
    uint64_t seed() const { return seed_; }

    // sample frames_per_clip frames, split by masks, letterbox each stream
    StreamTriplet preprocess(const FrameSequence & clip, const MaskSet & masks) const;

    // frozen features for each stream (person encoder for p1/p2, bg encoder
    // for the background)
    StreamTokens encode_streams(const StreamTriplet & streams);
    StreamTokens encode_clip(const FrameSequence & clip, const MaskSet & masks);

    // trainable branch outputs, one queries x d_text row block per stream
    std::map<StreamId, Graph::Node *> branch_rows(Graph & g, const StreamTokens & tokens);

    // mean next-token cross entropy of the record's target caption
    Graph::Node * record_loss(Graph & g, const ChatRecord & record, const StreamTokens & tokens);

    std::string generate(const ChatRecord & record, const StreamTokens & tokens,
                         const GenerateConfig & gen, Rng * sampler = nullptr);

    // checkpoint carries a config echo + seed so a compatible model can be
    // rebuilt before loading weights
    void save(const std::filesystem::path & path,
              const std::string & extra_meta = std::string()) const;
    void load(const std::filesystem::path & path);
    static ModelConfig config_from_checkpoint(const std::filesystem::path & path);

  private:
    ModelConfig cfg_;
    Tokenizer tok_;
    uint64_t seed_;
    FrameEncoder person_enc_;
    FrameEncoder bg_enc_;
    QFormer branch_p1_;
    QFormer branch_p2_;
    QFormer branch_bg_;
    FrozenLM lm_;
    ParamStore store_;
};

} // namespace ovhhir
