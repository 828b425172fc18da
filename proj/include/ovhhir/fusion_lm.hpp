#pragma once

#include "ovhhir/corpus.hpp"
#include "ovhhir/graph.hpp"
#include "ovhhir/params.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ovhhir {

// Word-level tokenizer: lowercase, whitespace-split, punctuation as
// single-character tokens. Apostrophes and hyphens stay inside words so
// decode(encode(s)) == s for normalized caption text.
class Tokenizer {
  public:
    static constexpr int64_t PAD = 0, BOS = 1, EOS = 2, UNK = 3;

    static Tokenizer build(const std::vector<std::string> & texts);

    std::vector<int64_t> encode(const std::string & text) const;
    std::string decode(const std::vector<int64_t> & ids) const; // specials skipped

    int64_t id_of(const std::string & word) const; // UNK when absent
    const std::string & word_of(int64_t id) const;
    int64_t size() const { return int64_t(words_.size()); }

    void save(const std::filesystem::path & path) const;
    static Tokenizer load(const std::filesystem::path & path);

    static std::vector<std::string> split_tokens(const std::string & text);

  private:
    std::vector<std::string> words_;          // id -> word, specials first
    std::map<std::string, int64_t> ids_;
};

struct LmConfig {
    int64_t vocab = 0; // set from the tokenizer
    int64_t dim = 64;
    int64_t depth = 2;
    int64_t heads = 4;
    int64_t context = 256;

    void validate() const;
};

// Pre-LN causal transformer with tied input/output embeddings. All weights
// register frozen; the learnable branches steer it only through the
// embedding rows they inject.
class FrozenLM {
  public:
    FrozenLM(std::string prefix, LmConfig cfg);

    void register_params(ParamStore & store, const Rng & root) const;

    // rows: L x dim embedding-space sequence (token rows and injected visual
    // rows alike). Returns L x vocab logits; row j scores the token at j+1.
    Graph::Node * forward(Graph & g, ParamStore & store, Graph::Node * rows) const;

    // plain token-embedding lookup, L x dim
    Graph::Node * embed(Graph & g, ParamStore & store, const std::vector<int64_t> & ids) const;

    const LmConfig & config() const { return cfg_; }
    const std::string & prefix() const { return prefix_; }

  private:
    std::string prefix_;
    LmConfig cfg_;
};

// --- chat-sequence mixing --------------------------------------------------

// One contiguous piece of the mixed sequence: either token ids or a visual
// slot that contributes `queries` projected rows.
struct MixPiece {
    enum Kind { TOKENS, SLOT } kind;
    std::vector<int64_t> ids; // TOKENS
    StreamId stream = StreamId::P1; // SLOT
};

struct MixPlan {
    std::vector<MixPiece> pieces;
    std::vector<int64_t> token_ids;   // full row: PAD at slot positions
    std::vector<int64_t> target_pos;  // positions whose tokens are scored
    std::vector<StreamId> slot_order; // streams in appearance order
    int64_t queries_per_slot = 0;

    int64_t length() const { return int64_t(token_ids.size()); }
};

// Lays out [BOS, segments..., target tokens, EOS] with `queries_per_slot`
// rows reserved per stream marker. include_target=false plans a generation
// prefix instead. Errors when the result would not fit the LM context.
MixPlan plan_mix(const ChatRecord & record, const Tokenizer & tok, int64_t queries_per_slot,
                 int64_t context, bool include_target = true);

// Builds the L x dim row matrix: token pieces come from the LM embedding
// table, slot pieces from `slot_rows` (stream -> queries x dim node).
Graph::Node * mix_tokens(Graph & g, ParamStore & store, const FrozenLM & lm, const MixPlan & plan,
                         const std::map<StreamId, Graph::Node *> & slot_rows);

// Mean next-token cross-entropy over the target positions (EOS included):
// logits at j-1 score the token at j.
Graph::Node * caption_loss(Graph & g, ParamStore & store, const FrozenLM & lm, const MixPlan & plan,
                           const std::map<StreamId, Graph::Node *> & slot_rows);

struct GenerateConfig {
    int64_t max_new_tokens = 24;
    int64_t top_k = 0; // 0 = greedy
    double temperature = 1.0;
};

// Decodes from a generation prefix (plan built with include_target=false).
// Visual rows are plain values since no gradient is needed. Stops at EOS.
std::string generate_caption(ParamStore & store, const FrozenLM & lm, const Tokenizer & tok,
                             const MixPlan & prefix, const std::map<StreamId, Tensor> & slot_rows,
                             const GenerateConfig & gen, Rng * sampler = nullptr);

} // namespace ovhhir
