#pragma once

#include "ovhhir/graph.hpp"
#include "ovhhir/params.hpp"

#include <string>

namespace ovhhir {

struct QFormerConfig {
    int64_t queries = 8;  // learned query rows
    int64_t dim = 32;     // token width, matches the encoder
    int64_t depth = 2;
    int64_t heads = 4;
    int64_t t_max = 16;   // temporal table rows; frame t uses row t % t_max
    int64_t out_dim = 64; // language-model embedding width after projection

    void validate() const;
};

// Learnable aggregator: fixed-count query rows cross-attend over all T*P
// frame tokens of one stream at once, so the output size never depends on
// the clip length. The whole module is trainable ("branch.*" prefix).
class QFormer {
  public:
    QFormer(std::string prefix, QFormerConfig cfg);

    void register_params(ParamStore & store, const Rng & root) const;

    // frame_tokens: (t_count*p_count) x dim. Returns queries x dim.
    Graph::Node * aggregate(Graph & g, ParamStore & store, Graph::Node * frame_tokens,
                            int64_t t_count, int64_t p_count) const;

    // aggregate + linear projection into the LM width: queries x out_dim
    Graph::Node * project(Graph & g, ParamStore & store, Graph::Node * frame_tokens,
                          int64_t t_count, int64_t p_count) const;

    const QFormerConfig & config() const { return cfg_; }
    const std::string & prefix() const { return prefix_; }

  private:
    std::string prefix_;
    QFormerConfig cfg_;
};

} // namespace ovhhir
