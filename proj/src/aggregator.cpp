#include "ovhhir/aggregator.hpp"

#include <cmath>

namespace ovhhir {

void QFormerConfig::validate() const {
    if (queries < 1 || dim < 1 || depth < 1 || heads < 1 || t_max < 1 || out_dim < 1)
        throw config_error("qformer: non-positive config value");
    if (dim % heads != 0)
        throw config_error("qformer: heads " + std::to_string(heads) + " do not divide dim " +
                           std::to_string(dim));
}

QFormer::QFormer(std::string prefix, QFormerConfig cfg) : prefix_(std::move(prefix)), cfg_(cfg) {
    cfg_.validate();
    if (prefix_.empty()) throw config_error("qformer with empty parameter prefix");
}

void QFormer::register_params(ParamStore & store, const Rng & root) const {
    auto randn = [&](const std::string & name, std::vector<int64_t> shape, double stddev) {
        Rng r = root.fork(name);
        store.add(name, Tensor::randn(std::move(shape), r, stddev), /*trainable=*/true);
    };
    auto fill = [&](const std::string & name, std::vector<int64_t> shape, double v) {
        store.add(name, Tensor::full(std::move(shape), v), /*trainable=*/true);
    };

    int64_t d = cfg_.dim;
    double w_std = 1.0 / std::sqrt(double(d));
    randn(prefix_ + ".queries", {cfg_.queries, d}, 1.0);
    // zero-initialized: aggregation starts order-agnostic and learns to use time
    fill(prefix_ + ".time", {cfg_.t_max, d}, 0.0);
    for (int64_t i = 0; i < cfg_.depth; ++i) {
        std::string blk = prefix_ + ".blk" + std::to_string(i);
        fill(blk + ".ln_q.gain", {d}, 1.0);
        fill(blk + ".ln_q.bias", {d}, 0.0);
        fill(blk + ".ln_kv.gain", {d}, 1.0);
        fill(blk + ".ln_kv.bias", {d}, 0.0);
        for (const char * m : {"wq", "wk", "wv", "wo"}) randn(blk + ".attn." + m, {d, d}, w_std);
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
    randn(prefix_ + ".proj.w", {d, cfg_.out_dim}, w_std);
    fill(prefix_ + ".proj.b", {cfg_.out_dim}, 0.0);
}

Graph::Node * QFormer::aggregate(Graph & g, ParamStore & store, Graph::Node * frame_tokens,
                                 int64_t t_count, int64_t p_count) const {
    if (t_count < 1 || p_count < 1)
        throw config_error("qformer: non-positive t/p counts");
    if (frame_tokens->value.rank() != 2 ||
        frame_tokens->value.rows() != t_count * p_count ||
        frame_tokens->value.cols() != cfg_.dim)
        throw config_error("qformer: tokens must be (T*P) x " + std::to_string(cfg_.dim) +
                           ", got " + shape_str(frame_tokens->value.shape) + " for T=" +
                           std::to_string(t_count) + " P=" + std::to_string(p_count));

    auto P = [&](const std::string & suffix) -> Graph::Node * {
        return g.param(store.at(prefix_ + suffix));
    };

    // temporal rows cycle through the table, so any clip length is accepted
    std::vector<int64_t> tidx;
    tidx.reserve(size_t(t_count));
    for (int64_t t = 0; t < t_count; ++t) tidx.push_back(t % cfg_.t_max);
    Graph::Node * time_rows = g.gather_rows(P(".time"), tidx);
    Graph::Node * tokens = g.add_time_rows(frame_tokens, time_rows, t_count, p_count);

    Graph::Node * x = P(".queries");
    for (int64_t i = 0; i < cfg_.depth; ++i) {
        std::string blk = ".blk" + std::to_string(i);
        Graph::Node * qn = g.layernorm(x, P(blk + ".ln_q.gain"), P(blk + ".ln_q.bias"));
        Graph::Node * kv = g.layernorm(tokens, P(blk + ".ln_kv.gain"), P(blk + ".ln_kv.bias"));
        Graph::Node * q = g.add_bias(g.matmul(qn, P(blk + ".attn.wq")), P(blk + ".attn.bq"));
        Graph::Node * k = g.matmul(kv, P(blk + ".attn.wk"));
        Graph::Node * v = g.add_bias(g.matmul(kv, P(blk + ".attn.wv")), P(blk + ".attn.bv"));
        Graph::Node * a = g.attend(q, k, v, int(cfg_.heads), /*causal=*/false);
        x = g.add(x, g.add_bias(g.matmul(a, P(blk + ".attn.wo")), P(blk + ".attn.bo")));
        Graph::Node * pre2 = g.layernorm(x, P(blk + ".ln2.gain"), P(blk + ".ln2.bias"));
        Graph::Node * h = g.gelu(g.add_bias(g.matmul(pre2, P(blk + ".ffn.w1")), P(blk + ".ffn.b1")));
        x = g.add(x, g.add_bias(g.matmul(h, P(blk + ".ffn.w2")), P(blk + ".ffn.b2")));
    }
    return g.layernorm(x, P(".ln_f.gain"), P(".ln_f.bias"));
}

Graph::Node * QFormer::project(Graph & g, ParamStore & store, Graph::Node * frame_tokens,
                               int64_t t_count, int64_t p_count) const {
    Graph::Node * agg = aggregate(g, store, frame_tokens, t_count, p_count);
    return g.add_bias(g.matmul(agg, g.param(store.at(prefix_ + ".proj.w"))),
                      g.param(store.at(prefix_ + ".proj.b")));
}

} // namespace ovhhir
