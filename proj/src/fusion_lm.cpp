#include "ovhhir/fusion_lm.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace ovhhir {

using nlohmann::json;

// --- tokenizer --------------------------------------------------------------

namespace {

const char * SPECIALS[4] = {"<pad>", "<bos>", "<eos>", "<unk>"};

bool word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '\'' || c == '-';
}

bool no_space_before(const std::string & tok) {
    return tok.size() == 1 && std::string(".,!?;:)").find(tok[0]) != std::string::npos;
}

bool no_space_after(const std::string & tok) { return tok == "("; }

} // namespace

std::vector<std::string> Tokenizer::split_tokens(const std::string & text) {
    std::string lower = lowercase(text);
    std::vector<std::string> out;
    std::string cur;
    for (char c : lower) {
        if (word_char(c)) {
            cur += c;
            continue;
        }
        if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
        if (!std::isspace(static_cast<unsigned char>(c))) out.push_back(std::string(1, c));
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

Tokenizer Tokenizer::build(const std::vector<std::string> & texts) {
    std::set<std::string> words;
    for (const auto & t : texts)
        for (const auto & w : split_tokens(t)) words.insert(w);
    Tokenizer tok;
    for (const char * s : SPECIALS) tok.words_.push_back(s);
    for (const auto & w : words) tok.words_.push_back(w);
    for (size_t i = 0; i < tok.words_.size(); ++i) tok.ids_[tok.words_[i]] = int64_t(i);
    return tok;
}

std::vector<int64_t> Tokenizer::encode(const std::string & text) const {
    std::vector<int64_t> out;
    for (const auto & w : split_tokens(text)) out.push_back(id_of(w));
    return out;
}

std::string Tokenizer::decode(const std::vector<int64_t> & ids) const {
    std::string out;
    bool suppress_space = true; // no leading space
    for (int64_t id : ids) {
        if (id == PAD || id == BOS || id == EOS) continue;
        const std::string & w = word_of(id);
        if (!out.empty() && !suppress_space && !no_space_before(w)) out += ' ';
        out += w;
        suppress_space = no_space_after(w);
    }
    return out;
}

int64_t Tokenizer::id_of(const std::string & word) const {
    auto it = ids_.find(word);
    return it == ids_.end() ? UNK : it->second;
}

const std::string & Tokenizer::word_of(int64_t id) const {
    if (id < 0 || id >= size()) throw config_error("token id " + std::to_string(id) + " out of range");
    return words_[size_t(id)];
}

void Tokenizer::save(const std::filesystem::path & path) const {
    json doc = {{"format", "ovhhir-tokenizer-v1"}, {"words", words_}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write tokenizer: " + path.string());
    out << doc.dump(2) << '\n';
}

Tokenizer Tokenizer::load(const std::filesystem::path & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open tokenizer: " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error & e) {
        throw data_error(path.string() + ": " + e.what());
    }
    if (doc.value("format", "") != "ovhhir-tokenizer-v1")
        throw data_error(path.string() + " is not a tokenizer file");
    Tokenizer tok;
    tok.words_ = doc.at("words").get<std::vector<std::string>>();
    if (tok.words_.size() < 4) throw data_error("tokenizer vocabulary too small for specials");
    for (int i = 0; i < 4; ++i)
        if (tok.words_[size_t(i)] != SPECIALS[i])
            throw data_error("tokenizer specials corrupted in " + path.string());
    for (size_t i = 0; i < tok.words_.size(); ++i) {
        if (!tok.ids_.emplace(tok.words_[i], int64_t(i)).second)
            throw data_error("tokenizer has duplicate word '" + tok.words_[i] + "'");
    }
    return tok;
}

// --- frozen LM ---------------------------------------------------------------

void LmConfig::validate() const {
    if (vocab < 5) throw config_error("lm: vocabulary too small");
    if (dim < 1 || depth < 1 || heads < 1 || context < 2)
        throw config_error("lm: non-positive dimension");
    if (dim % heads != 0)
        throw config_error("lm: heads " + std::to_string(heads) + " do not divide dim " +
                           std::to_string(dim));
}

FrozenLM::FrozenLM(std::string prefix, LmConfig cfg) : prefix_(std::move(prefix)), cfg_(cfg) {
    cfg_.validate();
    if (prefix_.empty()) throw config_error("lm with empty parameter prefix");
}

void FrozenLM::register_params(ParamStore & store, const Rng & root) const {
    auto randn = [&](const std::string & name, std::vector<int64_t> shape, double stddev) {
        Rng r = root.fork(name);
        store.add(name, Tensor::randn(std::move(shape), r, stddev), /*trainable=*/false);
    };
    auto fill = [&](const std::string & name, std::vector<int64_t> shape, double v) {
        store.add(name, Tensor::full(std::move(shape), v), /*trainable=*/false);
    };

    int64_t d = cfg_.dim;
    double w_std = 1.0 / std::sqrt(double(d));
    randn(prefix_ + ".wte", {cfg_.vocab, d}, 0.5);
    randn(prefix_ + ".wpe", {cfg_.context, d}, 0.1);
    for (int64_t i = 0; i < cfg_.depth; ++i) {
        std::string blk = prefix_ + ".blk" + std::to_string(i);
        fill(blk + ".ln1.gain", {d}, 1.0);
        fill(blk + ".ln1.bias", {d}, 0.0);
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
}

Graph::Node * FrozenLM::forward(Graph & g, ParamStore & store, Graph::Node * rows) const {
    if (rows->value.rank() != 2 || rows->value.cols() != cfg_.dim)
        throw config_error("lm: rows must be L x " + std::to_string(cfg_.dim) + ", got " +
                           shape_str(rows->value.shape));
    int64_t L = rows->value.rows();
    if (L < 1 || L > cfg_.context)
        throw config_error("lm: sequence length " + std::to_string(L) +
                           " outside context " + std::to_string(cfg_.context));

    auto P = [&](const std::string & suffix) -> Graph::Node * {
        return g.param(store.at(prefix_ + suffix));
    };

    std::vector<int64_t> pos;
    pos.reserve(size_t(L));
    for (int64_t i = 0; i < L; ++i) pos.push_back(i);
    Graph::Node * x = g.add(rows, g.gather_rows(P(".wpe"), pos));
    for (int64_t i = 0; i < cfg_.depth; ++i) {
        std::string blk = ".blk" + std::to_string(i);
        Graph::Node * pre = g.layernorm(x, P(blk + ".ln1.gain"), P(blk + ".ln1.bias"));
        Graph::Node * q = g.add_bias(g.matmul(pre, P(blk + ".attn.wq")), P(blk + ".attn.bq"));
        Graph::Node * k = g.matmul(pre, P(blk + ".attn.wk"));
        Graph::Node * v = g.add_bias(g.matmul(pre, P(blk + ".attn.wv")), P(blk + ".attn.bv"));
        Graph::Node * a = g.attend(q, k, v, int(cfg_.heads), /*causal=*/true);
        x = g.add(x, g.add_bias(g.matmul(a, P(blk + ".attn.wo")), P(blk + ".attn.bo")));
        Graph::Node * pre2 = g.layernorm(x, P(blk + ".ln2.gain"), P(blk + ".ln2.bias"));
        Graph::Node * h = g.gelu(g.add_bias(g.matmul(pre2, P(blk + ".ffn.w1")), P(blk + ".ffn.b1")));
        x = g.add(x, g.add_bias(g.matmul(h, P(blk + ".ffn.w2")), P(blk + ".ffn.b2")));
    }
    x = g.layernorm(x, P(".ln_f.gain"), P(".ln_f.bias"));
    return g.matmul(x, g.transpose(P(".wte"))); // tied output head
}

Graph::Node * FrozenLM::embed(Graph & g, ParamStore & store,
                              const std::vector<int64_t> & ids) const {
    for (int64_t id : ids)
        if (id < 0 || id >= cfg_.vocab)
            throw config_error("lm: token id " + std::to_string(id) + " outside vocabulary");
    return g.gather_rows(g.param(store.at(prefix_ + ".wte")), ids);
}

// --- mixing -------------------------------------------------------------------

MixPlan plan_mix(const ChatRecord & record, const Tokenizer & tok, int64_t queries_per_slot,
                 int64_t context, bool include_target) {
    if (queries_per_slot < 1) throw config_error("plan_mix: non-positive queries_per_slot");
    MixPlan plan;
    plan.queries_per_slot = queries_per_slot;

    auto push_tokens = [&](const std::vector<int64_t> & ids) {
        if (ids.empty()) return;
        if (!plan.pieces.empty() && plan.pieces.back().kind == MixPiece::TOKENS) {
            auto & dst = plan.pieces.back().ids;
            dst.insert(dst.end(), ids.begin(), ids.end());
        } else {
            plan.pieces.push_back({MixPiece::TOKENS, ids, StreamId::P1});
        }
        plan.token_ids.insert(plan.token_ids.end(), ids.begin(), ids.end());
    };

    push_tokens({Tokenizer::BOS});
    for (const auto & seg : record.segments) {
        if (seg.kind == ChatSegment::TEXT) {
            push_tokens(tok.encode(seg.text));
        } else {
            plan.pieces.push_back({MixPiece::SLOT, {}, seg.stream});
            plan.slot_order.push_back(seg.stream);
            plan.token_ids.insert(plan.token_ids.end(), size_t(queries_per_slot), Tokenizer::PAD);
        }
    }
    if (plan.slot_order.empty()) throw config_error("plan_mix: record has no stream slots");

    if (include_target) {
        std::vector<int64_t> target = tok.encode(record.target);
        target.push_back(Tokenizer::EOS);
        if (target.size() < 2) throw config_error("plan_mix: empty target caption");
        int64_t start = plan.length();
        for (size_t i = 0; i < target.size(); ++i) plan.target_pos.push_back(start + int64_t(i));
        push_tokens(target);
    }

    if (plan.length() > context)
        throw config_error("plan_mix: sequence of " + std::to_string(plan.length()) +
                           " rows exceeds context " + std::to_string(context));
    return plan;
}

Graph::Node * mix_tokens(Graph & g, ParamStore & store, const FrozenLM & lm, const MixPlan & plan,
                         const std::map<StreamId, Graph::Node *> & slot_rows) {
    std::vector<Graph::Node *> blocks;
    for (const auto & piece : plan.pieces) {
        if (piece.kind == MixPiece::TOKENS) {
            blocks.push_back(lm.embed(g, store, piece.ids));
        } else {
            auto it = slot_rows.find(piece.stream);
            if (it == slot_rows.end())
                throw config_error(std::string("mix_tokens: no rows for ") +
                                   stream_marker(piece.stream));
            Graph::Node * rows = it->second;
            if (rows->value.rank() != 2 || rows->value.rows() != plan.queries_per_slot ||
                rows->value.cols() != lm.config().dim)
                throw config_error(std::string("mix_tokens: ") + stream_marker(piece.stream) +
                                   " rows are " + shape_str(rows->value.shape) + ", expected " +
                                   std::to_string(plan.queries_per_slot) + " x " +
                                   std::to_string(lm.config().dim));
            blocks.push_back(rows);
        }
    }
    Graph::Node * out = blocks.size() == 1 ? blocks[0] : g.concat_rows(blocks);
    if (out->value.rows() != plan.length())
        throw config_error("mix_tokens: assembled " + std::to_string(out->value.rows()) +
                           " rows, plan says " + std::to_string(plan.length()));
    return out;
}

Graph::Node * caption_loss(Graph & g, ParamStore & store, const FrozenLM & lm, const MixPlan & plan,
                           const std::map<StreamId, Graph::Node *> & slot_rows) {
    if (plan.target_pos.empty()) throw config_error("caption_loss: plan has no target positions");
    Graph::Node * rows = mix_tokens(g, store, lm, plan, slot_rows);
    Graph::Node * logits = lm.forward(g, store, rows);
    std::vector<int64_t> pred_pos, target_ids;
    pred_pos.reserve(plan.target_pos.size());
    for (int64_t p : plan.target_pos) {
        if (p < 1 || p >= plan.length()) throw config_error("caption_loss: target position out of range");
        pred_pos.push_back(p - 1);
        target_ids.push_back(plan.token_ids[size_t(p)]);
    }
    return g.mean_cross_entropy(g.gather_rows(logits, pred_pos), target_ids);
}

// --- generation -----------------------------------------------------------------

std::string generate_caption(ParamStore & store, const FrozenLM & lm, const Tokenizer & tok,
                             const MixPlan & prefix, const std::map<StreamId, Tensor> & slot_rows,
                             const GenerateConfig & gen, Rng * sampler) {
    if (!prefix.target_pos.empty())
        throw config_error("generate_caption: prefix plan must not include a target");
    if (gen.max_new_tokens < 1) throw config_error("generate_caption: non-positive budget");
    if (gen.top_k > 0 && sampler == nullptr)
        throw config_error("generate_caption: top-k sampling needs an rng");
    if (gen.temperature <= 0) throw config_error("generate_caption: non-positive temperature");

    int64_t d = lm.config().dim;
    Tensor rows({0, d});
    rows.data.reserve(size_t(prefix.length() + gen.max_new_tokens) * size_t(d));
    auto append_row = [&](const double * src) {
        rows.data.insert(rows.data.end(), src, src + d);
        rows.shape[0] += 1;
    };
    const Tensor & wte = store.at(lm.prefix() + ".wte").value;
    for (const auto & piece : prefix.pieces) {
        if (piece.kind == MixPiece::TOKENS) {
            for (int64_t id : piece.ids) append_row(&wte.data[size_t(id * d)]);
        } else {
            auto it = slot_rows.find(piece.stream);
            if (it == slot_rows.end())
                throw config_error(std::string("generate_caption: no rows for ") +
                                   stream_marker(piece.stream));
            const Tensor & t = it->second;
            if (t.rank() != 2 || t.rows() != prefix.queries_per_slot || t.cols() != d)
                throw config_error(std::string("generate_caption: bad rows for ") +
                                   stream_marker(piece.stream) + ": " + shape_str(t.shape));
            for (int64_t r = 0; r < t.rows(); ++r) append_row(&t.data[size_t(r * d)]);
        }
    }

    std::vector<int64_t> out_ids;
    for (int64_t step = 0; step < gen.max_new_tokens; ++step) {
        if (rows.rows() >= lm.config().context) break;
        Graph g;
        Graph::Node * logits = lm.forward(g, store, g.input(rows));
        int64_t L = logits->value.rows();
        int64_t V = logits->value.cols();
        std::vector<double> last(static_cast<size_t>(V), 0.0);
        for (int64_t j = 0; j < V; ++j) last[size_t(j)] = logits->value(L - 1, j) / gen.temperature;
        // specials other than EOS are never emitted
        last[size_t(Tokenizer::PAD)] = -1e300;
        last[size_t(Tokenizer::BOS)] = -1e300;
        last[size_t(Tokenizer::UNK)] = -1e300;

        int64_t pick;
        if (gen.top_k <= 0) {
            pick = int64_t(std::max_element(last.begin(), last.end()) - last.begin());
        } else {
            int64_t k = std::min<int64_t>(gen.top_k, V);
            std::vector<int64_t> order(static_cast<size_t>(V), 0);
            for (int64_t j = 0; j < V; ++j) order[size_t(j)] = j;
            std::partial_sort(order.begin(), order.begin() + k, order.end(),
                              [&](int64_t a, int64_t b) { return last[size_t(a)] > last[size_t(b)]; });
            double mx = last[size_t(order[0])];
            std::vector<double> probs(static_cast<size_t>(k), 0.0);
            double z = 0;
            for (int64_t j = 0; j < k; ++j) {
                probs[size_t(j)] = std::exp(last[size_t(order[size_t(j)])] - mx);
                z += probs[size_t(j)];
            }
            double u = sampler->uniform() * z;
            pick = order[size_t(k - 1)];
            double acc = 0;
            for (int64_t j = 0; j < k; ++j) {
                acc += probs[size_t(j)];
                if (u <= acc) {
                    pick = order[size_t(j)];
                    break;
                }
            }
        }
        if (pick == Tokenizer::EOS) break;
        out_ids.push_back(pick);
        append_row(&wte.data[size_t(pick * d)]);
    }
    return tok.decode(out_ids);
}

} // namespace ovhhir
