#include "ovhhir/model.hpp"

#include "json.hpp"

namespace ovhhir {

using nlohmann::json;

void ModelConfig::validate() const {
    encoder.validate();
    qformer.validate();
    lm.validate();
    if (qformer.dim != encoder.dim)
        throw config_error("q-former token width " + std::to_string(qformer.dim) +
                           " must match encoder width " + std::to_string(encoder.dim));
    if (qformer.out_dim != lm.dim)
        throw config_error("q-former projection width " + std::to_string(qformer.out_dim) +
                           " must match lm width " + std::to_string(lm.dim));
    if (frames_per_clip < 1) throw config_error("frames_per_clip must be >= 1");
}

std::string ModelConfig::to_json() const {
    json j;
    j["encoder"] = {{"frame_size", encoder.frame_size},
                    {"patch", encoder.patch},
                    {"dim", encoder.dim},
                    {"depth", encoder.depth},
                    {"heads", encoder.heads}};
    j["qformer"] = {{"queries", qformer.queries}, {"dim", qformer.dim},
                    {"depth", qformer.depth},     {"heads", qformer.heads},
                    {"t_max", qformer.t_max},     {"out_dim", qformer.out_dim}};
    j["lm"] = {{"vocab", lm.vocab},
               {"dim", lm.dim},
               {"depth", lm.depth},
               {"heads", lm.heads},
               {"context", lm.context}};
    j["frames_per_clip"] = frames_per_clip;
    j["background_branch"] = background_branch;
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string & text) {
    ModelConfig cfg;
    try {
        json j = json::parse(text);
        const json & e = j.at("encoder");
        cfg.encoder.frame_size = e.at("frame_size").get<int64_t>();
        cfg.encoder.patch = e.at("patch").get<int64_t>();
        cfg.encoder.dim = e.at("dim").get<int64_t>();
        cfg.encoder.depth = e.at("depth").get<int64_t>();
        cfg.encoder.heads = e.at("heads").get<int64_t>();
        const json & q = j.at("qformer");
        cfg.qformer.queries = q.at("queries").get<int64_t>();
        cfg.qformer.dim = q.at("dim").get<int64_t>();
        cfg.qformer.depth = q.at("depth").get<int64_t>();
        cfg.qformer.heads = q.at("heads").get<int64_t>();
        cfg.qformer.t_max = q.at("t_max").get<int64_t>();
        cfg.qformer.out_dim = q.at("out_dim").get<int64_t>();
        const json & l = j.at("lm");
        cfg.lm.vocab = l.at("vocab").get<int64_t>();
        cfg.lm.dim = l.at("dim").get<int64_t>();
        cfg.lm.depth = l.at("depth").get<int64_t>();
        cfg.lm.heads = l.at("heads").get<int64_t>();
        cfg.lm.context = l.at("context").get<int64_t>();
        cfg.frames_per_clip = j.at("frames_per_clip").get<int64_t>();
        cfg.background_branch = j.at("background_branch").get<bool>();
    } catch (const json::exception & e) {
        throw data_error(std::string("bad model config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

OvhhirModel::OvhhirModel(ModelConfig cfg, Tokenizer tok, uint64_t seed)
    : cfg_(std::move(cfg)), tok_(std::move(tok)), seed_(seed),
      person_enc_("encoder.person", cfg_.encoder), bg_enc_("encoder.bg", cfg_.encoder),
      branch_p1_("branch.p1", cfg_.qformer), branch_p2_("branch.p2", cfg_.qformer),
      branch_bg_("branch.bg", cfg_.qformer), lm_("lm", cfg_.lm) {
    if (cfg_.lm.vocab != tok_.size())
        throw config_error("lm vocab " + std::to_string(cfg_.lm.vocab) +
                           " does not match tokenizer size " + std::to_string(tok_.size()));
    cfg_.validate();
    Rng root(seed_);
    person_enc_.register_params(store_, root);
    branch_p1_.register_params(store_, root);
    branch_p2_.register_params(store_, root);
    if (cfg_.background_branch) {
        bg_enc_.register_params(store_, root);
        branch_bg_.register_params(store_, root);
    }
    lm_.register_params(store_, root);
}

StreamTriplet OvhhirModel::preprocess(const FrameSequence & clip, const MaskSet & masks) const {
    std::vector<int64_t> idx = sample_frames(clip.t, cfg_.frames_per_clip);
    StreamTriplet split = apply_masks(take_frames(clip, idx), take_frames(masks, idx));
    StreamTriplet out;
    out.p1 = letterbox(split.p1, cfg_.encoder.frame_size, cfg_.encoder.frame_size);
    out.p2 = letterbox(split.p2, cfg_.encoder.frame_size, cfg_.encoder.frame_size);
    out.bg = letterbox(split.bg, cfg_.encoder.frame_size, cfg_.encoder.frame_size);
    return out;
}

StreamTokens OvhhirModel::encode_streams(const StreamTriplet & streams) {
    StreamTokens out;
    out.p1 = person_enc_.encode_sequence(store_, streams.p1);
    out.p2 = person_enc_.encode_sequence(store_, streams.p2);
    if (cfg_.background_branch) out.bg = bg_enc_.encode_sequence(store_, streams.bg);
    out.t = streams.p1.t;
    out.p = cfg_.encoder.patches_per_frame();
    return out;
}

StreamTokens OvhhirModel::encode_clip(const FrameSequence & clip, const MaskSet & masks) {
    return encode_streams(preprocess(clip, masks));
}

std::map<StreamId, Graph::Node *> OvhhirModel::branch_rows(Graph & g,
                                                           const StreamTokens & tokens) {
    if (tokens.t <= 0 || tokens.p != cfg_.encoder.patches_per_frame())
        throw config_error("stream tokens do not match the encoder layout");
    std::map<StreamId, Graph::Node *> rows;
    rows[StreamId::P1] = branch_p1_.project(g, store_, g.input(tokens.p1), tokens.t, tokens.p);
    rows[StreamId::P2] = branch_p2_.project(g, store_, g.input(tokens.p2), tokens.t, tokens.p);
    if (cfg_.background_branch)
        rows[StreamId::BG] = branch_bg_.project(g, store_, g.input(tokens.bg), tokens.t, tokens.p);
    return rows;
}

Graph::Node * OvhhirModel::record_loss(Graph & g, const ChatRecord & record,
                                       const StreamTokens & tokens) {
    for (const auto & seg : record.segments)
        if (seg.kind == ChatSegment::SLOT && seg.stream == StreamId::BG &&
            !cfg_.background_branch)
            throw config_error(std::string("record uses ") + stream_marker(StreamId::BG) +
                               " but the background branch is disabled");
    MixPlan plan = plan_mix(record, tok_, cfg_.qformer.queries, cfg_.lm.context, true);
    return caption_loss(g, store_, lm_, plan, branch_rows(g, tokens));
}

std::string OvhhirModel::generate(const ChatRecord & record, const StreamTokens & tokens,
                                  const GenerateConfig & gen, Rng * sampler) {
    MixPlan prefix = plan_mix(record, tok_, cfg_.qformer.queries, cfg_.lm.context, false);
    Graph g;
    std::map<StreamId, Tensor> rows;
    for (const auto & [stream, node] : branch_rows(g, tokens)) rows[stream] = node->value;
    return generate_caption(store_, lm_, tok_, prefix, rows, gen, sampler);
}

void OvhhirModel::save(const std::filesystem::path & path, const std::string & extra_meta) const {
    json meta;
    meta["seed"] = seed_;
    meta["config"] = json::parse(cfg_.to_json());
    if (!extra_meta.empty()) {
        try {
            meta["extra"] = json::parse(extra_meta);
        } catch (const json::exception & e) {
            throw config_error(std::string("checkpoint extra metadata is not JSON: ") + e.what());
        }
    }
    save_checkpoint(store_, path, meta.dump());
}

void OvhhirModel::load(const std::filesystem::path & path) { load_checkpoint(store_, path); }

ModelConfig OvhhirModel::config_from_checkpoint(const std::filesystem::path & path) {
    std::string meta = read_checkpoint_meta(path);
    try {
        json j = json::parse(meta);
        return ModelConfig::from_json(j.at("config").dump());
    } catch (const json::exception & e) {
        throw data_error("checkpoint at " + path.string() +
                         " carries no model config: " + e.what());
    }
}

} // namespace ovhhir
