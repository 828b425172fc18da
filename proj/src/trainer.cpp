#include "ovhhir/trainer.hpp"

#include "json.hpp"

#include <chrono>
#include <cmath>
#include <ostream>

namespace ovhhir {

using nlohmann::json;

void TrainConfig::validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw config_error("lr must be finite and >= 0");
    if (steps < 0) throw config_error("steps must be >= 0");
    if (batch_size < 1) throw config_error("batch_size must be >= 1");
    if (frames_per_clip < 1) throw config_error("frames_per_clip must be >= 1");
    if (checkpoint_interval < 0) throw config_error("checkpoint_interval must be >= 0");
    if (!std::isfinite(clip_norm)) throw config_error("clip_norm must be finite");
}

std::string TrainConfig::to_json() const {
    json j;
    j["lr"] = lr;
    j["steps"] = steps;
    j["batch_size"] = batch_size;
    j["seed"] = seed;
    j["clip_norm"] = clip_norm;
    j["checkpoint_interval"] = checkpoint_interval;
    j["frames_per_clip"] = frames_per_clip;
    j["background_branch"] = background_branch;
    return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string & text) {
    TrainConfig cfg;
    try {
        json j = json::parse(text);
        cfg.lr = j.value("lr", cfg.lr);
        cfg.steps = j.value("steps", cfg.steps);
        cfg.batch_size = j.value("batch_size", cfg.batch_size);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.clip_norm = j.value("clip_norm", cfg.clip_norm);
        cfg.checkpoint_interval = j.value("checkpoint_interval", cfg.checkpoint_interval);
        cfg.frames_per_clip = j.value("frames_per_clip", cfg.frames_per_clip);
        cfg.background_branch = j.value("background_branch", cfg.background_branch);
    } catch (const json::exception & e) {
        throw data_error(std::string("bad train config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

ParameterPartition partition_parameters(const ParamStore & store) {
    ParameterPartition out;
    for (const Parameter * p : store.all()) {
        bool learnable;
        if (p->name.rfind("branch.", 0) == 0) learnable = true;
        else if (p->name.rfind("encoder.", 0) == 0 || p->name.rfind("lm.", 0) == 0)
            learnable = false;
        else
            throw config_error("unclassified parameter '" + p->name +
                               "': no frozen/learnable rule for its prefix");
        if (p->trainable != learnable)
            throw config_error("parameter '" + p->name + "' is registered " +
                               (p->trainable ? "trainable" : "frozen") +
                               " but its prefix says otherwise");
        (learnable ? out.trainable : out.frozen).push_back(p->name);
    }
    return out;
}

AdamOptimizer::AdamOptimizer(double lr, double clip_norm, double beta1, double beta2, double eps)
    : lr_(lr), clip_norm_(clip_norm), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw config_error("lr must be finite and >= 0");
}

void AdamOptimizer::step(ParamStore & store, const ParameterPartition & partition) {
    ++t_;
    double sq = 0.0;
    for (const auto & name : partition.trainable) {
        const Parameter & p = store.at(name);
        if (!p.trainable) throw config_error("partition lists frozen parameter '" + name + "'");
        for (double gv : p.grad.data) sq += gv * gv;
    }
    last_norm_ = std::sqrt(sq);
    double scale = (clip_norm_ > 0.0 && last_norm_ > clip_norm_) ? clip_norm_ / last_norm_ : 1.0;

    double bc1 = 1.0 - std::pow(beta1_, double(t_));
    double bc2 = 1.0 - std::pow(beta2_, double(t_));
    for (const auto & name : partition.trainable) {
        Parameter & p = store.at(name);
        Tensor & m = m_.try_emplace(name, Tensor::zeros(p.value.shape)).first->second;
        Tensor & v = v_.try_emplace(name, Tensor::zeros(p.value.shape)).first->second;
        for (size_t i = 0; i < p.value.data.size(); ++i) {
            double gv = p.grad.data[i] * scale;
            m.data[i] = beta1_ * m.data[i] + (1.0 - beta1_) * gv;
            v.data[i] = beta2_ * v.data[i] + (1.0 - beta2_) * gv * gv;
            double mhat = m.data[i] / bc1;
            double vhat = v.data[i] / bc2;
            p.value.data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

double train_step(OvhhirModel & model, AdamOptimizer & opt, const ParameterPartition & partition,
                  const std::vector<const TrainExample *> & batch, int64_t step_index) {
    if (batch.empty()) throw config_error("empty training batch");
    Graph g;
    Graph::Node * total = nullptr;
    for (const TrainExample * ex : batch) {
        Graph::Node * li = model.record_loss(g, ex->record, ex->tokens);
        total = total ? g.add(total, li) : li;
    }
    total = g.scale(total, 1.0 / double(batch.size()));
    double loss = total->value.data[0];
    if (!std::isfinite(loss)) {
        std::string ids;
        for (const TrainExample * ex : batch) ids += (ids.empty() ? "" : ", ") + ex->id;
        throw numeric_error("non-finite loss at step " + std::to_string(step_index) +
                            " (records: " + ids + ")");
    }
    model.params().zero_grads();
    g.backward(total);
    opt.step(model.params(), partition);
    return loss;
}

Trainer::Trainer(OvhhirModel & model, TrainConfig cfg) : model_(model), cfg_(std::move(cfg)) {
    cfg_.validate();
    if (model_.config().background_branch != cfg_.background_branch)
        throw config_error("train config and model disagree on the background branch");
    if (model_.config().frames_per_clip != cfg_.frames_per_clip)
        throw config_error("train config and model disagree on frames_per_clip");
}

std::vector<TrainLogEntry> Trainer::run(const std::vector<TrainExample> & examples,
                                        std::ostream * log,
                                        const std::function<void(int64_t)> & on_checkpoint) {
    if (examples.empty()) throw config_error("no training examples");
    ParameterPartition partition = partition_parameters(model_.params());
    AdamOptimizer opt(cfg_.lr, cfg_.clip_norm);
    Rng order_rng = Rng(cfg_.seed).fork("batch-order");

    std::vector<size_t> order(examples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto reshuffle = [&] {
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[size_t(order_rng.uniform_int(0, int64_t(i) - 1))]);
    };
    reshuffle();

    std::vector<TrainLogEntry> entries;
    size_t pos = 0;
    size_t batch = std::min(size_t(cfg_.batch_size), examples.size());
    int64_t last_saved = -1;
    for (int64_t step = 1; step <= cfg_.steps; ++step) {
        if (pos + batch > order.size()) {
            reshuffle();
            pos = 0;
        }
        std::vector<const TrainExample *> items;
        for (size_t i = 0; i < batch; ++i) items.push_back(&examples[order[pos + i]]);
        pos += batch;

        auto t0 = std::chrono::steady_clock::now();
        double loss = train_step(model_, opt, partition, items, step);
        double wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        entries.push_back({step, loss, wall_ms});
        if (log) *log << "step=" << step << " loss=" << loss << " wall_ms=" << wall_ms << "\n";
        if (on_checkpoint && cfg_.checkpoint_interval > 0 &&
            step % cfg_.checkpoint_interval == 0) {
            on_checkpoint(step);
            last_saved = step;
        }
    }
    if (on_checkpoint && last_saved != cfg_.steps) on_checkpoint(cfg_.steps);
    return entries;
}

} // namespace ovhhir
