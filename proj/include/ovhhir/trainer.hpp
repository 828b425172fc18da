#pragma once

#include "ovhhir/model.hpp"

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace ovhhir {

struct TrainConfig {
    double lr = 1e-2;
    int64_t steps = 200;
    int64_t batch_size = 4;
    uint64_t seed = 1;
    double clip_norm = 1.0;          // global-norm gradient clip; <= 0 disables
    int64_t checkpoint_interval = 0; // extra saves every N steps; 0 = final only
    int64_t frames_per_clip = 16;
    bool background_branch = true;

    // lr = 0 and steps = 0 are legal probe runs
    void validate() const;
    std::string to_json() const;
    static TrainConfig from_json(const std::string & text);
};

struct ParameterPartition {
    std::vector<std::string> trainable; // every q-former, projection, temporal table
    std::vector<std::string> frozen;    // both encoders and the lm
};

// Prefix rules: "branch." is learnable, "encoder." and "lm." are frozen. An
// unclassified name, or a trainable flag that disagrees with its prefix, is
// a hard error rather than a silent default.
ParameterPartition partition_parameters(const ParamStore & store);

// One record ready for the optimizer: chat layout plus cached frozen
// encoder features.
struct TrainExample {
    std::string id;
    ChatRecord record;
    StreamTokens tokens;
};

class AdamOptimizer {
  public:
    explicit AdamOptimizer(double lr, double clip_norm = 1.0, double beta1 = 0.9,
                           double beta2 = 0.999, double eps = 1e-8);

    // applies one update from the accumulated grads of the trainable set
    void step(ParamStore & store, const ParameterPartition & partition);

    int64_t steps_taken() const { return t_; }
    double last_grad_norm() const { return last_norm_; }

  private:
    double lr_, clip_norm_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    double last_norm_ = 0.0;
    std::map<std::string, Tensor> m_, v_;
};

// Forward + backward + one optimizer step over the batch; returns the batch
// loss. A non-finite loss aborts with the step index and record ids.
double train_step(OvhhirModel & model, AdamOptimizer & opt, const ParameterPartition & partition,
                  const std::vector<const TrainExample *> & batch, int64_t step_index);

struct TrainLogEntry {
    int64_t step = 0;
    double loss = 0.0;
    double wall_ms = 0.0; // log-only; loss values alone define determinism
};

class Trainer {
  public:
    Trainer(OvhhirModel & model, TrainConfig cfg);

    // Deterministic epoch shuffling from cfg.seed. Writes one `step loss
    // wall_ms` line per step to `log`; `on_checkpoint` fires every
    // checkpoint_interval steps and after the final step.
    std::vector<TrainLogEntry> run(const std::vector<TrainExample> & examples,
                                   std::ostream * log = nullptr,
                                   const std::function<void(int64_t)> & on_checkpoint = {});

  private:
    OvhhirModel & model_;
    TrainConfig cfg_;
};

} // namespace ovhhir
