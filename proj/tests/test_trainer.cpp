#include "doctest.h"

#include "ovhhir/synthetic.hpp"
#include "ovhhir/trainer.hpp"
#include "helpers.hpp"

#include <cmath>
#include <limits>
#include <set>
#include <sstream>

using namespace ovhhir;
namespace ht = ovhhir::testing;

namespace {

ModelConfig tiny_config(int64_t vocab, bool background = true) {
    ModelConfig cfg;
    cfg.encoder = {16, 8, 16, 1, 2};
    cfg.qformer = {4, 16, 1, 2, 4, 32};
    cfg.lm = {vocab, 32, 1, 2, 128};
    cfg.frames_per_clip = 4;
    cfg.background_branch = background;
    return cfg;
}

Tokenizer synthetic_tokenizer() {
    std::vector<std::string> texts = {DEFAULT_PROMPT};
    for (const auto & rec : make_synthetic_records()) texts.push_back(rec.caption);
    return Tokenizer::build(texts);
}

ChatRecord chat_for(const SyntheticRecord & rec, bool background) {
    InteractionRecord ir;
    ir.id = "synthetic/" + rec.id;
    ir.source = "synthetic";
    ir.hard_label = rec.label;
    ir.canonical_class = rec.label == "hug" ? 0 : 1;
    ir.soft_caption = rec.caption;
    ir.clip_path = "unused";
    ir.mask_path = "unused";
    return chat_record_for(ir, background);
}

std::vector<TrainExample> make_examples(OvhhirModel & model, size_t limit = 8) {
    std::vector<TrainExample> out;
    for (const auto & rec : make_synthetic_records()) {
        if (out.size() == limit) break;
        TrainExample ex;
        ex.id = rec.id;
        ex.record = chat_for(rec, model.config().background_branch);
        ex.tokens = model.encode_clip(rec.clip, rec.masks);
        out.push_back(std::move(ex));
    }
    return out;
}

std::vector<const TrainExample *> as_batch(const std::vector<TrainExample> & examples) {
    std::vector<const TrainExample *> batch;
    for (const auto & ex : examples) batch.push_back(&ex);
    return batch;
}

double batch_loss(OvhhirModel & model, const std::vector<TrainExample> & examples) {
    Graph g;
    Graph::Node * total = nullptr;
    for (const auto & ex : examples) {
        Graph::Node * li = model.record_loss(g, ex.record, ex.tokens);
        total = total ? g.add(total, li) : li;
    }
    return total->value.data[0] / double(examples.size());
}

} // namespace

TEST_SUITE("trainer") {

TEST_CASE("partition splits strictly by prefix") {
    Tokenizer tok = synthetic_tokenizer();
    OvhhirModel model(tiny_config(tok.size()), tok, 5);
    ParameterPartition part = partition_parameters(model.params());

    CHECK(part.trainable.size() + part.frozen.size() == model.params().size());
    std::set<std::string> seen;
    for (const auto & n : part.trainable) {
        CHECK(n.rfind("branch.", 0) == 0);
        CHECK(seen.insert(n).second);
    }
    for (const auto & n : part.frozen) {
        CHECK((n.rfind("encoder.", 0) == 0 || n.rfind("lm.", 0) == 0));
        CHECK(seen.insert(n).second);
    }
    // one learned query block and one temporal table per branch
    int queries = 0, tables = 0;
    for (const auto & n : part.trainable) {
        if (n.find(".queries") != std::string::npos) ++queries;
        if (n.find(".time") != std::string::npos) ++tables;
    }
    CHECK(queries == 3);
    CHECK(tables == 3);

    OvhhirModel no_bg(tiny_config(tok.size(), false), tok, 5);
    ParameterPartition part2 = partition_parameters(no_bg.params());
    int queries2 = 0;
    for (const auto & n : part2.trainable)
        if (n.find(".queries") != std::string::npos) ++queries2;
    CHECK(queries2 == 2);
}

TEST_CASE("unclassified or mislabeled parameters are hard errors") {
    ParamStore store;
    store.add("branch.q.w", Tensor::zeros({2, 2}), true);
    store.add("extra.w", Tensor::zeros({2}), true);
    CHECK_THROWS_WITH_AS(partition_parameters(store), doctest::Contains("extra.w"),
                         config_error);

    ParamStore flag;
    flag.add("branch.q.w", Tensor::zeros({2, 2}), false); // prefix says learnable
    CHECK_THROWS_AS(partition_parameters(flag), config_error);
    ParamStore flag2;
    flag2.add("lm.wte", Tensor::zeros({2, 2}), true); // prefix says frozen
    CHECK_THROWS_AS(partition_parameters(flag2), config_error);
}

TEST_CASE("adam step matches a hand-rolled reference update") {
    ParamStore store;
    store.add("branch.a", Tensor::full({2}, 1.0), true);
    store.add("branch.b", Tensor::full({1}, -0.5), true);
    store.at("branch.a").grad.data = {0.3, -0.4};
    store.at("branch.b").grad.data = {1.2};
    ParameterPartition part{{"branch.a", "branch.b"}, {}};

    const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8, clip = 1.0;
    double norm = std::sqrt(0.3 * 0.3 + 0.4 * 0.4 + 1.2 * 1.2);
    double scale = clip / norm; // norm = 1.3 > 1
    std::vector<double> g = {0.3 * scale, -0.4 * scale, 1.2 * scale};
    std::vector<double> want;
    for (double gv : g) {
        double m = (1 - b1) * gv, v = (1 - b2) * gv * gv;
        double mhat = m / (1 - b1), vhat = v / (1 - b2);
        want.push_back(lr * mhat / (std::sqrt(vhat) + eps));
    }

    AdamOptimizer opt(lr, clip);
    opt.step(store, part);
    CHECK(opt.last_grad_norm() == doctest::Approx(norm).epsilon(1e-15));
    CHECK(store.at("branch.a").value.data[0] == doctest::Approx(1.0 - want[0]).epsilon(1e-15));
    CHECK(store.at("branch.a").value.data[1] == doctest::Approx(1.0 - want[1]).epsilon(1e-15));
    CHECK(store.at("branch.b").value.data[0] == doctest::Approx(-0.5 - want[2]).epsilon(1e-15));

    // second step with fresh grads uses bias correction for t = 2
    AdamOptimizer opt2(lr, 0.0); // clipping off
    ParamStore store2;
    store2.add("branch.a", Tensor::full({1}, 2.0), true);
    store2.at("branch.a").grad.data = {0.5};
    ParameterPartition part2{{"branch.a"}, {}};
    opt2.step(store2, part2);
    double m = (1 - b1) * 0.5, v = (1 - b2) * 0.25;
    double x = 2.0 - lr * (m / (1 - b1)) / (std::sqrt(v / (1 - b2)) + eps);
    store2.at("branch.a").grad.data = {-0.2};
    opt2.step(store2, part2);
    m = b1 * m + (1 - b1) * -0.2;
    v = b2 * v + (1 - b2) * 0.04;
    x -= lr * (m / (1 - b1 * b1)) / (std::sqrt(v / (1 - b2 * b2)) + eps);
    CHECK(store2.at("branch.a").value.data[0] == doctest::Approx(x).epsilon(1e-15));
}

TEST_CASE("lr zero leaves every parameter bit-identical") {
    Tokenizer tok = synthetic_tokenizer();
    OvhhirModel model(tiny_config(tok.size()), tok, 5);
    auto examples = make_examples(model, 2);
    uint64_t before = model.params().checksum();

    AdamOptimizer opt(0.0, 1.0);
    ParameterPartition part = partition_parameters(model.params());
    double loss = train_step(model, opt, part, as_batch(examples), 1);
    CHECK(std::isfinite(loss));
    CHECK(loss > 0.0);
    CHECK(model.params().checksum() == before);
}

TEST_CASE("a small step on a fixed batch does not increase its loss") {
    Tokenizer tok = synthetic_tokenizer();
    OvhhirModel model(tiny_config(tok.size()), tok, 5);
    auto examples = make_examples(model, 2);

    double before = batch_loss(model, examples);
    AdamOptimizer opt(1e-4, 1.0);
    ParameterPartition part = partition_parameters(model.params());
    double reported = train_step(model, opt, part, as_batch(examples), 1);
    CHECK(reported == doctest::Approx(before).epsilon(1e-12));
    double after = batch_loss(model, examples);
    CHECK(after <= before);
}

TEST_CASE("training only moves branch weights") {
    Tokenizer tok = synthetic_tokenizer();
    OvhhirModel model(tiny_config(tok.size()), tok, 5);
    auto examples = make_examples(model, 4);
    uint64_t enc = model.params().checksum("encoder.");
    uint64_t lm = model.params().checksum("lm.");
    uint64_t branch = model.params().checksum("branch.");

    TrainConfig cfg;
    cfg.lr = 1e-2;
    cfg.steps = 10;
    cfg.batch_size = 4;
    cfg.seed = 3;
    cfg.frames_per_clip = 4;
    Trainer trainer(model, cfg);
    auto entries = trainer.run(examples);
    CHECK(entries.size() == 10);
    CHECK(model.params().checksum("encoder.") == enc);
    CHECK(model.params().checksum("lm.") == lm);
    CHECK(model.params().checksum("branch.") != branch);
}

TEST_CASE("two runs from the same seed produce identical loss curves") {
    Tokenizer tok = synthetic_tokenizer();
    TrainConfig cfg;
    cfg.lr = 5e-3;
    cfg.steps = 6;
    cfg.batch_size = 3;
    cfg.seed = 9;
    cfg.frames_per_clip = 4;

    std::vector<double> curves[2];
    for (int run = 0; run < 2; ++run) {
        OvhhirModel model(tiny_config(tok.size()), tok, 5);
        auto examples = make_examples(model);
        Trainer trainer(model, cfg);
        for (const auto & e : trainer.run(examples)) curves[run].push_back(e.loss);
    }
    CHECK(curves[0] == curves[1]);
}

TEST_CASE("non-finite losses abort with step and record ids") {
    Tokenizer tok = synthetic_tokenizer();
    OvhhirModel model(tiny_config(tok.size()), tok, 5);
    auto examples = make_examples(model, 2);
    model.params().at("branch.p1.proj.w").value.data[0] =
        std::numeric_limits<double>::quiet_NaN();

    AdamOptimizer opt(1e-3, 1.0);
    ParameterPartition part = partition_parameters(model.params());
    CHECK_THROWS_WITH_AS(train_step(model, opt, part, as_batch(examples), 41),
                         doctest::Contains("step 41"), numeric_error);
    CHECK_THROWS_WITH_AS(train_step(model, opt, part, as_batch(examples), 41),
                         doctest::Contains("hug_0"), numeric_error);
    CHECK_THROWS_AS(train_step(model, opt, part, {}, 1), config_error);
}

TEST_CASE("run validates configs and drives the checkpoint callback") {
    Tokenizer tok = synthetic_tokenizer();
    OvhhirModel model(tiny_config(tok.size()), tok, 5);
    auto examples = make_examples(model, 4);

    TrainConfig bad;
    bad.lr = -1.0;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = TrainConfig();
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = TrainConfig();
    bad.background_branch = false; // model has the branch
    bad.frames_per_clip = 4;
    CHECK_THROWS_AS(Trainer(model, bad), config_error);

    TrainConfig cfg;
    cfg.lr = 1e-3;
    cfg.steps = 5;
    cfg.batch_size = 2;
    cfg.checkpoint_interval = 2;
    cfg.frames_per_clip = 4;
    Trainer trainer(model, cfg);
    std::ostringstream log;
    std::vector<int64_t> saved;
    auto entries = trainer.run(examples, &log, [&](int64_t s) { saved.push_back(s); });
    CHECK(entries.size() == 5);
    CHECK(saved == std::vector<int64_t>{2, 4, 5});
    int lines = 0;
    std::string line;
    std::istringstream in(log.str());
    while (std::getline(in, line)) {
        ++lines;
        CHECK(line.find("step=") == 0);
        CHECK(line.find("loss=") != std::string::npos);
        CHECK(line.find("wall_ms=") != std::string::npos);
    }
    CHECK(lines == 5);

    Trainer t2(model, cfg);
    CHECK_THROWS_AS(t2.run({}), config_error);

    TrainConfig zero = cfg;
    zero.steps = 0;
    uint64_t before = model.params().checksum();
    std::vector<int64_t> saved2;
    Trainer t3(model, zero);
    auto none = t3.run(examples, nullptr, [&](int64_t s) { saved2.push_back(s); });
    CHECK(none.empty());
    CHECK(saved2 == std::vector<int64_t>{0});
    CHECK(model.params().checksum() == before);
}

TEST_CASE("train config json round-trip") {
    TrainConfig cfg;
    cfg.lr = 0.02;
    cfg.steps = 77;
    cfg.batch_size = 3;
    cfg.seed = 123;
    cfg.clip_norm = 0.5;
    cfg.checkpoint_interval = 10;
    cfg.frames_per_clip = 8;
    cfg.background_branch = false;
    TrainConfig back = TrainConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
    CHECK(back.steps == 77);
    CHECK_FALSE(back.background_branch);
    CHECK_THROWS_AS(TrainConfig::from_json("{\"lr\": -3}"), config_error);
    CHECK_THROWS_AS(TrainConfig::from_json("nonsense"), data_error);
}

TEST_CASE("sixty steps cut the synthetic two-record loss in half") {
    Tokenizer tok = synthetic_tokenizer();
    OvhhirModel model(tiny_config(tok.size()), tok, 5);
    auto examples = make_examples(model, 2);
    double initial = batch_loss(model, examples);

    TrainConfig cfg;
    cfg.lr = 1e-2;
    cfg.steps = 60;
    cfg.batch_size = 2;
    cfg.seed = 3;
    cfg.frames_per_clip = 4;
    Trainer trainer(model, cfg);
    trainer.run(examples);
    double final_loss = batch_loss(model, examples);
    CHECK(final_loss < 0.5 * initial);
}

} // TEST_SUITE
