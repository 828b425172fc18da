#include "doctest.h"

#include "ovhhir/graph.hpp"

#include <cmath>
#include <functional>
#include <vector>

using namespace ovhhir;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, Rng & rng, double stddev = 1.0) {
    return Tensor::randn(std::move(shape), rng, stddev);
}

// Checks analytic gradients of a scalar-valued builder against central finite
// differences on every input coordinate.
void gradcheck(const std::function<Graph::Node *(Graph &, std::vector<Graph::Node *> &)> & build,
               std::vector<Tensor> inputs, double eps = 1e-5, double tol = 1e-6) {
    Graph g;
    std::vector<Graph::Node *> nodes;
    for (auto & t : inputs) {
        nodes.push_back(g.input(t, true));
    }
    Graph::Node * loss = build(g, nodes);
    REQUIRE(loss->value.numel() == 1);
    g.backward(loss);

    auto eval = [&](const std::vector<Tensor> & ts) {
        Graph g2;
        std::vector<Graph::Node *> ns;
        for (const auto & t : ts) {
            ns.push_back(g2.input(t, false));
        }
        return build(g2, ns)->value.data[0];
    };

    for (size_t k = 0; k < inputs.size(); k++) {
        for (size_t i = 0; i < inputs[k].data.size(); i++) {
            std::vector<Tensor> plus = inputs;
            std::vector<Tensor> minus = inputs;
            plus[k].data[i] += eps;
            minus[k].data[i] -= eps;
            double fd = (eval(plus) - eval(minus)) / (2.0 * eps);
            double an = nodes[k]->grad.data[i];
            double denom = 1.0 + std::abs(fd) + std::abs(an);
            INFO("input ", k, " coord ", i, " fd=", fd, " analytic=", an);
            CHECK(std::abs(fd - an) / denom < tol);
        }
    }
}

// scalarize an arbitrary output with a fixed random linear functional
Graph::Node * pick(Graph & g, Graph::Node * out, uint64_t seed = 7) {
    Rng rng(seed);
    Tensor w = Tensor::randn(out->value.shape, rng, 1.0);
    return g.sum_all(g.mul(out, g.input(w)));
}

} // namespace

TEST_SUITE("graph") {

TEST_CASE("matmul value and gradient") {
    Rng rng(1);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 5}, rng);

    // hand value check on a tiny case
    Graph g;
    Tensor x({2, 2});
    x.data = {1, 2, 3, 4};
    Tensor y({2, 2});
    y.data = {5, 6, 7, 8};
    auto * c = g.matmul(g.input(x), g.input(y));
    CHECK(c->value(0, 0) == doctest::Approx(19));
    CHECK(c->value(0, 1) == doctest::Approx(22));
    CHECK(c->value(1, 0) == doctest::Approx(43));
    CHECK(c->value(1, 1) == doctest::Approx(50));

    gradcheck([](Graph & g, std::vector<Graph::Node *> & in) {
        return pick(g, g.matmul(in[0], in[1]));
    }, {a, b});
}

TEST_CASE("elementwise and broadcast ops gradients") {
    Rng rng(2);
    gradcheck([](Graph & g, std::vector<Graph::Node *> & in) {
        return pick(g, g.add(in[0], in[1]));
    }, {random_tensor({3, 3}, rng), random_tensor({3, 3}, rng)});

    gradcheck([](Graph & g, std::vector<Graph::Node *> & in) {
        return pick(g, g.mul(in[0], in[1]));
    }, {random_tensor({2, 5}, rng), random_tensor({2, 5}, rng)});

    gradcheck([](Graph & g, std::vector<Graph::Node *> & in) {
        return pick(g, g.add_bias(in[0], in[1]));
    }, {random_tensor({4, 3}, rng), random_tensor({3}, rng)});

    gradcheck([](Graph & g, std::vector<Graph::Node *> & in) {
        return pick(g, g.mul_row(in[0], in[1]));
    }, {random_tensor({4, 3}, rng), random_tensor({3}, rng)});

    gradcheck([](Graph & g, std::vector<Graph::Node *> & in) {
        return pick(g, g.scale(in[0], -2.5));
    }, {random_tensor({3, 4}, rng)});
}

TEST_CASE("shape ops gradients") {
    Rng rng(3);
    gradcheck([](Graph & g, std::vector<Graph::Node *> & in) {
        return pick(g, g.transpose(in[0]));
    }, {random_tensor({3, 5}, rng)});

    gradcheck([](Graph & g, std::vector<Graph::Node *> & in) {
        return pick(g, g.reshape(in[0], {2, 6}));
    }, {random_tensor({3, 4}, rng)});

    gradcheck([](Graph & g, std::vector<Graph::Node *> & in) {
        return pick(g, g.slice_rows(in[0], 1, 3));
    }, {random_tensor({4, 3}, rng)});

    gradcheck([](Graph & g, std::vector<Graph::Node *> & in) {
        return pick(g, g.slice_cols(in[0], 2, 5));
    }, {random_tensor({3, 6}, rng)});

    gradcheck([](Graph & g, std::vector<Graph::Node *> & in) {
        return pick(g, g.concat_rows({in[0], in[1], in[0]}));
    }, {random_tensor({2, 3}, rng), random_tensor({4, 3}, rng)});

    gradcheck([](Graph & g, std::vector<Graph::Node *> & in) {
        return pick(g, g.concat_cols({in[0], in[1]}));
    }, {random_tensor({3, 2}, rng), random_tensor({3, 4}, rng)});

    // repeated indices exercise scatter-add accumulation
    gradcheck([](Graph & g, std::vector<Graph::Node *> & in) {
        return pick(g, g.gather_rows(in[0], {0, 2, 2, 1}));
    }, {random_tensor({3, 4}, rng)});
}

TEST_CASE("softmax rows: values and gradient") {
    Rng rng(4);
    Tensor a = random_tensor({3, 5}, rng);
    Graph g;
    auto * y = g.softmax_rows(g.input(a));
    for (int64_t i = 0; i < 3; i++) {
        double s = 0.0;
        for (int64_t j = 0; j < 5; j++) {
            CHECK(y->value(i, j) > 0.0);
            s += y->value(i, j);
        }
        CHECK(s == doctest::Approx(1.0));
    }
    gradcheck([](Graph & g, std::vector<Graph::Node *> & in) {
        return pick(g, g.softmax_rows(in[0]));
    }, {a});
}

TEST_CASE("causal mask zeroes attention above the diagonal") {
    Rng rng(5);
    Tensor a = random_tensor({4, 4}, rng);
    Graph g;
    auto * y = g.softmax_rows(g.causal_mask(g.input(a)));
    for (int64_t i = 0; i < 4; i++) {
        for (int64_t j = i + 1; j < 4; j++) {
            CHECK(y->value(i, j) == 0.0);
        }
    }
    gradcheck([](Graph & g, std::vector<Graph::Node *> & in) {
        return pick(g, g.softmax_rows(g.causal_mask(in[0])));
    }, {a});
}

TEST_CASE("layernorm gradient") {
    Rng rng(6);
    gradcheck([](Graph & g, std::vector<Graph::Node *> & in) {
        return pick(g, g.layernorm(in[0], in[1], in[2]));
    }, {random_tensor({4, 6}, rng), random_tensor({6}, rng, 0.5), random_tensor({6}, rng, 0.5)});
}

TEST_CASE("gelu gradient") {
    Rng rng(7);
    gradcheck([](Graph & g, std::vector<Graph::Node *> & in) {
        return pick(g, g.gelu(in[0]));
    }, {random_tensor({3, 4}, rng, 2.0)});
}

TEST_CASE("add_time_rows: value and gradient") {
    Rng rng(8);
    Tensor x = random_tensor({6, 4}, rng);  // T=3, P=2
    Tensor table = random_tensor({5, 4}, rng);
    Graph g;
    auto * y = g.add_time_rows(g.input(x), g.input(table), 3, 2);
    for (int64_t t = 0; t < 3; t++) {
        for (int64_t p = 0; p < 2; p++) {
            for (int64_t j = 0; j < 4; j++) {
                CHECK(y->value(t * 2 + p, j) == doctest::Approx(x(t * 2 + p, j) + table(t, j)));
            }
        }
    }
    gradcheck([](Graph & g, std::vector<Graph::Node *> & in) {
        return pick(g, g.add_time_rows(in[0], in[1], 3, 2));
    }, {x, table});

    Graph g2;
    CHECK_THROWS_AS(g2.add_time_rows(g2.input(x), g2.input(Tensor::zeros({2, 4})), 3, 2),
                    config_error);
}

TEST_CASE("mean cross entropy: uniform logits give ln(V)") {
    Graph g;
    Tensor logits = Tensor::full({3, 7}, 0.42);
    auto * l = g.mean_cross_entropy(g.input(logits), {0, 3, 6});
    CHECK(l->value.data[0] == doctest::Approx(std::log(7.0)).epsilon(1e-12));
}

TEST_CASE("mean cross entropy: near-one-hot logits drive loss to zero") {
    Graph g;
    Tensor logits = Tensor::zeros({2, 4});
    logits(0, 1) = 100.0;
    logits(1, 3) = 100.0;
    auto * l = g.mean_cross_entropy(g.input(logits), {1, 3});
    CHECK(l->value.data[0] < 1e-12);
}

TEST_CASE("mean cross entropy: gradient") {
    Rng rng(9);
    Tensor logits = random_tensor({4, 6}, rng);
    gradcheck([](Graph & g, std::vector<Graph::Node *> & in) {
        return g.mean_cross_entropy(in[0], {5, 0, 2, 2});
    }, {logits});
}

TEST_CASE("attend: identical key/value tokens reduce to the value row") {
    Rng rng(10);
    Tensor q = random_tensor({3, 8}, rng);
    Tensor kv({5, 8});
    Rng rng2(11);
    Tensor row = random_tensor({1, 8}, rng2);
    for (int64_t i = 0; i < 5; i++) {
        for (int64_t j = 0; j < 8; j++) {
            kv(i, j) = row(0, j);
        }
    }
    Graph g;
    auto * out = g.attend(g.input(q), g.input(kv), g.input(kv), 2, false);
    for (int64_t i = 0; i < 3; i++) {
        for (int64_t j = 0; j < 8; j++) {
            CHECK(out->value(i, j) == doctest::Approx(row(0, j)).epsilon(1e-12));
        }
    }
}

TEST_CASE("attend: gradient, multi-head, causal and cross") {
    Rng rng(12);
    gradcheck([](Graph & g, std::vector<Graph::Node *> & in) {
        return pick(g, g.attend(in[0], in[1], in[2], 2, false));
    }, {random_tensor({2, 4}, rng), random_tensor({5, 4}, rng), random_tensor({5, 4}, rng)});

    gradcheck([](Graph & g, std::vector<Graph::Node *> & in) {
        return pick(g, g.attend(in[0], in[1], in[2], 2, true));
    }, {random_tensor({4, 4}, rng), random_tensor({4, 4}, rng), random_tensor({4, 4}, rng)});
}

TEST_CASE("parameters accumulate gradient; frozen parameters never do") {
    Rng rng(13);
    Parameter w("w", random_tensor({3, 3}, rng), true);
    Parameter frozen("frozen", random_tensor({3, 3}, rng), false);

    Graph g;
    auto * y = g.matmul(g.param(w), g.param(frozen));
    auto * loss = g.sum_all(y);
    g.backward(loss);

    double wsum = 0.0;
    for (double v : w.grad.data) {
        wsum += std::abs(v);
    }
    CHECK(wsum > 0.0);
    for (double v : frozen.grad.data) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("gradients accumulate across repeated use of one node") {
    Tensor a = Tensor::full({2, 2}, 1.5);
    Graph g;
    auto * x = g.input(a, true);
    auto * loss = g.sum_all(g.add(x, x));
    g.backward(loss);
    for (double v : x->grad.data) {
        CHECK(v == doctest::Approx(2.0));
    }
}

TEST_CASE("shape errors are config errors") {
    Graph g;
    auto * a = g.input(Tensor::zeros({2, 3}));
    auto * b = g.input(Tensor::zeros({2, 3}));
    CHECK_THROWS_AS(g.matmul(a, b), config_error);
    CHECK_THROWS_AS(g.add(a, g.input(Tensor::zeros({3, 2}))), config_error);
    CHECK_THROWS_AS(g.causal_mask(a), config_error);
    CHECK_THROWS_AS(g.attend(a, b, b, 2, false), config_error);
}

} // TEST_SUITE
