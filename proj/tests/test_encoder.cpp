#include "doctest.h"

#include "ovhhir/encoder.hpp"
#include "helpers.hpp"

#include <cmath>

using namespace ovhhir;
namespace ht = ovhhir::testing;

namespace {

// Reference transformer forward written with plain loops so it shares no
// code with the graph ops. Matrices are vector<vector<double>>.
using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor & t) {
    Mat m(size_t(t.rows()), std::vector<double>(size_t(t.cols())));
    for (int64_t i = 0; i < t.rows(); ++i)
        for (int64_t j = 0; j < t.cols(); ++j) m[size_t(i)][size_t(j)] = t(i, j);
    return m;
}

Mat ref_matmul(const Mat & a, const Mat & b) {
    size_t n = a.size(), k = b.size(), m = b[0].size();
    Mat c(n, std::vector<double>(m, 0.0));
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j) {
            double s = 0;
            for (size_t l = 0; l < k; ++l) s += a[i][l] * b[l][j];
            c[i][j] = s;
        }
    return c;
}

void ref_add_bias(Mat & a, const std::vector<double> & b) {
    for (auto & row : a)
        for (size_t j = 0; j < row.size(); ++j) row[j] += b[j];
}

Mat ref_layernorm(const Mat & a, const std::vector<double> & gain,
                  const std::vector<double> & bias) {
    Mat out = a;
    for (auto & row : out) {
        double mu = 0;
        for (double v : row) mu += v;
        mu /= double(row.size());
        double var = 0;
        for (double v : row) var += (v - mu) * (v - mu);
        var /= double(row.size());
        double inv = 1.0 / std::sqrt(var + 1e-5);
        for (size_t j = 0; j < row.size(); ++j) row[j] = (row[j] - mu) * inv * gain[j] + bias[j];
    }
    return out;
}

double ref_gelu(double x) {
    return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
}

Mat ref_attention(const Mat & q, const Mat & k, const Mat & v, int heads) {
    size_t M = q.size(), N = k.size(), d = q[0].size();
    size_t dh = d / size_t(heads);
    Mat out(M, std::vector<double>(d, 0.0));
    for (int h = 0; h < heads; ++h) {
        size_t off = size_t(h) * dh;
        for (size_t i = 0; i < M; ++i) {
            std::vector<double> scores(N);
            double mx = -1e300;
            for (size_t j = 0; j < N; ++j) {
                double s = 0;
                for (size_t l = 0; l < dh; ++l) s += q[i][off + l] * k[j][off + l];
                scores[j] = s / std::sqrt(double(dh));
                mx = std::max(mx, scores[j]);
            }
            double z = 0;
            for (auto & s : scores) {
                s = std::exp(s - mx);
                z += s;
            }
            for (size_t j = 0; j < N; ++j)
                for (size_t l = 0; l < dh; ++l) out[i][off + l] += scores[j] / z * v[j][off + l];
        }
    }
    return out;
}

std::vector<double> vec_of(const ParamStore & store, const std::string & name) {
    return store.at(name).value.data;
}

// Full reference encode of one frame straight from the parameter store.
Mat ref_encode(const ParamStore & store, const std::string & prefix, const EncoderConfig & cfg,
               const FrameSequence & clip, int64_t t) {
    int64_t grid = cfg.frame_size / cfg.patch;
    Mat x(size_t(grid * grid), std::vector<double>(size_t(cfg.patch_dim())));
    for (int64_t pr = 0; pr < grid; ++pr)
        for (int64_t pc = 0; pc < grid; ++pc) {
            size_t col = 0;
            for (int64_t y = 0; y < cfg.patch; ++y)
                for (int64_t xx = 0; xx < cfg.patch; ++xx)
                    for (int64_t c = 0; c < 3; ++c)
                        x[size_t(pr * grid + pc)][col++] =
                            clip.at(t, pr * cfg.patch + y, pc * cfg.patch + xx, c) / 255.0 * 2.0 -
                            1.0;
        }

    x = ref_matmul(x, to_mat(store.at(prefix + ".patch_embed.w").value));
    ref_add_bias(x, vec_of(store, prefix + ".patch_embed.b"));
    Mat pos = to_mat(store.at(prefix + ".pos").value);
    for (size_t i = 0; i < x.size(); ++i)
        for (size_t j = 0; j < x[i].size(); ++j) x[i][j] += pos[i][j];

    for (int64_t b = 0; b < cfg.depth; ++b) {
        std::string blk = prefix + ".blk" + std::to_string(b);
        Mat pre = ref_layernorm(x, vec_of(store, blk + ".ln1.gain"), vec_of(store, blk + ".ln1.bias"));
        Mat q = ref_matmul(pre, to_mat(store.at(blk + ".attn.wq").value));
        ref_add_bias(q, vec_of(store, blk + ".attn.bq"));
        Mat k = ref_matmul(pre, to_mat(store.at(blk + ".attn.wk").value));
        Mat v = ref_matmul(pre, to_mat(store.at(blk + ".attn.wv").value));
        ref_add_bias(v, vec_of(store, blk + ".attn.bv"));
        Mat a = ref_attention(q, k, v, int(cfg.heads));
        Mat proj = ref_matmul(a, to_mat(store.at(blk + ".attn.wo").value));
        ref_add_bias(proj, vec_of(store, blk + ".attn.bo"));
        for (size_t i = 0; i < x.size(); ++i)
            for (size_t j = 0; j < x[i].size(); ++j) x[i][j] += proj[i][j];

        Mat pre2 = ref_layernorm(x, vec_of(store, blk + ".ln2.gain"), vec_of(store, blk + ".ln2.bias"));
        Mat h = ref_matmul(pre2, to_mat(store.at(blk + ".ffn.w1").value));
        ref_add_bias(h, vec_of(store, blk + ".ffn.b1"));
        for (auto & row : h)
            for (auto & val : row) val = ref_gelu(val);
        Mat out = ref_matmul(h, to_mat(store.at(blk + ".ffn.w2").value));
        ref_add_bias(out, vec_of(store, blk + ".ffn.b2"));
        for (size_t i = 0; i < x.size(); ++i)
            for (size_t j = 0; j < x[i].size(); ++j) x[i][j] += out[i][j];
    }
    return ref_layernorm(x, vec_of(store, prefix + ".ln_f.gain"), vec_of(store, prefix + ".ln_f.bias"));
}

} // namespace

TEST_SUITE("encoder") {

TEST_CASE("token grid shape follows the patch size") {
    for (int64_t patch : {4, 8, 16, 32}) {
        EncoderConfig cfg;
        cfg.frame_size = 32;
        cfg.patch = patch;
        cfg.dim = 16;
        cfg.depth = 1;
        cfg.heads = 2;
        int64_t grid = 32 / patch;
        CHECK(cfg.patches_per_frame() == grid * grid);

        ParamStore store;
        FrameEncoder enc("encoder.person", cfg);
        enc.register_params(store, Rng(5));
        Rng rng(77);
        FrameSequence clip = ht::random_clip(rng, 2, 32, 32);
        Tensor tokens = enc.encode_frame_values(store, clip, 0);
        CHECK(tokens.shape == std::vector<int64_t>{grid * grid, 16});
        CHECK(tokens.all_finite());
    }
}

TEST_CASE("matches an independently written reference forward") {
    EncoderConfig cfg;
    cfg.frame_size = 16;
    cfg.patch = 8;
    cfg.dim = 8;
    cfg.depth = 2;
    cfg.heads = 2;

    ParamStore store;
    FrameEncoder enc("encoder.person", cfg);
    enc.register_params(store, Rng(11));

    Rng rng(123);
    FrameSequence clip = ht::random_clip(rng, 3, 16, 16);
    for (int64_t t = 0; t < clip.t; ++t) {
        Tensor got = enc.encode_frame_values(store, clip, t);
        Mat want = ref_encode(store, "encoder.person", cfg, clip, t);
        REQUIRE(got.rows() == int64_t(want.size()));
        REQUIRE(got.cols() == int64_t(want[0].size()));
        for (int64_t i = 0; i < got.rows(); ++i)
            for (int64_t j = 0; j < got.cols(); ++j)
                CHECK(got(i, j) == doctest::Approx(want[size_t(i)][size_t(j)]).epsilon(1e-9));
    }
}

TEST_CASE("pure function of the frame") {
    ParamStore store;
    FrameEncoder enc("encoder.person", {});
    enc.register_params(store, Rng(3));
    Rng rng(9);
    FrameSequence clip = ht::random_clip(rng, 1, 32, 32);
    Tensor a = enc.encode_frame_values(store, clip, 0);
    Tensor b = enc.encode_frame_values(store, clip, 0);
    CHECK(a.data == b.data);
    CHECK(a.checksum() == b.checksum());
}

TEST_CASE("person and background kinds are independently seeded") {
    ParamStore store;
    FrameEncoder person("encoder.person", {});
    FrameEncoder bg("encoder.bg", {});
    Rng root(3);
    person.register_params(store, root);
    bg.register_params(store, root);
    CHECK(store.checksum("encoder.person") != store.checksum("encoder.bg"));

    Rng rng(10);
    FrameSequence clip = ht::random_clip(rng, 1, 32, 32);
    CHECK(person.encode_frame_values(store, clip, 0).data !=
          bg.encode_frame_values(store, clip, 0).data);
}

TEST_CASE("seed controls the weights, registration order does not") {
    FrameEncoder enc("encoder.person", {});
    ParamStore a, b, c;
    enc.register_params(a, Rng(1));
    enc.register_params(b, Rng(1));
    enc.register_params(c, Rng(2));
    CHECK(a.checksum() == b.checksum());
    CHECK(a.checksum() != c.checksum());

    // same root seed, params pulled in a different order: bg first, person second
    ParamStore ordered, swapped;
    FrameEncoder bg("encoder.bg", {});
    Rng root(1);
    enc.register_params(ordered, root);
    bg.register_params(ordered, root);
    bg.register_params(swapped, root);
    enc.register_params(swapped, root);
    CHECK(ordered.checksum() == swapped.checksum());
}

TEST_CASE("frames are encoded independently, so reordering commutes") {
    ParamStore store;
    FrameEncoder enc("encoder.person", {});
    enc.register_params(store, Rng(4));
    Rng rng(21);
    FrameSequence clip = ht::random_clip(rng, 4, 32, 32);

    std::vector<int64_t> perm = {2, 0, 3, 1};
    FrameSequence shuffled = take_frames(clip, perm);

    int64_t P = enc.config().patches_per_frame();
    int64_t d = enc.config().dim;
    Tensor base = enc.encode_sequence(store, clip);
    Tensor perm_enc = enc.encode_sequence(store, shuffled);
    REQUIRE(base.shape == std::vector<int64_t>{4 * P, d});
    for (size_t ti = 0; ti < perm.size(); ++ti)
        for (int64_t p = 0; p < P; ++p)
            for (int64_t j = 0; j < d; ++j)
                CHECK(perm_enc(int64_t(ti) * P + p, j) == base(perm[ti] * P + p, j));
}

TEST_CASE("weights stay frozen through encoding and backward") {
    ParamStore store;
    FrameEncoder enc("encoder.person", {});
    enc.register_params(store, Rng(6));
    for (const auto * p : store.all()) CHECK_FALSE(p->trainable);

    uint64_t before = store.checksum();
    Rng rng(31);
    FrameSequence clip = ht::random_clip(rng, 2, 32, 32);
    Graph g;
    Graph::Node * tokens = enc.encode_frame(g, store, clip, 1);
    g.backward(g.sum_all(tokens));
    CHECK(store.checksum() == before);
    for (const auto * p : store.all())
        for (double gv : p->grad.data) CHECK(gv == 0.0);
}

TEST_CASE("config and input validation") {
    EncoderConfig bad;
    bad.frame_size = 30;
    bad.patch = 8;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = {};
    bad.dim = 30;
    bad.heads = 4;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = {};
    bad.depth = 0;
    CHECK_THROWS_AS(bad.validate(), config_error);

    ParamStore store;
    FrameEncoder enc("encoder.person", {});
    enc.register_params(store, Rng(8));
    Rng rng(2);
    FrameSequence small = ht::random_clip(rng, 1, 16, 16);
    CHECK_THROWS_WITH_AS(enc.encode_frame_values(store, small, 0),
                         doctest::Contains("expects 32x32"), config_error);
    FrameSequence ok = ht::random_clip(rng, 2, 32, 32);
    CHECK_THROWS_AS(enc.encode_frame_values(store, ok, 2), config_error);
    CHECK_THROWS_AS(enc.encode_frame_values(store, ok, -1), config_error);
}

TEST_CASE("parameter store basics") {
    ParamStore store;
    Parameter & p = store.add("branch.x", Tensor::full({2, 2}, 1.0), true);
    CHECK_THROWS_AS(store.add("branch.x", Tensor::zeros({1}), true), config_error);
    CHECK_THROWS_AS(store.at("missing"), config_error);
    CHECK(store.has("branch.x"));
    CHECK(store.numel() == 4);

    p.grad.data[0] = 5.0;
    store.zero_grads();
    CHECK(store.at("branch.x").grad.data[0] == 0.0);

    uint64_t c1 = store.checksum();
    store.at("branch.x").value.data[0] = 2.0;
    CHECK(store.checksum() != c1);
}

TEST_CASE("checkpoint round-trip with per-array checksums") {
    ht::TempDir tmp;
    auto path = tmp.path() / "model.ckpt";

    ParamStore store;
    FrameEncoder enc("encoder.person", {});
    enc.register_params(store, Rng(12));
    Rng r(5);
    store.add("branch.proj.w", Tensor::randn({8, 8}, r, 0.1), true);
    uint64_t want = store.checksum();

    save_checkpoint(store, path, R"({"seed": 12, "note": "demo"})");

    // same architecture, different weights; load must restore exactly
    ParamStore other;
    enc.register_params(other, Rng(99));
    Rng r2(6);
    other.add("branch.proj.w", Tensor::randn({8, 8}, r2, 0.1), true);
    CHECK(other.checksum() != want);
    std::string meta = load_checkpoint(other, path);
    CHECK(other.checksum() == want);
    CHECK(meta.find("\"seed\":12") != std::string::npos);
    CHECK(read_checkpoint_meta(path) == meta);
}

TEST_CASE("checkpoint mismatches name the parameter") {
    ht::TempDir tmp;
    auto path = tmp.path() / "model.ckpt";
    ParamStore store;
    Rng r(5);
    store.add("branch.a", Tensor::randn({4, 4}, r, 1.0), true);
    store.add("branch.b", Tensor::randn({2}, r, 1.0), true);
    save_checkpoint(store, path, "{}");

    ParamStore wrong_shape;
    Rng r2(5);
    wrong_shape.add("branch.a", Tensor::randn({4, 5}, r2, 1.0), true);
    wrong_shape.add("branch.b", Tensor::randn({2}, r2, 1.0), true);
    CHECK_THROWS_WITH_AS(load_checkpoint(wrong_shape, path), doctest::Contains("branch.a"),
                         data_error);

    ParamStore missing;
    Rng r3(5);
    missing.add("branch.a", Tensor::randn({4, 4}, r3, 1.0), true);
    CHECK_THROWS_AS(load_checkpoint(missing, path), data_error);

    ParamStore extra;
    Rng r4(5);
    extra.add("branch.a", Tensor::randn({4, 4}, r4, 1.0), true);
    extra.add("branch.b", Tensor::randn({2}, r4, 1.0), true);
    extra.add("branch.c", Tensor::randn({2}, r4, 1.0), true);
    CHECK_THROWS_AS(load_checkpoint(extra, path), data_error);
}

TEST_CASE("checkpoint corruption is caught") {
    ht::TempDir tmp;
    auto path = tmp.path() / "model.ckpt";
    ParamStore store;
    Rng r(5);
    store.add("branch.a", Tensor::randn({8, 8}, r, 1.0), true);
    save_checkpoint(store, path, "{}");

    std::string raw = ht::read_file(path);
    // flip one byte inside the weight payload
    std::string bad = raw;
    bad[bad.size() - 5] ^= 0x40;
    ht::write_file(path, bad);
    CHECK_THROWS_WITH_AS(load_checkpoint(store, path), doctest::Contains("checksum"), data_error);

    ht::write_file(path, raw.substr(0, raw.size() - 13));
    CHECK_THROWS_WITH_AS(load_checkpoint(store, path), doctest::Contains("truncated"), data_error);

    ht::write_file(path, raw + "x");
    CHECK_THROWS_WITH_AS(load_checkpoint(store, path), doctest::Contains("trailing"), data_error);

    ht::write_file(path, "NOTMAGIC" + raw.substr(8));
    CHECK_THROWS_WITH_AS(load_checkpoint(store, path), doctest::Contains("magic"), data_error);

    CHECK_THROWS_AS(load_checkpoint(store, tmp.path() / "missing.ckpt"), data_error);
}

} // TEST_SUITE
