#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "physiowave/ops.hpp"

using namespace pwv;
using D = double;
using V = Var<double>;

namespace {

Tensor<D> random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<D> t(shape);
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// Independent oracle for the decimating depthwise convolution (Eq-style
// direct summation with right zero padding).
Tensor<D> conv_down2_oracle(const Tensor<D>& x, const Tensor<D>& k) {
    std::size_t C = x.shape[0], T = x.shape[1], K = k.shape[1];
    Tensor<D> out({C, T / 2});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t n = 0; n < T / 2; ++n)
            for (std::size_t u = 0; u < K; ++u) {
                std::size_t idx = 2 * n + u;
                double xv = idx < T ? x.at(c, idx) : 0.0;
                out.at(c, n) += xv * k.at(c, u);
            }
    return out;
}

}  // namespace

TEST_CASE("affine identity and hand-evaluated product") {
    Tensor<D> eye({2, 2});
    eye.at(0, 0) = eye.at(1, 1) = 1.0;
    auto y = affine(V::constant(eye), V::constant(eye), V::constant(Tensor<D>({2})));
    for (std::size_t i = 0; i < 4; ++i) REQUIRE(y.value()[i] == Catch::Approx(eye[i]));

    auto y2 = affine(V::constant(Tensor<D>({1, 2}, {1.0, 2.0})),
                     V::constant(Tensor<D>({2, 1}, {1.0, 1.0})),
                     V::constant(Tensor<D>({1}, {0.0})));
    REQUIRE(y2.value()[0] == Catch::Approx(3.0));
}

TEST_CASE("affine gradient matches central finite differences") {
    Rng rng(7);
    auto x = V::leaf(random_tensor({3, 4}, rng));
    auto w = V::leaf(random_tensor({4, 5}, rng));
    auto b = V::leaf(random_tensor({5}, rng));
    double err = grad_check<D>(
        [](const std::vector<V>& in) { return sum_all(affine(in[0], in[1], in[2])); }, {x, w, b});
    REQUIRE(err < 1e-4);
}

TEST_CASE("affine rejects shape mismatch") {
    auto x = V::constant(Tensor<D>({2, 3}));
    auto w = V::constant(Tensor<D>({4, 5}));
    auto b = V::constant(Tensor<D>({5}));
    REQUIRE_THROWS_AS(affine(x, w, b), ShapeError);
}

TEST_CASE("conv1d_depthwise_down2 constant input with Haar taps") {
    double c = 1.7;
    double r = 1.0 / std::sqrt(2.0);
    Tensor<D> x({2, 16}, std::vector<D>(32, c));
    Tensor<D> k({2, 2}, {r, r, r, r});
    auto out = conv1d_depthwise_down2(V::constant(x), V::constant(k));
    REQUIRE(out.value().shape == std::vector<std::size_t>{2, 8});
    for (auto v : out.value().data) REQUIRE(v == Catch::Approx(c * std::sqrt(2.0)).margin(1e-12));
}

TEST_CASE("conv1d_depthwise_down2 output length is floor(T/2)") {
    Rng rng(3);
    auto out = conv1d_depthwise_down2(V::constant(random_tensor({1, 1024}, rng)),
                                      V::constant(random_tensor({1, 16}, rng)));
    REQUIRE(out.value().shape[1] == 512);
}

TEST_CASE("conv1d_depthwise_down2 equals direct-summation oracle") {
    Rng rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        auto x = random_tensor({3, static_cast<std::size_t>(101 + 2 * trial)}, rng);
        auto k = random_tensor({3, 7}, rng);
        auto got = conv1d_depthwise_down2(V::constant(x), V::constant(k));
        auto want = conv_down2_oracle(x, k);
        REQUIRE(got.value().same_shape(want));
        for (std::size_t i = 0; i < want.size(); ++i)
            REQUIRE(std::fabs(got.value()[i] - want[i]) <= 1e-12);
    }
}

TEST_CASE("conv1d_depthwise_down2 gradients pass finite differences") {
    Rng rng(13);
    auto x = V::leaf(random_tensor({2, 20}, rng));
    auto k = V::leaf(random_tensor({2, 5}, rng));
    double err = grad_check<D>(
        [](const std::vector<V>& in) { return mean_all(mul(conv1d_depthwise_down2(in[0], in[1]),
                                                           conv1d_depthwise_down2(in[0], in[1]))); },
        {x, k});
    REQUIRE(err < 1e-4);
}

TEST_CASE("upsample_nearest2 duplicates samples") {
    auto out = upsample_nearest2(V::constant(Tensor<D>({1, 2}, {3.0, 5.0})));
    REQUIRE(out.value().data == std::vector<D>{3.0, 3.0, 5.0, 5.0});

    Tensor<D> c({2, 8}, std::vector<D>(16, 4.25));
    auto out2 = upsample_nearest2(V::constant(c));
    for (auto v : out2.value().data) REQUIRE(v == 4.25);
}

TEST_CASE("down2 of up2 reproduces the index-map oracle") {
    Rng rng(17);
    auto x = random_tensor({2, 64}, rng);
    auto up = upsample_nearest2(V::constant(x));
    // plain stride-2 pick, the (downarrow_2 x)[n] = x[2n] definition
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t n = 0; n < 64; ++n)
            REQUIRE(up.value().at(c, 2 * n) == x.at(c, n));
}

TEST_CASE("upsample gradient sums pairs") {
    Rng rng(19);
    auto x = V::leaf(random_tensor({1, 10}, rng));
    double err = grad_check<D>(
        [](const std::vector<V>& in) { return mean_all(mul(upsample_nearest2(in[0]), upsample_nearest2(in[0]))); },
        {x});
    REQUIRE(err < 1e-4);
}

TEST_CASE("softmax symmetric, closed-form, and shift-invariant") {
    auto u = softmax(V::constant(Tensor<D>({4})));
    for (auto v : u.value().data) REQUIRE(v == Catch::Approx(0.25).margin(1e-12));

    auto w = softmax(V::constant(Tensor<D>({2}, {std::log(2.0), 0.0})));
    REQUIRE(w.value()[0] == Catch::Approx(2.0 / 3.0).margin(1e-12));
    REQUIRE(w.value()[1] == Catch::Approx(1.0 / 3.0).margin(1e-12));

    Rng rng(23);
    auto logits = random_tensor({6}, rng, -4, 4);
    auto a = softmax(V::constant(logits));
    for (auto& v : logits.data) v += 1234.5;
    auto b = softmax(V::constant(logits));
    for (std::size_t i = 0; i < 6; ++i) REQUIRE(std::fabs(a.value()[i] - b.value()[i]) <= 1e-12);
}

TEST_CASE("softmax rows sum to one and stay positive") {
    Rng rng(29);
    for (int trial = 0; trial < 50; ++trial) {
        auto p = softmax(V::constant(random_tensor({4, 9}, rng, -30, 30)));
        for (std::size_t i = 0; i < 4; ++i) {
            double s = 0;
            for (std::size_t j = 0; j < 9; ++j) {
                REQUIRE(p.value().at(i, j) > 0.0);
                s += p.value().at(i, j);
            }
            REQUIRE(std::fabs(s - 1.0) <= 1e-6);
        }
    }
}

TEST_CASE("softmax gradient") {
    Rng rng(31);
    auto x = V::leaf(random_tensor({3, 5}, rng));
    double err = grad_check<D>(
        [](const std::vector<V>& in) { return mean_all(mul(softmax(in[0]), softmax(in[0]))); }, {x});
    REQUIRE(err < 1e-4);
}

TEST_CASE("layer_norm normalizes and guards degenerate variance") {
    auto g = V::constant(Tensor<D>({3}, {1.0, 1.0, 1.0}));
    auto d = V::constant(Tensor<D>({3}));
    auto y = layer_norm(V::constant(Tensor<D>({1, 3}, {1.0, 2.0, 3.0})), g, d);
    double mean = (y.value()[0] + y.value()[1] + y.value()[2]) / 3.0;
    double var = 0;
    for (int i = 0; i < 3; ++i) var += (y.value()[i] - mean) * (y.value()[i] - mean);
    var /= 3.0;
    REQUIRE(mean == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(var == Catch::Approx(1.0).margin(1e-4));  // eps in the denominator

    auto z = layer_norm(V::constant(Tensor<D>({1, 3}, {5.0, 5.0, 5.0})), g, d);
    for (auto v : z.value().data) REQUIRE(v == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("layer_norm gradient") {
    Rng rng(37);
    auto x = V::leaf(random_tensor({4, 6}, rng));
    auto g = V::leaf(random_tensor({6}, rng, 0.5, 1.5));
    auto d = V::leaf(random_tensor({6}, rng));
    double err = grad_check<D>(
        [](const std::vector<V>& in) {
            auto y = layer_norm(in[0], in[1], in[2]);
            return mean_all(mul(y, y));
        },
        {x, g, d});
    REQUIRE(err < 1e-4);
}

TEST_CASE("attention with a single key returns the value row") {
    Rng rng(41);
    auto q = V::constant(random_tensor({1, 8}, rng));
    auto k = V::constant(random_tensor({1, 8}, rng));
    auto vv = random_tensor({1, 8}, rng);
    auto out = attention(q, k, V::constant(vv), 2);
    for (std::size_t i = 0; i < 8; ++i) REQUIRE(out.value()[i] == Catch::Approx(vv[i]).margin(1e-14));
}

TEST_CASE("attention over identical value rows returns that row") {
    Rng rng(43);
    auto q = V::constant(random_tensor({5, 8}, rng));
    auto k = V::constant(random_tensor({5, 8}, rng));
    Tensor<D> vv({5, 8});
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 8; ++j) vv.at(i, j) = 0.1 * static_cast<double>(j) - 0.3;
    auto out = attention(q, k, V::constant(vv), 4);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 8; ++j) REQUIRE(out.value().at(i, j) == Catch::Approx(vv.at(0, j)).margin(1e-12));
}

TEST_CASE("rope dot products depend only on relative position") {
    Rng rng(47);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor<D> pair = random_tensor({2, 16}, rng);
        double m = rng.uniform(0, 50), n = rng.uniform(0, 50), s = rng.uniform(-20, 20);
        auto a = rope_rotate(V::constant(pair), {m, n});
        auto b = rope_rotate(V::constant(pair), {m + s, n + s});
        double da = 0, db = 0;
        for (std::size_t j = 0; j < 16; ++j) {
            da += a.value().at(0, j) * a.value().at(1, j);
            db += b.value().at(0, j) * b.value().at(1, j);
        }
        REQUIRE(std::fabs(da - db) <= 1e-10);
    }
}

TEST_CASE("rope preserves per-row norms") {
    Rng rng(53);
    auto x = random_tensor({6, 12}, rng);
    auto y = rope_rotate(V::constant(x), {0.0, 3.0, 7.5, 11.0, 100.0, 1000.0});
    for (std::size_t i = 0; i < 6; ++i) {
        double nx = 0, ny = 0;
        for (std::size_t j = 0; j < 12; ++j) {
            nx += x.at(i, j) * x.at(i, j);
            ny += y.value().at(i, j) * y.value().at(i, j);
        }
        REQUIRE(std::fabs(std::sqrt(nx) - std::sqrt(ny)) <= 1e-10);
    }
    // position 0 is the identity rotation
    auto z = rope_rotate(V::constant(x), {0, 0, 0, 0, 0, 0});
    for (std::size_t i = 0; i < x.size(); ++i) REQUIRE(z.value()[i] == x[i]);
}

TEST_CASE("attention gradients with and without rope") {
    Rng rng(59);
    auto q = V::leaf(random_tensor({4, 8}, rng));
    auto k = V::leaf(random_tensor({4, 8}, rng));
    auto v = V::leaf(random_tensor({4, 8}, rng));
    for (bool rope : {false, true}) {
        double err = grad_check<D>(
            [rope](const std::vector<V>& in) {
                auto o = attention(in[0], in[1], in[2], 2, rope);
                return mean_all(mul(o, o));
            },
            {q, k, v});
        REQUIRE(err < 1e-4);
    }
}

TEST_CASE("attention rejects dimension mismatch") {
    auto q = V::constant(Tensor<D>({4, 6}));
    REQUIRE_THROWS_AS(attention(q, q, q, 4), ShapeError);  // 6 % 4 != 0
    auto r = V::constant(Tensor<D>({4, 8}));
    REQUIRE_THROWS_AS(attention(r, r, r, 8, true), ShapeError);  // odd per-head dim for rope
}

TEST_CASE("smooth_l1 piecewise values") {
    Tensor<D> t({1}, {0.5});
    REQUIRE(smooth_l1(V::constant(t), t).item() == 0.0);
    REQUIRE(smooth_l1(V::constant(Tensor<D>({1}, {2.5})), Tensor<D>({1}, {0.5})).item() == Catch::Approx(1.5));
    REQUIRE(smooth_l1(V::constant(Tensor<D>({1}, {1.0})), Tensor<D>({1}, {0.5})).item() == Catch::Approx(0.125));
}

TEST_CASE("smooth_l1 gradient") {
    Rng rng(61);
    auto p = V::leaf(random_tensor({3, 4}, rng, -3, 3));
    Tensor<D> tgt = random_tensor({3, 4}, rng, -3, 3);
    double err = grad_check<D>(
        [&tgt](const std::vector<V>& in) { return smooth_l1(in[0], tgt); }, {p});
    REQUIRE(err < 1e-4);
}

TEST_CASE("grad_check flags a corrupted gradient") {
    Rng rng(67);
    Tensor<D> init = random_tensor({4}, rng, 0.5, 1.5);
    auto x = V::leaf(init);
    // op with a deliberately wrong backward: gradient inflated by 10%
    auto broken_square = [](const V& a) {
        Tensor<D> out = a.value();
        for (auto& v : out.data) v = v * v;
        return make_op<D>("broken_square", std::move(out), {a}, [](Node<D>& n) {
            for (std::size_t i = 0; i < n.grad.size(); ++i)
                n.parents[0]->grad[i] += 1.1 * n.grad[i] * 2.0 * n.parents[0]->value[i];
        });
    };
    double err = grad_check<D>(
        [&](const std::vector<V>& in) { return sum_all(broken_square(in[0])); }, {x});
    REQUIRE(err > 1e-2);
}

TEST_CASE("remaining kernel ops pass gradient checks") {
    Rng rng(71);
    auto check = [&](const char* what, const std::function<V(const std::vector<V>&)>& fn,
                     std::vector<V> inputs) {
        INFO(what);
        REQUIRE(grad_check<D>(fn, std::move(inputs)) < 1e-4);
    };
    check("mul+add+sub+scale",
          [](const std::vector<V>& in) {
              return mean_all(sub(mul(in[0], in[1]), scale(add(in[0], in[1]), 0.7)));
          },
          {V::leaf(random_tensor({3, 3}, rng)), V::leaf(random_tensor({3, 3}, rng))});
    check("matmul/transpose",
          [](const std::vector<V>& in) { return mean_all(matmul(in[0], transpose(in[1]))); },
          {V::leaf(random_tensor({3, 4}, rng)), V::leaf(random_tensor({5, 4}, rng))});
    check("sigmoid/gelu",
          [](const std::vector<V>& in) { return mean_all(mul(sigmoid(in[0]), gelu(in[0]))); },
          {V::leaf(random_tensor({4, 4}, rng))});
    check("broadcast and reductions",
          [](const std::vector<V>& in) {
              auto m = add(bcast_col(rows_mean(in[0]), 5), bcast_row(cols_mean(in[0]), 4));
              return mean_all(mul(m, in[0]));
          },
          {V::leaf(random_tensor({4, 5}, rng))});
    check("concat/slice/repeat/patchify",
          [](const std::vector<V>& in) {
              auto c = concat_rows<D>({in[0], in[1]});
              auto s = slice_rows(c, 1, 3);
              auto r = repeat_rows(s, 2);
              return mean_all(mul(patchify_rows(r, 2), patchify_rows(r, 2)));
          },
          {V::leaf(random_tensor({2, 6}, rng)), V::leaf(random_tensor({2, 6}, rng))});
    check("segment_mean/repeat_cols",
          [](const std::vector<V>& in) {
              return mean_all(mul(repeat_cols(segment_mean(in[0], 4), 4), in[0]));
          },
          {V::leaf(random_tensor({2, 16}, rng))});
    check("scale_var/one_minus",
          [](const std::vector<V>& in) {
              return mean_all(mul(scale_var(in[0], in[1]), one_minus(in[0])));
          },
          {V::leaf(random_tensor({3, 4}, rng)), V::leaf(random_tensor({1}, rng))});
    check("rope_rotate",
          [](const std::vector<V>& in) {
              auto r = rope_rotate(in[0], {0.0, 2.0, 5.0});
              return mean_all(mul(r, r));
          },
          {V::leaf(random_tensor({3, 8}, rng))});
    check("cross_entropy",
          [](const std::vector<V>& in) { return cross_entropy(in[0], {1, 0, 2}, 0.1); },
          {V::leaf(random_tensor({3, 4}, rng))});
    check("masked smooth_l1",
          [&](const std::vector<V>& in) {
              static Tensor<D> tgt = random_tensor({4, 3}, rng);
              return smooth_l1_masked_rows(in[0], tgt, {1, 0, 1, 0});
          },
          {V::leaf(random_tensor({4, 3}, rng))});
}

TEST_CASE("parameters accumulate gradients across uses and zero explicitly") {
    Parameter<D> p("w", Tensor<D>({2}, {1.0, 2.0}));
    auto y = add(mul(p.var, p.var), p.var);  // y = w^2 + w, dy/dw = 2w + 1
    backward(sum_all(y));
    REQUIRE(p.grad()[0] == Catch::Approx(3.0));
    REQUIRE(p.grad()[1] == Catch::Approx(5.0));
    backward(sum_all(mul(p.var, p.var)));  // accumulates on top
    REQUIRE(p.grad()[0] == Catch::Approx(5.0));
    p.zero_grad();
    REQUIRE(p.grad()[0] == 0.0);
}

TEST_CASE("non-finite op output raises NumericError") {
    Tensor<D> big({2}, {1e308, 1e308});
    REQUIRE_THROWS_AS(add(V::constant(big), V::constant(big)), NumericError);
}
