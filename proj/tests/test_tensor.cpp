#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mbcr/gradcheck.hpp"
#include "mbcr/ops.hpp"
#include "oracles.hpp"

using namespace mbcr;

namespace {

Tensor row(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor(Shape{1, 1, 1, n}, std::move(v));
}

}  // namespace

TEST(Tensor, ShapeMustMatchData) {
    EXPECT_THROW(Tensor(Shape{2, 3}, std::vector<double>(5)), Error);
    EXPECT_EQ(Tensor(Shape{2, 3}).size(), 6u);
    EXPECT_THROW(Tensor(Shape{2, 3}).reshaped(Shape{4}), Error);
}

TEST(Conv2d, SlidingWindowExample) {
    Tensor out = conv2d(row({1, 2, 3, 4, 5}), row({1, 0, -1}), ConvOptions{});
    EXPECT_EQ(out.shape, (Shape{1, 1, 1, 3}));
    for (double v : out.data) EXPECT_DOUBLE_EQ(v, -2.0);
}

TEST(Conv2d, IdentityKernel) {
    std::mt19937_64 rng(1);
    Tensor x = oracle::random_normal({2, 1, 3, 7}, rng);
    Tensor out = conv2d(x, Tensor(Shape{1, 1, 1, 1}, 1.0), ConvOptions{});
    EXPECT_EQ(out, x);
}

TEST(Conv2d, PaperExtents) {
    EXPECT_EQ(conv_output_extent(2000, 50, 2, Padding::valid), 976u);
    EXPECT_EQ(conv_output_extent(464, 50, 1, Padding::same), 464u);
    EXPECT_EQ(same_padding(50).before, 24u);
    EXPECT_EQ(same_padding(50).after, 25u);
}

TEST(Conv2d, Errors) {
    Tensor x(Shape{1, 2, 1, 10});
    try {
        conv2d(x, Tensor(Shape{1, 3, 1, 3}), ConvOptions{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_STREQ(e.what(), "channel mismatch");
    }
    try {
        conv2d(x, Tensor(Shape{1, 2, 1, 11}), ConvOptions{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_STREQ(e.what(), "kernel exceeds input");
    }
    EXPECT_THROW(conv2d(x, Tensor(Shape{1, 2, 1, 3}), ConvOptions{Stride{1, 2}, Padding::same}), Error);
    EXPECT_THROW(conv2d(x, Tensor(Shape{1, 2, 1, 3}), ConvOptions{Stride{1, 0}, Padding::valid}), Error);
}

TEST(Conv2d, ExtentPropertySweep) {
    for (std::size_t h = 1; h <= 40; ++h)
        for (std::size_t k = 1; k <= h; ++k)
            for (std::size_t s = 1; s <= 4; ++s) {
                EXPECT_EQ(conv_output_extent(h, k, s, Padding::valid), (h - k) / s + 1);
                EXPECT_EQ(conv_output_extent(h, k, 1, Padding::same), h);
            }
}

TEST(Conv2d, MatchesNestedLoopOracle) {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<std::size_t> dim(1, 4);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = dim(rng) % 2 + 1, ci = dim(rng) % 3 + 1, co = dim(rng);
        const std::size_t h = dim(rng), w = 8 + dim(rng) * 6;
        const std::size_t kh = std::uniform_int_distribution<std::size_t>(1, h)(rng);
        const std::size_t kw = std::uniform_int_distribution<std::size_t>(1, 9)(rng);
        const bool same = trial % 2 == 0;
        const std::size_t sh = same ? 1 : dim(rng) % 2 + 1, sw = same ? 1 : dim(rng);
        Tensor x = oracle::random_normal({n, ci, h, w}, rng);
        Tensor k = oracle::random_normal({co, ci, kh, kw}, rng);
        Tensor got = conv2d(x, k, ConvOptions{Stride{sh, sw}, same ? Padding::same : Padding::valid});
        Tensor want = oracle::conv2d(x, k, sh, sw, same);
        ASSERT_EQ(got.shape, want.shape);
        EXPECT_LE(oracle::max_abs_diff(got, want), 1e-12);
    }
}

TEST(BatchNorm, ConstantInputNormalizesToZero) {
    Tape t;
    BatchNormStats stats(1);
    Var y = batchnorm(t.constant(Tensor(Shape{2, 1, 1, 3}, 3.0)), t.constant(Tensor(Shape{1}, 1.0)),
                      t.constant(Tensor(Shape{1}, 0.0)), stats, Mode::train);
    for (double v : y.value().data) EXPECT_EQ(v, 0.0);
}

TEST(BatchNorm, HandNormalizedPairAndAffine) {
    Tape t;
    BatchNormStats stats(1);
    BatchNormOptions opts;
    opts.eps = 1e-15;
    Tensor x(Shape{2, 1, 1, 1}, std::vector<double>{1.0, 3.0});
    Var y = batchnorm(t.constant(x), t.constant(Tensor(Shape{1}, 1.0)), t.constant(Tensor(Shape{1}, 0.0)), stats,
                      Mode::train, opts);
    EXPECT_NEAR(y.value()[0], -1.0, 1e-12);
    EXPECT_NEAR(y.value()[1], 1.0, 1e-12);
    Var z = batchnorm(t.constant(x), t.constant(Tensor(Shape{1}, 2.0)), t.constant(Tensor(Shape{1}, 5.0)), stats,
                      Mode::train, opts);
    EXPECT_NEAR(z.value()[0], 3.0, 1e-12);
    EXPECT_NEAR(z.value()[1], 7.0, 1e-12);
}

TEST(BatchNorm, RunningStatsAndEvalMode) {
    Tape t;
    BatchNormStats stats(1);
    Tensor x(Shape{2, 1, 1, 1}, std::vector<double>{1.0, 3.0});
    Var g = t.constant(Tensor(Shape{1}, 1.0)), b = t.constant(Tensor(Shape{1}, 0.0));
    batchnorm(t.constant(x), g, b, stats, Mode::train);
    EXPECT_DOUBLE_EQ(stats.running_mean[0], 0.9 * 0.0 + 0.1 * 2.0);
    EXPECT_DOUBLE_EQ(stats.running_var[0], 0.9 * 1.0 + 0.1 * 1.0);
    Var y = batchnorm(t.constant(x), g, b, stats, Mode::eval);
    EXPECT_NEAR(y.value()[0], (1.0 - 0.2) / std::sqrt(1.0 + 1e-5), 1e-12);
    const auto before = stats.running_mean;
    batchnorm(t.constant(x), g, b, stats, Mode::eval);
    EXPECT_EQ(stats.running_mean, before);
}

TEST(BatchNorm, TrainOutputIsStandardized) {
    std::mt19937_64 rng(5);
    Tensor x = oracle::random_normal({4, 3, 2, 25}, rng, 3.0);
    Tape t;
    BatchNormStats stats(3);
    Var y = batchnorm(t.constant(x), t.constant(Tensor(Shape{3}, 1.0)), t.constant(Tensor(Shape{3}, 0.0)), stats,
                      Mode::train);
    for (std::size_t c = 0; c < 3; ++c) {
        double s = 0, ss = 0;
        std::size_t m = 0;
        for (std::size_t n = 0; n < 4; ++n)
            for (std::size_t k = 0; k < 50; ++k, ++m) s += y.value().data[(n * 3 + c) * 50 + k];
        const double mean = s / static_cast<double>(m);
        for (std::size_t n = 0; n < 4; ++n)
            for (std::size_t k = 0; k < 50; ++k) {
                const double d = y.value().data[(n * 3 + c) * 50 + k] - mean;
                ss += d * d;
            }
        EXPECT_LT(std::abs(mean), 1e-9);
        EXPECT_NEAR(ss / static_cast<double>(m), 1.0, 1e-5 * 1.0 + 1e-6);
    }
}

TEST(BatchNorm, EmptyAxis) {
    Tape t;
    BatchNormStats stats(1);
    try {
        batchnorm(t.constant(Tensor(Shape{0, 1, 1, 1})), t.constant(Tensor(Shape{1}, 1.0)),
                  t.constant(Tensor(Shape{1})), stats, Mode::train);
        FAIL();
    } catch (const Error& e) {
        EXPECT_STREQ(e.what(), "empty normalization axis");
    }
}

TEST(Relu, DefinitionAndGradient) {
    Tape t;
    Var x = t.leaf(Tensor(Shape{3}, std::vector<double>{-1, 0, 2}));
    Var y = relu(x);
    EXPECT_EQ(y.value().data, (std::vector<double>{0, 0, 2}));
    t.backward(sum(y));
    EXPECT_EQ(t.grad(x), (std::vector<double>{0, 0, 1}));
}

TEST(Relu, DeadAndLinearRegions) {
    Tape t;
    Var neg = t.leaf(Tensor(Shape{4}, -2.0));
    Var pos = t.leaf(Tensor(Shape{4}, 2.0));
    Var yn = relu(neg), yp = relu(pos);
    t.backward(add(sum(yn), sum(yp)));
    for (double v : yn.value().data) EXPECT_EQ(v, 0.0);
    for (double v : t.grad(neg)) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(yp.value(), pos.value());
    for (double v : t.grad(pos)) EXPECT_EQ(v, 1.0);
}

TEST(Add, IdentitySymmetryAndLinearity) {
    std::mt19937_64 rng(3);
    Tensor a = oracle::random_normal({2, 5}, rng);
    Tape t;
    Var va = t.leaf(a), vb = t.leaf(a);
    EXPECT_EQ(add(va, t.constant(Tensor(Shape{2, 5}))).value(), a);
    Var s = add(va, vb);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(s.value()[i], 2.0 * a[i]);
    Tensor w = oracle::random_normal({2, 5}, rng);
    t.backward(weighted_sum(s, w));
    EXPECT_EQ(t.grad(va), w.data);
    EXPECT_EQ(t.grad(vb), w.data);
    EXPECT_THROW(add(va, t.constant(Tensor(Shape{5, 2}))), Error);
}

TEST(Dense, Examples) {
    Tape t;
    Var y = dense(t.constant(Tensor(Shape{1, 2}, std::vector<double>{1, 2})),
                  t.constant(Tensor(Shape{1, 2}, std::vector<double>{3, 4})),
                  t.constant(Tensor(Shape{1}, std::vector<double>{5})));
    EXPECT_DOUBLE_EQ(y.value()[0], 16.0);

    Tensor x(Shape{2, 2}, std::vector<double>{1.5, -2, 0.25, 7});
    Var id = dense(t.constant(x), t.constant(Tensor(Shape{2, 2}, std::vector<double>{1, 0, 0, 1})),
                   t.constant(Tensor(Shape{2})));
    EXPECT_EQ(id.value(), x);
    Var zb = dense(t.constant(x), t.constant(Tensor(Shape{3, 2})),
                   t.constant(Tensor(Shape{3}, std::vector<double>{1, 2, 3})));
    EXPECT_EQ(zb.value().data, (std::vector<double>{1, 2, 3, 1, 2, 3}));
    EXPECT_THROW(dense(t.constant(x), t.constant(Tensor(Shape{3, 3})), t.constant(Tensor(Shape{3}))), Error);
}

TEST(SoftmaxXent, Examples) {
    Tape t;
    const std::vector<int> zero{0};
    auto r = softmax_xent(t.constant(Tensor(Shape{1, 2}, 0.0)), zero);
    EXPECT_NEAR(r.loss.value()[0], std::log(2.0), 1e-15);
    auto r2 = softmax_xent(t.constant(Tensor(Shape{1, 2}, std::vector<double>{10, -10})), zero);
    EXPECT_LT(r2.loss.value()[0], 1e-8);
    EXPECT_GE(r2.loss.value()[0], 0.0);
    const std::vector<int> bad{2};
    EXPECT_THROW(softmax_xent(t.constant(Tensor(Shape{1, 2})), bad), Error);
}

TEST(SoftmaxXent, RowsSumToOneAndGradient) {
    std::mt19937_64 rng(9);
    Tensor z = oracle::random_normal({6, 2}, rng, 5.0);
    const std::vector<int> labels{0, 1, 1, 0, 1, 0};
    Tape t;
    Var vz = t.leaf(z);
    auto r = softmax_xent(vz, labels);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(r.probs[2 * i] + r.probs[2 * i + 1], 1.0, 1e-9);
    EXPECT_GE(r.loss.value()[0], 0.0);
    t.backward(r.loss);
    const auto g = t.grad(vz);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 2; ++j)
            EXPECT_NEAR(g[2 * i + j], (r.probs[2 * i + j] - (labels[i] == static_cast<int>(j))) / 6.0, 1e-15);
}

TEST(Dropout, IdentityCasesAndErrors) {
    std::mt19937_64 rng(4);
    Tensor x = oracle::random_normal({10, 10}, rng);
    Tape t;
    EXPECT_EQ(dropout(t.constant(x), 0.0, Mode::train, 1).value(), x);
    EXPECT_EQ(dropout(t.constant(x), 0.7, Mode::eval, 1).value(), x);
    EXPECT_THROW(dropout(t.constant(x), 1.0, Mode::train, 1), Error);
}

TEST(Dropout, ZeroFractionAndScaling) {
    Tape t;
    Tensor x(Shape{10000}, 1.0);
    Var y = dropout(t.constant(x), 0.5, Mode::train, 12345);
    std::size_t zeros = 0;
    for (double v : y.value().data) {
        if (v == 0.0) ++zeros;
        else EXPECT_DOUBLE_EQ(v, 2.0);
    }
    EXPECT_NEAR(static_cast<double>(zeros) / 10000.0, 0.5, 0.05);
    EXPECT_EQ(dropout(t.constant(x), 0.5, Mode::train, 12345).value(), y.value());
    EXPECT_NE(dropout(t.constant(x), 0.5, Mode::train, 54321).value(), y.value());
}

TEST(Backward, FanOutAccumulates) {
    Tape t;
    Var x = t.leaf(Tensor(Shape{3}, std::vector<double>{1, 2, 3}));
    Var unused = t.leaf(Tensor(Shape{2}, 1.0));
    Var loss = sum(add(x, x));
    t.backward(loss);
    EXPECT_EQ(t.grad(x), (std::vector<double>{2, 2, 2}));
    EXPECT_EQ(t.grad(unused), (std::vector<double>{0, 0}));

    Tape t2;
    Var y = t2.leaf(Tensor(Shape{3}, 1.0));
    t2.backward(sum(y));
    EXPECT_EQ(t2.grad(y), (std::vector<double>{1, 1, 1}));
    EXPECT_THROW(t2.backward(add(y, y)), Error);
}

TEST(Backward, ParameterAccumulatesAcrossPasses) {
    Parameter p("w", Parameter::Kind::dense_weight, Shape{2}, 1);
    p.value.data = {1.0, -1.0};
    for (int pass = 0; pass < 2; ++pass) {
        Tape t;
        t.backward(sum(t.parameter(p)));
    }
    EXPECT_EQ(p.grad, (std::vector<double>{2.0, 2.0}));
    p.zero_grad();
    EXPECT_EQ(p.grad, (std::vector<double>{0.0, 0.0}));
}

TEST(Gradcheck, LinearIsExact) {
    std::mt19937_64 rng(8);
    Tensor w = oracle::random_normal({5}, rng);
    auto r = gradcheck([&](Tape&, Var v) { return weighted_sum(v, w); }, oracle::random_normal({5}, rng));
    EXPECT_LT(r.max_rel_error, 1e-10);
    EXPECT_EQ(r.checked, 5u);
}

TEST(Gradcheck, DetectsWrongGradient) {
    // A deliberately broken op: forward x^2, backward claims 3x.
    auto broken = [](Tape&, Var x) {
        Tensor out = x.value();
        for (double& v : out.data) v *= v;
        Var y = x.tape->record(std::move(out), {x.id}, [](const BackwardArgs& a) {
            for (std::size_t i = 0; i < a.in_grad[0]->size(); ++i) (*a.in_grad[0])[i] += 3.0 * (*a.in[0])[i] * a.out_grad[i];
        });
        return sum(y);
    };
    EXPECT_GT(gradcheck(broken, Tensor(Shape{3}, std::vector<double>{1, 2, 3})).max_rel_error, 0.1);
}

TEST(Gradcheck, ProbeCrossingKinkIsRetried) {
    // Central difference at 5e-6 with h=1e-5 straddles the kink: 0.75 instead of 1.
    Tensor x(Shape{2}, std::vector<double>{5e-6, 1.0});
    auto r = gradcheck([](Tape&, Var v) { return sum(relu(v)); }, x, 1e-5);
    EXPECT_LT(r.max_rel_error, 1e-9);
    EXPECT_EQ(r.reduced_step, 1u);
}

TEST(Gradcheck, PatternProbeTracksActiveSet) {
    auto signature = [](std::vector<double> v) {
        ReluPatternProbe probe;
        Tape t;
        relu(t.constant(Tensor(Shape{v.size()}, v)));
        return probe.signature();
    };
    EXPECT_EQ(signature({1, -1, 2}), signature({3, -5, 0.1}));
    EXPECT_NE(signature({1, -1, 2}), signature({1, 1, 2}));
    Tape t;
    EXPECT_NO_THROW(relu(t.constant(Tensor(Shape{3}, 1.0))));  // no probe active
}

TEST(Gradcheck, ConvReluAtRandomPoint) {
    std::mt19937_64 rng(10);
    Tensor x = oracle::random_normal({2, 2, 3, 20}, rng);
    Tensor k = oracle::random_normal({3, 2, 2, 5}, rng);
    Tensor w = oracle::random_normal({2, 3, 2, 8}, rng);
    auto r = gradcheck(
        [&](Tape& t, Var v) { return weighted_sum(relu(conv2d(v, t.constant(k), {Stride{1, 2}, Padding::valid})), w); },
        x);
    EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Determinism, RepeatedForwardIsBitIdentical) {
    std::mt19937_64 rng(11);
    Tensor x = oracle::random_normal({2, 3, 2, 30}, rng);
    Tensor k = oracle::random_normal({4, 3, 1, 7}, rng);
    auto run = [&] {
        Tape t;
        BatchNormStats s(4);
        Var y = conv2d(t.constant(x), t.constant(k), {Stride{1, 1}, Padding::same});
        y = batchnorm(y, t.constant(Tensor(Shape{4}, 1.0)), t.constant(Tensor(Shape{4})), s, Mode::train);
        return dropout(relu(y), 0.3, Mode::train, 77).value();
    };
    EXPECT_EQ(run(), run());
}
