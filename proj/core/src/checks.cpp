#include "mbcr/checks.hpp"

#include <random>

#include "mbcr/model.hpp"

namespace mbcr {
namespace {

class Sampler {
public:
    explicit Sampler(std::uint64_t seed) : rng_(seed) {}

    Tensor normal(Shape shape, double scale = 1.0) {
        Tensor t(std::move(shape));
        for (double& v : t.data) v = scale * dist_(rng_);
        return t;
    }

private:
    std::mt19937_64 rng_;
    std::normal_distribution<double> dist_;
};

}  // namespace

std::vector<NamedCheck> run_gradcheck_suite(std::uint64_t seed, double h) {
    Sampler s(seed);
    std::vector<NamedCheck> out;
    auto check_input = [&](std::string name, const Tensor& point, const ScalarFn& f) {
        out.push_back({std::move(name), gradcheck(f, point, h)});
    };

    {
        const Tensor x = s.normal({2, 3, 4, 32});
        const Tensor k = s.normal({4, 3, 1, 5});
        const Tensor w = s.normal({2, 4, 4, 14});
        const ConvOptions opts{Stride{1, 2}, Padding::valid};
        check_input("conv2d/valid-stride2/input", x, [&](Tape& t, Var v) {
            return weighted_sum(conv2d(v, t.constant(k), opts), w);
        });
        check_input("conv2d/valid-stride2/kernel", k, [&](Tape& t, Var v) {
            return weighted_sum(conv2d(t.constant(x), v, opts), w);
        });
        const Tensor ks = s.normal({4, 3, 2, 4});
        const Tensor ws = s.normal({2, 4, 4, 32});
        const ConvOptions same{Stride{1, 1}, Padding::same};
        check_input("conv2d/same/input", x, [&](Tape& t, Var v) {
            return weighted_sum(conv2d(v, t.constant(ks), same), ws);
        });
        check_input("conv2d/same/kernel", ks, [&](Tape& t, Var v) {
            return weighted_sum(conv2d(t.constant(x), v, same), ws);
        });
        check_input("conv2d+relu/input", x, [&](Tape& t, Var v) {
            return weighted_sum(relu(conv2d(v, t.constant(k), opts)), w);
        });
    }
    {
        const Tensor x = s.normal({3, 2, 2, 5});
        const Tensor g = s.normal({2});
        const Tensor b = s.normal({2});
        const Tensor w = s.normal({3, 2, 2, 5});
        BatchNormStats frozen(2);
        frozen.running_mean = {0.3, -0.2};
        frozen.running_var = {1.5, 0.7};
        BatchNormOptions train_opts;
        train_opts.update_stats = false;
        for (Mode mode : {Mode::train, Mode::eval}) {
            const std::string tag = mode == Mode::train ? "batchnorm/train/" : "batchnorm/eval/";
            check_input(tag + "input", x, [&](Tape& t, Var v) {
                return weighted_sum(batchnorm(v, t.constant(g), t.constant(b), frozen, mode, train_opts), w);
            });
            check_input(tag + "gamma", g, [&](Tape& t, Var v) {
                return weighted_sum(batchnorm(t.constant(x), v, t.constant(b), frozen, mode, train_opts), w);
            });
            check_input(tag + "beta", b, [&](Tape& t, Var v) {
                return weighted_sum(batchnorm(t.constant(x), t.constant(g), v, frozen, mode, train_opts), w);
            });
        }
    }
    {
        const Tensor x = s.normal({4, 6});
        const Tensor w = s.normal({4, 6});
        check_input("relu", x, [&](Tape&, Var v) { return weighted_sum(relu(v), w); });
        const Tensor y = s.normal({4, 6});
        check_input("add", x, [&](Tape& t, Var v) { return weighted_sum(add(v, add(v, t.constant(y))), w); });
        check_input("dropout/train", x, [&](Tape&, Var v) { return weighted_sum(dropout(v, 0.5, Mode::train, 17), w); });
        check_input("reshape", x, [&](Tape&, Var v) {
            return weighted_sum(reshape(v, Shape{2, 12}), w.reshaped(Shape{2, 12}));
        });
    }
    {
        const Tensor x = s.normal({3, 5});
        const Tensor wt = s.normal({4, 5});
        const Tensor b = s.normal({4});
        const Tensor w = s.normal({3, 4});
        check_input("dense/input", x, [&](Tape& t, Var v) {
            return weighted_sum(dense(v, t.constant(wt), t.constant(b)), w);
        });
        check_input("dense/weight", wt, [&](Tape& t, Var v) {
            return weighted_sum(dense(t.constant(x), v, t.constant(b)), w);
        });
        check_input("dense/bias", b, [&](Tape& t, Var v) {
            return weighted_sum(dense(t.constant(x), t.constant(wt), v), w);
        });
        const std::vector<int> labels{0, 1, 1};
        const Tensor logits = s.normal({3, 2});
        check_input("softmax_xent", logits, [&](Tape&, Var v) { return softmax_xent(v, labels).loss; });
    }
    {
        DbcrnBlock block("block", 3, 4, 5);
        std::vector<Parameter*> params;
        block.collect(params);
        init_params(params, seed + 1);
        const Tensor x = s.normal({2, 3, 2, 40});
        const Tensor w = s.normal({2, 4, 2, 18});
        UnitConfig cfg;
        cfg.bn.update_stats = false;
        check_input("dbcrn_block/input", x, [&](Tape& t, Var v) {
            return weighted_sum(block.forward(t, v, Mode::train, cfg), w);
        });
    }
    for (Variant v : {Variant::T, Variant::L, Variant::F}) {
        Model model = Model::build(ModelSpec::mini(v), seed + 2);
        const Tensor x = s.normal({2, 8, 200});
        const std::vector<int> labels{0, 1};
        check_input("model/mini-" + to_string(v) + "/input", x, [&](Tape& t, Var in) {
            return softmax_xent(model.forward(t, in, Mode::train, 99), labels).loss;
        });
    }
    return out;
}

}  // namespace mbcr
