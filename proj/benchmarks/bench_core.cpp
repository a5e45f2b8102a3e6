#include <benchmark/benchmark.h>

#include <random>

#include "mbcr/model.hpp"
#include "mbcr/ops.hpp"

using namespace mbcr;

namespace {

Tensor noise(Shape shape, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d;
    Tensor t(std::move(shape));
    for (double& v : t.data) v = d(rng);
    return t;
}

// Block-1 branch conv of the full-size network: [N,8,8,976] * [8,8,1,50], stride (1,2).
void BM_Conv2dForward(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const Tensor x = noise({n, 8, 8, 976}, 1);
    const Tensor k = noise({8, 8, 1, 50}, 2);
    const ConvOptions opts{Stride{1, 2}, Padding::valid};
    for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, k, opts));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Conv2dForward)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_Conv2dBackward(benchmark::State& state) {
    const Tensor x = noise({4, 8, 8, 976}, 1);
    const Tensor k = noise({8, 8, 1, 50}, 2);
    for (auto _ : state) {
        Tape t;
        Var vx = t.leaf(x), vk = t.leaf(k);
        t.backward(sum(conv2d(vx, vk, {Stride{1, 2}, Padding::valid})));
        benchmark::DoNotOptimize(t.grad(vk));
    }
}
BENCHMARK(BM_Conv2dBackward)->Unit(benchmark::kMillisecond);

void BM_SameConv(benchmark::State& state) {
    const Tensor x = noise({4, 16, 8, 208}, 3);
    const Tensor k = noise({16, 16, 1, 50}, 4);
    for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, k, ConvOptions{Stride{1, 1}, Padding::same}));
}
BENCHMARK(BM_SameConv)->Unit(benchmark::kMillisecond);

void BM_MiniTrainStep(benchmark::State& state) {
    Model m = Model::build(ModelSpec::mini(static_cast<Variant>(state.range(0))), 1);
    const Tensor x = noise({32, 8, 200}, 5);
    std::vector<int> labels(32);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 2);
    for (auto _ : state) {
        Tape t;
        t.backward(softmax_xent(m.forward(t, x, Mode::train, 7), labels).loss);
    }
    state.SetLabel(to_string(static_cast<Variant>(state.range(0))));
}
BENCHMARK(BM_MiniTrainStep)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

void BM_PaperInference(benchmark::State& state) {
    Model m = Model::build(ModelSpec::paper(Variant::L), 1);
    const Tensor x = noise({1, 8, 2000}, 6);
    for (auto _ : state) benchmark::DoNotOptimize(m.predict(x));
}
BENCHMARK(BM_PaperInference)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
