#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "hierseg/composition.hpp"
#include "hierseg/hierarchy.hpp"
#include "hierseg/model.hpp"
#include "hierseg/nn.hpp"

using namespace hierseg;

namespace {

ClassTree dental_tree() {
    return parse_class_tree(
        R"({"Background": {}, "Upper": {}, "Lower": {},
            "Tooth": {"Pulp": {}, "Dentin": {}, "Enamel": {}, "Composite": {}}})",
        parse_class_map("Background,0\nUpper,1\nLower,2\nTooth,3\nPulp,4\nDentin,5\n"
                        "Enamel,6\nComposite,7\n"));
}

void BM_ConditionalSoftmaxCompose(benchmark::State& state) {
    const size_t n = static_cast<size_t>(state.range(0)), c = 4;
    std::mt19937_64 rng(0);
    std::uniform_real_distribution<double> uni(-4, 4);
    std::vector<double> z(c * n), parent(n), q(c * n), p(c * n);
    for (auto& v : z) v = uni(rng);
    for (auto& v : parent) v = std::abs(uni(rng)) / 4;
    for (auto _ : state) {
        conditional_softmax(z.data(), parent.data(), q.data(), c, n, 1e-6);
        compose(q.data(), parent.data(), p.data(), c, n);
        benchmark::DoNotOptimize(p.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(c * n));
}
BENCHMARK(BM_ConditionalSoftmaxCompose)->Arg(64 * 64)->Arg(256 * 256);

void BM_Conv2dForward(benchmark::State& state) {
    const int size = static_cast<int>(state.range(0));
    Conv2d conv(8, 24, 3, "bench");
    std::mt19937_64 rng(1);
    conv.init_he(rng);
    Tensor x(8, size, size);
    for (auto& v : x.v) v = 0.5f;
    Conv2d::Cache cache;
    for (auto _ : state) {
        Tensor y = conv.forward(x, cache);
        benchmark::DoNotOptimize(y.data());
    }
}
BENCHMARK(BM_Conv2dForward)->Arg(64)->Arg(128);

void BM_HierForward(benchmark::State& state) {
    const int size = static_cast<int>(state.range(0));
    auto tree = dental_tree();
    HierModel model(tree, ModelConfig{});
    Tensor image(1, size, size);
    for (auto& v : image.v) v = 0.3f;
    for (auto _ : state) {
        auto trace = model.forward(image);
        benchmark::DoNotOptimize(trace.levels.back().probs.data());
    }
}
BENCHMARK(BM_HierForward)->Arg(64)->Arg(128);

} // namespace

BENCHMARK_MAIN();
