#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <random>
#include <set>

#include "fixtures.hpp"
#include "hierseg/errors.hpp"
#include "hierseg/model.hpp"

using namespace hierseg;

namespace {

Tensor random_image(int h, int w, uint64_t seed) {
    Tensor t(1, h, w);
    std::mt19937_64 rng(seed);
    for (auto& v : t.v)
        v = static_cast<float>(fixtures::urand(rng, 0, 1));
    return t;
}

} // namespace

TEST_CASE("tiny backbone preserves spatial size") {
    TinyUNet net;
    std::mt19937_64 rng(0);
    net.init(rng);
    Tensor x(net.input_channels(), 16, 16);
    for (auto& v : x.v) v = 0.1f;
    auto cache = net.make_cache();
    Tensor f = net.forward(x, *cache);
    CHECK(f.c == net.feature_channels());
    CHECK(f.h == 16);
    CHECK(f.w == 16);
}

TEST_CASE("hier forward shapes and probability ranges") {
    auto tree = fixtures::dental_tree();
    HierModel model(tree, ModelConfig{});
    Tensor image = random_image(16, 16, 1);
    auto trace = model.forward(image);
    REQUIRE(trace.levels.size() == 2);
    CHECK(trace.levels[0].logits.c == 4);
    CHECK(trace.levels[1].logits.c == 4);
    CHECK(trace.levels[0].probs.h == 16);
    // Level-1 adapter input: image + 4 feedback logit planes.
    CHECK(trace.levels[1].adapter_in.c == 5);
    for (const auto& lt : trace.levels)
        for (float v : lt.probs.v) {
            CHECK(v >= 0.f);
            CHECK(v <= 1.f);
        }
}

TEST_CASE("forward satisfies composition invariants before restriction") {
    auto tree = fixtures::dental_tree();
    HierModel model(tree, ModelConfig{});
    Tensor image = random_image(16, 16, 2);
    auto trace = model.forward(image);
    const size_t n = trace.levels[0].probs.plane();
    const float* tooth = trace.levels[0].probs.data() + 3 * n;
    for (size_t i = 0; i < n; ++i) {
        float sum = 0;
        for (int c = 0; c < 4; ++c) {
            float pc = trace.levels[1].probs.v[c * n + i];
            CHECK(pc <= tooth[i] + 1e-5f);
            sum += pc;
        }
        CHECK(sum == doctest::Approx(tooth[i]).epsilon(1e-4));
    }
}

TEST_CASE("restriction: no child pixel survives a sub-threshold parent") {
    auto tree = fixtures::dental_tree();
    ModelConfig mc;
    HierModel model(tree, mc);
    Tensor image = random_image(16, 16, 3);
    auto trace = model.forward(image);
    const size_t n = trace.levels[0].probs.plane();
    const float* tooth_r = trace.levels[0].probs_restricted.data() + 3 * n;
    for (size_t i = 0; i < n; ++i)
        for (int c = 0; c < 4; ++c) {
            float pr = trace.levels[1].probs_restricted.v[c * n + i];
            if (tooth_r[i] < mc.restrict_threshold) CHECK(pr == 0.f);
            float zr = trace.levels[1].logits_restricted.v[c * n + i];
            if (tooth_r[i] < mc.restrict_threshold)
                CHECK(zr == doctest::Approx(kRestrictedLogit));
        }
}

TEST_CASE("FiLM starts at identity") {
    auto tree = fixtures::dental_tree();
    HierModel model(tree, ModelConfig{});
    Tensor image = random_image(16, 16, 4);
    auto trace = model.forward(image);
    // Zero-initialized generator output: gamma = 1, beta = 0.
    CHECK(trace.levels[1].features_film.v == trace.levels[1].features.v);
    for (float g : trace.levels[1].film_gamma) CHECK(g == 1.f);
    for (float b : trace.levels[1].film_beta) CHECK(b == 0.f);
    // The summary is the spatial mean of restricted parent probabilities.
    const size_t n = trace.levels[0].probs.plane();
    for (int c = 0; c < 4; ++c) {
        double mean = 0;
        for (size_t i = 0; i < n; ++i)
            mean += trace.levels[0].probs_restricted.v[c * n + i];
        mean /= static_cast<double>(n);
        CHECK(trace.levels[1].film_summary[c] == doctest::Approx(mean).epsilon(1e-5));
    }
}

TEST_CASE("parameter report: shared trunk and sub-1% overhead") {
    auto tree = fixtures::dental_tree();
    HierModel a(tree, ModelConfig{});
    HierModel b(tree, ModelConfig{});
    auto ra = a.parameter_report();
    auto rb = b.parameter_report();
    CHECK(ra.total() == rb.total());
    CHECK(ra.trunk > 0);
    CHECK(ra.hierarchical_overhead > 0);
    CHECK(static_cast<double>(ra.hierarchical_overhead) < 0.01 * ra.trunk);

    // Trunk parameters appear once in the handle list (shared storage).
    auto params = a.params();
    std::set<const Param*> unique(params.begin(), params.end());
    CHECK(unique.size() == params.size());
    int64_t counted = 0;
    for (const auto* p : params) counted += static_cast<int64_t>(p->w.size());
    CHECK(counted == ra.total());
}

TEST_CASE("seeded construction is deterministic") {
    auto tree = fixtures::dental_tree();
    ModelConfig mc;
    mc.seed = 9;
    HierModel a(tree, mc);
    HierModel b(tree, mc);
    Tensor image = random_image(16, 16, 5);
    auto ta = a.forward(image);
    auto tb = b.forward(image);
    CHECK(ta.levels[1].probs.v == tb.levels[1].probs.v);
}

TEST_CASE("gradients flow from child losses into level-0 parameters") {
    auto tree = fixtures::dental_tree();
    HierModel model(tree, ModelConfig{});
    Tensor image = random_image(16, 16, 6);
    auto trace = model.forward(image);

    // Upstream gradient only on the child level.
    std::vector<Tensor> dprobs;
    dprobs.emplace_back(4, 16, 16);
    dprobs.emplace_back(4, 16, 16);
    std::mt19937_64 rng(13);
    for (auto& v : dprobs[1].v) v = static_cast<float>(fixtures::urand(rng, -1, 1));
    model.backward(trace, dprobs);

    double level0_head_grad = 0;
    for (auto* p : model.params())
        if (p->name.find("head0") != std::string::npos)
            for (float g : p->g) level0_head_grad += std::abs(g);
    CHECK(level0_head_grad > 0);
}

TEST_CASE("parameter gradients match finite differences") {
    auto tree = fixtures::dental_tree();
    HierModel model(tree, ModelConfig{});
    Tensor image = random_image(8, 8, 7);
    const size_t n = 64;

    // Linear objective in the composed probabilities of both levels.
    std::vector<Tensor> up;
    up.emplace_back(4, 8, 8);
    up.emplace_back(4, 8, 8);
    std::mt19937_64 rng(17);
    for (auto& t : up)
        for (auto& v : t.v) v = static_cast<float>(fixtures::urand(rng, -1, 1));

    auto objective = [&]() {
        auto trace = model.forward(image);
        double s = 0;
        for (int l = 0; l < 2; ++l)
            for (size_t i = 0; i < 4 * n; ++i)
                s += static_cast<double>(up[l].v[i]) * trace.levels[l].probs.v[i];
        return s;
    };

    auto trace = model.forward(image);
    std::vector<Tensor> dprobs = up;
    model.backward(trace, dprobs);

    // Spot-check a few parameters from each component with a float-sized step.
    auto params = model.params();
    int checked = 0;
    for (auto* p : params) {
        if (p->w.empty()) continue;
        size_t idx = p->w.size() / 2;
        float keep = p->w[idx];
        const float h = 1e-2f;
        p->w[idx] = keep + h;
        double fp = objective();
        p->w[idx] = keep - h;
        double fm = objective();
        p->w[idx] = keep;
        double fd = (fp - fm) / (2.0 * h);
        double analytic = p->g[idx];
        if (std::abs(fd) > 1e-3 || std::abs(analytic) > 1e-3) {
            // Float forward passes limit the difference quotient to roughly
            // 1e-3/h absolute accuracy, hence the additive floor; the exact
            // gradient oracles live in the double-precision math suites.
            CHECK(analytic == doctest::Approx(fd).epsilon(0.05).scale(0.6));
            ++checked;
        }
    }
    CHECK(checked >= 5);
}

TEST_CASE("checkpoint round trip and fingerprint binding") {
    namespace fs = std::filesystem;
    auto tree = fixtures::dental_tree();
    HierModel model(tree, ModelConfig{});
    Tensor image = random_image(16, 16, 8);
    auto before = model.forward(image);

    auto path = (fs::temp_directory_path() / "hierseg_model_rt.ckpt").string();
    model.save_checkpoint(path);

    ModelConfig mc2;
    mc2.seed = 999; // different init, must be overwritten by the load
    HierModel loaded(tree, mc2);
    loaded.load_checkpoint(path);
    auto after = loaded.forward(image);
    CHECK(after.levels[1].probs.v == before.levels[1].probs.v);

    auto info = read_checkpoint_info(path);
    CHECK(info.variant == "hierarchical");
    CHECK(info.backbone == "tiny");
    CHECK(info.tree_fingerprint == tree.fingerprint());

    // A model over a different hierarchy must refuse the checkpoint.
    HierModel other(fixtures::blob_tree(), ModelConfig{});
    CHECK_THROWS_AS(other.load_checkpoint(path), DataError);
    // So must the flat variant.
    BaselineModel flat(tree, ModelConfig{});
    CHECK_THROWS_AS(flat.load_checkpoint(path), DataError);
    fs::remove(path);
}

TEST_CASE("baseline model: flat softmax over leaf classes") {
    auto tree = fixtures::dental_tree();
    BaselineModel model(tree, ModelConfig{});
    CHECK(model.num_classes() == 7); // Tooth is a parent, not an output
    CHECK(model.leaf_classes() ==
          std::vector<std::string>{"Background", "Upper", "Lower", "Pulp", "Dentin", "Enamel",
                                   "Composite"});
    Tensor image = random_image(16, 16, 9);
    auto trace = model.forward(image);
    CHECK(trace.probs.c == 7);
    const size_t n = trace.probs.plane();
    for (size_t i = 0; i < n; ++i) {
        float sum = 0;
        for (int c = 0; c < 7; ++c) sum += trace.probs.v[c * n + i];
        CHECK(sum == doctest::Approx(1.0f).epsilon(1e-4));
    }
    CHECK(model.parameter_report().hierarchical_overhead == 0);
}

TEST_CASE("unknown backbone id is a config error") {
    ModelConfig mc;
    mc.backbone = "resnet900";
    CHECK_THROWS_AS(HierModel(fixtures::dental_tree(), mc), ConfigError);
}
