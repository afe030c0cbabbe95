#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <vector>

#include "fixtures.hpp"
#include "hierseg/composition.hpp"
#include "hierseg/errors.hpp"
#include "hierseg/losses.hpp"

using namespace hierseg;

namespace {

/// Random 2-level instance through sigmoid + conditional softmax + compose,
/// used by the gradient and identity tests: Background/Upper/Lower/Tooth at
/// the root, four Tooth children.
struct TwoLevelInstance {
    size_t n;
    std::vector<double> z0, z1;            // logits: 4*n each
    std::vector<double> p0, q1, p1;        // probabilities
    std::vector<int8_t> y0, y1;            // targets {0,1,-1}
    std::vector<double> w0{1.1, 0.9, 1.3, 0.7}, w1{0.8, 1.2, 1.0, 1.4};
};

TwoLevelInstance random_instance(std::mt19937_64& rng, size_t n) {
    TwoLevelInstance t;
    t.n = n;
    t.z0.resize(4 * n);
    t.z1.resize(4 * n);
    for (auto& v : t.z0) v = fixtures::urand(rng, -3, 3);
    for (auto& v : t.z1) v = fixtures::urand(rng, -3, 3);
    t.y0.assign(4 * n, 0);
    t.y1.assign(4 * n, -1);
    for (size_t i = 0; i < n; ++i) {
        size_t cls = rng() % 4; // Background/Upper/Lower/Tooth at the root
        t.y0[cls * n + i] = 1;
        if (cls == 3) {
            size_t child = rng() % 4;
            for (size_t c = 0; c < 4; ++c) t.y1[c * n + i] = c == child ? 1 : 0;
        }
    }
    return t;
}

void forward_instance(TwoLevelInstance& t) {
    const size_t n = t.n;
    t.p0.resize(4 * n);
    t.q1.resize(4 * n);
    t.p1.resize(4 * n);
    sigmoid_forward(t.z0.data(), t.p0.data(), 4 * n);
    const double* tooth = t.p0.data() + 3 * n; // parent plane
    conditional_softmax(t.z1.data(), tooth, t.q1.data(), 4, n, 1e-6);
    compose(t.q1.data(), tooth, t.p1.data(), 4, n);
}

} // namespace

TEST_CASE("dice: perfect overlap, hand value, full mask") {
    const size_t n = 2;
    double w = 1.0;

    // P = y exactly -> loss at epsilon scale.
    double p_eq[2] = {1.0, 0.0};
    int8_t y_eq[2] = {1, 0};
    CHECK(hier_dice<double>(p_eq, y_eq, &w, 1, n, 1e-6) == doctest::Approx(0.0).epsilon(1e-5));

    // y = [1,0], P = [1,1]: dice 2/3, loss 1/3.
    double p[2] = {1.0, 1.0};
    int8_t y[2] = {1, 0};
    CHECK(hier_dice<double>(p, y, &w, 1, n, 1e-9) == doctest::Approx(1.0 / 3).epsilon(1e-6));

    // Fully masked class: loss collapses to 1 - eps/eps = 0.
    int8_t y_masked[2] = {-1, -1};
    CHECK(hier_dice<double>(p, y_masked, &w, 1, n, 1e-6) == doctest::Approx(0.0));
}

TEST_CASE("ce: hand values and weight linearity") {
    const size_t n = 1;
    double p = 0.5;
    int8_t y = 1;
    double w1 = 1.0, w2 = 2.0;
    CHECK(hier_ce<double>(&p, &y, &w1, 1, n, 1e-7, false, false) ==
          doctest::Approx(0.6931).epsilon(1e-4));
    CHECK(hier_ce<double>(&p, &y, &w2, 1, n, 1e-7, false, false) ==
          doctest::Approx(1.3863).epsilon(1e-4));

    int8_t y0 = 0;
    CHECK(hier_ce<double>(&p, &y0, &w1, 1, n, 1e-7, false, false) == 0.0);
}

TEST_CASE("masking equivalence: m-mask equals pixel deletion") {
    // Brute-force oracle on small inputs: computing with the -1 mask must
    // exactly equal deleting those pixels from the sums.
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const size_t n = 64; // 8x8
        std::vector<double> p(n);
        std::vector<int8_t> y(n);
        for (auto& v : p) v = fixtures::urand(rng, 0.01, 0.99);
        for (auto& v : y) {
            int r = static_cast<int>(rng() % 3);
            v = static_cast<int8_t>(r - 1); // -1, 0, 1
        }
        double w = 1.3;

        std::vector<double> p_kept;
        std::vector<int8_t> y_kept;
        for (size_t i = 0; i < n; ++i)
            if (y[i] >= 0) {
                p_kept.push_back(p[i]);
                y_kept.push_back(y[i]);
            }
        if (p_kept.empty()) continue;

        double dice_masked = hier_dice<double>(p.data(), y.data(), &w, 1, n, 1e-6);
        double dice_deleted =
            hier_dice<double>(p_kept.data(), y_kept.data(), &w, 1, p_kept.size(), 1e-6);
        CHECK(dice_masked == dice_deleted);

        double ce_masked = hier_ce<double>(p.data(), y.data(), &w, 1, n, 1e-7, false, false);
        double ce_deleted = hier_ce<double>(p_kept.data(), y_kept.data(), &w, 1,
                                            p_kept.size(), 1e-7, false, false);
        CHECK(ce_masked == ce_deleted);
    }
}

TEST_CASE("whl: compositionality, homogeneity, level mismatch") {
    std::mt19937_64 rng(11);
    auto inst = random_instance(rng, 16);
    forward_instance(inst);

    std::vector<const double*> p{inst.p0.data(), inst.p1.data()};
    std::vector<const int8_t*> y{inst.y0.data(), inst.y1.data()};
    std::vector<std::vector<double>> w{inst.w0, inst.w1};
    std::vector<size_t> c{4, 4};
    LossOptions<double> opts;

    auto lb = whl<double>(p, y, w, c, inst.n, opts);
    REQUIRE(lb.dice_per_level.size() == 2);
    // Per-level values equal independently computed Eq. 3 / Eq. 4.
    CHECK(lb.dice_per_level[0] ==
          hier_dice<double>(inst.p0.data(), inst.y0.data(), inst.w0.data(), 4, inst.n, 1e-6));
    CHECK(lb.ce_per_level[1] == hier_ce<double>(inst.p1.data(), inst.y1.data(), inst.w1.data(),
                                                4, inst.n, 1e-7, false, false));
    CHECK(lb.total() == doctest::Approx(lb.dice_per_level[0] + lb.dice_per_level[1] +
                                        lb.ce_per_level[0] + lb.ce_per_level[1]));

    // CE is homogeneous in w; Dice with eps = 0 is weight-scale invariant
    // (the weight cancels between numerator and denominator per class).
    LossOptions<double> opts0;
    opts0.dice_eps = 0.0;
    auto base = whl<double>(p, y, w, c, inst.n, opts0);
    std::vector<std::vector<double>> w2 = w;
    for (auto& level : w2)
        for (auto& v : level) v *= 2;
    auto doubled = whl<double>(p, y, w2, c, inst.n, opts0);
    for (int l = 0; l < 2; ++l) {
        CHECK(doubled.ce_per_level[l] == doctest::Approx(2 * base.ce_per_level[l]));
        CHECK(doubled.dice_per_level[l] == doctest::Approx(base.dice_per_level[l]));
    }

    // Level mismatch errors.
    std::vector<const double*> p1{inst.p0.data()};
    CHECK_THROWS_AS(whl<double>(p1, y, w, c, inst.n, opts), DataError);
}

TEST_CASE("whl: perfect predictions give near-zero loss") {
    auto tree = fixtures::dental_tree();
    const size_t n = 8;
    std::vector<double> p0(4 * n, 0.0), p1(4 * n, 0.0);
    std::vector<int8_t> y0(4 * n, 0), y1(4 * n, -1);
    for (size_t i = 0; i < n; ++i) {
        size_t cls = i % 4;
        y0[cls * n + i] = 1;
        p0[cls * n + i] = 1.0;
        if (cls == 3) {
            for (size_t c = 0; c < 4; ++c) y1[c * n + i] = c == 0 ? 1 : 0;
            p1[0 * n + i] = 1.0;
        }
    }
    std::vector<const double*> p{p0.data(), p1.data()};
    std::vector<const int8_t*> y{y0.data(), y1.data()};
    std::vector<std::vector<double>> w{{1, 1, 1, 1}, {1, 1, 1, 1}};
    auto lb = whl<double>(p, y, w, {4, 4}, n, LossOptions<double>{});
    CHECK(lb.total() == doctest::Approx(0.0).epsilon(1e-5));
}

TEST_CASE("consistency loss: identity on composed pyramids, hand case") {
    auto tree = fixtures::dental_tree();
    auto groups = parent_group_layout(tree);
    REQUIRE(groups.size() == 1);
    CHECK(groups[0].parent_index == 3);

    // Straight from compose: exactly 0 (algebraic identity).
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        auto inst = random_instance(rng, 16);
        forward_instance(inst);
        std::vector<const double*> p{inst.p0.data(), inst.p1.data()};
        CHECK(consistency_loss<double>(p, groups, inst.n) ==
              doctest::Approx(0.0).epsilon(1e-6));
    }

    // Hand case: parent 0.8, children summing to 0.6 everywhere, NP = 1.
    const size_t n = 4;
    std::vector<double> parent_level(4 * n, 0.0), child_level(4 * n, 0.15);
    for (size_t i = 0; i < n; ++i) parent_level[3 * n + i] = 0.8;
    std::vector<const double*> p{parent_level.data(), child_level.data()};
    CHECK(consistency_loss<double>(p, groups, n) == doctest::Approx(0.2));

    // Children equal to an exact split of the parent: 0.
    std::vector<double> split_children(4 * n, 0.2);
    std::vector<const double*> p2{parent_level.data(), split_children.data()};
    CHECK(consistency_loss<double>(p2, groups, n) == doctest::Approx(0.0));
}

TEST_CASE("consistency loss is nonzero after restriction") {
    auto tree = fixtures::dental_tree();
    auto groups = parent_group_layout(tree);
    std::mt19937_64 rng(21);
    auto inst = random_instance(rng, 32);
    forward_instance(inst);
    // Restrict children where the Tooth probability is below 0.5.
    auto p1r = inst.p1;
    const double* tooth = inst.p0.data() + 3 * inst.n;
    bool any_gated = false;
    for (size_t c = 0; c < 4; ++c)
        restrict_channel(tooth, 0.5, p1r.data() + c * inst.n, (double*)nullptr, inst.n);
    for (size_t i = 0; i < inst.n; ++i) any_gated |= tooth[i] < 0.5;
    REQUIRE(any_gated);
    std::vector<const double*> p{inst.p0.data(), p1r.data()};
    CHECK(consistency_loss<double>(p, groups, inst.n) > 1e-4);
}

TEST_CASE("total loss is the plain sum") {
    CHECK(total_loss(0.0, 0.0) == 0.0);
    CHECK(total_loss(1.5, 0.2) == doctest::Approx(1.7));
}

TEST_CASE("permutation equivariance in the class axis") {
    std::mt19937_64 rng(8);
    const size_t n = 16, c = 4;
    std::vector<double> p(c * n), w{0.7, 1.1, 1.5, 0.9};
    std::vector<int8_t> y(c * n);
    for (auto& v : p) v = fixtures::urand(rng, 0.01, 0.99);
    for (size_t i = 0; i < n; ++i)
        for (size_t ci = 0; ci < c; ++ci) y[ci * n + i] = ci == (i % c) ? 1 : 0;

    std::vector<size_t> perm{2, 0, 3, 1};
    std::vector<double> pp(c * n), wp(c);
    std::vector<int8_t> yp(c * n);
    for (size_t ci = 0; ci < c; ++ci) {
        wp[ci] = w[perm[ci]];
        std::copy(p.begin() + perm[ci] * n, p.begin() + (perm[ci] + 1) * n, pp.begin() + ci * n);
        std::copy(y.begin() + perm[ci] * n, y.begin() + (perm[ci] + 1) * n, yp.begin() + ci * n);
    }
    CHECK(hier_dice<double>(p.data(), y.data(), w.data(), c, n, 1e-6) ==
          doctest::Approx(hier_dice<double>(pp.data(), yp.data(), wp.data(), c, n, 1e-6)));
    CHECK(hier_ce<double>(p.data(), y.data(), w.data(), c, n, 1e-7, false, false) ==
          doctest::Approx(hier_ce<double>(pp.data(), yp.data(), wp.data(), c, n, 1e-7,
                                          false, false)));
}

TEST_CASE("gradient oracle: consistency loss through sigmoids") {
    // On composed pyramids Eq. 6 is identically zero, so its gradient is
    // only exercised on independent per-level activations.
    std::mt19937_64 rng(31);
    auto tree = fixtures::dental_tree();
    auto groups = parent_group_layout(tree);
    const size_t n = 9;

    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> z0(4 * n), z1(4 * n);
        for (auto& v : z0) v = fixtures::urand(rng, -3, 3);
        for (auto& v : z1) v = fixtures::urand(rng, -3, 3);

        auto value = [&](const std::vector<double>& a, const std::vector<double>& b) {
            std::vector<double> p0(4 * n), p1(4 * n);
            sigmoid_forward(a.data(), p0.data(), 4 * n);
            sigmoid_forward(b.data(), p1.data(), 4 * n);
            std::vector<const double*> p{p0.data(), p1.data()};
            return consistency_loss<double>(p, groups, n);
        };

        std::vector<double> p0(4 * n), p1(4 * n);
        sigmoid_forward(z0.data(), p0.data(), 4 * n);
        sigmoid_forward(z1.data(), p1.data(), 4 * n);
        std::vector<double> dp0(4 * n, 0), dp1(4 * n, 0), dz0(4 * n, 0), dz1(4 * n, 0);
        std::vector<const double*> p{p0.data(), p1.data()};
        std::vector<double*> dp{dp0.data(), dp1.data()};
        consistency_loss<double>(p, groups, n, &dp);
        sigmoid_backward(p0.data(), dp0.data(), dz0.data(), 4 * n);
        sigmoid_backward(p1.data(), dp1.data(), dz1.data(), 4 * n);

        const double h = 1e-6;
        for (size_t i = 0; i < 4 * n; ++i) {
            auto a = z0;
            a[i] += h;
            double fp = value(a, z1);
            a[i] -= 2 * h;
            double fm = value(a, z1);
            CHECK(dz0[i] == doctest::Approx((fp - fm) / (2 * h)).epsilon(1e-4).scale(1e-8));

            auto b = z1;
            b[i] += h;
            fp = value(z0, b);
            b[i] -= 2 * h;
            fm = value(z0, b);
            CHECK(dz1[i] == doctest::Approx((fp - fm) / (2 * h)).epsilon(1e-4).scale(1e-8));
        }
    }
}

TEST_CASE("gradient oracle: losses through sigmoid and composition") {
    // Eq. 3 / Eq. 4 / Eq. 6 gradients with respect to both levels' logits,
    // against central finite differences at 64-bit precision (AC-2).
    std::mt19937_64 rng(42);
    auto tree = fixtures::dental_tree();
    auto groups = parent_group_layout(tree);

    for (int trial = 0; trial < 20; ++trial) {
        auto inst = random_instance(rng, 9);
        const size_t n = inst.n;

        enum Which { Dice, Ce };
        for (Which which : {Dice, Ce}) {
            auto value = [&](const std::vector<double>& z0, const std::vector<double>& z1) {
                TwoLevelInstance t = inst;
                t.z0 = z0;
                t.z1 = z1;
                forward_instance(t);
                if (which == Dice)
                    return hier_dice<double>(t.p0.data(), t.y0.data(), t.w0.data(), 4, n,
                                             1e-6) +
                           hier_dice<double>(t.p1.data(), t.y1.data(), t.w1.data(), 4, n,
                                             1e-6);
                return hier_ce<double>(t.p0.data(), t.y0.data(), t.w0.data(), 4, n, 1e-7,
                                       false, false) +
                       hier_ce<double>(t.p1.data(), t.y1.data(), t.w1.data(), 4, n, 1e-7,
                                       false, false);
            };

            // Analytic gradient via the backward chain.
            TwoLevelInstance t = inst;
            forward_instance(t);
            std::vector<double> dp0(4 * n, 0), dp1(4 * n, 0);
            if (which == Dice) {
                hier_dice<double>(t.p0.data(), t.y0.data(), t.w0.data(), 4, n, 1e-6,
                                  dp0.data());
                hier_dice<double>(t.p1.data(), t.y1.data(), t.w1.data(), 4, n, 1e-6,
                                  dp1.data());
            } else {
                hier_ce<double>(t.p0.data(), t.y0.data(), t.w0.data(), 4, n, 1e-7, false,
                                false, dp0.data());
                hier_ce<double>(t.p1.data(), t.y1.data(), t.w1.data(), 4, n, 1e-7, false,
                                false, dp1.data());
            }
            // dP1 -> dQ, d(parent P) ; dQ -> dZ1 (group softmax jacobian).
            std::vector<double> dq(4 * n, 0), dz1(4 * n, 0);
            const double* tooth = t.p0.data() + 3 * n;
            compose_backward(t.q1.data(), tooth, dp1.data(), dq.data(), dp0.data() + 3 * n, 4,
                             n);
            conditional_softmax_backward(t.q1.data(), dq.data(), dz1.data(), 4, n);
            // dP0 -> dZ0 through the sigmoid.
            std::vector<double> dz0(4 * n, 0);
            sigmoid_backward(t.p0.data(), dp0.data(), dz0.data(), 4 * n);

            const double h = 1e-6;
            auto check_grad = [&](std::vector<double>& z, const std::vector<double>& dz,
                                  bool level0) {
                for (size_t i = 0; i < 4 * n; ++i) {
                    double keep = z[i];
                    z[i] = keep + h;
                    double fp = level0 ? value(z, inst.z1) : value(inst.z0, z);
                    z[i] = keep - h;
                    double fm = level0 ? value(z, inst.z1) : value(inst.z0, z);
                    z[i] = keep;
                    double fd = (fp - fm) / (2 * h);
                    // Relative error <= 1e-4 where the difference quotient can
                    // resolve it; below ~1e-6 the FD of an O(1) loss is pure
                    // roundoff, so fall back to an absolute bound.
                    if (std::max(std::abs(fd), std::abs(dz[i])) > 1e-6)
                        CHECK(dz[i] == doctest::Approx(fd).epsilon(1e-4));
                    else
                        CHECK(std::abs(dz[i] - fd) < 1e-8);
                }
            };
            auto z0 = inst.z0, z1 = inst.z1;
            check_grad(z0, dz0, true);
            check_grad(z1, dz1, false);
        }
    }
}
