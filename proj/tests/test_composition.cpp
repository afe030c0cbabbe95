#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <vector>

#include "fixtures.hpp"
#include "hierseg/composition.hpp"

using namespace hierseg;

TEST_CASE("sigmoid values") {
    double z[3] = {0.0, -50.0, 1.0};
    double p[3];
    sigmoid_forward(z, p, 3);
    CHECK(p[0] == doctest::Approx(0.5));
    CHECK(p[1] < 1e-20);
    CHECK(p[2] == doctest::Approx(0.7311).epsilon(1e-4));
}

TEST_CASE("conditional softmax: symmetry and hand values") {
    const size_t n = 1;
    double parent = 0.8;

    double z_sym[2] = {0.0, 0.0};
    double q[2];
    conditional_softmax(z_sym, &parent, q, 2, n, 1e-6);
    CHECK(q[0] == doctest::Approx(0.5));
    CHECK(q[1] == doctest::Approx(0.5));

    double z[2] = {1.0, 0.0};
    conditional_softmax(z, &parent, q, 2, n, 1e-6);
    CHECK(q[0] == doctest::Approx(0.7311).epsilon(1e-4));
    CHECK(q[1] == doctest::Approx(0.2689).epsilon(1e-4));

    // Within-group shift cancellation: Q independent of the parent value.
    double weak_parent = 0.1;
    double q2[2];
    conditional_softmax(z, &weak_parent, q2, 2, n, 1e-6);
    CHECK(q2[0] == doctest::Approx(q[0]).epsilon(1e-9));
    CHECK(q2[1] == doctest::Approx(q[1]).epsilon(1e-9));
}

TEST_CASE("compose: hand values and gates") {
    const size_t n = 1;
    double q[2] = {0.7311, 0.2689};
    double parent0 = 0.0, parent8 = 0.8, parent1 = 1.0;
    double p[2];
    compose(q, &parent0, p, 2, n);
    CHECK(p[0] == 0.0);
    CHECK(p[1] == 0.0);
    compose(q, &parent8, p, 2, n);
    CHECK(p[0] == doctest::Approx(0.5849).epsilon(1e-3));
    CHECK(p[1] == doctest::Approx(0.2151).epsilon(1e-3));
    double q5[2] = {0.5, 0.5};
    compose(q5, &parent1, p, 2, n);
    CHECK(p[0] == 0.5);
    CHECK(p[1] == 0.5);
}

TEST_CASE("restrict: trivial gates, checkerboard, idempotence") {
    const size_t n = 16;
    std::vector<double> parent(n), p(n, 0.3), z(n, 1.0);
    for (size_t i = 0; i < n; ++i) parent[i] = (i % 2 == 0) ? 0.9 : 0.1;

    auto p1 = p;
    auto z1 = z;
    restrict_channel(parent.data(), 0.5, p1.data(), z1.data(), n);
    for (size_t i = 0; i < n; ++i) {
        if (i % 2 == 0) {
            CHECK(p1[i] == 0.3);
            CHECK(z1[i] == 1.0);
        } else {
            CHECK(p1[i] == 0.0);
            CHECK(z1[i] == kRestrictedLogit);
        }
    }
    // Idempotent.
    auto p2 = p1;
    auto z2 = z1;
    restrict_channel(parent.data(), 0.5, p2.data(), z2.data(), n);
    CHECK(p2 == p1);
    CHECK(z2 == z1);

    // Open gate leaves everything unchanged.
    std::vector<double> open(n, 0.9), p3(p), z3(z);
    restrict_channel(open.data(), 0.5, p3.data(), z3.data(), n);
    CHECK(p3 == p);
    CHECK(z3 == z);
    // Closed gate zeroes everything.
    std::vector<double> closed(n, 0.2), p4(p);
    restrict_channel(closed.data(), 0.5, p4.data(), static_cast<double*>(nullptr), n);
    for (double v : p4) CHECK(v == 0.0);
}

TEST_CASE("composition invariants over random draws") {
    // 1,000 random (Z, P_parent) draws, 4 children, 8x8 (AC-1).
    std::mt19937_64 rng(123);
    const size_t n = 64, c = 4;
    for (int draw = 0; draw < 1000; ++draw) {
        std::vector<double> z(c * n), parent(n), q(c * n), p(c * n);
        for (auto& v : z) v = fixtures::urand(rng, -6, 6);
        for (auto& v : parent) v = fixtures::urand(rng, 0, 1);
        conditional_softmax(z.data(), parent.data(), q.data(), c, n, 1e-6);
        compose(q.data(), parent.data(), p.data(), c, n);
        for (size_t i = 0; i < n; ++i) {
            double qsum = 0, psum = 0;
            for (size_t ci = 0; ci < c; ++ci) {
                qsum += q[ci * n + i];
                psum += p[ci * n + i];
                CHECK(p[ci * n + i] >= -1e-6);
                CHECK(p[ci * n + i] <= parent[i] + 1e-6);
            }
            CHECK(qsum == doctest::Approx(1.0).epsilon(1e-6));
            CHECK(psum == doctest::Approx(parent[i]).epsilon(1e-6));
        }
    }
}

TEST_CASE("gradients of compose . conditional_softmax match finite differences") {
    std::mt19937_64 rng(77);
    const size_t n = 4, c = 3;
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<double> z(c * n), parent(n), up(c * n);
        for (auto& v : z) v = fixtures::urand(rng, -3, 3);
        for (auto& v : parent) v = fixtures::urand(rng, 0.05, 0.95);
        for (auto& v : up) v = fixtures::urand(rng, -1, 1);

        auto value = [&](const std::vector<double>& zz, const std::vector<double>& pp) {
            std::vector<double> q(c * n), p(c * n);
            conditional_softmax(zz.data(), pp.data(), q.data(), c, n, 1e-6);
            compose(q.data(), pp.data(), p.data(), c, n);
            double s = 0;
            for (size_t i = 0; i < c * n; ++i) s += up[i] * p[i];
            return s;
        };

        // Analytic: dP -> dQ, dparent (compose) -> dZ (softmax jacobian).
        std::vector<double> q(c * n), p(c * n), dq(c * n, 0), dparent(n, 0), dz(c * n, 0);
        conditional_softmax(z.data(), parent.data(), q.data(), c, n, 1e-6);
        compose(q.data(), parent.data(), p.data(), c, n);
        compose_backward(q.data(), parent.data(), up.data(), dq.data(), dparent.data(), c, n);
        conditional_softmax_backward(q.data(), dq.data(), dz.data(), c, n);

        const double h = 1e-6;
        for (size_t i = 0; i < c * n; ++i) {
            auto zp = z, zm = z;
            zp[i] += h;
            zm[i] -= h;
            double fd = (value(zp, parent) - value(zm, parent)) / (2 * h);
            CHECK(dz[i] == doctest::Approx(fd).epsilon(1e-4));
        }
        for (size_t i = 0; i < n; ++i) {
            auto pp = parent, pm = parent;
            pp[i] += h;
            pm[i] -= h;
            double fd = (value(z, pp) - value(z, pm)) / (2 * h);
            CHECK(dparent[i] == doctest::Approx(fd).epsilon(1e-4));
        }
    }
}

TEST_CASE("level-scope softmax gradients match finite differences") {
    std::mt19937_64 rng(99);
    const size_t n = 3, c = 4, cp = 2;
    std::vector<int> parent_of{0, 0, 1, 1};
    std::vector<double> z(c * n), parent(cp * n), up(c * n);
    for (auto& v : z) v = fixtures::urand(rng, -2, 2);
    for (auto& v : parent) v = fixtures::urand(rng, 0.1, 0.9);
    for (auto& v : up) v = fixtures::urand(rng, -1, 1);

    auto value = [&](const std::vector<double>& zz, const std::vector<double>& pp) {
        std::vector<double> q(c * n);
        level_softmax(zz.data(), pp.data(), parent_of.data(), q.data(), c, n, 1e-6);
        double s = 0;
        for (size_t i = 0; i < c * n; ++i) s += up[i] * q[i];
        return s;
    };

    std::vector<double> q(c * n), dz(c * n, 0), dparent(cp * n, 0);
    level_softmax(z.data(), parent.data(), parent_of.data(), q.data(), c, n, 1e-6);
    // Level scope: per pixel the whole level sums to 1.
    for (size_t i = 0; i < n; ++i) {
        double s = 0;
        for (size_t ci = 0; ci < c; ++ci) s += q[ci * n + i];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
    level_softmax_backward(q.data(), up.data(), parent.data(), parent_of.data(), dz.data(),
                           dparent.data(), c, n, 1e-6);
    const double h = 1e-6;
    for (size_t i = 0; i < c * n; ++i) {
        auto zp = z, zm = z;
        zp[i] += h;
        zm[i] -= h;
        double fd = (value(zp, parent) - value(zm, parent)) / (2 * h);
        CHECK(dz[i] == doctest::Approx(fd).epsilon(1e-4));
    }
    // Unlike the group scope, the parent gradient here is generally nonzero.
    for (size_t i = 0; i < cp * n; ++i) {
        auto pp = parent, pm = parent;
        pp[i] += h;
        pm[i] -= h;
        double fd = (value(z, pp) - value(z, pm)) / (2 * h);
        CHECK(dparent[i] == doctest::Approx(fd).epsilon(1e-4).scale(1e-8));
    }
}

TEST_CASE("restrict_backward masks gradients like the forward mask") {
    const size_t n = 8;
    std::vector<double> parent(n), g(n, 1.0);
    for (size_t i = 0; i < n; ++i) parent[i] = i < 4 ? 0.9 : 0.1;
    restrict_backward(parent.data(), 0.5, g.data(), n);
    for (size_t i = 0; i < n; ++i) CHECK(g[i] == (i < 4 ? 1.0 : 0.0));
}
