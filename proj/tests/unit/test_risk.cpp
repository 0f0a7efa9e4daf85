#include "doctest.h"

#include "mcr/risk.hpp"
#include "mcr/util.hpp"
#include "oracles.hpp"

#include <cmath>

using namespace mcr;

namespace {
Vec vec2(double a, double b) { return (Vec(2) << a, b).finished(); }
} // namespace

TEST_CASE("cvar saddle: lower-bound table rows") {
    const SaddleSolution a = cvar_saddle(vec2(0.5, 0.5), vec2(0, 1), 0.5, true);
    CHECK(std::abs(a.xi[0]) < 1e-12);
    CHECK(std::abs(a.xi[1] - 2.0) < 1e-12);
    CHECK(std::abs(a.lambda_p - 1.0) < 1e-12);
    CHECK(std::abs(a.value - 1.0) < 1e-12);

    const SaddleSolution b = cvar_saddle(vec2(0.9, 0.1), vec2(0, 1), 0.5);
    CHECK(std::abs(b.xi[0] - 8.0 / 9.0) < 1e-12);
    CHECK(std::abs(b.xi[1] - 2.0) < 1e-12);
    CHECK(std::abs(b.lambda_p) < 1e-12);
    CHECK(std::abs(b.value - 0.2) < 1e-12);
}

TEST_CASE("quantile convention at an exact mass boundary") {
    const SaddleSolution lo = cvar_saddle(vec2(0.5, 0.5), vec2(0, 1), 0.5, false);
    const SaddleSolution hi = cvar_saddle(vec2(0.5, 0.5), vec2(0, 1), 0.5, true);
    CHECK(lo.lambda_p == doctest::Approx(0.0));
    CHECK(hi.lambda_p == doctest::Approx(1.0));
    CHECK(lo.value == doctest::Approx(hi.value));
    CHECK(lo.tie == hi.tie);
}

TEST_CASE("alpha = 1 and the expectation envelope") {
    for (int i = 0; i < 50; ++i) {
        const Vec p = oracle::random_distribution(4, derive_seed(61, i));
        Rng rng(derive_seed(62, i));
        Vec v(4);
        for (int k = 0; k < 4; ++k) v[k] = rng.uniform();
        const SaddleSolution s = cvar_saddle(p, v, 1.0);
        CHECK((s.xi - Vec::Ones(4)).norm() < 1e-12);
        CHECK(std::abs(s.value - p.dot(v)) < 1e-12);

        const SaddleSolution e = cvar_saddle(p, v, RiskEnvelope::expectation());
        CHECK((e.xi - Vec::Ones(4)).norm() == 0.0);
        CHECK(std::abs(e.value - p.dot(v)) < 1e-12);
        CHECK(std::abs(e.lambda_p - p.dot(v)) < 1e-12);
        CHECK(e.lambda_ineq.isZero());
    }
}

TEST_CASE("saddle structure and feasibility") {
    for (int i = 0; i < 300; ++i) {
        Rng rng(derive_seed(71, i));
        const int n = 2 + static_cast<int>(rng.uniform() * 6);
        const Vec p = oracle::random_distribution(n, derive_seed(72, i));
        Vec v(n);
        for (int k = 0; k < n; ++k) v[k] = std::round(5.0 * rng.uniform()); // frequent ties
        const double alpha = 0.05 + 0.95 * rng.uniform();
        const RiskEnvelope env = RiskEnvelope::cvar(alpha);
        const SaddleSolution s = cvar_saddle(p, v, env);
        CHECK(std::abs(p.dot(s.xi) - 1.0) < 1e-12);
        CHECK(s.xi.minCoeff() >= -1e-15);
        CHECK(s.xi.maxCoeff() <= 1.0 / alpha + 1e-12);
        for (int k = 0; k < n; ++k) {
            if (v[k] > s.lambda_p + 1e-12) CHECK(std::abs(s.xi[k] - 1.0 / alpha) < 1e-9);
            if (v[k] < s.lambda_p - 1e-12) CHECK(std::abs(s.xi[k]) < 1e-12);
        }
        CHECK(std::abs(s.value - oracle::cvar_primal(p, v, alpha)) < 1e-10);
        CHECK(std::abs(lagrangian_eval(s, p, v, env) - s.value) < 1e-10);
        CHECK(env.ineq(s.xi, p).maxCoeff() <= 1e-12);
        // complementary slackness
        CHECK(std::abs(s.lambda_ineq.dot(env.ineq(s.xi, p))) < 1e-9);
        CHECK(s.lambda_ineq.minCoeff() >= -1e-12);
    }
}

TEST_CASE("zero-probability outcomes") {
    Vec p(3), v(3);
    p << 0.5, 0.0, 0.5;
    v << 1.0, 9.0, 0.0;
    const SaddleSolution s = cvar_saddle(p, v, 0.5);
    CHECK(s.xi[1] == 2.0); // above the quantile: full tail weight
    CHECK(s.value == doctest::Approx(1.0));
    v[1] = -1.0;
    CHECK(cvar_saddle(p, v, 0.5).xi[1] == 0.0);
    v[1] = 1.0;
    CHECK(cvar_saddle(p, v, 0.5).xi[1] == cvar_saddle(p, v, 0.5).xi[0]);
}

TEST_CASE("brute-force envelope maximum agrees") {
    for (int i = 0; i < 100; ++i) {
        const int n = 2 + i % 3;
        const Vec p = oracle::random_distribution(n, derive_seed(81, i));
        Rng rng(derive_seed(82, i));
        Vec v(n);
        for (int k = 0; k < n; ++k) v[k] = rng.uniform();
        const double alpha = 0.1 + 0.9 * rng.uniform();
        const RiskEnvelope env = RiskEnvelope::cvar(alpha);
        const double bf = brute_force_envelope_max(p, v, env);
        CHECK(std::abs(bf - cvar_saddle(p, v, env).value) < 1e-6);
    }
    Vec p(4), v(4);
    p << 0.1, 0.2, 0.3, 0.4;
    v << 3, 1, 2, 0;
    CHECK(std::abs(brute_force_envelope_max(p, v, RiskEnvelope::cvar(1.0)) - p.dot(v)) < 1e-9);
}

TEST_CASE("feasible xi makes the lagrangian equal the reweighted mean") {
    Vec p(3), v(3), xi(3);
    p << 0.25, 0.25, 0.5;
    v << 1, 2, 3;
    xi << 2, 0, 1; // sum p xi = 1, within [0, 1/alpha]
    SaddleSolution s;
    s.xi = xi;
    s.lambda_p = 0.7;
    s.lambda_ineq = Vec::Constant(6, 0.3);
    const RiskEnvelope env = RiskEnvelope::cvar(0.5);
    // tight constraints only carry multipliers in a true saddle; zero the slack ones here
    const Vec f = env.ineq(xi, p);
    for (int i = 0; i < 6; ++i)
        if (f[i] != 0.0) s.lambda_ineq[i] = 0.0;
    CHECK(lagrangian_eval(s, p, v, env) == doctest::Approx(p.cwiseProduct(xi).dot(v)));
}

TEST_CASE("invalid inputs") {
    CHECK_THROWS_AS(RiskEnvelope::cvar(0.0), std::invalid_argument);
    CHECK_THROWS_AS(RiskEnvelope::cvar(1.5), std::invalid_argument);
    CHECK_THROWS_AS(cvar_saddle(vec2(0.5, 0.6), vec2(0, 1), 0.5), std::invalid_argument);
    CHECK_THROWS_AS(cvar_saddle(vec2(0.5, 0.5), Vec::Zero(3), 0.5), std::invalid_argument);
}
