#include "doctest.h"

#include "mcr/envs.hpp"
#include "mcr/value.hpp"
#include "oracles.hpp"

#include <cmath>

using namespace mcr;

namespace {

// classic layout built cell by cell, independent of make_cliffwalk
std::vector<Mat> classic_cliff(int rows, int cols) {
    const int n = rows * cols + 1, z = rows * cols;
    std::vector<Mat> t(4, Mat::Zero(n, n));
    auto id = [&](int r, int c) { return r * cols + c; };
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            const int s = id(r, c);
            const bool cliff = r == rows - 1 && c > 0 && c < cols - 1;
            const bool goal = r == rows - 1 && c == cols - 1;
            const int up = r > 0 ? id(r - 1, c) : s;
            const int down = r < rows - 1 ? id(r + 1, c) : s;
            const int left = c > 0 ? id(r, c - 1) : s;
            const int right = c < cols - 1 ? id(r, c + 1) : s;
            const int next[4] = {up, down, left, right};
            for (int a = 0; a < 4; ++a) t[a](s, cliff || goal ? z : next[a]) = 1.0;
        }
    for (auto& m : t) m(z, z) = 1.0;
    return t;
}

} // namespace

TEST_CASE("bandit structure and landscape") {
    const Mdp m = make_bandit();
    CHECK(m.n_states() == 5);
    CHECK(m.transition(0)(0, 1) == 0.2);
    CHECK(m.transition(0)(0, 3) == 0.8);
    CHECK(m.transition(1)(0, 2) == 1.0);
    for (double g : {0.5, 0.9, 1.0}) {
        const Mdp b = make_bandit(g);
        for (double th : {0.0, 0.3, 1.0}) {
            const double v = mcr_value(b, one_parameter_policy(b, th), RiskEnvelope::cvar(1.0)).v[0];
            CHECK(std::abs(v - g * (0.5 + 0.3 * th)) < 1e-10);
        }
    }
}

TEST_CASE("lower-bound structure") {
    const Mdp m = make_lowerbound();
    CHECK(m.n_states() == 4);
    CHECK(m.transition(0)(0, 2) == 1.0);
    CHECK(m.transition(1)(0, 1) == 0.9);
    CHECK(m.transition(1)(0, 2) == 0.1);
    CHECK(m.absorbing() == 3);
}

TEST_CASE("deterministic cliffwalk matches the classic layout") {
    for (auto [r, c] : {std::pair{4, 12}, std::pair{3, 6}, std::pair{2, 4}}) {
        const Mdp m = make_cliffwalk(r, c, 0.0);
        const auto want = classic_cliff(r, c);
        for (int a = 0; a < 4; ++a) CHECK((m.transition(a) - want[a]).cwiseAbs().maxCoeff() == 0.0);
        const CliffLayout g{r, c};
        for (int s = 0; s < r * c; ++s) CHECK(m.cost()[s] == (g.is_cliff(s) ? 100.0 : s == g.goal() ? 0.0 : 1.0));
    }
}

TEST_CASE("shortest path cost equals its length") {
    for (auto [r, c] : {std::pair{4, 12}, std::pair{3, 6}, std::pair{2, 4}}) {
        const Mdp m = make_cliffwalk(r, c, 0.0, {1.0, 100.0, false, 1.0, 200});
        const CliffLayout g{r, c};
        // optimal expected cost from start: deterministic env, alpha = 1
        Mat right = Mat::Zero(m.n_states(), 4);
        for (int s = 0; s < m.n_states(); ++s) {
            const int row = s / c, col = s % c;
            int a = 3;
            if (s == g.start()) a = 0;
            else if (col == c - 1 && row < r - 1) a = 1;
            right(s, a) = 1.0;
        }
        const Policy pol = Policy::direct(right);
        const int len = oracle::grid_shortest_path(r, c);
        CHECK(len == c + 1);
        CHECK(static_cast<int>(greedy_path(m, g, pol).size()) - 1 == len);
        CHECK(mcr_value(m, pol, RiskEnvelope::cvar(1.0)).v[g.start()] == doctest::Approx(len));
    }
}

TEST_CASE("slippery edge row") {
    const Mdp m = make_cliffwalk(4, 12, 0.1);
    const CliffLayout g{4, 12};
    for (int c = 1; c < 11; ++c) {
        const int s = g.cell(2, c);
        CHECK(g.is_edge(s));
        CHECK(m.transition(3)(s, g.cell(3, c)) == doctest::Approx(0.1));
        CHECK(m.transition(3)(s, g.cell(2, c + 1)) == doctest::Approx(0.9));
        CHECK(m.transition(1)(s, g.cell(3, c)) == doctest::Approx(1.0));
    }
    CHECK(!g.is_edge(g.cell(2, 0)));
    CHECK(!g.is_edge(g.cell(1, 5)));
    CHECK(m.transition(3)(g.cell(1, 5), g.cell(1, 6)) == 1.0);
}

TEST_CASE("walking off the grid stays put and still costs") {
    const Mdp m = make_cliffwalk(3, 5, 0.0);
    CHECK(m.transition(2)(0, 0) == 1.0);
    CHECK(m.transition(0)(2, 2) == 1.0);
    CHECK(m.cost()[0] == 1.0);
}

TEST_CASE("cliff resets on request") {
    CliffOptions o;
    o.cliff_resets = true;
    const Mdp m = make_cliffwalk(3, 5, 0.0, o);
    const CliffLayout g{3, 5};
    CHECK(m.transition(0)(g.cell(2, 2), g.start()) == 1.0);
}

TEST_CASE("invalid cliffwalk sizes") {
    CHECK_THROWS_AS(make_cliffwalk(1, 5, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(make_cliffwalk(3, 5, 1.0), std::invalid_argument);
    EnvSpec bad;
    bad.name = "maze";
    CHECK_THROWS_AS(make_env(bad), std::invalid_argument);
}

TEST_CASE("landscape sweep") {
    const Mdp b = make_bandit();
    const auto rows = landscape_sweep(b, {0.1, 0.25, 0.5, 1.0}, uniform_grid(201));
    CHECK(rows.size() == 804u);
    bool flat = false;
    for (const auto& r : rows) {
        if (r.alpha == 1.0) CHECK(std::abs(r.dvdtheta - 0.3) < 1e-8);
        if (r.alpha == 0.25) {
            CHECK(r.dvdtheta >= -1e-12);
            flat |= std::abs(r.dvdtheta) < 1e-12;
        }
    }
    CHECK(flat);

    const Mdp lb = make_lowerbound();
    const auto lr = landscape_sweep(lb, {0.5}, uniform_grid(37));
    CHECK(lr[16].theta == doctest::Approx(4.0 / 9.0));
    CHECK(std::abs(lr[16].value - 1.0) < 1e-12);
    CHECK(std::abs(lr[16].dvdtheta) < 1e-9);
    CHECK(std::abs(lr[16].value - lr[0].value - 0.8) < 1e-12);

    CHECK_THROWS_AS(landscape_sweep(b, {}, uniform_grid(5)), std::invalid_argument);
}

TEST_CASE("sweep scales with the discount") {
    for (const Mdp& base : {make_bandit(1.0), make_lowerbound(1.0)}) {
        const bool bandit = base.n_states() == 5;
        for (double g : {0.5, 0.9}) {
            const Mdp m = bandit ? make_bandit(g) : make_lowerbound(g);
            const auto a = landscape_sweep(base, {0.25, 1.0}, uniform_grid(21));
            const auto b = landscape_sweep(m, {0.25, 1.0}, uniform_grid(21));
            for (size_t i = 0; i < a.size(); ++i) CHECK(std::abs(b[i].value - g * a[i].value) < 1e-10);
        }
    }
}
