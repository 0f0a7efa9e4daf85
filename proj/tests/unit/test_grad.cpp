#include "doctest.h"

#include "mcr/envs.hpp"
#include "mcr/grad.hpp"
#include "mcr/util.hpp"
#include "oracles.hpp"

#include <cmath>

using namespace mcr;

namespace {

Mdp chain3(double gamma) {
    oracle::RandomMdpOptions o;
    o.n_states = 3;
    o.gamma = gamma;
    return oracle::random_mdp(101, o);
}

std::vector<SaddleSolution> ones(int S) {
    std::vector<SaddleSolution> sd(S);
    for (auto& s : sd) s.xi = Vec::Ones(S);
    return sd;
}

// i.i.d. (s, a, s') with s ~ d
std::vector<std::array<int, 3>> draw(const Mdp& m, const Policy& pol, const Vec& d, int n, std::uint64_t seed) {
    Rng rng(seed);
    const int S = m.n_states();
    std::vector<std::array<int, 3>> out;
    for (int k = 0; k < n; ++k) {
        const int s = rng.categorical(d, S);
        const int a = rng.categorical(pol.table().row(s), m.n_actions());
        const Vec row = m.transition(a).row(s).transpose();
        out.push_back({s, a, rng.categorical(row, S)});
    }
    return out;
}

} // namespace

TEST_CASE("gradient vanishes at the lower-bound stationary point") {
    const Mdp m = make_lowerbound(1.0);
    const GradientReport g = exact_gradient(m, one_parameter_policy(m, 4.0 / 9.0), RiskEnvelope::cvar(0.5, true));
    CHECK(std::abs(g.grad(0, 0)) < 1e-12);
    CHECK(std::abs(g.grad(0, 1)) < 1e-12);
}

TEST_CASE("exact gradient matches finite differences") {
    int checked = 0;
    for (int i = 0; checked < 12; ++i) {
        const double alpha = i % 3 == 0 ? 1.0 : i % 3 == 1 ? 0.7 : 0.3;
        const Param kind = i % 2 == 0 ? Param::softmax : Param::direct;
        const Mdp m = oracle::random_mdp(derive_seed(111, i), {4, 3, 0.8, true});
        const Policy pol = oracle::random_policy(4, 3, kind, derive_seed(112, i));
        const RiskEnvelope env = RiskEnvelope::cvar(alpha);
        if (oracle::quantile_margin(m, pol, env) < 1e-3) continue;
        const Mat fd = oracle::fd_gradient(m, pol, env);
        const Mat an = oracle::tangent_view(exact_gradient(m, pol, env).grad, kind);
        CHECK((fd - an).norm() <= 1e-4 * an.norm());
        ++checked;
    }
}

TEST_CASE("finite-horizon gradient matches finite differences") {
    const Mdp m = make_cliffwalk(2, 3, 0.2, {1.0, 10.0, false, 1.0, 6});
    const Policy pol = oracle::random_policy(m.n_states(), 4, Param::softmax, 113);
    for (double a : {1.0, 0.6}) {
        const RiskEnvelope env = RiskEnvelope::cvar(a);
        if (oracle::quantile_margin(m, pol, env) < 1e-3) continue;
        const Mat fd = oracle::fd_gradient(m, pol, env);
        const Mat an = exact_gradient(m, pol, env).grad;
        CHECK((fd - an).norm() <= 1e-4 * an.norm());
    }
}

TEST_CASE("exact correction weights") {
    const Mdp m = chain3(0.9);
    const Policy pol = oracle::random_policy(3, 2, Param::softmax, 121);
    const Mat p = induced_transition(m, pol);

    const CorrectionWeights unit = correction_weights_exact(p, ones(3), 0.9, m.start());
    CHECK((unit.w - Vec::Ones(3)).norm() < 1e-12);

    // handcrafted xi with E_p[xi] = 1 per row
    std::vector<SaddleSolution> sd(3);
    for (int s = 0; s < 3; ++s) sd[s] = cvar_saddle(p.row(s).transpose(), Vec::LinSpaced(3, s, 2.0 - s), 0.4);
    const CorrectionWeights w = correction_weights_exact(p, sd, 0.9, m.start());
    const Visitation d = discounted_visitation(p, m.start(), 0.9);
    const Vec series = oracle::power_series_visitation(p, xi_matrix(sd), m.start(), 0.9);
    CHECK((series.cwiseQuotient(d.d) - w.w).lpNorm<Eigen::Infinity>() < 1e-8);
    // population functional vanishes at the exact ratio
    CHECK(correction_functional(p, d.d, w.w, sd, 0.9, m.start()).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("kernel correction weights") {
    const Mdp m = chain3(0.9);
    const Policy pol = oracle::random_policy(3, 2, Param::softmax, 131);
    const Mat p = induced_transition(m, pol);
    const Visitation d = discounted_visitation(p, m.start(), 0.9);
    const auto sas = draw(m, pol, d.d, 10000, 132);
    const TransitionBatch b = batch_from_transitions(sas, 3, 0.9, m.start());

    SUBCASE("unit xi gives unit weights") {
        const CorrectionWeights w = correction_weights_kernel(b, Mat::Ones(3, 3));
        CHECK((w.w - Vec::Ones(3)).lpNorm<Eigen::Infinity>() < 5e-2);
    }
    SUBCASE("matches the linear solve") {
        std::vector<SaddleSolution> sd(3);
        for (int s = 0; s < 3; ++s) sd[s] = cvar_saddle(p.row(s).transpose(), Vec::LinSpaced(3, 0.0, 1.0), 0.6);
        const CorrectionWeights exact = correction_weights_exact(p, sd, 0.9, m.start());
        const CorrectionWeights k = correction_weights_kernel(b, xi_matrix(sd));
        CHECK(k.converged);
        CHECK((k.w - exact.w).lpNorm<Eigen::Infinity>() < 5e-2);
        const CorrectionWeights e = correction_weights_empirical(b, xi_matrix(sd));
        CHECK((k.w - e.w).lpNorm<Eigen::Infinity>() < 1e-3);
    }
    SUBCASE("empty batch") {
        TransitionBatch empty;
        empty.n_states = 3;
        empty.d0 = m.start();
        CHECK_THROWS_AS(correction_weights_kernel(empty, Mat::Ones(3, 3)), std::invalid_argument);
    }
}

TEST_CASE("importance-sampling gradient is unbiased for the expectation envelope") {
    const double g = 0.9;
    const Mdp m = chain3(g);
    const Policy pol = oracle::random_policy(3, 2, Param::softmax, 141);
    const RiskEnvelope env = RiskEnvelope::expectation();
    const McrValue mv = mcr_value(m, pol, env);
    const HTable h = h_table(m, pol, mv, env);
    const Mat exact = exact_gradient(m, pol, env).grad;
    std::vector<GradientReport> reps;
    SampleOptions o;
    o.stop_at_absorbing = false;
    for (int r = 0; r < 1000; ++r) {
        const auto trajs = sample_trajectories(m, pol, 10, 150, derive_seed(142, r), o);
        reps.push_back(is_gradient(trajs, pol, {Mat::Ones(3, 3)}, {h.h}, g));
        CHECK(reps.back().weights.max_overall == doctest::Approx(1.0));
    }
    const GradientReport agg = aggregate_replicates(reps);
    for (int s = 0; s < 3; ++s)
        for (int a = 0; a < 2; ++a) {
            const double se = std::sqrt(agg.seeds_variance(s, a) / 1000.0);
            CHECK(std::abs(agg.grad(s, a) - exact(s, a)) < 3.0 * se + 1e-9);
        }
}

TEST_CASE("cumulative weights follow the sampled path") {
    // deterministic 2-cycle with xi(0 -> 1) = 2 and xi(1 -> 0) = 0.5
    std::vector<Mat> t(1, Mat::Zero(2, 2));
    t[0](0, 1) = t[0](1, 0) = 1.0;
    const Mdp m(t, Vec::Zero(2), Vec::Unit(2, 0), 0.9);
    const Policy pol = Policy::uniform(2, 1);
    Mat xi = Mat::Ones(2, 2);
    xi(0, 1) = 2.0;
    xi(1, 0) = 0.5;
    const auto trajs = sample_trajectories(m, pol, 1, 4, 1);
    const GradientReport r = is_gradient(trajs, pol, {xi}, {Mat::Zero(2, 1)}, 0.9);
    REQUIRE(r.weights.max_weight.size() == 4u);
    CHECK(r.weights.max_weight[0] == 1.0);
    CHECK(r.weights.max_weight[1] == 2.0);
    CHECK(r.weights.max_weight[2] == 1.0);
    CHECK(r.weights.max_weight[3] == 2.0);

    const GradientReport over = is_gradient(trajs, pol, {xi}, {Mat::Zero(2, 1)}, 0.9, 1.5);
    CHECK(over.overflow);
}

TEST_CASE("exact weights and h reproduce the exact gradient") {
    for (int i = 0; i < 10; ++i) {
        const Mdp m = oracle::random_mdp(derive_seed(151, i));
        const Policy pol = oracle::random_policy(5, 2, i % 2 ? Param::direct : Param::softmax, derive_seed(152, i));
        const RiskEnvelope env = RiskEnvelope::cvar(0.4);
        const McrValue mv = mcr_value(m, pol, env);
        const HTable h = h_table(m, pol, mv, env);
        const Mat p = induced_transition(m, pol);
        const double g = m.discount();
        const CorrectionWeights w = correction_weights_exact(p, mv.saddles, g, m.start());
        const Visitation d = discounted_visitation(p, m.start(), g);
        const Vec occ = w.w.cwiseProduct(d.d) / (1.0 - g);
        const Mat via_w = assemble_gradient(pol, {occ}, h);
        CHECK((via_w - exact_gradient(m, pol, mv, h).grad).lpNorm<Eigen::Infinity>() < 1e-8);
    }
}

TEST_CASE("residuals") {
    SUBCASE("lower-bound instance") {
        for (double g : {0.5, 0.9, 1.0}) {
            const Mdp m = make_lowerbound(g);
            const ResidualReport r = residuals(m, one_parameter_policy(m, 4.0 / 9.0), one_parameter_policy(m, 0.0),
                                               RiskEnvelope::cvar(0.5, true));
            CHECK(std::abs(r.eps_l - 0.8 * g) < 1e-10);
            CHECK(std::abs(r.eps_u) < 1e-12);
            CHECK(std::abs(r.gap - 0.8 * g) < 1e-10);
            CHECK(std::abs(r.stationarity_term) < 1e-12);
            CHECK(std::abs(r.bound - r.gap) < 1e-10);
        }
    }
    SUBCASE("identical policies") {
        const Mdp m = oracle::random_mdp(161);
        const Policy pol = oracle::random_policy(5, 2, Param::direct, 162);
        const ResidualReport r = residuals(m, pol, pol, RiskEnvelope::cvar(0.3));
        CHECK(r.eps_l == 0.0);
        CHECK(r.eps_u == 0.0);
        CHECK(r.gap == 0.0);
    }
    SUBCASE("expectation envelope against the optimum") {
        for (int i = 0; i < 10; ++i) {
            const Mdp m = oracle::random_mdp(derive_seed(163, i), {4, 2, 0.9, i % 2 == 0});
            const RiskEnvelope env = RiskEnvelope::expectation();
            const Policy opt = optimal_deterministic_policy(m, env);
            const Policy pol = oracle::random_policy(4, 2, Param::direct, derive_seed(164, i));
            const ResidualReport r = residuals(m, pol, opt, env);
            CHECK(std::abs(r.eps_l) < 1e-12);
            CHECK(std::abs(r.eps_u) < 1e-12);
            CHECK(r.gap >= -1e-12);
            CHECK(r.gap <= r.dist_ratio * r.stationarity_term + 1e-10);
        }
    }
}

TEST_CASE("estimator names round-trip") {
    for (auto e : {Estimator::exact, Estimator::importance_sampling, Estimator::correction})
        CHECK(estimator_from_string(to_string(e)) == e);
    CHECK_THROWS_AS(estimator_from_string("naive"), std::invalid_argument);
}
