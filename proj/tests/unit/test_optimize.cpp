#include "doctest.h"

#include "mcr/envs.hpp"
#include "mcr/optimize.hpp"
#include "mcr/util.hpp"
#include "oracles.hpp"

#include <cmath>
#include <sstream>

using namespace mcr;

namespace {

double theta_of(const Mat& params) { return params(0, 0); }

EvalSpec cliff_spec(const CliffLayout& g) {
    EvalSpec e;
    e.goal = g.goal();
    e.failure.assign(g.n_states(), false);
    for (int s = 0; s < g.rows * g.cols; ++s) e.failure[s] = g.is_cliff(s);
    return e;
}

} // namespace

TEST_CASE("projected gradient descent on the bandit") {
    const Mdp m = make_bandit(0.9);
    SUBCASE("alpha = 1 reaches the safe arm") {
        const TrainHistory h = pgd_train(m, RiskEnvelope::cvar(1.0), 0.1, 200, one_parameter_policy(m, 0.5));
        CHECK(theta_of(h.final_params) == doctest::Approx(0.0));
        CHECK(h.records.back().exact_value == doctest::Approx(0.9 * 0.5));
    }
    SUBCASE("alpha = 0.25 near 1 is stuck at a suboptimal stationary point") {
        // CVaR is 1 once the cost-1 mass 0.8 theta covers the tail, so theta >= 0.3125 is flat
        for (double th0 : {1.0, 0.97}) {
            const TrainHistory h = pgd_train(m, RiskEnvelope::cvar(0.25), 0.1, 200, one_parameter_policy(m, th0));
            CHECK(theta_of(h.final_params) == th0);
            CHECK(h.records.back().exact_value == doctest::Approx(0.9));
            CHECK(h.records.back().exact_grad_norm == 0.0);
        }
    }
    SUBCASE("alpha = 0.1 plateau does not move") {
        const TrainHistory h = pgd_train(m, RiskEnvelope::cvar(0.1), 0.1, 50, one_parameter_policy(m, 0.5));
        CHECK(theta_of(h.final_params) == 0.5);
    }
    SUBCASE("best value never increases") {
        const TrainHistory h = pgd_train(m, RiskEnvelope::cvar(0.5), 0.05, 100, one_parameter_policy(m, 0.8));
        for (size_t k = 1; k < h.records.size(); ++k)
            CHECK(h.records[k].best_value <= h.records[k - 1].best_value);
    }
}

TEST_CASE("greedy evaluation") {
    const CliffLayout g{3, 6};
    const Mdp m = make_cliffwalk(3, 6, 0.0, {1.0, 100.0, false, 1.0, 50});
    Mat up = Mat::Zero(m.n_states(), 4);
    up.col(0).setOnes();
    const EvalResult stuck = evaluate_greedy(m, Policy::direct(up), 50, 10, 1, cliff_spec(g));
    CHECK(stuck.mean_cost == 50.0);
    CHECK(stuck.success_rate == 0.0);

    Mat right = Mat::Zero(m.n_states(), 4);
    right.col(3).setOnes();
    const EvalResult fall = evaluate_greedy(m, Policy::direct(right), 50, 10, 1, cliff_spec(g));
    CHECK(fall.mean_cost == 101.0);
    CHECK(fall.success_rate == 0.0);
}

TEST_CASE("actor-critic is deterministic and learns the 3x6 shortest path") {
    const CliffLayout g{3, 6};
    const Mdp m = make_cliffwalk(3, 6, 0.0, {1.0, 100.0, false, 1.0, 100});
    TrainConfig c;
    c.horizon = 100;
    c.episodes = 600;
    c.eval_every = 200;
    c.seed = 5;
    const TrainHistory a = actor_critic_train(m, RiskEnvelope::cvar(1.0), c, cliff_spec(g));
    const TrainHistory b = actor_critic_train(m, RiskEnvelope::cvar(1.0), c, cliff_spec(g));
    std::ostringstream sa, sb;
    write_history_csv(sa, a);
    write_history_csv(sb, b);
    CHECK(sa.str() == sb.str());
    CHECK(a.records.size() == 600u);
    const auto path = greedy_path(m, g, a.final_policy());
    CHECK(static_cast<int>(path.size()) - 1 == oracle::grid_shortest_path(3, 6));
    CHECK(a.records.back().success_rate == 1.0);
    // deterministic env: every stage ratio is one on the visited path
    for (int s : path)
        if (s != g.goal()) CHECK(a.last_w[s] == doctest::Approx(1.0));
}

TEST_CASE("exact estimator equals exact gradient descent") {
    const Mdp m = oracle::random_mdp(171, {3, 2, 0.9, true});
    TrainConfig c;
    c.gamma = 0.9;
    c.estimator = Estimator::exact;
    c.episodes = 5;
    c.n_trajectories = 1;
    c.lr_actor = 0.5;
    c.eval_episodes = 1;
    c.record_vectors = true;
    const RiskEnvelope env = RiskEnvelope::cvar(0.5);
    const TrainHistory h = actor_critic_train(m, env, c);
    Mat theta = Mat::Zero(3, 2);
    for (int k = 0; k < 5; ++k) {
        const GradientReport g = exact_gradient(m, Policy::softmax(theta), env);
        CHECK((g.grad - h.exact_grads[k]).norm() < 1e-12);
        theta -= 0.5 * g.grad;
    }
    CHECK((theta - h.final_params).norm() < 1e-12);
}

TEST_CASE("overflowing episodes are skipped") {
    CliffOptions o;
    o.horizon = 60;
    const Mdp m = make_cliffwalk(3, 6, 0.1, o);
    TrainConfig c;
    c.horizon = 60;
    c.episodes = 5;
    c.n_trajectories = 20;
    c.estimator = Estimator::importance_sampling;
    c.overflow_threshold = 1.0; // any weight above one trips it
    c.eval_every = 0;
    c.eval_episodes = 1;
    const TrainHistory h = actor_critic_train(m, RiskEnvelope::cvar(0.25), c);
    bool any = false;
    for (const auto& r : h.records) {
        CHECK(r.overflow == r.skipped);
        any |= r.overflow;
    }
    CHECK(any);
}

TEST_CASE("stationarity diagnostics") {
    const Mdp m = oracle::random_mdp(181, {3, 2, 0.9, true});
    TrainConfig c;
    c.gamma = 0.9;
    c.estimator = Estimator::exact;
    c.episodes = 40;
    c.n_trajectories = 1;
    c.lr_actor = 1.0;
    c.horizon = 50;
    c.eval_episodes = 1;
    c.record_vectors = true;
    TrainHistory h = actor_critic_train(m, RiskEnvelope::cvar(0.5), c);

    SUBCASE("K = 1") {
        const StationarityReport r = stationarity_diagnostics(h, {}, 1);
        CHECK(r.avg_sq_grad == doctest::Approx(std::pow(h.records[0].exact_grad_norm, 2)));
        CHECK(r.oracle);
    }
    SUBCASE("oracle bound with empirical smoothness") {
        StationarityAssumptions a;
        a.beta = empirical_smoothness(h);
        a.C_max = 10.0;
        const StationarityReport r = stationarity_diagnostics(h, a);
        CHECK(r.variance_term == 0.0);
        CHECK(r.bias_term == 0.0);
        CHECK(r.bound == doctest::Approx(2.0 * a.beta * a.C_max / std::sqrt(40.0)));
        CHECK(r.holds);
    }
    SUBCASE("constant eps_h leaves a bias floor") {
        for (auto& rec : h.records) rec.eps_h = 0.2;
        StationarityAssumptions a;
        a.G = 3.0;
        a.L = 2.0;
        a.sigma_w = 1.5;
        const StationarityReport r = stationarity_diagnostics(h, a);
        CHECK(!r.oracle);
        CHECK(r.bias_term == doctest::Approx(2.0 * a.L * 0.2 * a.sigma_w * a.G));
        const StationarityReport r1 = stationarity_diagnostics(h, a, 1);
        CHECK(r1.bias_term == doctest::Approx(r.bias_term));
    }
    SUBCASE("missing diagnostics") {
        h.records[3].eps_w = EpisodeRecord::nan;
        CHECK_THROWS_AS(stationarity_diagnostics(h, {}), std::invalid_argument);
    }
}

TEST_CASE("history csv schema") {
    TrainHistory h;
    h.records.resize(2);
    h.records[1].episode = 1;
    h.records[1].grad_norm = 0.1;
    h.records[1].overflow = true;
    std::ostringstream os;
    write_history_csv(os, h);
    std::istringstream is(os.str());
    std::string header, r0, r1;
    std::getline(is, header);
    std::getline(is, r0);
    std::getline(is, r1);
    CHECK(header ==
          "episode,objective_est,exact_value,best_value,grad_norm,exact_grad_norm,eval_cost,success_rate,"
          "critic_error,eps_w,eps_h,max_is_weight,shadow_norm,overflow,skipped,shadow_overflow");
    CHECK(r1 == "1,nan,nan,nan,0.1,nan,nan,nan,nan,nan,nan,nan,nan,1,0,0");
    CHECK(format_csv(1.0 / 3.0) == "0.333333333333");
    CHECK(format_csv(-2.5e-20) == "-2.5e-20");
}

TEST_CASE("config validation") {
    const Mdp m = make_bandit();
    TrainConfig c;
    c.horizon = 0;
    CHECK_THROWS_AS(actor_critic_train(m, RiskEnvelope::cvar(0.5), c), std::invalid_argument);
    c = TrainConfig{};
    c.n_trajectories = 0;
    CHECK_THROWS_AS(actor_critic_train(m, RiskEnvelope::cvar(0.5), c), std::invalid_argument);
    c = TrainConfig{};
    c.init_params = Mat::Zero(2, 2);
    CHECK_THROWS_AS(actor_critic_train(m, RiskEnvelope::cvar(0.5), c), std::invalid_argument);
}
