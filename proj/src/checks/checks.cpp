#include "checks.hpp"

#include "mcr/envs.hpp"
#include "mcr/grad.hpp"
#include "mcr/optimize.hpp"
#include "mcr/util.hpp"
#include "mcr/value.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace mcr::checks {

namespace {

using Clock = std::chrono::steady_clock;

// collects failed sub-checks and a short summary
struct Log {
    std::vector<std::string> failures;
    std::ostringstream info;

    void expect(bool ok, const std::string& what) {
        if (!ok) failures.push_back(what);
    }
    void near(double got, double want, double tol, const std::string& what) {
        if (!(std::abs(got - want) <= tol)) {
            std::ostringstream os;
            os << what << ": got " << format_double(got) << ", want " << format_double(want);
            failures.push_back(os.str());
        }
    }
};

CheckResult timed(const std::string& id, const std::string& title, double budget,
                  const std::function<void(Log&)>& body) {
    CheckResult r{id, title, false, "", 0.0, budget};
    Log log;
    const auto t0 = Clock::now();
    try {
        body(log);
    } catch (const std::exception& e) {
        log.failures.push_back(std::string("exception: ") + e.what());
    }
    r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    if (r.seconds > budget) {
        std::ostringstream os;
        os << "runtime " << r.seconds << " s exceeds " << budget << " s";
        log.failures.push_back(os.str());
    }
    r.passed = log.failures.empty();
    std::string detail = log.info.str();
    const size_t shown = std::min<size_t>(log.failures.size(), 5);
    for (size_t i = 0; i < shown; ++i) detail += (detail.empty() ? "" : "; ") + log.failures[i];
    if (log.failures.size() > shown)
        detail += "; ... " + std::to_string(log.failures.size() - shown) + " more";
    r.detail = detail;
    return r;
}

std::string fmt(double x, int prec = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", prec, x);
    return buf;
}

EvalSpec cliff_eval(const CliffLayout& g) {
    EvalSpec e;
    e.goal = g.goal();
    e.failure.assign(g.n_states(), false);
    for (int s = 0; s < g.rows * g.cols; ++s) e.failure[s] = g.is_cliff(s);
    return e;
}

} // namespace

CheckResult lowerbound_table() {
    return timed("1", "lower-bound golden table", 1.0, [](Log& log) {
        const Mdp m = make_lowerbound(1.0);
        const RiskEnvelope env = RiskEnvelope::cvar(0.5, true);
        const double tol = 1e-9;
        McrValue a = mcr_value(m, one_parameter_policy(m, 4.0 / 9.0), env);
        log.near(a.saddles[0].xi[1], 0.0, tol, "theta=4/9 xi(s1)");
        log.near(a.saddles[0].xi[2], 2.0, tol, "theta=4/9 xi(s2)");
        log.near(a.saddles[0].lambda_p, 1.0, tol, "theta=4/9 lambda");
        log.near(a.v[0], 1.0, tol, "theta=4/9 V(s0)");
        McrValue b = mcr_value(m, one_parameter_policy(m, 0.0), env);
        log.near(b.saddles[0].xi[1], 8.0 / 9.0, tol, "theta=0 xi(s1)");
        log.near(b.saddles[0].xi[2], 2.0, tol, "theta=0 xi(s2)");
        log.near(b.saddles[0].lambda_p, 0.0, tol, "theta=0 lambda");
        log.near(b.v[0], 0.2, tol, "theta=0 V(s0)");
        log.info << "V(4/9)=" << fmt(a.v[0], 10) << " V(0)=" << fmt(b.v[0], 10);
    });
}

CheckResult gradient_domination() {
    return timed("2", "gradient-domination tightness", 1.0, [](Log& log) {
        for (double g : {0.5, 0.9, 1.0}) {
            const Mdp m = make_lowerbound(g);
            ResidualReport r = residuals(m, one_parameter_policy(m, 4.0 / 9.0),
                                         one_parameter_policy(m, 0.0), RiskEnvelope::cvar(0.5, true));
            const std::string tag = "gamma=" + fmt(g) + " ";
            log.near(r.eps_l, 0.8 * g, 1e-8, tag + "eps_L");
            log.near(r.eps_u, 0.0, 1e-8, tag + "eps_U");
            log.near(r.stationarity_term, 0.0, 1e-8, tag + "stationarity");
            log.near(r.gap, 0.8 * g, 1e-8, tag + "gap");
            log.near(r.bound, r.gap, 1e-8, tag + "bound vs gap");
            log.expect(!r.support_violation, tag + "support violation");
        }
        log.info << "eps_L = gap = bound = 0.8 gamma";
    });
}

CheckResult correction_oracles() {
    return timed("3", "correction-weight oracle equivalence", 30.0, [](Log& log) {
        const double gamma = 0.9;
        double worst_series = 0.0, worst_kernel = 0.0;
        for (int i = 0; i < 10; ++i) {
            const Mdp m = oracle::random_mdp(derive_seed(3001, i));
            const Policy pol = oracle::random_policy(5, 2, Param::softmax, derive_seed(3002, i));
            const Mat p = induced_transition(m, pol);
            Rng rng(derive_seed(3003, i));
            // saddles of random value vectors at alpha in [0.5, 1)
            const double alpha = 0.5 + 0.5 * rng.uniform();
            std::vector<SaddleSolution> sd;
            for (int s = 0; s < 5; ++s) {
                Vec v(5);
                for (int x = 0; x < 5; ++x) v[x] = rng.uniform();
                sd.push_back(cvar_saddle(p.row(s).transpose(), v, alpha));
            }
            const CorrectionWeights w = correction_weights_exact(p, sd, gamma, m.start());
            const Visitation d = discounted_visitation(p, m.start(), gamma);
            const Vec dxi = oracle::power_series_visitation(p, xi_matrix(sd), m.start(), gamma);
            for (int s = 0; s < 5; ++s)
                worst_series = std::max(worst_series, std::abs(dxi[s] / d.d[s] - w.w[s]));

            std::vector<std::array<int, 3>> sas;
            Rng draw(derive_seed(3004, i));
            for (int k = 0; k < 10000; ++k) {
                const int s = draw.categorical(d.d, 5);
                const int a = draw.categorical(pol.table().row(s), 2);
                const Vec row = m.transition(a).row(s).transpose();
                sas.push_back({s, a, draw.categorical(row, 5)});
            }
            const TransitionBatch b = batch_from_transitions(sas, 5, gamma, m.start());
            const CorrectionWeights wk = correction_weights_kernel(b, xi_matrix(sd));
            log.expect(wk.converged, "instance " + std::to_string(i) + " kernel did not converge");
            double err = 0.0;
            for (int s = 0; s < 5; ++s) err = std::max(err, std::abs(wk.w[s] - w.w[s]));
            worst_kernel = std::max(worst_kernel, err);
            log.expect(err <= 5e-2, "instance " + std::to_string(i) + " kernel sup error " + fmt(err));
        }
        log.expect(worst_series <= 1e-8, "power series error " + fmt(worst_series));
        log.info << "series max err " << fmt(worst_series, 3) << ", kernel max err " << fmt(worst_kernel, 3);
    });
}

CheckResult gradient_fd() {
    return timed("4", "exact-gradient finite-difference check", 60.0, [](Log& log) {
        double worst = 0.0;
        int checked = 0, rejected = 0;
        for (double alpha : {0.3, 0.7, 1.0}) {
            const RiskEnvelope env = RiskEnvelope::cvar(alpha);
            std::uint64_t draw = 0;
            for (int i = 0; i < 20; ++i) {
                const Param kind = i % 2 == 0 ? Param::softmax : Param::direct;
                while (true) {
                    const std::uint64_t seed = derive_seed(4000 + static_cast<int>(alpha * 10), draw++);
                    const Mdp m = oracle::random_mdp(seed);
                    const Policy pol = oracle::random_policy(5, 2, kind, derive_seed(seed, 1));
                    if (oracle::quantile_margin(m, pol, env) < 1e-3) {
                        ++rejected;
                        continue;
                    }
                    const Mat fd = oracle::fd_gradient(m, pol, env, 1e-5);
                    const Mat an = oracle::tangent_view(exact_gradient(m, pol, env).grad, kind);
                    const double err = (fd - an).norm() / std::max(an.norm(), 1e-12);
                    worst = std::max(worst, err);
                    log.expect(err <= 1e-4, "alpha=" + fmt(alpha) + " policy " + std::to_string(i) +
                                                " rel err " + fmt(err));
                    ++checked;
                    break;
                }
            }
        }
        log.info << checked << " policies, " << rejected << " near-tie draws rejected, worst rel err "
                 << fmt(worst, 3);
    });
}

CheckResult coherence_axioms() {
    return timed("5", "coherence-axiom property suite", 10.0, [](Log& log) {
        const double tol = 1e-8;
        int bad = 0;
        for (int i = 0; i < 500; ++i) {
            Rng rng(derive_seed(5000, i));
            const int n = 2 + static_cast<int>(rng.uniform() * 5);
            Vec p = oracle::random_distribution(n, derive_seed(5001, i));
            if (i % 3 == 0) {
                p[0] = 0.0; // zero-mass outcome
                p /= p.sum();
            }
            Vec v(n);
            for (int k = 0; k < n; ++k) v[k] = 10.0 * rng.uniform() - 5.0;
            if (i % 5 == 0) v[n - 1] = v[0]; // value tie
            const double alpha = 0.05 + 0.95 * rng.uniform();
            const double val = cvar_saddle(p, v, alpha).value;

            const std::string tag = "instance " + std::to_string(i) + " ";
            double prev = std::numeric_limits<double>::infinity();
            for (double a : {0.1, 0.25, 0.5, 1.0}) {
                const double x = cvar_saddle(p, v, a).value;
                if (!(x <= prev + tol)) {
                    log.expect(false, tag + "not monotone in alpha");
                    ++bad;
                }
                prev = x;
            }
            const double c = 7.0 * rng.uniform() - 3.0;
            if (std::abs(cvar_saddle(p, (v.array() + c).matrix(), alpha).value - (val + c)) > tol) {
                log.expect(false, tag + "translation equivariance");
                ++bad;
            }
            const double t = 0.1 + 5.0 * rng.uniform();
            const SaddleSolution base = cvar_saddle(p, v, alpha);
            const SaddleSolution scaled = cvar_saddle(p, t * v, alpha);
            if (std::abs(scaled.value - t * val) > tol * std::max(1.0, std::abs(t * val)) ||
                (scaled.xi - base.xi).cwiseAbs().maxCoeff() > 1e-12) {
                log.expect(false, tag + "positive homogeneity");
                ++bad;
            }
            if (std::abs(val - oracle::cvar_primal(p, v, alpha)) > tol) {
                log.expect(false, tag + "primal-dual mismatch");
                ++bad;
            }
        }
        log.info << "500 instances, " << bad << " violations";
    });
}

CheckResult landscape_shape() {
    return timed("6", "landscape qualitative shape", 10.0, [](Log& log) {
        const Mdp m = make_bandit(1.0);
        const auto grid = uniform_grid(201);
        const auto rows = landscape_sweep(m, {0.1, 0.25, 0.5, 1.0}, grid);
        int flat = 0;
        for (const auto& r : rows) {
            if (r.alpha == 1.0) log.near(r.dvdtheta, 0.3, 1e-8, "alpha=1 slope at theta=" + fmt(r.theta));
            if (r.alpha == 0.1 && std::abs(r.dvdtheta) < 1e-9) ++flat;
        }
        for (double a : {0.1, 0.25, 0.5}) {
            const LandscapeRow* first = nullptr;
            const LandscapeRow* last = nullptr;
            for (const auto& r : rows) {
                if (r.alpha != a) continue;
                if (!first) first = &r;
                last = &r;
            }
            // minimization over [0, 1]: no descent into the interior from either end
            log.expect(first->dvdtheta >= -1e-9, "alpha=" + fmt(a) + " theta=0 not stationary");
            log.expect(last->dvdtheta <= 1e-9, "alpha=" + fmt(a) + " theta=1 not stationary");
        }
        const double frac = static_cast<double>(flat) / grid.size();
        log.expect(frac >= 0.2, "alpha=0.1 plateau fraction " + fmt(frac));
        log.info << "alpha=0.1 zero-slope fraction " << fmt(frac, 3);
    });
}

CheckResult cliffwalk_behavior() {
    return timed("7", "cliffwalk behavior (3x6)", 600.0, [](Log& log) {
        const int rows = 3, cols = 6, horizon = 100;
        const CliffLayout g{rows, cols};
        CliffOptions o;
        o.horizon = horizon;
        const Mdp det = make_cliffwalk(rows, cols, 0.0, o);
        const Mdp slip = make_cliffwalk(rows, cols, 0.1, o);
        const EvalSpec ev = cliff_eval(g);

        TrainConfig c;
        c.horizon = horizon;
        c.episodes = 2000;
        c.eval_every = 0;
        c.estimator = Estimator::correction;
        c.seed = 7;

        c.alpha = 1.0;
        const TrainHistory h1 = actor_critic_train(det, RiskEnvelope::cvar(1.0), c, ev);
        const Policy p1 = h1.final_policy();
        const auto path1 = greedy_path(det, g, p1);
        const int shortest = oracle::grid_shortest_path(rows, cols);
        const EvalResult e1 = evaluate_greedy(det, p1, horizon, 1000, c.eval_seed, ev);
        log.expect(static_cast<int>(path1.size()) - 1 == shortest && path1.back() == g.goal(),
                   "alpha=1 greedy path has " + std::to_string(path1.size() - 1) + " moves, shortest is " +
                       std::to_string(shortest));
        log.expect(e1.success_rate == 1.0, "alpha=1 deterministic success " + fmt(e1.success_rate));

        c.alpha = 0.25;
        const TrainHistory h2 = actor_critic_train(slip, RiskEnvelope::cvar(0.25), c, ev);
        const Policy p2 = h2.final_policy();
        const auto path2 = greedy_path(slip, g, p2);
        bool edge = false;
        for (int s : path2) edge |= g.is_edge(s);
        const EvalResult e1s = evaluate_greedy(slip, p1, horizon, 1000, c.eval_seed, ev);
        const EvalResult e2s = evaluate_greedy(slip, p2, horizon, 1000, c.eval_seed, ev);
        log.expect(!edge, "alpha=0.25 greedy path enters the cliff-adjacent row");
        log.expect(e2s.success_rate > e1s.success_rate,
                   "alpha=0.25 slippery success " + fmt(e2s.success_rate) + " not above alpha=1's " +
                       fmt(e1s.success_rate));
        log.info << "alpha=1: " << path1.size() - 1 << " moves, success " << fmt(e1.success_rate)
                 << " (slippery " << fmt(e1s.success_rate) << "); alpha=0.25: greedy path "
                 << (path2.back() == g.goal() ? "reaches goal" : "stops short of goal")
                 << ", slippery success " << fmt(e2s.success_rate);
    });
}

CheckResult importance_sampling_divergence() {
    return timed("8", "importance-sampling divergence", 600.0, [](Log& log) {
        const double alpha = 0.25;
        CliffOptions o;
        o.horizon = 500;
        const Mdp big = make_cliffwalk(4, 12, 0.1, o);
        TrainConfig c;
        c.horizon = 500;
        c.episodes = 50;
        c.estimator = Estimator::importance_sampling;
        c.shadow = true;
        c.eval_every = 0;
        c.eval_episodes = 10;
        int diverged = 0;
        double max_weight = 0.0, max_corr = 0.0;
        for (int seed = 1; seed <= 5; ++seed) {
            c.seed = static_cast<std::uint64_t>(seed);
            const TrainHistory h = actor_critic_train(big, RiskEnvelope::cvar(alpha), c);
            bool any = false;
            for (const auto& r : h.records) {
                any |= r.overflow;
                max_weight = std::max(max_weight, r.max_is_weight);
                max_corr = std::max(max_corr, r.shadow_norm);
            }
            diverged += any ? 1 : 0;
        }
        log.expect(diverged >= 4, "overflow in " + std::to_string(diverged) + " of 5 seeds");
        log.expect(max_corr < 1e3, "correction gradient norm reached " + fmt(max_corr));

        const CliffLayout small{2, 4};
        const Mdp trunc = make_cliffwalk(2, 4, 0.1, o);
        c.episodes = 2000;
        c.shadow = false;
        c.seed = 1;
        c.eval_every = 2000;
        c.eval_episodes = 1000;
        const TrainHistory h = actor_critic_train(trunc, RiskEnvelope::cvar(alpha), c, cliff_eval(small));
        int overflow = 0;
        for (const auto& r : h.records) overflow += r.overflow ? 1 : 0;
        const double before = h.records.front().eval_cost, after = h.records.back().eval_cost;
        log.expect(overflow == 0, "2x4 run overflowed in " + std::to_string(overflow) + " episodes");
        log.expect(after < before, "2x4 evaluation cost " + fmt(after) + " did not improve on " + fmt(before));
        log.info << "4x12: overflow seeds " << diverged << "/5, max IS weight " << fmt(max_weight, 3)
                 << ", max correction norm " << fmt(max_corr, 3) << "; 2x4: cost " << fmt(before)
                 << " -> " << fmt(after);
    });
}

CheckResult stationarity_trend() {
    return timed("9", "stationarity trend", 60.0, [](Log& log) {
        oracle::RandomMdpOptions mo;
        mo.n_states = 3;
        mo.n_actions = 2;
        mo.gamma = 0.9;
        const Mdp m = oracle::random_mdp(derive_seed(900, 1), mo);
        TrainConfig c;
        c.gamma = 0.9;
        c.estimator = Estimator::exact;
        c.episodes = 400;
        c.n_trajectories = 1;
        c.horizon = 100;
        c.lr_actor = 1.0;
        c.eval_every = 0;
        c.eval_episodes = 1;
        c.record_vectors = true;
        const TrainHistory h = actor_critic_train(m, RiskEnvelope::cvar(0.5), c);
        auto avg = [&](int K) {
            double s = 0.0;
            for (int k = 0; k < K; ++k) s += std::pow(h.records[k].exact_grad_norm, 2);
            return s / K;
        };
        const double a25 = avg(25), a400 = avg(400);
        log.expect(a400 <= 0.5 * a25, "avg sq grad " + fmt(a400) + " at K=400 vs " + fmt(a25) + " at K=25");
        StationarityAssumptions as;
        as.beta = empirical_smoothness(h);
        as.C_max = 1.0 / (1.0 - mo.gamma);
        const StationarityReport rep = stationarity_diagnostics(h, as);
        log.info << "avg sq grad K=25 " << fmt(a25, 3) << ", K=400 " << fmt(a400, 3) << "; beta "
                 << fmt(as.beta, 3) << ", bound " << fmt(rep.bound, 3) << (rep.holds ? " holds" : " violated");
    });
}

std::vector<std::string> suite_names() { return {"lowerbound", "correction", "gradient", "envelope", "all"}; }

std::vector<CheckResult> run_suite(const std::string& suite) {
    if (suite == "lowerbound") return {lowerbound_table(), gradient_domination()};
    if (suite == "correction") return {correction_oracles()};
    if (suite == "gradient") return {gradient_fd()};
    if (suite == "envelope") return {coherence_axioms()};
    if (suite == "all")
        return {lowerbound_table(), gradient_domination(), correction_oracles(), gradient_fd(),
                coherence_axioms()};
    throw std::invalid_argument("unknown suite '" + suite + "'");
}

std::vector<CheckResult> run_acceptance() {
    return {lowerbound_table(), gradient_domination(), correction_oracles(), gradient_fd(),
            coherence_axioms(), landscape_shape(), cliffwalk_behavior(),
            importance_sampling_divergence(), stationarity_trend()};
}

std::string format_line(const CheckResult& r) {
    char t[32];
    std::snprintf(t, sizeof t, "%.2f", r.seconds);
    return std::string(r.passed ? "PASS" : "FAIL") + " " + r.id + " " + r.title + " [" + t + "s] " + r.detail;
}

} // namespace mcr::checks
