#include "mcr/optimize.hpp"
#include "mcr/util.hpp"
#include "mcr/value.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <map>
#include <ostream>
#include <stdexcept>

namespace mcr {

namespace {
const double kNaN = std::numeric_limits<double>::quiet_NaN();
const double kInf = std::numeric_limits<double>::infinity();

Mat project_rows(const Mat& m) {
    Mat out(m.rows(), m.cols());
    for (int s = 0; s < m.rows(); ++s) out.row(s) = simplex_project(m.row(s).transpose()).transpose();
    return out;
}

// Pr(s_t = s) for t = 0..T-1 under p
std::vector<Vec> state_marginals(const Mat& p, const Vec& d0, int horizon) {
    std::vector<Vec> out;
    out.reserve(horizon);
    Vec d = d0;
    for (int t = 0; t < horizon; ++t) {
        out.push_back(d);
        d = p.transpose() * d;
    }
    return out;
}

// counts pooled over stages
struct EmpiricalModel {
    int S = 0, A = 0;
    Mat sa; // row s * A + a
    Mat s;
    std::vector<std::array<int, 3>> transitions; // (t, s, s')

    EmpiricalModel(const std::vector<Trajectory>& trajs, int n_states, int n_actions)
        : S(n_states), A(n_actions), sa(Mat::Zero(n_states * n_actions, n_states)),
          s(Mat::Zero(n_states, n_states)) {
        for (const auto& tr : trajs)
            for (int t = 0; t < tr.length(); ++t) {
                const int x = tr.steps[t].state, a = tr.steps[t].action, y = tr.next_state(t);
                sa(x * A + a, y) += 1.0;
                s(x, y) += 1.0;
                transitions.push_back({t, x, y});
            }
    }
    bool visited(int x) const { return s.row(x).sum() > 0.0; }
    Vec p_state(int x) const { return s.row(x).transpose() / s.row(x).sum(); }
    bool has(int x, int a) const { return sa.row(x * A + a).sum() > 0.0; }
    Vec p_action(int x, int a) const {
        return sa.row(x * A + a).transpose() / sa.row(x * A + a).sum();
    }
};

struct Critic {
    bool staged = false;
    Mat v; // stages 0..T, or a single row

    double& at(int t, int s) { return v(staged ? t : 0, s); }
    double at(int t, int s) const { return v(staged ? t : 0, s); }
    Vec next(int t) const { return v.row(staged ? t + 1 : 0).transpose(); }
};

void fit_critic(Critic& critic, const EmpiricalModel& em, const std::vector<Vec>& p_hat,
                const Mdp& model, const RiskEnvelope& env, const TrainConfig& cfg,
                std::uint64_t seed) {
    const int n = static_cast<int>(em.transitions.size());
    if (n == 0) return;
    for (int it = 0; it < cfg.iters_critic; ++it) {
        Rng rng(derive_seed(seed, 1000003 + it));
        // one regression step per distinct (stage, state) of the minibatch, targets
        // taken from the critic as it stood before this step
        std::map<std::pair<int, int>, double> targets;
        for (int b = 0; b < cfg.batch_critic; ++b) {
            const int i = std::min(n - 1, static_cast<int>(rng.uniform() * n));
            const auto& tr = em.transitions[i];
            const auto key = std::make_pair(critic.staged ? tr[0] : 0, tr[1]);
            if (targets.count(key)) continue;
            targets[key] = model.cost()[tr[1]] +
                           model.discount() *
                               cvar_saddle(p_hat[tr[1]], critic.next(key.first), env).value;
        }
        for (const auto& [key, y] : targets) {
            double& v = critic.at(key.first, key.second);
            v -= cfg.lr_critic * (v - y);
        }
    }
}

void check_config(const TrainConfig& c) {
    if (!(c.gamma > 0.0 && c.gamma <= 1.0)) throw std::invalid_argument("train: gamma must lie in (0, 1]");
    if (c.n_trajectories < 1) throw std::invalid_argument("train: n_trajectories must be positive");
    if (c.horizon < 1) throw std::invalid_argument("train: horizon must be positive");
    if (c.episodes < 0) throw std::invalid_argument("train: episodes must be nonnegative");
    if (c.batch_critic < 1 || c.iters_critic < 0 || c.iters_actor < 1)
        throw std::invalid_argument("train: bad critic/actor iteration counts");
    if (!(c.lr_actor >= 0.0 && c.lr_critic >= 0.0 && c.lr_critic <= 1.0))
        throw std::invalid_argument("train: learning rates must lie in [0, 1] (critic) / >= 0 (actor)");
}

} // namespace

std::string format_csv(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 12);
    return std::string(buf, r.ptr);
}

EvalResult evaluate_greedy(const Mdp& mdp, const Policy& policy, int horizon, int episodes,
                           std::uint64_t seed, const EvalSpec& spec) {
    if (episodes < 1) throw std::invalid_argument("evaluate_greedy: need at least one episode");
    const int S = mdp.n_states();
    std::vector<int> act(S);
    for (int s = 0; s < S; ++s) {
        int best = 0;
        for (int a = 1; a < policy.n_actions(); ++a)
            if (policy.pi(s, a) > policy.pi(s, best)) best = a;
        act[s] = best;
    }
    std::vector<double> cost(episodes, 0.0);
    std::vector<char> ok(episodes, 0);
    parallel_for(episodes, [&](int e) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(e)));
        int s = rng.categorical(mdp.start(), S);
        bool failed = false, reached = false;
        double c = 0.0;
        for (int t = 0; t < horizon; ++t) {
            if (s == mdp.absorbing()) break;
            c += mdp.cost()[s];
            if (!spec.failure.empty() && spec.failure[s]) failed = true;
            if (s == spec.goal && !failed) reached = true;
            const auto& next = mdp.successors(s, act[s]);
            double u = rng.uniform(), acc = 0.0;
            int sp = next.back().first;
            for (const auto& [x, p] : next) {
                acc += p;
                if (u < acc) {
                    sp = x;
                    break;
                }
            }
            s = sp;
        }
        cost[e] = c;
        ok[e] = reached ? 1 : 0;
    });
    EvalResult r;
    double sum = 0.0, succ = 0.0;
    for (int e = 0; e < episodes; ++e) {
        sum += cost[e];
        succ += ok[e];
    }
    r.mean_cost = sum / episodes;
    if (spec.goal >= 0) r.success_rate = succ / episodes;
    return r;
}

TrainHistory pgd_train(const Mdp& mdp, const RiskEnvelope& env, double eta, int iters,
                       const Policy& theta0, int snapshot_every) {
    if (theta0.kind() != Param::direct) throw std::invalid_argument("pgd_train: needs a direct policy");
    TrainHistory h;
    h.kind = Param::direct;
    Mat theta = theta0.params();
    double best = kInf;
    for (int k = 0; k < iters; ++k) {
        Policy pol = Policy::direct(theta);
        McrValue m = mcr_value(mdp, pol, env);
        HTable ht = h_table(mdp, pol, m, env);
        GradientReport g = exact_gradient(mdp, pol, m, ht);
        EpisodeRecord r;
        r.episode = k;
        r.exact_value = r.objective_est = mdp.start().dot(m.v);
        best = std::min(best, r.exact_value);
        r.best_value = best;
        r.grad_norm = r.exact_grad_norm = g.norm;
        h.records.push_back(r);
        if (snapshot_every > 0 && k % snapshot_every == 0) h.snapshots.emplace_back(k, theta);
        theta = project_rows(theta - eta * g.grad);
    }
    h.final_params = theta;
    return h;
}

TrainHistory actor_critic_train(const Mdp& mdp, const RiskEnvelope& env, const TrainConfig& cfg,
                                const EvalSpec& eval) {
    check_config(cfg);
    const bool staged = cfg.gamma == 1.0;
    const Mdp model = mdp.with_discount(cfg.gamma, staged ? cfg.horizon : 0);
    const int S = model.n_states(), A = model.n_actions(), T = cfg.horizon;
    const int n_tables = staged ? T : 1;
    const double g = cfg.gamma;
    const Vec& d0 = model.start();

    TrainHistory hist;
    hist.kind = Param::softmax;
    Mat theta = Mat::Zero(S, A);
    if (cfg.init_params.size() > 0) {
        if (cfg.init_params.rows() != S || cfg.init_params.cols() != A)
            throw std::invalid_argument("train: init_params has the wrong shape");
        theta = cfg.init_params;
    }
    Critic critic{staged, Mat::Zero(staged ? T + 1 : 1, S)};
    std::vector<Mat> xi(n_tables, Mat::Ones(S, S));
    std::vector<Vec> lambda(n_tables, Vec::Zero(S));
    std::vector<Mat> h(n_tables, Mat::Zero(S, A));
    double best = kInf;

    for (int k = 0; k < cfg.episodes; ++k) {
        const std::uint64_t ep_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(k));
        Policy pol = Policy::softmax(theta);
        EpisodeRecord rec;
        rec.episode = k;

        // exact quantities against the true model
        McrValue exact_m;
        HTable exact_h;
        GradientReport exact_g;
        const bool need_exact = cfg.track_exact || cfg.estimator == Estimator::exact ||
                                cfg.record_vectors;
        if (need_exact) {
            exact_m = mcr_value(model, pol, env);
            exact_h = h_table(model, pol, exact_m, env);
            exact_g = exact_gradient(model, pol, exact_m, exact_h);
            rec.exact_value = d0.dot(exact_m.v);
            rec.exact_grad_norm = exact_g.norm;
            best = std::min(best, rec.exact_value);
            rec.best_value = best;
            if (cfg.record_vectors) {
                hist.exact_grads.push_back(exact_g.grad);
                hist.thetas.push_back(theta);
            }
        }
        if (cfg.snapshot_every > 0 && k % cfg.snapshot_every == 0) hist.snapshots.emplace_back(k, theta);

        if (cfg.estimator == Estimator::exact) {
            // oracle mode: exact w and h, no sampling
            rec.objective_est = rec.exact_value;
            rec.grad_norm = exact_g.norm;
            rec.eps_w = rec.eps_h = rec.critic_error = 0.0;
            Mat step = exact_g.grad;
            for (int it = 0; it < cfg.iters_actor; ++it) {
                if (it > 0) step = exact_gradient(model, Policy::softmax(theta), env).grad;
                theta -= cfg.lr_actor * cfg.n_trajectories * step;
            }
        } else {
            auto trajs = sample_trajectories(model, pol, cfg.n_trajectories, T, ep_seed);
            EmpiricalModel em(trajs, S, A);
            std::vector<Vec> p_hat(S);
            for (int x = 0; x < S; ++x)
                if (em.visited(x)) p_hat[x] = em.p_state(x);

            fit_critic(critic, em, p_hat, model, env, cfg, ep_seed);
            rec.objective_est = d0.dot(critic.v.row(0).transpose());

            // saddles and h on visited (stage, state) pairs; the rest keep old values
            std::vector<std::vector<char>> seen(n_tables, std::vector<char>(S, 0));
            for (const auto& tr : em.transitions) seen[staged ? tr[0] : 0][tr[1]] = 1;
            for (int t = 0; t < n_tables; ++t) {
                const Vec nv = critic.next(t);
                for (int x = 0; x < S; ++x) {
                    if (!seen[t][x]) continue;
                    SaddleSolution sd = cvar_saddle(p_hat[x], nv, env);
                    xi[t].row(x) = sd.xi.transpose();
                    lambda[t][x] = sd.lambda_p;
                    for (int a = 0; a < A; ++a) {
                        if (!em.has(x, a)) continue;
                        Vec pa = em.p_action(x, a);
                        double acc = 0.0;
                        for (int y = 0; y < S; ++y)
                            if (pa[y] > 0.0) acc += pa[y] * sd.xi[y] * (nv[y] - sd.lambda_p);
                        h[t](x, a) = g * acc;
                    }
                }
            }

            CorrectionWeights w;
            bool have_w = false;
            auto make_w = [&]() {
                if (have_w) return;
                if (staged) {
                    w = correction_weights_staged(trajs, S, xi);
                } else {
                    TransitionBatch b = batch_from_trajectories(trajs, S, g, d0, T, model.absorbing());
                    w = cfg.w_method == WMethod::kernel ? correction_weights_kernel(b, xi[0], cfg.kernel)
                                                        : correction_weights_empirical(b, xi[0]);
                }
                have_w = true;
            };
            auto estimate = [&](Estimator e, const Policy& p) {
                if (e == Estimator::importance_sampling)
                    return is_gradient(trajs, p, xi, h, g, cfg.overflow_threshold);
                make_w();
                return correction_gradient(trajs, p, w, h, g);
            };

            GradientReport est = estimate(cfg.estimator, pol);
            rec.grad_norm = est.norm;
            if (cfg.estimator == Estimator::importance_sampling) {
                rec.max_is_weight = est.weights.max_overall;
                rec.overflow = est.overflow;
            }
            if (cfg.shadow) {
                Estimator other = cfg.estimator == Estimator::correction ? Estimator::importance_sampling
                                                                         : Estimator::correction;
                GradientReport sh = estimate(other, pol);
                rec.shadow_norm = sh.norm;
                if (other == Estimator::importance_sampling) {
                    rec.shadow_overflow = sh.overflow;
                    rec.max_is_weight = sh.weights.max_overall;
                }
            }
            if (est.overflow) {
                rec.skipped = true;
            } else {
                for (int it = 0; it < cfg.iters_actor; ++it) {
                    if (it > 0) {
                        est = estimate(cfg.estimator, Policy::softmax(theta));
                        if (est.overflow) {
                            rec.skipped = true;
                            break;
                        }
                    }
                    theta -= cfg.lr_actor * cfg.n_trajectories * est.grad;
                }
            }

            if (have_w) {
                // per-state view for dumps: visit-weighted over stages
                Vec num = Vec::Zero(S), den = Vec::Zero(S);
                std::vector<int> best_t(S, 0);
                std::vector<std::map<int, int>> per_t(S);
                for (const auto& tr : em.transitions) {
                    const double wv = w.at(staged ? tr[0] : 0, tr[1]);
                    if (!std::isnan(wv)) {
                        num[tr[1]] += wv;
                        den[tr[1]] += 1.0;
                    }
                    per_t[tr[1]][staged ? tr[0] : 0] += 1;
                }
                hist.last_w = Vec::Constant(S, kNaN);
                for (int x = 0; x < S; ++x)
                    if (den[x] > 0.0) hist.last_w[x] = num[x] / den[x];
                hist.last_xi = Mat::Ones(S, S);
                for (int x = 0; x < S; ++x) {
                    int top = 0, cnt = -1;
                    for (const auto& [t, c] : per_t[x])
                        if (c > cnt) {
                            cnt = c;
                            top = t;
                        }
                    hist.last_xi.row(x) = xi[top].row(x);
                }
            }

            if (cfg.track_exact) {
                const Mat p = induced_transition(model, pol);
                if (staged) {
                    auto marg = state_marginals(p, d0, T);
                    auto occ = reweighted_occupancy(p, exact_m, d0, g);
                    double ce = 0.0, eh = 0.0, mass = 0.0, wnum = 0.0;
                    for (int t = 0; t < T; ++t)
                        for (int x = 0; x < S; ++x) {
                            const double q = marg[t][x];
                            if (q <= 0.0 || x == model.absorbing()) continue;
                            mass += q;
                            wnum += occ[t][x];
                            ce += q * std::pow(exact_m.stage_v[t][x] - critic.at(t, x), 2);
                            for (int a = 0; a < A; ++a)
                                eh += q * pol.pi(x, a) * std::pow(exact_h.at(t)(x, a) - h[t](x, a), 2);
                        }
                    rec.critic_error = std::sqrt(ce / mass);
                    rec.eps_h = std::sqrt(eh / mass);
                    if (have_w) {
                        const double norm = wnum / mass;
                        double ew = 0.0, m2 = 0.0;
                        for (int t = 0; t < T && t < static_cast<int>(w.stage_w.size()); ++t)
                            for (int x = 0; x < S; ++x) {
                                const double q = marg[t][x];
                                if (q <= 0.0 || x == model.absorbing() || std::isnan(w.stage_w[t][x])) continue;
                                ew += q * std::pow(occ[t][x] / q / norm - w.stage_w[t][x], 2);
                                m2 += q;
                            }
                        rec.eps_w = m2 > 0.0 ? std::sqrt(ew / m2) : kNaN;
                    }
                } else {
                    Visitation d = discounted_visitation(p, d0, g);
                    double ce = 0.0, eh = 0.0;
                    for (int x = 0; x < S; ++x) {
                        ce += d.d[x] * std::pow(exact_m.v[x] - critic.at(0, x), 2);
                        for (int a = 0; a < A; ++a)
                            eh += d.d[x] * pol.pi(x, a) * std::pow(exact_h.h(x, a) - h[0](x, a), 2);
                    }
                    rec.critic_error = std::sqrt(ce);
                    rec.eps_h = std::sqrt(eh);
                    if (have_w) {
                        CorrectionWeights we = correction_weights_exact(p, exact_m.saddles, g, d0);
                        double ew = 0.0, m2 = 0.0;
                        for (int x = 0; x < S; ++x) {
                            if (!d.support[x] || std::isnan(w.w[x])) continue;
                            ew += d.d[x] * std::pow(we.w[x] - w.w[x], 2);
                            m2 += d.d[x];
                        }
                        rec.eps_w = m2 > 0.0 ? std::sqrt(ew / m2) : kNaN;
                    }
                }
            }
        }

        const bool last = k + 1 == cfg.episodes;
        if ((cfg.eval_every > 0 && k % cfg.eval_every == 0) || last) {
            EvalResult ev = evaluate_greedy(model, Policy::softmax(theta), T, cfg.eval_episodes,
                                            cfg.eval_seed, eval);
            rec.eval_cost = ev.mean_cost;
            rec.success_rate = ev.success_rate;
        }
        hist.records.push_back(rec);
    }
    hist.final_params = theta;
    hist.critic = critic.v.row(0).transpose();
    return hist;
}

StationarityReport stationarity_diagnostics(const TrainHistory& history,
                                            const StationarityAssumptions& a, int K) {
    const int n = static_cast<int>(history.records.size());
    if (K <= 0) K = n;
    if (K > n) throw std::invalid_argument("stationarity_diagnostics: K exceeds the history length");
    if (K == 0) throw std::invalid_argument("stationarity_diagnostics: empty history");
    StationarityReport r;
    r.K = K;
    r.oracle = true;
    const double sk = std::sqrt(static_cast<double>(K));
    double sq = 0.0, var = 0.0, bias = 0.0;
    for (int k = 0; k < K; ++k) {
        const auto& rec = history.records[k];
        if (std::isnan(rec.exact_grad_norm) || std::isnan(rec.eps_w) || std::isnan(rec.eps_h))
            throw std::invalid_argument("stationarity_diagnostics: record " + std::to_string(k) +
                                        " lacks exact gradient or estimation-error diagnostics");
        sq += rec.exact_grad_norm * rec.exact_grad_norm;
        const double ew = rec.eps_w, eh = rec.eps_h;
        if (ew != 0.0 || eh != 0.0) r.oracle = false;
        const double spread = a.sigma_w * a.sigma_w + ew * ew;
        var += (6.0 / sk) * (ew * ew * a.C_max * a.C_max + eh * eh * spread) * a.G * a.G;
        bias += 2.0 * a.L * (ew * a.C_max + eh * std::sqrt(spread)) * a.G;
    }
    r.avg_sq_grad = sq / K;
    r.smooth_term = 2.0 * a.beta * a.C_max / sk;
    r.variance_term = var / K;
    r.bias_term = bias / K;
    r.bound = r.smooth_term + r.variance_term + r.bias_term;
    r.holds = r.avg_sq_grad <= r.bound;
    return r;
}

double empirical_smoothness(const TrainHistory& history) {
    const auto& g = history.exact_grads;
    const auto& th = history.thetas;
    if (g.size() < 2 || th.size() != g.size())
        throw std::invalid_argument("empirical_smoothness: per-episode vectors were not recorded");
    double beta = 0.0;
    for (size_t k = 0; k + 1 < g.size(); ++k) {
        const double dt = (th[k + 1] - th[k]).norm();
        if (dt > 0.0) beta = std::max(beta, (g[k + 1] - g[k]).norm() / dt);
    }
    return beta;
}

void write_history_csv(std::ostream& os, const TrainHistory& history) {
    os << "episode,objective_est,exact_value,best_value,grad_norm,exact_grad_norm,eval_cost,"
          "success_rate,critic_error,eps_w,eps_h,max_is_weight,shadow_norm,overflow,skipped,"
          "shadow_overflow\n";
    for (const auto& r : history.records) {
        os << r.episode << ',' << format_csv(r.objective_est) << ',' << format_csv(r.exact_value)
           << ',' << format_csv(r.best_value) << ',' << format_csv(r.grad_norm) << ','
           << format_csv(r.exact_grad_norm) << ',' << format_csv(r.eval_cost) << ','
           << format_csv(r.success_rate) << ',' << format_csv(r.critic_error) << ','
           << format_csv(r.eps_w) << ',' << format_csv(r.eps_h) << ','
           << format_csv(r.max_is_weight) << ',' << format_csv(r.shadow_norm) << ','
           << (r.overflow ? 1 : 0) << ',' << (r.skipped ? 1 : 0) << ','
           << (r.shadow_overflow ? 1 : 0) << '\n';
    }
}

} // namespace mcr
