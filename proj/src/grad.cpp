#include "mcr/grad.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mcr {

namespace {
const double kNaN = std::numeric_limits<double>::quiet_NaN();
const double kInf = std::numeric_limits<double>::infinity();

using StageSaddles = std::vector<std::vector<SaddleSolution>>;

StageSaddles stages_of(const McrValue& mcr) {
    if (mcr.finite_horizon) return mcr.stage_saddles;
    return {mcr.saddles};
}

// occupancy of the chain p reweighted by the given saddles
std::vector<Vec> occupancy(const Mat& p, const StageSaddles& st, const Vec& d0, double gamma,
                           bool finite) {
    const int S = static_cast<int>(p.rows());
    if (!finite) {
        Mat a = Mat::Identity(S, S) - gamma * reweighted_chain(p, st[0]).transpose();
        Vec o = a.partialPivLu().solve(d0);
        for (int s = 0; s < S; ++s) o[s] = std::max(0.0, o[s]);
        return {o};
    }
    std::vector<Vec> out;
    out.reserve(st.size());
    Vec o = d0;
    for (size_t t = 0; t < st.size(); ++t) {
        out.push_back(o);
        if (t + 1 < st.size()) o = gamma * reweighted_chain(p, st[t]).transpose() * o;
    }
    return out;
}

} // namespace

std::string to_string(Estimator e) {
    switch (e) {
    case Estimator::exact: return "exact";
    case Estimator::importance_sampling: return "importance_sampling";
    case Estimator::correction: return "correction";
    }
    return "?";
}

Estimator estimator_from_string(const std::string& s) {
    if (s == "exact") return Estimator::exact;
    if (s == "importance_sampling") return Estimator::importance_sampling;
    if (s == "correction") return Estimator::correction;
    throw std::invalid_argument("unknown estimator '" + s + "'");
}

std::vector<Vec> reweighted_occupancy(const Mat& p_theta, const McrValue& mcr, const Vec& d0,
                                      double gamma) {
    return occupancy(p_theta, stages_of(mcr), d0, gamma, mcr.finite_horizon);
}

Visitation reweighted_visitation(const Mat& p_theta, const std::vector<SaddleSolution>& saddles,
                                 const Vec& d0, double gamma) {
    if (!(gamma > 0.0 && gamma < 1.0))
        throw std::invalid_argument("reweighted_visitation: gamma must lie in (0, 1)");
    Vec d = (1.0 - gamma) * occupancy(p_theta, {saddles}, d0, gamma, false)[0];
    Visitation v;
    v.support.resize(d.size());
    for (int s = 0; s < d.size(); ++s) v.support[s] = d[s] > 0.0;
    v.d = std::move(d);
    return v;
}

Vec grad_log_pi(const Policy& policy, int s, int a) {
    const int A = policy.n_actions();
    Vec g = Vec::Zero(A);
    if (policy.kind() == Param::softmax) {
        g = -policy.table().row(s).transpose();
        g[a] += 1.0;
    } else {
        g[a] = 1.0 / policy.pi(s, a);
    }
    return g;
}

Mat assemble_gradient(const Policy& policy, const std::vector<Vec>& occ, const HTable& h) {
    const int S = policy.n_states(), A = policy.n_actions();
    Mat g = Mat::Zero(S, A);
    for (size_t t = 0; t < occ.size(); ++t) {
        const Mat& ht = h.at(static_cast<int>(t));
        for (int s = 0; s < S; ++s) {
            const double o = occ[t][s];
            if (o == 0.0) continue;
            if (policy.kind() == Param::direct) {
                g.row(s) += o * ht.row(s);
            } else {
                const double mean = policy.table().row(s).dot(ht.row(s));
                for (int b = 0; b < A; ++b) g(s, b) += o * policy.pi(s, b) * (ht(s, b) - mean);
            }
        }
    }
    return g;
}

GradientReport exact_gradient(const Mdp& mdp, const Policy& policy, const McrValue& mcr,
                              const HTable& h) {
    const Mat p = induced_transition(mdp, policy);
    auto occ = reweighted_occupancy(p, mcr, mdp.start(), mdp.discount());
    GradientReport r;
    r.estimator = Estimator::exact;
    r.grad = assemble_gradient(policy, occ, h);
    r.norm = r.grad.norm();
    for (size_t t = 0; t < occ.size(); ++t)
        for (int s = 0; s < mdp.n_states(); ++s)
            if (occ[t][s] > 0.0 && mcr.saddles_at(static_cast<int>(t))[s].tie) r.nondifferentiable = true;
    return r;
}

GradientReport exact_gradient(const Mdp& mdp, const Policy& policy, const RiskEnvelope& env) {
    McrValue mcr = mcr_value(mdp, policy, env);
    HTable h = h_table(mdp, policy, mcr, env);
    return exact_gradient(mdp, policy, mcr, h);
}

CorrectionWeights correction_weights_exact(const Mat& p_theta,
                                           const std::vector<SaddleSolution>& saddles,
                                           double gamma, const Vec& d0) {
    if (!(gamma > 0.0 && gamma < 1.0))
        throw std::invalid_argument("correction_weights_exact: gamma must lie in (0, 1)");
    Visitation d = discounted_visitation(p_theta, d0, gamma);
    Visitation dx = reweighted_visitation(p_theta, saddles, d0, gamma);
    const int S = static_cast<int>(d0.size());
    CorrectionWeights cw;
    cw.method = CorrectionWeights::Method::linear_solve;
    cw.support = d.support;
    cw.w = Vec::Constant(S, kNaN);
    for (int s = 0; s < S; ++s)
        if (d.support[s]) cw.w[s] = dx.d[s] / d.d[s];
    Vec l = correction_functional(p_theta, d.d, cw.w, saddles, gamma, d0);
    cw.objective_residual = l.cwiseAbs().maxCoeff();
    return cw;
}

Vec correction_functional(const Mat& p_theta, const Vec& d, const Vec& w_in,
                          const std::vector<SaddleSolution>& saddles, double gamma,
                          const Vec& d0) {
    const int S = static_cast<int>(d.size());
    Vec w = w_in;
    for (int s = 0; s < S; ++s)
        if (std::isnan(w[s])) w[s] = 0.0;
    Vec out = Vec::Zero(S);
    for (int x = 0; x < S; ++x) {
        double acc = 0.0;
        for (int s = 0; s < S; ++s) acc += d[s] * p_theta(s, x) * (w[s] * saddles[s].xi[x] - w[x]);
        out[x] = gamma * acc + (1.0 - gamma) * d0[x] * (1.0 - w[x]);
    }
    return out;
}

TransitionBatch batch_from_transitions(const std::vector<std::array<int, 3>>& sas, int n_states,
                                       double gamma, const Vec& d0) {
    TransitionBatch b;
    b.n_states = n_states;
    b.d0 = d0;
    b.c0 = (1.0 - gamma) / gamma;
    const double w = sas.empty() ? 0.0 : 1.0 / static_cast<double>(sas.size());
    b.items.reserve(sas.size());
    for (const auto& x : sas) b.items.push_back({x[0], x[1], x[2], 0, w});
    return b;
}

TransitionBatch batch_from_trajectories(const std::vector<Trajectory>& trajs, int n_states,
                                        double gamma, const Vec& d0, int horizon, int absorbing) {
    TransitionBatch b;
    b.n_states = n_states;
    b.d0 = d0;
    b.c0 = (1.0 - gamma) / gamma;
    if (trajs.empty()) return b;
    const double n = static_cast<double>(trajs.size());
    for (const auto& tr : trajs) {
        double disc = 1.0;
        for (int t = 0; t < tr.length(); ++t) {
            b.items.push_back({tr.steps[t].state, tr.steps[t].action, tr.next_state(t), t,
                               (1.0 - gamma) * disc / n});
            disc *= gamma;
        }
        const int len = tr.length();
        if (absorbing >= 0 && tr.final_state == absorbing && len < horizon && len > 0) {
            // mass of the omitted absorbing self-loops for t = len .. horizon-1
            const double tail = disc * (1.0 - std::pow(gamma, horizon - len)) / n;
            b.items.push_back({absorbing, 0, absorbing, len, tail});
        }
    }
    return b;
}

Mat xi_matrix(const std::vector<SaddleSolution>& saddles) {
    const int S = static_cast<int>(saddles.size());
    Mat xi(S, S);
    for (int s = 0; s < S; ++s) xi.row(s) = saddles[s].xi.transpose();
    return xi;
}

namespace {

struct Flow {
    Mat f;   // f(x, y): weighted xi-flow from y into x
    Vec rho; // arrival weight plus start term
    Vec start;
};

Flow build_flow(const TransitionBatch& b, const Mat& xi) {
    const int S = b.n_states;
    Flow fl{Mat::Zero(S, S), Vec::Zero(S), b.c0 * b.d0};
    for (const auto& it : b.items) {
        fl.f(it.sp, it.s) += it.weight * xi(it.s, it.sp);
        fl.rho[it.sp] += it.weight;
    }
    fl.rho += fl.start;
    return fl;
}

void finish(CorrectionWeights& cw, const TransitionBatch& b, const Mat& xi, const Flow& fl,
            bool normalize) {
    const int S = b.n_states;
    cw.support.assign(S, false);
    for (int s = 0; s < S; ++s) cw.support[s] = fl.rho[s] > 0.0;
    cw.objective_residual = kernel_objective(b, xi, cw.w);
    if (normalize) {
        double num = 0.0, den = 0.0;
        for (const auto& it : b.items) {
            num += it.weight * cw.w[it.s];
            den += it.weight;
        }
        if (num > 0.0 && den > 0.0) {
            cw.normalizer = num / den;
            cw.w /= cw.normalizer;
        }
    }
    for (int s = 0; s < S; ++s)
        if (!cw.support[s]) cw.w[s] = kNaN;
}

void check_batch(const TransitionBatch& b, const Mat& xi) {
    if (b.items.empty()) throw std::invalid_argument("correction weights: empty batch");
    if (xi.rows() != b.n_states || xi.cols() != b.n_states || b.d0.size() != b.n_states)
        throw std::invalid_argument("correction weights: dimension mismatch");
}

} // namespace

double kernel_objective(const TransitionBatch& b, const Mat& xi, const Vec& w_in) {
    const int S = b.n_states;
    Vec w = w_in;
    for (int s = 0; s < S; ++s)
        if (std::isnan(w[s])) w[s] = 0.0;
    Vec d = b.c0 * b.d0.cwiseProduct(Vec::Ones(S) - w);
    for (const auto& it : b.items) d[it.sp] += it.weight * (w[it.s] * xi(it.s, it.sp) - w[it.sp]);
    return d.squaredNorm();
}

CorrectionWeights correction_weights_kernel(const TransitionBatch& b, const Mat& xi,
                                            KernelOptions opts) {
    check_batch(b, xi);
    const int S = b.n_states;
    Flow fl = build_flow(b, xi);
    CorrectionWeights cw;
    cw.method = CorrectionWeights::Method::kernel_minmax;
    cw.w = Vec::Ones(S);
    cw.converged = false;
    // Preconditioned semi-gradient step on the delta-kernel residual: each coordinate
    // moves toward its one-step target with the incoming weights held fixed.
    Vec r(S);
    int k = 0;
    for (; k < opts.iterations; ++k) {
        Vec inflow = fl.f * cw.w + fl.start;
        double worst = 0.0;
        for (int x = 0; x < S; ++x) {
            r[x] = fl.rho[x] > 0.0 ? inflow[x] / fl.rho[x] - cw.w[x] : 0.0;
            worst = std::max(worst, std::abs(r[x]));
        }
        if (worst < opts.threshold) {
            cw.converged = true;
            break;
        }
        cw.w += opts.step * r;
    }
    cw.iterations = k;
    finish(cw, b, xi, fl, opts.normalize);
    return cw;
}

CorrectionWeights correction_weights_kernel(const std::vector<Trajectory>& trajs,
                                            const std::vector<SaddleSolution>& saddles,
                                            double gamma, const Vec& d0, KernelOptions opts,
                                            int horizon, int absorbing) {
    TransitionBatch b = batch_from_trajectories(trajs, static_cast<int>(d0.size()), gamma, d0,
                                                horizon, absorbing);
    return correction_weights_kernel(b, xi_matrix(saddles), opts);
}

CorrectionWeights correction_weights_empirical(const TransitionBatch& b, const Mat& xi,
                                               bool normalize) {
    check_batch(b, xi);
    const int S = b.n_states;
    Flow fl = build_flow(b, xi);
    std::vector<int> sup;
    for (int s = 0; s < S; ++s)
        if (fl.rho[s] > 0.0) sup.push_back(s);
    const int m = static_cast<int>(sup.size());
    Mat a(m, m);
    Vec rhs(m);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) a(i, j) = -fl.f(sup[i], sup[j]);
        a(i, i) += fl.rho[sup[i]];
        rhs[i] = fl.start[sup[i]];
    }
    Vec sol = a.partialPivLu().solve(rhs);
    CorrectionWeights cw;
    cw.method = CorrectionWeights::Method::linear_solve;
    cw.w = Vec::Zero(S);
    for (int i = 0; i < m; ++i) cw.w[sup[i]] = sol[i];
    finish(cw, b, xi, fl, normalize);
    return cw;
}

CorrectionWeights correction_weights_staged(const std::vector<Trajectory>& trajs, int n_states,
                                            const std::vector<Mat>& stage_xi, bool normalize) {
    if (trajs.empty()) throw std::invalid_argument("correction weights: empty batch");
    if (stage_xi.empty()) throw std::invalid_argument("correction weights: no saddle tables");
    int horizon = 0;
    for (const auto& tr : trajs) horizon = std::max(horizon, tr.length());
    const int S = n_states;
    std::vector<Vec> mass(horizon + 1, Vec::Zero(S)), visits(horizon + 1, Vec::Zero(S));
    for (const auto& tr : trajs)
        if (tr.length() > 0) {
            visits[0][tr.steps[0].state] += 1.0;
            mass[0][tr.steps[0].state] += 1.0;
        }
    CorrectionWeights cw;
    cw.method = CorrectionWeights::Method::empirical_flow;
    cw.stage_w.assign(horizon + 1, Vec::Constant(S, kNaN));
    for (int t = 0; t < horizon; ++t) {
        Vec& wt = cw.stage_w[t];
        for (int s = 0; s < S; ++s)
            if (visits[t][s] > 0.0) wt[s] = mass[t][s] / visits[t][s];
        const Mat& xi = stage_xi[std::min<size_t>(t, stage_xi.size() - 1)];
        for (const auto& tr : trajs) {
            if (t >= tr.length()) continue;
            const int s = tr.steps[t].state, x = tr.next_state(t);
            mass[t + 1][x] += wt[s] * xi(s, x);
            visits[t + 1][x] += 1.0;
        }
    }
    Vec& wl = cw.stage_w[horizon];
    for (int s = 0; s < S; ++s)
        if (visits[horizon][s] > 0.0) wl[s] = mass[horizon][s] / visits[horizon][s];

    cw.support.assign(S, false);
    double num = 0.0, den = 0.0;
    for (const auto& tr : trajs)
        for (int t = 0; t < tr.length(); ++t) {
            cw.support[tr.steps[t].state] = true;
            num += cw.stage_w[t][tr.steps[t].state];
            den += 1.0;
        }
    if (normalize && num > 0.0) {
        cw.normalizer = num / den;
        for (auto& w : cw.stage_w) w /= cw.normalizer;
    }
    cw.w = cw.stage_w[0];
    return cw;
}

GradientReport is_gradient(const std::vector<Trajectory>& trajs, const Policy& policy,
                           const std::vector<Mat>& stage_xi, const std::vector<Mat>& stage_h,
                           double gamma, double overflow_threshold) {
    if (trajs.empty()) throw std::invalid_argument("is_gradient: empty batch");
    if (stage_xi.empty() || stage_h.empty()) throw std::invalid_argument("is_gradient: missing tables");
    const int S = policy.n_states(), A = policy.n_actions();
    auto at = [](const std::vector<Mat>& v, int t) -> const Mat& {
        return v[std::min<size_t>(t, v.size() - 1)];
    };
    GradientReport r;
    r.estimator = Estimator::importance_sampling;
    r.grad = Mat::Zero(S, A);
    int horizon = 0;
    for (const auto& tr : trajs) horizon = std::max(horizon, tr.length());
    std::vector<double> wmax(horizon, 0.0), wsum(horizon, 0.0), wcnt(horizon, 0.0);
    const double n = static_cast<double>(trajs.size());
    for (const auto& tr : trajs) {
        double weight = 1.0, disc = 1.0;
        for (int t = 0; t < tr.length(); ++t) {
            const int s = tr.steps[t].state, a = tr.steps[t].action;
            if (t > 0) weight *= at(stage_xi, t - 1)(tr.steps[t - 1].state, s);
            wmax[t] = std::max(wmax[t], weight);
            wsum[t] += weight;
            wcnt[t] += 1.0;
            if (!(weight <= overflow_threshold)) r.overflow = true;
            const double hv = at(stage_h, t)(s, a);
            if (weight != 0.0 && hv != 0.0)
                r.grad.row(s) += (disc * weight * hv / n) * grad_log_pi(policy, s, a).transpose();
            disc *= gamma;
        }
    }
    r.weights.max_weight = wmax;
    r.weights.mean_weight.resize(horizon);
    for (int t = 0; t < horizon; ++t) r.weights.mean_weight[t] = wcnt[t] > 0 ? wsum[t] / wcnt[t] : 0.0;
    r.weights.max_overall = wmax.empty() ? 0.0 : *std::max_element(wmax.begin(), wmax.end());
    if (r.overflow || !r.grad.allFinite()) {
        r.overflow = true;
        r.grad.setConstant(kInf);
        r.norm = kInf;
    } else {
        r.norm = r.grad.norm();
    }
    return r;
}

GradientReport correction_gradient(const std::vector<Trajectory>& trajs, const Policy& policy,
                                   const CorrectionWeights& w, const std::vector<Mat>& stage_h,
                                   double gamma) {
    if (trajs.empty()) throw std::invalid_argument("correction_gradient: empty batch");
    const int S = policy.n_states(), A = policy.n_actions();
    GradientReport r;
    r.estimator = Estimator::correction;
    r.grad = Mat::Zero(S, A);
    const double n = static_cast<double>(trajs.size());
    for (const auto& tr : trajs) {
        double disc = 1.0;
        for (int t = 0; t < tr.length(); ++t) {
            const int s = tr.steps[t].state, a = tr.steps[t].action;
            const double wv = w.at(t, s);
            const double hv = stage_h[std::min<size_t>(t, stage_h.size() - 1)](s, a);
            if (wv != 0.0 && hv != 0.0)
                r.grad.row(s) += (disc * wv * hv / n) * grad_log_pi(policy, s, a).transpose();
            disc *= gamma;
        }
    }
    r.norm = r.grad.norm();
    return r;
}

GradientReport aggregate_replicates(const std::vector<GradientReport>& reps) {
    if (reps.empty()) throw std::invalid_argument("aggregate_replicates: no replicates");
    GradientReport out;
    out.estimator = reps[0].estimator;
    out.grad = Mat::Zero(reps[0].grad.rows(), reps[0].grad.cols());
    for (const auto& r : reps) {
        out.grad += r.grad;
        out.overflow |= r.overflow;
        out.nondifferentiable |= r.nondifferentiable;
    }
    const double k = static_cast<double>(reps.size());
    out.grad /= k;
    out.seeds_variance = Mat::Zero(out.grad.rows(), out.grad.cols());
    if (reps.size() > 1) {
        for (const auto& r : reps) out.seeds_variance.array() += (r.grad - out.grad).array().square();
        out.seeds_variance /= (k - 1.0);
    }
    out.norm = out.grad.norm();
    return out;
}

ResidualReport residuals(const Mdp& mdp, const Policy& policy, const Policy& reference,
                         const RiskEnvelope& env) {
    const double g = mdp.discount();
    const Vec& d0 = mdp.start();
    const int S = mdp.n_states(), A = mdp.n_actions();
    McrValue m = mcr_value(mdp, policy, env);
    McrValue mr = mcr_value(mdp, reference, env);
    HTable h = h_table(mdp, policy, m, env);
    const Mat p = induced_transition(mdp, policy);
    const Mat pr = induced_transition(mdp, reference);
    const StageSaddles st = stages_of(m), str = stages_of(mr);
    const bool finite = m.finite_horizon;
    auto occ = occupancy(p, st, d0, g, finite);
    auto occ_ref = occupancy(pr, st, d0, g, finite);

    ResidualReport r;
    r.gap = d0.dot(m.v - mr.v);
    for (size_t t = 0; t < st.size(); ++t) {
        const Mat& ht = h.at(static_cast<int>(t));
        for (int s = 0; s < S; ++s) {
            const double o = occ[t][s];
            const auto& sd = st[t][s];
            const auto& sdr = str[t][s];
            // dist ratio over the support of either occupancy
            if (occ_ref[t][s] > 0.0) {
                if (o > 0.0) r.dist_ratio = std::max(r.dist_ratio, occ_ref[t][s] / o);
                else r.support_violation = true;
            }
            if (o == 0.0) continue;
            Vec dp = (p.row(s) - pr.row(s)).transpose();
            r.eps_l += g * o * std::abs((sd.lambda_p - sdr.lambda_p) * dp.dot(sd.xi));

            Vec prow = p.row(s).transpose(), prrow = pr.row(s).transpose();
            double u = sdr.lambda_ineq.dot(env.ineq(sd.xi, prrow) - env.ineq(sd.xi, prow));
            u += sdr.lambda_eq.dot(env.eq(sd.xi, prrow) - env.eq(sd.xi, prow));
            // theta-derivative of the constraint terms, per action
            Vec cf = env.ineq_dp(sd.xi, prow).transpose() * sd.lambda_ineq +
                     env.eq_dp(sd.xi, prow).transpose() * sd.lambda_eq;
            for (int a = 0; a < A; ++a) {
                double df = mdp.transition(a).row(s).dot(cf);
                u += (policy.pi(s, a) - reference.pi(s, a)) * df;
            }
            r.eps_u += g * o * std::abs(u);

            Vec gs = o * ht.row(s).transpose();
            r.stationarity_term += policy.table().row(s).dot(gs) - gs.minCoeff();
        }
    }
    r.bound = r.support_violation ? kInf
                                  : r.dist_ratio * (r.stationarity_term + r.eps_l + r.eps_u);
    return r;
}

Policy optimal_deterministic_policy(const Mdp& mdp, const RiskEnvelope& env) {
    const int S = mdp.n_states(), A = mdp.n_actions();
    double count = std::pow(static_cast<double>(A), S);
    if (count > 1e6) throw std::invalid_argument("optimal_deterministic_policy: model too large");
    std::vector<int> choice(S, 0);
    double best = kInf;
    Mat best_table;
    while (true) {
        Mat t = Mat::Zero(S, A);
        for (int s = 0; s < S; ++s) t(s, choice[s]) = 1.0;
        Policy pol = Policy::direct(t);
        double v = mdp.start().dot(mcr_value(mdp, pol, env).v);
        if (v < best - 1e-12) {
            best = v;
            best_table = t;
        }
        int s = 0;
        while (s < S && ++choice[s] == A) choice[s++] = 0;
        if (s == S) break;
    }
    return Policy::direct(best_table);
}

std::string to_text(const GradientReport& r) {
    std::ostringstream os;
    os << "estimator " << to_string(r.estimator) << "\n";
    os << "norm " << format_double(r.norm) << "\n";
    os << "overflow " << (r.overflow ? 1 : 0) << "\n";
    os << "nondifferentiable " << (r.nondifferentiable ? 1 : 0) << "\n";
    for (int s = 0; s < r.grad.rows(); ++s)
        for (int a = 0; a < r.grad.cols(); ++a)
            os << "grad " << s << " " << a << " " << format_double(r.grad(s, a)) << "\n";
    for (int s = 0; s < r.seeds_variance.rows(); ++s)
        for (int a = 0; a < r.seeds_variance.cols(); ++a)
            os << "variance " << s << " " << a << " " << format_double(r.seeds_variance(s, a)) << "\n";
    return os.str();
}

std::string to_text(const ResidualReport& r) {
    std::ostringstream os;
    os << "eps_l " << format_double(r.eps_l) << "\n";
    os << "eps_u " << format_double(r.eps_u) << "\n";
    os << "gap " << format_double(r.gap) << "\n";
    os << "dist_ratio " << format_double(r.dist_ratio) << "\n";
    os << "stationarity_term " << format_double(r.stationarity_term) << "\n";
    os << "bound " << format_double(r.bound) << "\n";
    os << "support_violation " << (r.support_violation ? 1 : 0) << "\n";
    return os.str();
}

} // namespace mcr
