#include "mcr/envs.hpp"
#include "mcr/value.hpp"

#include <stdexcept>

namespace mcr {

namespace {

int pick_horizon(double gamma, int horizon) {
    if (horizon >= 0) return horizon;
    return gamma == 1.0 ? 3 : 0;
}

Vec point(int n, int s) {
    Vec v = Vec::Zero(n);
    v[s] = 1.0;
    return v;
}

} // namespace

Mdp make_bandit(double gamma, int horizon) {
    // s0, cost-0, cost-0.5, cost-1, absorbing
    const int S = 5, z = 4;
    std::vector<Mat> t(2, Mat::Zero(S, S));
    t[0](0, 1) = 0.2;
    t[0](0, 3) = 0.8;
    t[1](0, 2) = 1.0;
    for (int a = 0; a < 2; ++a)
        for (int s = 1; s < S; ++s) t[a](s, z) = 1.0;
    Vec c(S);
    c << 0.0, 0.0, 0.5, 1.0, 0.0;
    return Mdp(t, c, point(S, 0), gamma, pick_horizon(gamma, horizon), z);
}

Mdp make_lowerbound(double gamma, int horizon) {
    // s0, s1, s2, sT
    const int S = 4, z = 3;
    std::vector<Mat> t(2, Mat::Zero(S, S));
    t[0](0, 2) = 1.0;
    t[1](0, 1) = 0.9;
    t[1](0, 2) = 0.1;
    for (int a = 0; a < 2; ++a)
        for (int s = 1; s < S; ++s) t[a](s, z) = 1.0;
    Vec c(S);
    c << 0.0, 0.0, 1.0, 0.0;
    return Mdp(t, c, point(S, 0), gamma, pick_horizon(gamma, horizon), z);
}

Mdp make_cliffwalk(int rows, int cols, double slip_p, const CliffOptions& opts) {
    if (rows < 2 || cols < 2) throw std::invalid_argument("cliffwalk: need rows >= 2 and cols >= 2");
    if (!(slip_p >= 0.0 && slip_p < 1.0)) throw std::invalid_argument("cliffwalk: slip_p must lie in [0, 1)");
    CliffLayout g{rows, cols};
    const int S = g.n_states(), z = g.terminal();
    const int dr[4] = {-1, 1, 0, 0}, dc[4] = {0, 0, -1, 1};
    std::vector<Mat> t(4, Mat::Zero(S, S));
    Vec c = Vec::Constant(S, opts.step_cost);
    c[z] = 0.0;
    c[g.goal()] = 0.0;
    for (int s = 0; s < rows * cols; ++s) {
        const int r = s / cols, col = s % cols;
        for (int a = 0; a < 4; ++a) {
            if (s == g.goal()) {
                t[a](s, z) = 1.0;
                continue;
            }
            if (g.is_cliff(s)) {
                t[a](s, opts.cliff_resets ? g.start() : z) = 1.0;
                continue;
            }
            int nr = r + dr[a], nc = col + dc[a];
            int next = (nr < 0 || nr >= rows || nc < 0 || nc >= cols) ? s : g.cell(nr, nc);
            if (g.is_edge(s) && slip_p > 0.0) {
                t[a](s, g.cell(r + 1, col)) += slip_p;
                t[a](s, next) += 1.0 - slip_p;
            } else {
                t[a](s, next) = 1.0;
            }
        }
    }
    for (int s = 0; s < rows * cols; ++s)
        if (g.is_cliff(s)) c[s] = opts.cliff_cost;
    for (int a = 0; a < 4; ++a) t[a](z, z) = 1.0;
    return Mdp(t, c, point(S, g.start()), opts.gamma, opts.horizon, z);
}

Mdp make_env(const EnvSpec& spec) {
    if (spec.name == "bandit") return make_bandit(spec.gamma, spec.horizon);
    if (spec.name == "lowerbound") return make_lowerbound(spec.gamma, spec.horizon);
    if (spec.name == "cliffwalk") {
        CliffOptions o = spec.cliff;
        o.gamma = spec.gamma;
        if (spec.horizon >= 0) o.horizon = spec.horizon;
        return make_cliffwalk(spec.rows, spec.cols, spec.slip_p, o);
    }
    throw std::invalid_argument("unknown env '" + spec.name + "'");
}

Policy one_parameter_policy(const Mdp& mdp, double theta) {
    if (mdp.n_actions() != 2) throw std::invalid_argument("one_parameter_policy: needs a 2-action model");
    if (!(theta >= 0.0 && theta <= 1.0)) throw std::invalid_argument("one_parameter_policy: theta outside [0, 1]");
    Mat t(mdp.n_states(), 2);
    t.col(0).setConstant(theta);
    t.col(1).setConstant(1.0 - theta);
    return Policy::direct(t);
}

std::vector<double> uniform_grid(int points) {
    if (points < 2) throw std::invalid_argument("uniform_grid: need at least 2 points");
    std::vector<double> g(points);
    for (int i = 0; i < points; ++i) g[i] = static_cast<double>(i) / (points - 1);
    return g;
}

std::vector<LandscapeRow> landscape_sweep(const Mdp& mdp, const std::vector<double>& alphas,
                                          const std::vector<double>& grid) {
    if (alphas.empty()) throw std::invalid_argument("landscape_sweep: empty alpha list");
    if (grid.size() < 2) throw std::invalid_argument("landscape_sweep: need at least 2 grid points");
    std::vector<LandscapeRow> out;
    for (double a : alphas) {
        RiskEnvelope env = RiskEnvelope::cvar(a);
        std::vector<double> v(grid.size());
        for (size_t i = 0; i < grid.size(); ++i)
            v[i] = mdp.start().dot(mcr_value(mdp, one_parameter_policy(mdp, grid[i]), env).v);
        for (size_t i = 0; i < grid.size(); ++i) {
            size_t j = i + 1 < grid.size() ? i : i - 1;
            double slope = (v[j + 1] - v[j]) / (grid[j + 1] - grid[j]);
            out.push_back({grid[i], a, v[i], slope});
        }
    }
    return out;
}

std::vector<int> greedy_actions(const Policy& policy) {
    std::vector<int> g(policy.n_states());
    for (int s = 0; s < policy.n_states(); ++s) {
        int best = 0;
        for (int a = 1; a < policy.n_actions(); ++a)
            if (policy.pi(s, a) > policy.pi(s, best)) best = a;
        g[s] = best;
    }
    return g;
}

std::vector<int> greedy_path(const Mdp& mdp, const CliffLayout& layout, const Policy& policy) {
    auto act = greedy_actions(policy);
    std::vector<int> path;
    std::vector<bool> seen(mdp.n_states(), false);
    int s = layout.start();
    while (!seen[s]) {
        seen[s] = true;
        path.push_back(s);
        if (s == layout.goal() || s == layout.terminal()) break;
        int next = s;
        double best = -1.0;
        for (const auto& [sp, p] : mdp.successors(s, act[s]))
            if (p > best) {
                best = p;
                next = sp;
            }
        s = next;
    }
    return path;
}

} // namespace mcr
