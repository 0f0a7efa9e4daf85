#include "mcr/risk.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace mcr {

namespace {
constexpr double kMassTol = 1e-12;
}

RiskEnvelope RiskEnvelope::cvar(double alpha, bool largest_quantile) {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("cvar: alpha must lie in (0, 1]");
    return RiskEnvelope(Kind::cvar, alpha, largest_quantile);
}

RiskEnvelope RiskEnvelope::expectation() { return RiskEnvelope(Kind::expectation, 1.0, false); }

RiskEnvelope RiskEnvelope::with_largest_quantile(bool on) const {
    return RiskEnvelope(kind_, alpha_, on);
}

Vec RiskEnvelope::ineq(const Vec& xi, const Vec& /*p*/) const {
    const int n = static_cast<int>(xi.size());
    Vec f(2 * n);
    f.head(n) = -xi;
    f.tail(n) = xi.array() - 1.0 / alpha_;
    return f;
}

Vec RiskEnvelope::eq(const Vec&, const Vec&) const { return Vec(0); }

Mat RiskEnvelope::ineq_dp(const Vec& xi, const Vec&) const {
    return Mat::Zero(2 * xi.size(), xi.size());
}

Mat RiskEnvelope::eq_dp(const Vec& xi, const Vec&) const { return Mat::Zero(0, xi.size()); }

namespace {

void check_inputs(const Vec& p, const Vec& v) {
    if (p.size() != v.size() || p.size() == 0)
        throw std::invalid_argument("cvar_saddle: p and v must be non-empty and of equal size");
    if (!v.allFinite()) throw std::invalid_argument("cvar_saddle: non-finite value");
    if (!p.allFinite() || (p.array() < 0.0).any() || std::abs(p.sum() - 1.0) > 1e-9)
        throw std::invalid_argument("cvar_saddle: p is not a distribution");
}

} // namespace

SaddleSolution cvar_saddle(const Vec& p, const Vec& v, double alpha, bool largest_quantile) {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("cvar_saddle: alpha must lie in (0, 1]");
    check_inputs(p, v);
    const int n = static_cast<int>(p.size());
    const double top = 1.0 / alpha;

    std::vector<int> idx;
    for (int i = 0; i < n; ++i)
        if (p[i] > 0.0) idx.push_back(i);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return v[a] > v[b]; });

    SaddleSolution sol;
    sol.xi = Vec::Ones(n);
    sol.lambda_eq = Vec(0);

    double above = 0.0;
    size_t g = 0;
    bool placed = false;
    while (g < idx.size()) {
        size_t e = g;
        double mass = 0.0;
        while (e < idx.size() && v[idx[e]] == v[idx[g]]) mass += p[idx[e++]];
        const double vg = v[idx[g]];
        if (placed) {
            for (size_t k = g; k < e; ++k) sol.xi[idx[k]] = 0.0;
        } else if (above + mass < alpha - kMassTol) {
            for (size_t k = g; k < e; ++k) sol.xi[idx[k]] = top;
            above += mass;
        } else if (above + mass <= alpha + kMassTol) {
            // quantile set is [v_next, vg]
            for (size_t k = g; k < e; ++k) sol.xi[idx[k]] = top;
            const bool has_next = e < idx.size();
            sol.tie = has_next;
            sol.lambda_p = (has_next && !largest_quantile) ? v[idx[e]] : vg;
            placed = true;
        } else {
            const double w = (alpha - above) / (alpha * mass);
            for (size_t k = g; k < e; ++k) sol.xi[idx[k]] = w;
            sol.lambda_p = vg;
            placed = true;
        }
        g = e;
    }

    // outcomes with p = 0 take the weight an infinitesimal mass would get, so h gives the
    // one-sided derivative at boundary policies
    for (int i = 0; i < n; ++i) {
        if (p[i] > 0.0 || alpha == 1.0) continue;
        if (v[i] > sol.lambda_p) sol.xi[i] = top;
        else if (v[i] < sol.lambda_p) sol.xi[i] = 0.0;
        else
            for (int j : idx)
                if (v[j] == v[i]) {
                    sol.xi[i] = sol.xi[j];
                    break;
                }
    }

    sol.value = 0.0;
    for (int i : idx) sol.value += p[i] * sol.xi[i] * v[i];

    // KKT multipliers of the box: p_i (v_i - lambda) = mu_up - mu_lo
    sol.lambda_ineq = Vec::Zero(2 * n);
    for (int i : idx) {
        if (sol.xi[i] == top) sol.lambda_ineq[n + i] = std::max(0.0, p[i] * (v[i] - sol.lambda_p));
        else if (sol.xi[i] == 0.0) sol.lambda_ineq[i] = std::max(0.0, p[i] * (sol.lambda_p - v[i]));
    }
    return sol;
}

SaddleSolution cvar_saddle(const Vec& p, const Vec& v, const RiskEnvelope& env) {
    if (env.kind() == RiskEnvelope::Kind::expectation) {
        // no box: xi = 1 and lambda^P is the mean
        check_inputs(p, v);
        const int n = static_cast<int>(p.size());
        SaddleSolution sol;
        sol.xi = Vec::Ones(n);
        sol.value = 0.0;
        for (int i = 0; i < n; ++i)
            if (p[i] > 0.0) sol.value += p[i] * v[i];
        sol.lambda_p = sol.value;
        sol.lambda_ineq = Vec::Zero(2 * n);
        sol.lambda_eq = Vec(0);
        return sol;
    }
    return cvar_saddle(p, v, env.alpha(), env.largest_quantile());
}

double lagrangian_eval(const SaddleSolution& sol, const Vec& p, const Vec& v,
                       const RiskEnvelope& env) {
    if (sol.xi.size() != p.size() || p.size() != v.size())
        throw std::invalid_argument("lagrangian_eval: dimension mismatch");
    const int n = static_cast<int>(p.size());
    if (sol.lambda_ineq.size() != env.n_ineq(n) || sol.lambda_eq.size() != env.n_eq(n))
        throw std::invalid_argument("lagrangian_eval: multiplier dimension mismatch");
    double val = (p.array() * sol.xi.array() * v.array()).sum();
    val -= sol.lambda_p * (p.dot(sol.xi) - 1.0);
    val -= sol.lambda_eq.dot(env.eq(sol.xi, p));
    val -= sol.lambda_ineq.dot(env.ineq(sol.xi, p));
    return val;
}

double brute_force_envelope_max(const Vec& p, const Vec& v, const RiskEnvelope& env,
                                int grid_resolution) {
    check_inputs(p, v);
    const int n = static_cast<int>(p.size());
    if (n > 6) throw std::invalid_argument("brute_force_envelope_max: at most 6 outcomes");
    const double top = 1.0 / env.alpha();
    double best = -std::numeric_limits<double>::infinity();

    // vertices: every coordinate at 0 or 1/alpha except at most one
    for (int mask = 0; mask < (1 << n); ++mask) {
        double used = 0.0, val = 0.0;
        for (int i = 0; i < n; ++i)
            if (mask >> i & 1) {
                used += p[i] * top;
                val += p[i] * top * v[i];
            }
        if (std::abs(used - 1.0) <= 1e-12) best = std::max(best, val);
        for (int j = 0; j < n; ++j) {
            if ((mask >> j & 1) || p[j] <= 0.0) continue;
            double xj = (1.0 - used) / p[j];
            if (xj < -1e-12 || xj > top + 1e-12) continue;
            best = std::max(best, val + p[j] * xj * v[j]);
        }
    }

    if (n <= 3 && grid_resolution > 0 && p[n - 1] > 0.0) {
        std::vector<int> k(n - 1, 0);
        while (true) {
            double used = 0.0, val = 0.0;
            for (int i = 0; i < n - 1; ++i) {
                double x = top * k[i] / grid_resolution;
                used += p[i] * x;
                val += p[i] * x * v[i];
            }
            double last = (1.0 - used) / p[n - 1];
            if (last >= 0.0 && last <= top) best = std::max(best, val + p[n - 1] * last * v[n - 1]);
            int i = 0;
            while (i < n - 1 && ++k[i] > grid_resolution) k[i++] = 0;
            if (i == n - 1) break;
        }
    }
    return best;
}

} // namespace mcr
