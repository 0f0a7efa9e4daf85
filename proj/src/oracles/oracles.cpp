#include "oracles.hpp"

#include "mcr/util.hpp"
#include "mcr/value.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace mcr::oracle {

double cvar_primal(const Vec& p, const Vec& v, double alpha) {
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < p.size(); ++j) {
        if (p[j] <= 0.0) continue;
        const double t = v[j];
        double tail = 0.0;
        for (int i = 0; i < p.size(); ++i)
            if (p[i] > 0.0 && v[i] > t) tail += p[i] * (v[i] - t);
        best = std::min(best, t + tail / alpha);
    }
    return best;
}

Vec power_series_visitation(const Mat& p_theta, const Mat& xi, const Vec& d0, double gamma,
                            double tail_tol) {
    const Mat q = p_theta.cwiseProduct(xi).transpose();
    Vec term = d0, sum = Vec::Zero(d0.size());
    double scale = 1.0;
    // xi <= 1/alpha can inflate mass, so stop on the term itself rather than on gamma^t
    for (int t = 0; t < 100000; ++t) {
        sum += scale * term;
        term = q * term;
        scale *= gamma;
        if (scale * term.lpNorm<1>() < tail_tol) break;
    }
    return (1.0 - gamma) * sum;
}

Vec monte_carlo_visitation(const Mdp& mdp, const Policy& policy, int rollouts,
                           std::uint64_t seed, double tail_tol) {
    const int S = mdp.n_states(), A = mdp.n_actions();
    const double g = mdp.discount();
    const int len = static_cast<int>(std::ceil(std::log(tail_tol) / std::log(g)));
    Vec d = Vec::Zero(S);
    Rng rng(seed);
    for (int r = 0; r < rollouts; ++r) {
        int s = rng.categorical(mdp.start(), S);
        double w = 1.0 - g;
        for (int t = 0; t < len; ++t) {
            d[s] += w;
            w *= g;
            const int a = rng.categorical(policy.table().row(s), A);
            Vec row = mdp.transition(a).row(s).transpose();
            s = rng.categorical(row, S);
        }
    }
    return d / rollouts;
}

int grid_shortest_path(int rows, int cols) {
    auto id = [&](int r, int c) { return r * cols + c; };
    const int start = id(rows - 1, 0), goal = id(rows - 1, cols - 1);
    std::vector<int> dist(rows * cols, -1);
    std::deque<int> q{start};
    dist[start] = 0;
    while (!q.empty()) {
        const int s = q.front();
        q.pop_front();
        if (s == goal) return dist[s];
        const int r = s / cols, c = s % cols;
        const int nb[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
        for (const auto& n : nb) {
            if (n[0] < 0 || n[0] >= rows || n[1] < 0 || n[1] >= cols) continue;
            const int x = id(n[0], n[1]);
            if (x > start && x < goal) continue; // cliff
            if (dist[x] < 0) {
                dist[x] = dist[s] + 1;
                q.push_back(x);
            }
        }
    }
    return -1;
}

Vec random_distribution(int n, std::uint64_t seed) {
    Rng rng(seed);
    Vec p(n);
    // exponential spacings give a uniform point on the simplex
    for (int i = 0; i < n; ++i) p[i] = -std::log(1.0 - rng.uniform()) + 1e-3;
    return p / p.sum();
}

Mdp random_mdp(std::uint64_t seed, const RandomMdpOptions& o) {
    const int S = o.n_states, A = o.n_actions;
    Rng rng(seed);
    std::vector<Mat> t(A, Mat::Zero(S, S));
    for (int a = 0; a < A; ++a)
        for (int s = 0; s < S; ++s) {
            Vec row = random_distribution(S, derive_seed(seed, 17 + a * S + s));
            if (!o.dense) {
                // keep two or three successors
                const int keep = 2 + static_cast<int>(rng.uniform() * 2.0);
                std::vector<int> idx(S);
                std::iota(idx.begin(), idx.end(), 0);
                for (int i = S - 1; i > 0; --i)
                    std::swap(idx[i], idx[static_cast<int>(rng.uniform() * (i + 1))]);
                Vec r2 = Vec::Zero(S);
                for (int i = 0; i < std::min(keep, S); ++i) r2[idx[i]] = row[idx[i]];
                row = r2 / r2.sum();
            }
            t[a].row(s) = row.transpose();
        }
    Vec c(S);
    for (int s = 0; s < S; ++s) c[s] = rng.uniform();
    Vec d0 = random_distribution(S, derive_seed(seed, 5));
    return Mdp(t, c, d0, o.gamma);
}

Policy random_policy(int S, int A, Param kind, std::uint64_t seed) {
    Rng rng(seed);
    Mat m(S, A);
    if (kind == Param::softmax) {
        for (int s = 0; s < S; ++s)
            for (int a = 0; a < A; ++a) m(s, a) = 2.0 * rng.uniform() - 1.0;
        return Policy::softmax(m);
    }
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) m(s, a) = 0.2 + rng.uniform();
    for (int s = 0; s < S; ++s) m.row(s) /= m.row(s).sum();
    return Policy::direct(m);
}

namespace {
double objective(const Mdp& mdp, const Policy& p, const RiskEnvelope& env) {
    return mdp.start().dot(mcr_value(mdp, p, env, 1e-13).v);
}
} // namespace

Mat fd_gradient(const Mdp& mdp, const Policy& policy, const RiskEnvelope& env, double h) {
    const int S = policy.n_states(), A = policy.n_actions();
    Mat g = Mat::Zero(S, A);
    const Mat base = policy.params();
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) {
            if (policy.kind() == Param::direct && a == 0) continue;
            Mat plus = base, minus = base;
            plus(s, a) += h;
            minus(s, a) -= h;
            if (policy.kind() == Param::direct) {
                plus(s, 0) -= h;
                minus(s, 0) += h;
            }
            auto make = [&](const Mat& m) {
                return policy.kind() == Param::softmax ? Policy::softmax(m) : Policy::direct(m);
            };
            g(s, a) = (objective(mdp, make(plus), env) - objective(mdp, make(minus), env)) / (2.0 * h);
        }
    return g;
}

Mat tangent_view(const Mat& grad, Param kind) {
    if (kind == Param::softmax) return grad;
    Mat t = grad;
    for (int s = 0; s < grad.rows(); ++s) {
        t(s, 0) = 0.0;
        for (int a = 1; a < grad.cols(); ++a) t(s, a) = grad(s, a) - grad(s, 0);
    }
    return t;
}

double quantile_margin(const Mdp& mdp, const Policy& policy, const RiskEnvelope& env) {
    if (env.kind() != RiskEnvelope::Kind::cvar) return std::numeric_limits<double>::infinity();
    const McrValue m = mcr_value(mdp, policy, env);
    const Mat p = induced_transition(mdp, policy);
    const double alpha = env.alpha();
    double margin = std::numeric_limits<double>::infinity();
    for (int t = 0; t < m.n_stages(); ++t) {
        const Vec& v = m.next_v(t);
        for (int s = 0; s < mdp.n_states(); ++s) {
            std::vector<int> idx;
            for (int x = 0; x < mdp.n_states(); ++x)
                if (p(s, x) > 0.0) idx.push_back(x);
            std::sort(idx.begin(), idx.end(), [&](int a, int b) { return v[a] > v[b]; });
            double cum = 0.0;
            for (size_t k = 0; k + 1 < idx.size(); ++k) {
                cum += p(s, idx[k]);
                margin = std::min(margin, std::abs(cum - alpha));
                margin = std::min(margin, std::abs(v[idx[k]] - v[idx[k + 1]]));
            }
        }
    }
    return margin;
}

} // namespace mcr::oracle
