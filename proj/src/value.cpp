#include "mcr/value.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace mcr {

std::uint64_t value_checksum(const Mdp& mdp, const Policy& policy, const RiskEnvelope& env) {
    std::uint64_t h = mdp.fingerprint() * 0x9e3779b97f4a7c15ULL ^ policy.fingerprint();
    std::uint64_t a;
    double alpha = env.alpha();
    static_assert(sizeof a == sizeof alpha);
    std::memcpy(&a, &alpha, sizeof a);
    h ^= a + 0x632be59bd9b4e019ULL + (h << 6) + (h >> 2);
    h ^= (static_cast<std::uint64_t>(env.kind()) << 1 | env.largest_quantile()) * 0xbf58476d1ce4e5b9ULL;
    return h;
}

std::vector<SaddleSolution> bellman_saddles(const Mat& p_theta, const Vec& next_v,
                                            const RiskEnvelope& env) {
    const int S = static_cast<int>(p_theta.rows());
    std::vector<SaddleSolution> out(S);
    Vec row(S);
    for (int s = 0; s < S; ++s) {
        row = p_theta.row(s).transpose();
        out[s] = cvar_saddle(row, next_v, env);
    }
    return out;
}

Mat reweighted_chain(const Mat& p_theta, const std::vector<SaddleSolution>& saddles) {
    Mat q = p_theta;
    for (int s = 0; s < q.rows(); ++s) q.row(s) = q.row(s).cwiseProduct(saddles[s].xi.transpose());
    return q;
}

namespace {

Vec backup(const Vec& cost, double gamma, const std::vector<SaddleSolution>& sad) {
    Vec out = cost;
    for (int s = 0; s < out.size(); ++s) out[s] += gamma * sad[s].value;
    return out;
}

} // namespace

McrValue mcr_value(const Mdp& mdp, const Policy& policy, const RiskEnvelope& env, double tol,
                   int max_iter) {
    if (!(tol > 0.0)) throw std::invalid_argument("mcr_value: tol must be positive");
    const Mat p = induced_transition(mdp, policy);
    const Vec& c = mdp.cost();
    const double g = mdp.discount();
    const int S = mdp.n_states();
    McrValue out;
    out.checksum = value_checksum(mdp, policy, env);

    if (mdp.finite_horizon()) {
        const int T = mdp.horizon();
        out.finite_horizon = true;
        out.stage_v.assign(T + 1, Vec::Zero(S));
        out.stage_saddles.resize(T);
        for (int t = T - 1; t >= 0; --t) {
            out.stage_saddles[t] = bellman_saddles(p, out.stage_v[t + 1], env);
            out.stage_v[t] = backup(c, g, out.stage_saddles[t]);
        }
        out.v = out.stage_v[0];
        out.saddles = out.stage_saddles[0];
        out.iterations = T;
        out.residual = 0.0;
        return out;
    }

    Vec v = Vec::Zero(S);
    double diff = 0.0;
    int k = 0;
    for (; k < max_iter; ++k) {
        Vec vn = backup(c, g, bellman_saddles(p, v, env));
        diff = (vn - v).cwiseAbs().maxCoeff();
        v = std::move(vn);
        if (diff <= tol) break;
    }
    out.iterations = k + 1;
    if (diff > tol) throw ConvergenceError("mcr_value: max_iter exceeded", diff);

    // polish: with the maximizers frozen the operator is linear, solve it exactly
    auto residual_at = [&](const Vec& x, std::vector<SaddleSolution>& sad) {
        sad = bellman_saddles(p, x, env);
        return (backup(c, g, sad) - x).cwiseAbs().maxCoeff();
    };
    std::vector<SaddleSolution> sad;
    double res = residual_at(v, sad);
    for (int it = 0; it < 50; ++it) {
        Mat a = Mat::Identity(S, S) - g * reweighted_chain(p, sad);
        Vec vn = a.partialPivLu().solve(c);
        if (!vn.allFinite()) break;
        std::vector<SaddleSolution> sn;
        double rn = residual_at(vn, sn);
        if (rn >= res) break;
        v = std::move(vn);
        sad = std::move(sn);
        res = rn;
    }
    out.v = v;
    out.saddles = std::move(sad);
    out.residual = res;
    return out;
}

HTable h_table(const Mdp& mdp, const Policy& policy, const McrValue& mcr, const RiskEnvelope& env) {
    if (mcr.checksum != value_checksum(mdp, policy, env))
        throw std::invalid_argument("h_table: McrValue was computed for different inputs");
    const int S = mdp.n_states(), A = mdp.n_actions();
    const double g = mdp.discount();
    const Mat p = induced_transition(mdp, policy);
    HTable out;
    const int stages = mcr.n_stages();
    for (int t = 0; t < stages; ++t) {
        const auto& sad = mcr.saddles_at(t);
        const Vec& vn = mcr.next_v(t);
        Mat h(S, A);
        for (int s = 0; s < S; ++s) {
            Vec w = sad[s].xi.cwiseProduct(vn.array().matrix() - Vec::Constant(S, sad[s].lambda_p));
            if (env.constraints_depend_on_p()) {
                Vec row = p.row(s).transpose();
                w -= env.ineq_dp(sad[s].xi, row).transpose() * sad[s].lambda_ineq;
                w -= env.eq_dp(sad[s].xi, row).transpose() * sad[s].lambda_eq;
            }
            for (int a = 0; a < A; ++a) {
                double acc = 0.0;
                for (const auto& [sp, q] : mdp.successors(s, a)) acc += q * w[sp];
                h(s, a) = g * acc;
            }
        }
        if (mcr.finite_horizon) out.stage_h.push_back(std::move(h));
        else out.h = std::move(h);
    }
    if (mcr.finite_horizon) out.h = out.stage_h[0];
    return out;
}

std::string dump(const McrValue& mcr) {
    std::ostringstream os;
    const int S = static_cast<int>(mcr.v.size());
    os << "mcr-value\n";
    os << "finite_horizon " << (mcr.finite_horizon ? 1 : 0) << "\n";
    os << "iterations " << mcr.iterations << "\n";
    os << "residual " << format_double(mcr.residual) << "\n";
    for (int s = 0; s < S; ++s) os << "V " << s << " " << format_double(mcr.v[s]) << "\n";
    for (int s = 0; s < S; ++s) {
        const auto& sd = mcr.saddles[s];
        os << "lambda " << s << " " << format_double(sd.lambda_p) << " value "
           << format_double(sd.value) << " tie " << (sd.tie ? 1 : 0) << "\n";
        for (int x = 0; x < S; ++x)
            os << "xi " << s << " " << x << " " << format_double(sd.xi[x]) << "\n";
    }
    return os.str();
}

} // namespace mcr
