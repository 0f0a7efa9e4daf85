#pragma once

#include "mcr/mdp.hpp"
#include "mcr/risk.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mcr {

// Fixed point of V = C + gamma * max_{xi in U(P_theta(.|s))} E[xi V].
// Finite-horizon models keep every stage: stage_v[t] for t = 0..T (stage_v[T] = 0),
// stage_saddles[t] for t = 0..T-1. v and saddles alias stage 0.
struct McrValue {
    Vec v;
    std::vector<SaddleSolution> saddles;
    int iterations = 0;
    double residual = 0.0;
    bool finite_horizon = false;
    std::vector<Vec> stage_v;
    std::vector<std::vector<SaddleSolution>> stage_saddles;
    std::uint64_t checksum = 0;

    int n_stages() const { return finite_horizon ? static_cast<int>(stage_saddles.size()) : 1; }
    const std::vector<SaddleSolution>& saddles_at(int t) const {
        return finite_horizon ? stage_saddles[t] : saddles;
    }
    const Vec& next_v(int t) const { return finite_horizon ? stage_v[t + 1] : v; }
};

// h(s,a) = gamma sum_s' P(s'|s,a) xi_s(s') (V(s') - lambda_s), one table per stage
struct HTable {
    Mat h;
    std::vector<Mat> stage_h;

    const Mat& at(int t) const { return stage_h.empty() ? h : stage_h[t]; }
};

class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, double residual)
        : std::runtime_error(what), residual(residual) {}
    double residual;
};

McrValue mcr_value(const Mdp& mdp, const Policy& policy, const RiskEnvelope& env,
                   double tol = 1e-10, int max_iter = 100000);

HTable h_table(const Mdp& mdp, const Policy& policy, const McrValue& mcr,
               const RiskEnvelope& env);

std::uint64_t value_checksum(const Mdp& mdp, const Policy& policy, const RiskEnvelope& env);

// Per-state saddles of one Bellman step: saddle of (P.row(s), next_v)
std::vector<SaddleSolution> bellman_saddles(const Mat& p_theta, const Vec& next_v,
                                            const RiskEnvelope& env);

// reweighted chain P(s,s') xi_s(s')
Mat reweighted_chain(const Mat& p_theta, const std::vector<SaddleSolution>& saddles);

std::string dump(const McrValue& mcr);

} // namespace mcr
