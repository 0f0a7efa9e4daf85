#pragma once

// Independent reference computations used by the tests, the acceptance binary and
// `mcr-lab verify`. Nothing here shares code paths with the solvers it checks.

#include "mcr/mdp.hpp"
#include "mcr/risk.hpp"

#include <cstdint>
#include <vector>

namespace mcr::oracle {

// inf_t t + E[(v - t)_+] / alpha, evaluated at every breakpoint t = v_i
double cvar_primal(const Vec& p, const Vec& v, double alpha);

// normalized d^xi from the truncated series (1 - gamma) sum_t gamma^t (P^xi^T)^t d0
Vec power_series_visitation(const Mat& p_theta, const Mat& xi, const Vec& d0, double gamma,
                            double tail_tol = 1e-15);

// discounted visitation by rollouts with geometric truncation at tail_tol
Vec monte_carlo_visitation(const Mdp& mdp, const Policy& policy, int rollouts,
                           std::uint64_t seed, double tail_tol = 1e-6);

// fewest moves from start to goal on the deterministic cliff grid, avoiding cliff cells
int grid_shortest_path(int rows, int cols);

struct RandomMdpOptions {
    int n_states = 5;
    int n_actions = 2;
    double gamma = 0.9;
    // every transition row has full support
    bool dense = true;
};

Mdp random_mdp(std::uint64_t seed, const RandomMdpOptions& opts = {});
// softmax logits in [-1, 1], or direct rows bounded away from the simplex boundary
Policy random_policy(int n_states, int n_actions, Param kind, std::uint64_t seed);
Vec random_distribution(int n, std::uint64_t seed);

// Central differences of d0 . V. Softmax: along every logit. Direct: along e_a - e_0 in
// each row; entry (s, 0) is 0 and entry (s, a) is the derivative along that tangent.
Mat fd_gradient(const Mdp& mdp, const Policy& policy, const RiskEnvelope& env, double h = 1e-5);
// the same tangent-coordinate view of an analytic gradient
Mat tangent_view(const Mat& grad, Param kind);

// Distance of the policy from a quantile breakpoint: the smallest gap between alpha and a
// cumulative (descending-value) mass, or between adjacent distinct next-state values,
// over all stages and states with positive mass.
double quantile_margin(const Mdp& mdp, const Policy& policy, const RiskEnvelope& env);

} // namespace mcr::oracle
