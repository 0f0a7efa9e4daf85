#pragma once

#include "mcr/mdp.hpp"

namespace mcr {

// Dual-form coherent risk envelope. Expectation is cvar(1).
//   universal:   sum_w p(w) xi(w) = 1,  xi >= 0
//   cvar(alpha): inequality constraints f_i <= 0 with
//                f_i = -xi_i (i < n) and f_{n+i} = xi_i - 1/alpha
//   equality constraints g_e: none
class RiskEnvelope {
public:
    enum class Kind { cvar, expectation };

    static RiskEnvelope cvar(double alpha, bool largest_quantile = false);
    static RiskEnvelope expectation();

    Kind kind() const { return kind_; }
    double alpha() const { return alpha_; }
    // lambda^P convention when the (1 - alpha)-quantile set is an interval
    bool largest_quantile() const { return largest_; }
    RiskEnvelope with_largest_quantile(bool on) const;

    int n_ineq(int n_outcomes) const { return 2 * n_outcomes; }
    int n_eq(int) const { return 0; }
    Vec ineq(const Vec& xi, const Vec& p) const;
    Vec eq(const Vec& xi, const Vec& p) const;
    // d f_i / d p(w), rows indexed by constraint
    Mat ineq_dp(const Vec& xi, const Vec& p) const;
    Mat eq_dp(const Vec& xi, const Vec& p) const;
    // false when every f_i, g_e is independent of p (so their p-derivatives vanish)
    bool constraints_depend_on_p() const { return false; }

private:
    RiskEnvelope(Kind k, double a, bool largest) : kind_(k), alpha_(a), largest_(largest) {}
    Kind kind_;
    double alpha_;
    bool largest_;
};

struct SaddleSolution {
    Vec xi;
    double lambda_p = 0.0;
    Vec lambda_ineq;
    Vec lambda_eq;
    double value = 0.0;
    // the quantile set carries positive mass on two distinct values
    bool tie = false;
};

SaddleSolution cvar_saddle(const Vec& p, const Vec& v, const RiskEnvelope& env);
SaddleSolution cvar_saddle(const Vec& p, const Vec& v, double alpha, bool largest_quantile = false);

double lagrangian_eval(const SaddleSolution& sol, const Vec& p, const Vec& v,
                       const RiskEnvelope& env);

// exhaustive vertex enumeration of the envelope polytope plus a grid for n <= 3
double brute_force_envelope_max(const Vec& p, const Vec& v, const RiskEnvelope& env,
                                int grid_resolution = 200);

} // namespace mcr
