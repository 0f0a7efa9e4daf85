#pragma once

#include "mcr/mdp.hpp"
#include "mcr/risk.hpp"
#include "mcr/value.hpp"

#include <array>
#include <limits>
#include <string>
#include <vector>

namespace mcr {

enum class Estimator { exact, importance_sampling, correction };
std::string to_string(Estimator e);
Estimator estimator_from_string(const std::string& s);

struct CorrectionWeights {
    enum class Method { linear_solve, kernel_minmax, empirical_flow };
    // stationary ratio d^xi / d; NaN off support
    Vec w;
    // finite-horizon ratio per stage, empty in the stationary case
    std::vector<Vec> stage_w;
    std::vector<bool> support;
    Method method = Method::linear_solve;
    // delta-kernel objective at the returned (pre-normalization) w
    double objective_residual = 0.0;
    int iterations = 0;
    bool converged = true;
    double normalizer = 1.0;

    double at(int t, int s) const { return stage_w.empty() ? w[s] : stage_w[t][s]; }
};

struct WeightStats {
    // per time step, over trajectories still running
    std::vector<double> max_weight;
    std::vector<double> mean_weight;
    double max_overall = 0.0;
};

struct GradientReport {
    Mat grad;
    Estimator estimator = Estimator::exact;
    double norm = 0.0;
    Mat seeds_variance;
    bool nondifferentiable = false;
    bool overflow = false;
    WeightStats weights;
};

struct ResidualReport {
    double eps_l = 0.0;
    double eps_u = 0.0;
    double gap = 0.0;
    double dist_ratio = 0.0;
    double stationarity_term = 0.0;
    double bound = 0.0;
    bool support_violation = false;
};

// Unnormalized xi-reweighted occupancy o = sum_t gamma^t (P^xi)^t d0.
// Finite horizon: one vector per stage, o_{t+1}(x) = gamma sum_s o_t(s) P(x|s) xi_{t,s}(x).
std::vector<Vec> reweighted_occupancy(const Mat& p_theta, const McrValue& mcr, const Vec& d0,
                                      double gamma);
// normalized d^xi = (1 - gamma) o
Visitation reweighted_visitation(const Mat& p_theta, const std::vector<SaddleSolution>& saddles,
                                 const Vec& d0, double gamma);

// direct: sum_t o_t(s) h_t(s,a); softmax: chain rule through pi
Mat assemble_gradient(const Policy& policy, const std::vector<Vec>& occupancy, const HTable& h);

GradientReport exact_gradient(const Mdp& mdp, const Policy& policy, const RiskEnvelope& env);
GradientReport exact_gradient(const Mdp& mdp, const Policy& policy, const McrValue& mcr,
                              const HTable& h);

CorrectionWeights correction_weights_exact(const Mat& p_theta,
                                           const std::vector<SaddleSolution>& saddles,
                                           double gamma, const Vec& d0);

// L(w, e_x) for every state x (population correction functional)
Vec correction_functional(const Mat& p_theta, const Vec& d, const Vec& w,
                          const std::vector<SaddleSolution>& saddles, double gamma,
                          const Vec& d0);

// Weighted transitions (s, a, s') standing in for expectations under d.
// Residual at x: D(x) = sum_{i: s'_i = x} weight_i (w(s_i) xi_{s_i}(x) - w(x)) + c0 d0(x)(1 - w(x)).
struct TransitionBatch {
    struct Item {
        int s, a, sp, t;
        double weight;
    };
    std::vector<Item> items;
    Vec d0;
    double c0 = 0.0;
    int n_states = 0;
};

// i.i.d. transitions from d: weight 1/n, c0 = (1 - gamma)/gamma
TransitionBatch batch_from_transitions(const std::vector<std::array<int, 3>>& sas, int n_states,
                                       double gamma, const Vec& d0);
// discounted trajectory samples: weight (1 - gamma) gamma^t / N. With absorbing >= 0,
// trajectories that stopped there get one self-transition carrying the mass up to horizon.
TransitionBatch batch_from_trajectories(const std::vector<Trajectory>& trajs, int n_states,
                                        double gamma, const Vec& d0, int horizon = 0,
                                        int absorbing = -1);

struct KernelOptions {
    double step = 0.05;
    int iterations = 5000;
    double threshold = 1e-6;
    bool normalize = true;
};

// xi(s, x) = xi_s(x)
Mat xi_matrix(const std::vector<SaddleSolution>& saddles);

CorrectionWeights correction_weights_kernel(const TransitionBatch& batch, const Mat& xi,
                                            KernelOptions opts = {});
CorrectionWeights correction_weights_kernel(const std::vector<Trajectory>& trajs,
                                            const std::vector<SaddleSolution>& saddles,
                                            double gamma, const Vec& d0, KernelOptions opts = {},
                                            int horizon = 0, int absorbing = -1);
// dense solve of the same residual equations
CorrectionWeights correction_weights_empirical(const TransitionBatch& batch, const Mat& xi,
                                               bool normalize = true);
// finite horizon: forward flow of reweighted visit mass per (stage, state)
CorrectionWeights correction_weights_staged(const std::vector<Trajectory>& trajs, int n_states,
                                            const std::vector<Mat>& stage_xi,
                                            bool normalize = true);
// delta-kernel objective sum_x D(x)^2
double kernel_objective(const TransitionBatch& batch, const Mat& xi, const Vec& w);

// grad log pi(a|s) with respect to row s of the parameters
Vec grad_log_pi(const Policy& policy, int s, int a);

// Importance-sampling estimator. W_t = prod_{j=1..t} xi_{j-1, s_{j-1}}(s_j);
// stage tables are indexed min(t, size-1).
GradientReport is_gradient(const std::vector<Trajectory>& trajs, const Policy& policy,
                           const std::vector<Mat>& stage_xi, const std::vector<Mat>& stage_h,
                           double gamma, double overflow_threshold = 1e12);

// sum_n sum_t gamma^t w_t(s_t) grad log pi(a_t|s_t) h_t(s_t,a_t) / N
GradientReport correction_gradient(const std::vector<Trajectory>& trajs, const Policy& policy,
                                   const CorrectionWeights& w, const std::vector<Mat>& stage_h,
                                   double gamma);

// mean gradient plus per-entry variance across replicates
GradientReport aggregate_replicates(const std::vector<GradientReport>& reps);

ResidualReport residuals(const Mdp& mdp, const Policy& policy, const Policy& reference,
                         const RiskEnvelope& env);

// exhaustive search over deterministic policies (small models only)
Policy optimal_deterministic_policy(const Mdp& mdp, const RiskEnvelope& env);

std::string to_text(const GradientReport& r);
std::string to_text(const ResidualReport& r);

} // namespace mcr
