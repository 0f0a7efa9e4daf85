#pragma once

#include "mcr/grad.hpp"
#include "mcr/mdp.hpp"
#include "mcr/risk.hpp"

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

namespace mcr {

enum class WMethod { kernel, exact };

struct TrainConfig {
    double gamma = 1.0;
    double lr_actor = 0.001;
    double lr_critic = 0.001;
    int batch_critic = 512;
    int iters_actor = 1;
    int iters_critic = 10;
    int n_trajectories = 200;
    int horizon = 500;
    int episodes = 10000;
    double alpha = 1.0;
    Estimator estimator = Estimator::correction;
    std::uint64_t seed = 0;

    // stationary (gamma < 1) correction weights; gamma == 1 always uses the staged flow
    WMethod w_method = WMethod::kernel;
    KernelOptions kernel;
    int eval_every = 10;
    int eval_episodes = 1000;
    std::uint64_t eval_seed = 20240229;
    // exact value, gradient norm and estimation errors against the true model
    bool track_exact = false;
    // also run the other sampled estimator on the same batch
    bool shadow = false;
    double overflow_threshold = 1e12;
    int snapshot_every = 0;
    // keep exact gradients and parameters of every episode
    bool record_vectors = false;
    // initial softmax logits; empty means uniform
    Mat init_params;
};

// how evaluation rollouts are scored; goal < 0 disables the success column
struct EvalSpec {
    int goal = -1;
    std::vector<bool> failure;
};

struct EvalResult {
    double mean_cost = 0.0;
    double success_rate = std::numeric_limits<double>::quiet_NaN();
};

EvalResult evaluate_greedy(const Mdp& mdp, const Policy& policy, int horizon, int episodes,
                           std::uint64_t seed, const EvalSpec& spec);

struct EpisodeRecord {
    static constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    int episode = 0;
    double objective_est = nan;
    double exact_value = nan;
    double best_value = nan;
    double grad_norm = nan;
    double exact_grad_norm = nan;
    double eval_cost = nan;
    double success_rate = nan;
    double critic_error = nan;
    double eps_w = nan;
    double eps_h = nan;
    double max_is_weight = nan;
    double shadow_norm = nan;
    bool overflow = false;
    bool skipped = false;
    bool shadow_overflow = false;
};

struct TrainHistory {
    std::vector<EpisodeRecord> records;
    std::vector<std::pair<int, Mat>> snapshots;
    std::vector<Mat> exact_grads;
    std::vector<Mat> thetas;
    Mat final_params;
    Param kind = Param::softmax;
    // stage-0 view of the last episode's estimates
    Vec last_w;
    Mat last_xi;
    Vec critic;

    Policy final_policy() const {
        return kind == Param::softmax ? Policy::softmax(final_params) : Policy::direct(final_params);
    }
};

// theta <- Proj_simplex(theta - eta grad V(s0)), row by row
TrainHistory pgd_train(const Mdp& mdp, const RiskEnvelope& env, double eta, int iters,
                       const Policy& theta0, int snapshot_every = 1);

TrainHistory actor_critic_train(const Mdp& mdp, const RiskEnvelope& env,
                                const TrainConfig& config, const EvalSpec& eval = {});

struct StationarityAssumptions {
    double G = 1.0;
    double C_max = 1.0;
    double sigma_w = 1.0;
    double beta = 1.0;
    double L = 1.0;
};

struct StationarityReport {
    int K = 0;
    double avg_sq_grad = 0.0;
    double smooth_term = 0.0;
    double variance_term = 0.0;
    double bias_term = 0.0;
    double bound = 0.0;
    bool oracle = false;
    bool holds = false;
};

// K <= 0 uses every record
StationarityReport stationarity_diagnostics(const TrainHistory& history,
                                            const StationarityAssumptions& a, int K = 0);
// max ||g_{k+1} - g_k|| / ||theta_{k+1} - theta_k|| over recorded episodes
double empirical_smoothness(const TrainHistory& history);

void write_history_csv(std::ostream& os, const TrainHistory& history);
std::string format_csv(double x);

} // namespace mcr
