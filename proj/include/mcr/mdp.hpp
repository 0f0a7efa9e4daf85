#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace mcr {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Finite MDP with state costs. trans[a](s, s') = P(s'|s,a).
// horizon > 0 selects finite-horizon semantics (required when discount == 1).
class Mdp {
public:
    Mdp(std::vector<Mat> trans, Vec cost, Vec start, double discount, int horizon = 0,
        int absorbing = -1);

    int n_states() const { return static_cast<int>(cost_.size()); }
    int n_actions() const { return static_cast<int>(trans_.size()); }
    double p(int s, int a, int sp) const { return trans_[a](s, sp); }
    const Mat& transition(int a) const { return trans_[a]; }
    const std::vector<Mat>& transitions() const { return trans_; }
    const Vec& cost() const { return cost_; }
    const Vec& start() const { return start_; }
    double discount() const { return discount_; }
    int horizon() const { return horizon_; }
    bool finite_horizon() const { return horizon_ > 0; }
    // -1 when the model has no designated terminal state
    int absorbing() const { return absorbing_; }

    // nonzero successors of (s, a), in increasing state order
    const std::vector<std::pair<int, double>>& successors(int s, int a) const {
        return succ_[static_cast<size_t>(s) * trans_.size() + a];
    }

    Mdp with_discount(double discount, int horizon) const;
    Mdp with_start(Vec start) const;
    std::uint64_t fingerprint() const { return fingerprint_; }

private:
    std::vector<Mat> trans_;
    Vec cost_;
    Vec start_;
    double discount_;
    int horizon_;
    int absorbing_;
    std::vector<std::vector<std::pair<int, double>>> succ_;
    std::uint64_t fingerprint_ = 0;
};

enum class Param { direct, softmax };

class Policy {
public:
    static Policy direct(Mat probs);
    static Policy softmax(Mat logits);
    static Policy uniform(int n_states, int n_actions, Param kind = Param::softmax);

    Param kind() const { return kind_; }
    const Mat& params() const { return params_; }
    const Mat& table() const { return table_; }
    double pi(int s, int a) const { return table_(s, a); }
    int n_states() const { return static_cast<int>(table_.rows()); }
    int n_actions() const { return static_cast<int>(table_.cols()); }
    std::uint64_t fingerprint() const;

private:
    Policy(Param kind, Mat params, Mat table)
        : kind_(kind), params_(std::move(params)), table_(std::move(table)) {}
    Param kind_;
    Mat params_;
    Mat table_;
};

struct Step {
    int state;
    int action;
    double cost;
};

// steps[t] = (s_t, a_t, C(s_t)); final_state is the state reached after the last step.
// Rollouts stop on entering the absorbing state; pad() repeats it up to the horizon.
struct Trajectory {
    std::vector<Step> steps;
    int final_state = -1;
    std::uint64_t seed = 0;
    int unpadded_length = 0;

    int length() const { return static_cast<int>(steps.size()); }
    int next_state(int t) const {
        return t + 1 < length() ? steps[t + 1].state : final_state;
    }
};

struct Visitation {
    Vec d;
    std::vector<bool> support;
};

struct SampleOptions {
    bool stop_at_absorbing = true;
    bool pad = false;
};

Mat induced_transition(const Mdp& mdp, const Policy& policy);

// d = (1 - gamma) d0^T (I - gamma P)^{-1}
Visitation discounted_visitation(const Mat& p_theta, const Vec& d0, double gamma);
// d(s) = (1/T) sum_{t<T} Pr(s_t = s)
Visitation finite_visitation(const Mat& p_theta, const Vec& d0, int horizon);

std::vector<Trajectory> sample_trajectories(const Mdp& mdp, const Policy& policy, int n,
                                            int horizon, std::uint64_t seed,
                                            SampleOptions opts = {});
void pad(Trajectory& traj, const Mdp& mdp, int horizon);

Vec simplex_project(const Vec& v);

// plain-text model format, see README
void write_mdp(std::ostream& os, const Mdp& mdp);
Mdp read_mdp(std::istream& is);
std::string format_double(double x);

} // namespace mcr
