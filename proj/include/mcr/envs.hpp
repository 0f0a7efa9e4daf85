#pragma once

#include "mcr/mdp.hpp"
#include "mcr/risk.hpp"

#include <string>
#include <vector>

namespace mcr {

// horizon < 0 picks a default: finite (long enough for these depth-2 models) when
// gamma == 1, infinite otherwise
Mdp make_bandit(double gamma = 1.0, int horizon = -1);
Mdp make_lowerbound(double gamma = 1.0, int horizon = -1);

struct CliffOptions {
    double step_cost = 1.0;
    double cliff_cost = 100.0;
    bool cliff_resets = false;
    double gamma = 1.0;
    int horizon = 500;
};

// Cells are r * cols + c with r = 0 the top row; one extra terminal state follows the grid.
// Actions: 0 up, 1 down, 2 left, 3 right.
struct CliffLayout {
    int rows = 0, cols = 0;
    int cell(int r, int c) const { return r * cols + c; }
    int start() const { return cell(rows - 1, 0); }
    int goal() const { return cell(rows - 1, cols - 1); }
    int terminal() const { return rows * cols; }
    int n_states() const { return rows * cols + 1; }
    bool is_cliff(int s) const { return s > start() && s < goal(); }
    // the row directly above the cliff
    bool is_edge(int s) const {
        return s < rows * cols && s / cols == rows - 2 && s % cols > 0 && s % cols < cols - 1;
    }
};

Mdp make_cliffwalk(int rows, int cols, double slip_p, const CliffOptions& opts = {});

struct EnvSpec {
    std::string name = "bandit";
    int rows = 4, cols = 12;
    double slip_p = 0.1;
    CliffOptions cliff;
    double gamma = 1.0;
    int horizon = -1;
};

Mdp make_env(const EnvSpec& spec);

// bandit / lowerbound family: probability theta of action 0 at every state
Policy one_parameter_policy(const Mdp& mdp, double theta);

struct LandscapeRow {
    double theta, alpha, value, dvdtheta;
};

// V(s0) over theta_grid for each alpha, with a forward-difference slope column
// (backward difference at the last grid point)
std::vector<LandscapeRow> landscape_sweep(const Mdp& mdp, const std::vector<double>& alphas,
                                          const std::vector<double>& theta_grid);

std::vector<double> uniform_grid(int points);

// deterministic greedy action per state
std::vector<int> greedy_actions(const Policy& policy);
// cells on the greedy path from the start, stopping at the goal, terminal, a loop, or horizon
std::vector<int> greedy_path(const Mdp& mdp, const CliffLayout& layout, const Policy& policy);

} // namespace mcr
