#pragma once

#include <string>
#include <vector>

namespace mcr::checks {

struct CheckResult {
    std::string id;
    std::string title;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
    double budget = 0.0; // wall-clock limit in seconds, part of the pass condition
};

CheckResult lowerbound_table();
CheckResult gradient_domination();
CheckResult correction_oracles();
CheckResult gradient_fd();
CheckResult coherence_axioms();
CheckResult landscape_shape();
CheckResult cliffwalk_behavior();
CheckResult importance_sampling_divergence();
CheckResult stationarity_trend();

// lowerbound | correction | gradient | envelope | all
std::vector<std::string> suite_names();
std::vector<CheckResult> run_suite(const std::string& suite);
// criteria 1-9 in order
std::vector<CheckResult> run_acceptance();

// "PASS <id> <title> [<seconds>s] <detail>"
std::string format_line(const CheckResult& r);

} // namespace mcr::checks
