#pragma once

#include "mcr/envs.hpp"
#include "mcr/optimize.hpp"
#include "mcr/risk.hpp"

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mcr::cli {

enum ExitCode { ok = 0, verification_failed = 1, config_error = 2 };

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// INI sections [env] [risk] [train] [landscape] [verify]; see README for keys
struct RunConfig {
    EnvSpec env;
    double alpha = 1.0;
    bool expectation = false;
    bool largest_quantile = false;
    TrainConfig train;
    std::vector<double> alphas{0.1, 0.25, 0.5, 1.0};
    int grid_points = 201;
    std::string suite = "all";

    RiskEnvelope envelope() const;
};

RunConfig parse_config(std::istream& is);
RunConfig load_config(const std::string& path);
// every setting after defaults are applied, as "section.key" -> text
std::vector<std::pair<std::string, std::string>> resolved_config(const RunConfig& c);

// SHA-1 of "blob <n>\0" + bytes, hex
std::string git_blob_hash(const std::string& bytes);

struct Options {
    std::string command;
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    int threads = 0;
    std::string suite;
};

// runs one command, writing artifacts and manifest.json under out_dir; returns the exit code
int run(const Options& opts, std::ostream& out, std::ostream& err);

// artifact writers, exposed for tests
void write_landscape_csv(std::ostream& os, const std::vector<LandscapeRow>& rows);
void write_policy_json(std::ostream& os, const Mdp& mdp, const EnvSpec& env, const Policy& policy);
void write_w_csv(std::ostream& os, const Vec& w);
void write_xi_csv(std::ostream& os, const Mat& xi);

} // namespace mcr::cli
