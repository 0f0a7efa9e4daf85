#include "mcr/cli.hpp"

#include "checks.hpp"
#include "mcr/util.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>
#include <openssl/sha.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace mcr::cli {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;
using json = nlohmann::ordered_json;

namespace {

double to_double(const std::string& key, const std::string& s) {
    size_t used = 0;
    double x;
    try {
        x = std::stod(s, &used);
    } catch (const std::exception&) {
        throw ConfigError(key + ": '" + s + "' is not a number");
    }
    if (used != s.size() || !std::isfinite(x)) throw ConfigError(key + ": '" + s + "' is not a number");
    return x;
}

long long to_int(const std::string& key, const std::string& s) {
    size_t used = 0;
    long long x;
    try {
        x = std::stoll(s, &used);
    } catch (const std::exception&) {
        throw ConfigError(key + ": '" + s + "' is not an integer");
    }
    if (used != s.size()) throw ConfigError(key + ": '" + s + "' is not an integer");
    return x;
}

bool to_bool(const std::string& key, const std::string& s) {
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError(key + ": '" + s + "' is not a boolean");
}

std::vector<double> to_list(const std::string& key, const std::string& s) {
    std::vector<double> out;
    std::string item;
    std::istringstream is(s);
    while (std::getline(is, item, ',')) {
        const auto b = item.find_first_not_of(" \t"), e = item.find_last_not_of(" \t");
        if (b == std::string::npos) throw ConfigError(key + ": empty list entry");
        out.push_back(to_double(key, item.substr(b, e - b + 1)));
    }
    return out;
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> m = {
        {"env.name", [](RunConfig& c, auto&, auto& v) { c.env.name = v; }},
        {"env.rows", [](RunConfig& c, auto& k, auto& v) { c.env.rows = static_cast<int>(to_int(k, v)); }},
        {"env.cols", [](RunConfig& c, auto& k, auto& v) { c.env.cols = static_cast<int>(to_int(k, v)); }},
        {"env.slip_p", [](RunConfig& c, auto& k, auto& v) { c.env.slip_p = to_double(k, v); }},
        {"env.step_cost", [](RunConfig& c, auto& k, auto& v) { c.env.cliff.step_cost = to_double(k, v); }},
        {"env.cliff_cost", [](RunConfig& c, auto& k, auto& v) { c.env.cliff.cliff_cost = to_double(k, v); }},
        {"env.cliff_resets", [](RunConfig& c, auto& k, auto& v) { c.env.cliff.cliff_resets = to_bool(k, v); }},
        {"env.gamma", [](RunConfig& c, auto& k, auto& v) { c.env.gamma = to_double(k, v); }},
        {"env.horizon", [](RunConfig& c, auto& k, auto& v) { c.env.horizon = static_cast<int>(to_int(k, v)); }},
        {"risk.kind",
         [](RunConfig& c, auto& k, auto& v) {
             if (v != "cvar" && v != "expectation") throw ConfigError(k + ": expected cvar or expectation");
             c.expectation = v == "expectation";
         }},
        {"risk.alpha", [](RunConfig& c, auto& k, auto& v) { c.alpha = to_double(k, v); }},
        {"risk.largest_quantile", [](RunConfig& c, auto& k, auto& v) { c.largest_quantile = to_bool(k, v); }},
        {"train.gamma", [](RunConfig& c, auto& k, auto& v) { c.train.gamma = to_double(k, v); }},
        {"train.lr_actor", [](RunConfig& c, auto& k, auto& v) { c.train.lr_actor = to_double(k, v); }},
        {"train.lr_critic", [](RunConfig& c, auto& k, auto& v) { c.train.lr_critic = to_double(k, v); }},
        {"train.batch_critic", [](RunConfig& c, auto& k, auto& v) { c.train.batch_critic = static_cast<int>(to_int(k, v)); }},
        {"train.iters_actor", [](RunConfig& c, auto& k, auto& v) { c.train.iters_actor = static_cast<int>(to_int(k, v)); }},
        {"train.iters_critic", [](RunConfig& c, auto& k, auto& v) { c.train.iters_critic = static_cast<int>(to_int(k, v)); }},
        {"train.n_trajectories", [](RunConfig& c, auto& k, auto& v) { c.train.n_trajectories = static_cast<int>(to_int(k, v)); }},
        {"train.horizon", [](RunConfig& c, auto& k, auto& v) { c.train.horizon = static_cast<int>(to_int(k, v)); }},
        {"train.episodes", [](RunConfig& c, auto& k, auto& v) { c.train.episodes = static_cast<int>(to_int(k, v)); }},
        {"train.estimator",
         [](RunConfig& c, auto& k, auto& v) {
             try {
                 c.train.estimator = estimator_from_string(v);
             } catch (const std::invalid_argument& e) {
                 throw ConfigError(k + ": " + e.what());
             }
         }},
        {"train.w_method",
         [](RunConfig& c, auto& k, auto& v) {
             if (v != "kernel" && v != "exact") throw ConfigError(k + ": expected kernel or exact");
             c.train.w_method = v == "kernel" ? WMethod::kernel : WMethod::exact;
         }},
        {"train.kernel_step", [](RunConfig& c, auto& k, auto& v) { c.train.kernel.step = to_double(k, v); }},
        {"train.kernel_iterations", [](RunConfig& c, auto& k, auto& v) { c.train.kernel.iterations = static_cast<int>(to_int(k, v)); }},
        {"train.kernel_threshold", [](RunConfig& c, auto& k, auto& v) { c.train.kernel.threshold = to_double(k, v); }},
        {"train.seed", [](RunConfig& c, auto& k, auto& v) { c.train.seed = static_cast<std::uint64_t>(to_int(k, v)); }},
        {"train.eval_every", [](RunConfig& c, auto& k, auto& v) { c.train.eval_every = static_cast<int>(to_int(k, v)); }},
        {"train.eval_episodes", [](RunConfig& c, auto& k, auto& v) { c.train.eval_episodes = static_cast<int>(to_int(k, v)); }},
        {"train.eval_seed", [](RunConfig& c, auto& k, auto& v) { c.train.eval_seed = static_cast<std::uint64_t>(to_int(k, v)); }},
        {"train.track_exact", [](RunConfig& c, auto& k, auto& v) { c.train.track_exact = to_bool(k, v); }},
        {"train.shadow", [](RunConfig& c, auto& k, auto& v) { c.train.shadow = to_bool(k, v); }},
        {"train.overflow_threshold", [](RunConfig& c, auto& k, auto& v) { c.train.overflow_threshold = to_double(k, v); }},
        {"train.snapshot_every", [](RunConfig& c, auto& k, auto& v) { c.train.snapshot_every = static_cast<int>(to_int(k, v)); }},
        {"landscape.alphas", [](RunConfig& c, auto& k, auto& v) { c.alphas = to_list(k, v); }},
        {"landscape.grid_points", [](RunConfig& c, auto& k, auto& v) { c.grid_points = static_cast<int>(to_int(k, v)); }},
        {"verify.suite", [](RunConfig& c, auto&, auto& v) { c.suite = v; }},
    };
    return m;
}

void validate(const RunConfig& c) {
    if (c.env.name != "bandit" && c.env.name != "lowerbound" && c.env.name != "cliffwalk")
        throw ConfigError("env.name: unknown env '" + c.env.name + "'");
    if (c.env.rows < 2 || c.env.cols < 2) throw ConfigError("env: cliffwalk needs rows, cols >= 2");
    if (!(c.env.slip_p >= 0.0 && c.env.slip_p < 1.0)) throw ConfigError("env.slip_p: must lie in [0, 1)");
    if (!(c.env.gamma > 0.0 && c.env.gamma <= 1.0)) throw ConfigError("env.gamma: must lie in (0, 1]");
    if (!c.expectation && !(c.alpha > 0.0 && c.alpha <= 1.0)) throw ConfigError("risk.alpha: must lie in (0, 1]");
    if (c.alphas.empty()) throw ConfigError("landscape.alphas: empty list");
    for (double a : c.alphas)
        if (!(a > 0.0 && a <= 1.0)) throw ConfigError("landscape.alphas: entries must lie in (0, 1]");
    if (c.grid_points < 2) throw ConfigError("landscape.grid_points: need at least 2");
    const auto names = checks::suite_names();
    if (std::find(names.begin(), names.end(), c.suite) == names.end())
        throw ConfigError("verify.suite: unknown suite '" + c.suite + "'");
}

EvalSpec eval_spec(const Mdp& mdp, const EnvSpec& env) {
    EvalSpec e;
    if (env.name != "cliffwalk") return e;
    const CliffLayout g{env.rows, env.cols};
    e.goal = g.goal();
    e.failure.assign(mdp.n_states(), false);
    for (int s = 0; s < g.rows * g.cols; ++s) e.failure[s] = g.is_cliff(s);
    return e;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// writes text to out/name and records it for the manifest
struct Outputs {
    fs::path dir;
    json files = json::array();

    void put(const std::string& name, const std::string& text) {
        std::ofstream f(dir / name, std::ios::binary);
        if (!f) throw ConfigError("cannot write " + (dir / name).string());
        f << text;
        if (!f) throw ConfigError("write failed for " + (dir / name).string());
        files.push_back({{"name", name}, {"bytes", text.size()}, {"hash", git_blob_hash(text)}});
    }
};

template <class F>
std::string render(F&& f) {
    std::ostringstream os;
    f(os);
    return os.str();
}

} // namespace

RiskEnvelope RunConfig::envelope() const {
    return expectation ? RiskEnvelope::expectation() : RiskEnvelope::cvar(alpha, largest_quantile);
}

RunConfig parse_config(std::istream& is) {
    pt::ptree tree;
    try {
        pt::read_ini(is, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    RunConfig c;
    for (const auto& [section, body] : tree) {
        if (body.empty()) throw ConfigError("config: key '" + section + "' is outside any section");
        for (const auto& [key, value] : body) {
            const std::string full = section + "." + key;
            const auto it = setters().find(full);
            if (it == setters().end()) throw ConfigError("config: unknown key '" + full + "'");
            it->second(c, full, value.get_value<std::string>());
        }
    }
    validate(c);
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    return parse_config(in);
}

std::vector<std::pair<std::string, std::string>> resolved_config(const RunConfig& c) {
    auto d = [](double x) { return format_csv(x); };
    auto b = [](bool x) { return std::string(x ? "true" : "false"); };
    std::string alphas;
    for (size_t i = 0; i < c.alphas.size(); ++i) alphas += (i ? "," : "") + d(c.alphas[i]);
    const TrainConfig& t = c.train;
    return {
        {"env.name", c.env.name},
        {"env.rows", std::to_string(c.env.rows)},
        {"env.cols", std::to_string(c.env.cols)},
        {"env.slip_p", d(c.env.slip_p)},
        {"env.step_cost", d(c.env.cliff.step_cost)},
        {"env.cliff_cost", d(c.env.cliff.cliff_cost)},
        {"env.cliff_resets", b(c.env.cliff.cliff_resets)},
        {"env.gamma", d(c.env.gamma)},
        {"env.horizon", std::to_string(c.env.horizon)},
        {"risk.kind", c.expectation ? "expectation" : "cvar"},
        {"risk.alpha", d(c.alpha)},
        {"risk.largest_quantile", b(c.largest_quantile)},
        {"train.gamma", d(t.gamma)},
        {"train.lr_actor", d(t.lr_actor)},
        {"train.lr_critic", d(t.lr_critic)},
        {"train.batch_critic", std::to_string(t.batch_critic)},
        {"train.iters_actor", std::to_string(t.iters_actor)},
        {"train.iters_critic", std::to_string(t.iters_critic)},
        {"train.n_trajectories", std::to_string(t.n_trajectories)},
        {"train.horizon", std::to_string(t.horizon)},
        {"train.episodes", std::to_string(t.episodes)},
        {"train.estimator", to_string(t.estimator)},
        {"train.w_method", t.w_method == WMethod::kernel ? "kernel" : "exact"},
        {"train.kernel_step", d(t.kernel.step)},
        {"train.kernel_iterations", std::to_string(t.kernel.iterations)},
        {"train.kernel_threshold", d(t.kernel.threshold)},
        {"train.seed", std::to_string(t.seed)},
        {"train.eval_every", std::to_string(t.eval_every)},
        {"train.eval_episodes", std::to_string(t.eval_episodes)},
        {"train.eval_seed", std::to_string(t.eval_seed)},
        {"train.track_exact", b(t.track_exact)},
        {"train.shadow", b(t.shadow)},
        {"train.overflow_threshold", d(t.overflow_threshold)},
        {"train.snapshot_every", std::to_string(t.snapshot_every)},
        {"landscape.alphas", alphas},
        {"landscape.grid_points", std::to_string(c.grid_points)},
        {"verify.suite", c.suite},
    };
}

std::string git_blob_hash(const std::string& bytes) {
    const std::string blob = "blob " + std::to_string(bytes.size()) + '\0' + bytes;
    unsigned char md[SHA_DIGEST_LENGTH];
    SHA1(reinterpret_cast<const unsigned char*>(blob.data()), blob.size(), md);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned char ch : md) {
        out += hex[ch >> 4];
        out += hex[ch & 15];
    }
    return out;
}

void write_landscape_csv(std::ostream& os, const std::vector<LandscapeRow>& rows) {
    os << "theta,alpha,value,dvdtheta\n";
    for (const auto& r : rows)
        os << format_csv(r.theta) << ',' << format_csv(r.alpha) << ',' << format_csv(r.value) << ','
           << format_csv(r.dvdtheta) << '\n';
}

void write_policy_json(std::ostream& os, const Mdp& mdp, const EnvSpec& env, const Policy& policy) {
    json j;
    j["env"] = env.name;
    j["kind"] = policy.kind() == Param::softmax ? "softmax" : "direct";
    const auto greedy = greedy_actions(policy);
    j["greedy_actions"] = greedy;
    if (env.name == "cliffwalk") {
        const CliffLayout g{env.rows, env.cols};
        static const char* arrows[] = {"U", "D", "L", "R"};
        json grid = json::array();
        for (int r = 0; r < g.rows; ++r) {
            std::string line;
            for (int c = 0; c < g.cols; ++c) {
                const int s = g.cell(r, c);
                line += g.is_cliff(s) ? "C" : s == g.goal() ? "G" : arrows[greedy[s]];
            }
            grid.push_back(line);
        }
        j["greedy_grid"] = grid;
        j["greedy_path"] = greedy_path(mdp, g, policy);
    }
    json pi = json::array(), params = json::array();
    for (int s = 0; s < policy.n_states(); ++s) {
        json row = json::array(), prow = json::array();
        for (int a = 0; a < policy.n_actions(); ++a) {
            row.push_back(format_csv(policy.pi(s, a)));
            prow.push_back(format_csv(policy.params()(s, a)));
        }
        pi.push_back(row);
        params.push_back(prow);
    }
    // numbers as 12-digit strings keep the file byte-stable across platforms
    j["pi"] = pi;
    j["params"] = params;
    os << j.dump(2) << '\n';
}

void write_w_csv(std::ostream& os, const Vec& w) {
    os << "state,w\n";
    for (int s = 0; s < w.size(); ++s) os << s << ',' << format_csv(w[s]) << '\n';
}

void write_xi_csv(std::ostream& os, const Mat& xi) {
    os << "state,next_state,xi\n";
    for (int s = 0; s < xi.rows(); ++s)
        for (int x = 0; x < xi.cols(); ++x) os << s << ',' << x << ',' << format_csv(xi(s, x)) << '\n';
}

int run(const Options& opts, std::ostream& out, std::ostream& err) {
    using Clock = std::chrono::steady_clock;
    const auto t0 = Clock::now();
    try {
        if (opts.command != "landscape" && opts.command != "train" && opts.command != "verify")
            throw ConfigError("unknown command '" + opts.command + "'");
        if (opts.command != "verify" && opts.config_path.empty())
            throw ConfigError(opts.command + ": --config is required");
        if (opts.command != "verify" && opts.out_dir.empty())
            throw ConfigError(opts.command + ": --out is required");
        if (opts.threads < 0) throw ConfigError("--threads must be nonnegative");
        set_thread_cap(opts.threads);

        std::string config_text;
        RunConfig cfg;
        if (!opts.config_path.empty()) {
            config_text = read_file(opts.config_path);
            std::istringstream is(config_text);
            cfg = parse_config(is);
        }
        if (opts.seed) cfg.train.seed = *opts.seed;
        if (!opts.suite.empty()) {
            cfg.suite = opts.suite;
            validate(cfg);
        }

        Outputs files;
        if (!opts.out_dir.empty()) {
            files.dir = opts.out_dir;
            std::error_code ec;
            fs::create_directories(files.dir, ec);
            if (ec) throw ConfigError("cannot create " + opts.out_dir + ": " + ec.message());
        }

        int code = ok;
        const auto t1 = Clock::now();
        if (opts.command == "landscape") {
            if (cfg.env.name == "cliffwalk") throw ConfigError("landscape: env must be bandit or lowerbound");
            const Mdp m = make_env(cfg.env);
            const auto rows = landscape_sweep(m, cfg.alphas, uniform_grid(cfg.grid_points));
            files.put("landscape.csv", render([&](std::ostream& os) { write_landscape_csv(os, rows); }));
            out << "landscape: " << rows.size() << " rows\n";
        } else if (opts.command == "train") {
            const Mdp m = make_env(cfg.env);
            TrainHistory h;
            try {
                h = actor_critic_train(m, cfg.envelope(), cfg.train, eval_spec(m, cfg.env));
            } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what());
            }
            files.put("history.csv", render([&](std::ostream& os) { write_history_csv(os, h); }));
            files.put("policy.json",
                      render([&](std::ostream& os) { write_policy_json(os, m, cfg.env, h.final_policy()); }));
            files.put("w.csv", render([&](std::ostream& os) { write_w_csv(os, h.last_w); }));
            files.put("xi.csv", render([&](std::ostream& os) { write_xi_csv(os, h.last_xi); }));
            int flagged = 0;
            for (const auto& r : h.records) flagged += r.overflow ? 1 : 0;
            if (flagged > 0)
                err << "warning: importance weights overflowed in " << flagged
                    << " episodes; those updates were skipped (see the overflow column)\n";
            const auto& last = h.records.back();
            out << "train: " << h.records.size() << " episodes, eval cost " << format_csv(last.eval_cost)
                << ", success " << format_csv(last.success_rate) << "\n";
        } else {
            const auto results = checks::run_suite(cfg.suite);
            std::string table;
            for (const auto& r : results) {
                table += checks::format_line(r) + "\n";
                if (!r.passed) code = verification_failed;
            }
            out << table;
            if (!opts.out_dir.empty()) files.put("verify.txt", table);
        }
        const double run_s = std::chrono::duration<double>(Clock::now() - t1).count();

        if (!opts.out_dir.empty()) {
            json m;
            m["command"] = opts.command;
            m["config_path"] = opts.config_path;
            json echo = json::object();
            for (const auto& [k, v] : resolved_config(cfg)) echo[k] = v;
            m["config"] = echo;
            m["seed"] = cfg.train.seed;
            m["input_hash"] = config_text.empty() ? "" : git_blob_hash(config_text);
            m["output_dir"] = opts.out_dir;
            m["outputs"] = files.files;
            m["timings"] = {{"run_seconds", run_s},
                            {"total_seconds", std::chrono::duration<double>(Clock::now() - t0).count()}};
            std::ofstream f(files.dir / "manifest.json");
            f << m.dump(2) << '\n';
        }
        return code;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return config_error;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return config_error;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return verification_failed;
    }
}

} // namespace mcr::cli
