#include "mcr/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"mcr-lab: tabular Markov coherent risk policy optimization"};
    app.require_subcommand(1);

    mcr::cli::Options opts;
    std::uint64_t seed = 0;
    for (const char* name : {"landscape", "train", "verify"}) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", opts.config_path, "INI config file");
        sub->add_option("--out", opts.out_dir, "output directory");
        sub->add_option("--seed", seed, "overrides train.seed");
        sub->add_option("--threads", opts.threads, "worker cap (0: MCR_LAB_THREADS or all cores)");
        if (std::string(name) == "verify")
            sub->add_option("--suite", opts.suite, "lowerbound | correction | gradient | envelope | all");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : mcr::cli::config_error;
    }
    auto* sub = app.get_subcommands().front();
    opts.command = sub->get_name();
    if (sub->count("--seed") > 0) opts.seed = seed;
    return mcr::cli::run(opts, std::cout, std::cerr);
}
