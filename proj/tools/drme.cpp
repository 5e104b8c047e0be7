#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "drme/sanity.hpp"
#include "experiment.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kRuntimeFailure = 1;
constexpr int kUsage = 2;

int cmd_run(const std::string& config_path, const std::vector<std::string>& overrides,
            const std::optional<std::uint64_t>& seed) {
    using namespace drme::cli;
    ExperimentConfig cfg;
    try {
        json doc = load_document(config_path);
        for (const auto& o : overrides) apply_override(doc, o);
        if (seed) doc["seeds"] = json::array({*seed});
        cfg = parse_config(doc, std::filesystem::path(config_path).parent_path());
    } catch (const drme::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kUsage;
    }

    try {
        const auto results = run_all(cfg, thread_budget());
        std::string rows;
        for (const auto& r : results) rows += csv_rows(r);
        append_csv(cfg.csv_path, rows);
        const json summary = summarize(cfg, results);
        if (!cfg.summary_path.empty()) {
            std::ofstream out(cfg.summary_path);
            if (!out) throw std::runtime_error("cannot write '" + cfg.summary_path + "'");
            out << summary.dump(2) << "\n";
        }
        std::cout << summary.dump(2) << "\n";
    } catch (const drme::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntimeFailure;
    }
    return kOk;
}

int cmd_sanity(const std::vector<std::string>& methods, std::uint64_t seed) {
    using namespace drme;
    std::vector<EvolutionMethod> selected;
    for (const auto& m : methods) {
        if (m == "ld") selected.push_back(EvolutionMethod::LD);
        else if (m == "svgd") selected.push_back(EvolutionMethod::SVGD);
        else if (m == "hmc") selected.push_back(EvolutionMethod::HMC);
        else {
            std::cerr << "unknown method '" << m << "' (expected ld, svgd or hmc)\n";
            return kUsage;
        }
    }
    if (selected.empty()) selected = {EvolutionMethod::LD, EvolutionMethod::SVGD, EvolutionMethod::HMC};

    SanityOptions opt;
    opt.seed = seed;
    bool all = true;
    for (auto m : selected) {
        const MomentCheck c = run_sanity(m, opt);
        std::printf("%-4s %s  mean=[", std::string(to_string(m)).c_str(), c.pass() ? "PASS" : "FAIL");
        for (Index k = 0; k < c.mean.size(); ++k) std::printf("%s%+.4f", k ? ", " : "", c.mean(k));
        std::printf("] var=[");
        for (Index k = 0; k < c.var.size(); ++k) std::printf("%s%.4f", k ? ", " : "", c.var(k));
        std::printf("]  (|mean| < %.2f, var in [%.2f, %.2f])\n", c.mean_tol, c.var_lo, c.var_hi);
        all &= c.pass();
    }
    return all ? kOk : kRuntimeFailure;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Distributionally robust memory evolution for continual learning"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "train from a JSON experiment config");
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    run->add_option("config", config_path, "experiment config (JSON)")->required();
    run->add_option("--set", overrides, "override a config value, e.g. train.lr=0.1")->take_all();
    run->add_option("--seed", seed, "run a single seed instead of the config's list");

    auto* sanity = app.add_subcommand("sanity", "sampler checks against a standard normal target");
    std::vector<std::string> methods;
    std::uint64_t sanity_seed = 0;
    sanity->add_option("--method", methods, "ld, svgd or hmc (repeatable; default all)");
    sanity->add_option("--seed", sanity_seed, "RNG seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    if (*run) return cmd_run(config_path, overrides, seed);
    return cmd_sanity(methods, sanity_seed);
}
