#include "geoflow/experiments.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <chrono>
#include <iostream>
#include <map>

int main(int argc, char** argv) {
    CLI::App app{"geoflow: experiments for the two-phase viscoelastoplastic flow solver"};
    app.require_subcommand(1);
    std::string config_path, out_dir;
    int workers = 1;
    std::uint64_t seed = 0;
    bool seed_given = false;

    std::map<std::string, CLI::App*> subs;
    for (const auto& name : geoflow::command_names()) {
        CLI::App* sub = app.add_subcommand(name, "run the " + name + " experiment");
        sub->add_option("--config", config_path, "run configuration file")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", out_dir, "output directory (overrides output.dir)");
        sub->add_option("--workers", workers, "parallel jobs for sweeps and refinements")->check(CLI::PositiveNumber);
        sub->add_option_function<std::uint64_t>(
            "--seed", [&](std::uint64_t s) { seed = s, seed_given = true; }, "random seed (overrides run.seed)");
        subs[name] = sub;
    }
    app.add_subcommand("reference", "print every configuration key with its default")->callback([] {
        std::cout << geoflow::config_reference();
    });
    CLI11_PARSE(app, argc, argv);

    for (const auto& [name, sub] : subs) {
        if (!sub->parsed()) continue;
        geoflow::RunConfig cfg;
        try {
            cfg = geoflow::load_config(config_path);
            if (!out_dir.empty()) cfg.out_dir = out_dir;
            if (seed_given) cfg.seed = seed;
            geoflow::validate_config(cfg);
        } catch (const geoflow::Error& e) {
            std::cerr << "config error: " << e.what() << "\n";
            return 2;
        }
        const auto t0 = std::chrono::steady_clock::now();
        const geoflow::Report r = geoflow::run_command(name, cfg, workers);
        geoflow::write_outputs(r, cfg.out_dir, cfg.checkpoint_every);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        // one summary line per check family
        std::map<std::string, std::pair<int, int>> families;
        std::map<std::string, double> worst;
        for (const auto& c : r.checks) {
            auto& f = families[c.name];
            ++f.first;
            if (!c.pass) ++f.second;
            const double margin = c.slack;
            auto it = worst.find(c.name);
            worst[c.name] = it == worst.end() ? margin : std::min(it->second, margin);
        }
        for (const auto& [fam, counts] : families)
            std::cout << fmt::format("{:<34} {:>5} checks  {:>3} failed  min slack {: .3e}\n", fam, counts.first,
                                     counts.second, worst[fam]);
        std::cout << fmt::format("{} {} in {:.1f} s, outputs in {}\n", name, r.pass() ? "PASS" : "FAIL", secs,
                                 cfg.out_dir);
        return r.pass() ? 0 : 1;
    }
    return 0;
}
