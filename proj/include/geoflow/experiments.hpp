#pragma once
/// @file experiments.hpp
/// @brief Named experiments behind the command line: each returns a report of checks and tables.

#include "geoflow/config.hpp"
#include "geoflow/diagnostics.hpp"

#include <json.hpp>

#include <memory>
#include <string>
#include <vector>

namespace geoflow {

struct Check {
    std::string name;
    int s_idx = -1;  ///< interval of time levels; -1 when not interval based
    int t_idx = -1;
    double t0 = 0.0, t1 = 0.0;
    std::string tuple;
    double slack = 0.0;  ///< measured margin; the check passes when slack >= -(tol_solver + tol_discretization)
    double tol_solver = 0.0;
    double tol_discretization = 0.0;
    bool pass = true;
};

struct NamedTrace {
    std::string label;
    EnergyTrace trace;
};

struct Report {
    std::string command;
    nlohmann::json config;
    std::vector<Check> checks;
    nlohmann::json tables = nlohmann::json::object();
    std::vector<NamedTrace> traces;              ///< the first one is written to energy.csv
    std::shared_ptr<const Trajectory> trajectory; ///< source of checkpoint field dumps

    bool pass() const;
    /// Checks whose name starts with `prefix`.
    std::vector<const Check*> find(const std::string& prefix) const;
    nlohmann::json to_json() const;
};

/// Echo of the whole configuration, parameters included.
nlohmann::json config_json(const RunConfig& cfg);

Report cmd_ede_check(const RunConfig& cfg, int workers = 1);
Report cmd_evs_battery(const RunConfig& cfg, int workers = 1);
Report cmd_alpha_sweep(const RunConfig& cfg, int workers = 1);
Report cmd_gamma_sweep(const RunConfig& cfg, int workers = 1);
Report cmd_mosco(const RunConfig& cfg, int workers = 1);
Report cmd_prox_oracle(const RunConfig& cfg, int workers = 1);
Report cmd_semiflow(const RunConfig& cfg, int workers = 1);

std::vector<std::string> command_names();
/// Dispatch by name; throws Error for an unknown command.
Report run_command(const std::string& name, const RunConfig& cfg, int workers = 1);

/// report.json, energy.csv (plus energy_<label>.csv for further traces) and field dumps.
void write_outputs(const Report& r, const std::string& dir, int checkpoint_every);

}  // namespace geoflow
