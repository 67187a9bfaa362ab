#pragma once
/// @file config.hpp
/// @brief Run configuration: sectioned key = value files, validation and initial data.

#include "geoflow/grid.hpp"
#include "geoflow/materials.hpp"
#include "geoflow/stepper.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace geoflow {

struct InitialSpec {
    enum class Profile { TanhDrop, PerturbedConstant };
    Profile profile = Profile::TanhDrop;
    // drop: centre and semi-axes as fractions of the domain, interface width
    double cx = 0.5, cy = 0.5;
    double rx = 0.3, ry = 0.2;
    double width = 1.0;
    // perturbed constant
    double mean = 0.0;
    double amplitude = 0.05;
};

struct ForcingSpec {
    enum class Kind { None, Shear, Swirl };
    Kind kind = Kind::None;
    double amplitude = 0.0;
    double frequency = 0.0;
};

struct ExperimentSpec {
    double tuple_amplitude = 0.05;
    int samples = 10;
    bool refine = true;                  ///< measure the discretization tolerance
    double korn_inflation = 1.1;
    double control_tol = 1e-3;           ///< solver tolerance of the negative control
    std::vector<double> alphas{0.1, 0.01, 0.001};
    std::vector<double> gammas{0.1, 0.01, 0.001};
    std::vector<double> mosco_alphas{1e-1, 1e-2, 1e-3, 1e-4};
    double theta_control = 0.6;
    int prox_cases = 100;
    int prox_pairs = 1000;
    double prox_resolution = 1e-3;
};

struct RunConfig {
    Grid grid{32, 32, 4.0, 4.0};
    Params params;
    TimeGrid time;
    InitialSpec initial;
    ForcingSpec forcing;
    SolverOptions solver;
    ExperimentSpec experiment;
    std::string out_dir = "out";
    int checkpoint_every = 0;  ///< field dumps every this many steps; 0 disables
    std::uint64_t seed = 0;
};

/// Parses the sectioned text; unknown sections or keys and malformed values throw Error
/// naming "section.key".
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
/// Field-level checks of everything a run needs; throws Error on the first failure.
void validate_config(const RunConfig& cfg);

SimState initial_state(const RunConfig& cfg);
Forcing make_forcing(const RunConfig& cfg);

/// Every accepted key with its default, one line each.
std::string config_reference();

}  // namespace geoflow
