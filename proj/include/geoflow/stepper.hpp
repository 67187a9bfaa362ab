#pragma once
/// @file stepper.hpp
/// @brief Implicit time stepping: Cahn-Hilliard with Gibbs-Thomson law, stress evolution with
/// plastic inclusion, momentum balance with incompressibility.

#include "geoflow/grid.hpp"
#include "geoflow/materials.hpp"
#include "geoflow/plasticity.hpp"
#include "geoflow/potentials.hpp"

#include <Eigen/Core>

#include <functional>
#include <string>
#include <vector>

namespace geoflow {

struct SimState {
    VectorField v;
    SymTensorField S;
    ScalarField phi;
    ScalarField mu;
    ScalarField p;
    ScalarField beta;   ///< selected subgradient of the singular potential
    SymTensorField xi;  ///< plastic subgradient of the last step
    double t = 0.0;

    SimState() = default;
    explicit SimState(const Grid& g)
        : v(g), S(g), phi(g), mu(g), p(g), beta(g), xi(g) {}
    const Grid& grid() const { return phi.grid; }
};

struct TimeGrid {
    double T = 0.5;
    int N = 50;
    double h() const { return T / N; }
};

/// Body force f(t, x, y); empty means zero.
struct Forcing {
    std::function<Eigen::Vector2d(double, double, double)> f;

    bool zero() const { return !f; }
    VectorField sample(const Grid& g, double t) const;
    /// (1/h) int_{t0}^{t1} f dt by three-point Gauss-Legendre, on faces.
    VectorField average(const Grid& g, double t0, double t1) const;
};

struct SolverOptions {
    double outer_tol = 1e-9;
    double linear_tol = 1e-11;
    int max_outer = 200;
    double damping = 0.5;
    bool adaptive = true;  ///< undamped sweeps until the residual stops halving, then `damping`
    int max_newton = 60;
    InclusionOptions inclusion{};
};

struct StepReport {
    int outer_iterations = 0;
    int newton_iterations = 0;
    int inclusion_iterations = 0;
    double res_ch = 0.0;
    double res_gt = 0.0;
    double res_stress = 0.0;
    double res_momentum = 0.0;
    double res_div = 0.0;
    double diss_visc = 0.0;
    double diss_gamma = 0.0;
    double diss_mix = 0.0;
    double diss_plastic = 0.0;  ///< <xi, S>
    double plastic_value = 0.0; ///< P(phi; S)
    double f_work = 0.0;        ///< <f, v>
    double energy_before = 0.0;
    double energy_after = 0.0;
    double slack = 0.0;         ///< E_k + h f_work - E_{k+1} - h (dissipation)
    double numerical_diss = 0.0;
    double defect = 0.0;        ///< slack - numerical_diss (zero for an exact solve)
};

struct ChResult {
    ScalarField phi;
    ScalarField mu;
    ScalarField beta;
    int iterations = 0;
    double residual = 0.0;
};

/// Solves the phase-field pair for transport velocity v_next. `warm` seeds Newton when given.
ChResult inner_solve_ch(const ScalarField& phi_k, const VectorField& v_next, const Params& p, double h,
                        const SolverOptions& opt, const ChResult* warm = nullptr);

/// Chemical potential of phi at rest (no splitting correction, beta = 0 in obstacle mode).
ScalarField initial_mu(const ScalarField& phi, const Params& p);

struct StepResult {
    SimState state;
    StepReport report;
};

StepResult step(const SimState& state, const Params& p, double h, const VectorField& f_avg,
                const SolverOptions& opt = {});

struct Trajectory {
    std::vector<SimState> states;
    std::vector<StepReport> reports;
    std::vector<VectorField> forcing;  ///< per-step averages
    double h = 0.0;
    bool complete = true;
    std::string failure;
};

Trajectory run(const SimState& initial, const Params& p, const TimeGrid& tg, const Forcing& f,
               const SolverOptions& opt = {});

}  // namespace geoflow
