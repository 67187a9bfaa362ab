#pragma once
/// @file plasticity.hpp
/// @brief Radial plastic potential a(phi)/2 |S|^2 restricted to the yield ball, its prox and the
/// stress inclusion solver.

#include "geoflow/grid.hpp"
#include "geoflow/materials.hpp"

#include <Eigen/SparseLU>

namespace geoflow {

struct PlasticModel {
    CoefficientSpec a = CoefficientSpec::constant(1.0);
    double sigma_yield = 1.0;

    static PlasticModel from(const Params& p) { return {p.a, p.sigma_yield}; }
};

/// Frobenius norm of a trace-free symmetric tensor given as (s11, s12).
inline double stf_norm(double s11, double s12) { return std::sqrt(2.0 * (s11 * s11 + s12 * s12)); }
double frobenius(const Mat2& m);

/// a(phi)/2 |S|^2 inside the yield ball, +inf outside.
double plastic_density(double phi, const Mat2& s, const PlasticModel& model);
double plastic_functional(const ScalarField& phi, const SymTensorField& s, const PlasticModel& model);

/// argmin_S 1/2 |S - R|^2 + tau P(phi; S) = Proj_{|S| <= sigma}(R / (1 + tau a(phi))).
Mat2 prox_plastic(double phi, const Mat2& r, double tau, const PlasticModel& model);
Mat2 subgradient_residual(const Mat2& r, double tau, const Mat2& s_out);

/// Cellwise prox on (s11, s12) stacked storage; xi receives (R - S) / tau.
void prox_plastic_field(const Vec& phi, const Vec& r, double tau, const PlasticModel& model, Vec& s, Vec& xi);

/// Minimiser of the prox objective by two-level grid search over the yield ball
/// (coarse sweep, then a window refined to `resolution`).
Mat2 prox_grid_search(double phi, const Mat2& r, double tau, const PlasticModel& model, double resolution = 1e-3);

struct InclusionOptions {
    double tol = 1e-10;
    double damping = 0.5;
    int max_iter = 2000;
};

struct InclusionResult {
    Vec s;   ///< stacked (s11, s12)
    Vec xi;  ///< certified subgradient, stacked
    int iterations = 0;
    double residual = 0.0;
    bool converged = false;
};

/// Solves Z S + xi = rhs with xi in dP(phi; S) cellwise by alternating a linear solve with the
/// pointwise prox (step tau), damping the multiplier update.
InclusionResult solve_stress_inclusion(const SpMat& z, const Eigen::SparseLU<SpMat>& z_lu, const Vec& rhs,
                                       const Vec& phi, const PlasticModel& model, double tau,
                                       const InclusionOptions& opt, const Vec* xi_start = nullptr);

}  // namespace geoflow
