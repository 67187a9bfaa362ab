#pragma once
/// @file potentials.hpp
/// @brief Double-well, logarithmic and obstacle potentials, subgradients and Mosco probes.

#include "geoflow/grid.hpp"
#include "geoflow/materials.hpp"

#include <limits>
#include <vector>

namespace geoflow {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct PotentialFamily {
    double alpha = 0.1;  ///< 0 = obstacle mode
    double kappa = 1.0;

    bool obstacle() const { return alpha == 0.0; }
    /// Half-width of the domain of the singular part.
    double bound() const { return 1.0 + alpha; }
};

PotentialFamily family_of(const Params& p);

// quartic double well (1 - s^2)^2 / 4
double w_dw(double s);
double w_dw_prime(double s);
double w_dw_second(double s);
double w_dw_third(double s);

/// Logarithmic family; +inf outside [-1-alpha, 1+alpha]. Endpoint values use 0 ln 0 = 0.
double w_sg_alpha(double s, double alpha);
double w_sg_alpha_prime(double s, double alpha);
double w_sg_alpha_second(double s, double alpha);
double w_sg_alpha_third(double s, double alpha);
/// Minimum of the family on its domain (attained at s = 0).
double w_sg_alpha_min(double alpha);

/// Singular part used in energies: normalised log potential, or the indicator of [-1, 1].
double w_sing(double s, const PotentialFamily& f);
double w_sing_prime(double s, const PotentialFamily& f);
double w_sing_second(double s, const PotentialFamily& f);
/// W = W_dw + W_sing and W_kappa = W + kappa s^2 / 2.
double w_total(double s, const PotentialFamily& f);
double w_kappa(double s, const PotentialFamily& f);
double w_kappa_prime(double s, const PotentialFamily& f);

double obstacle_project(double s);

struct SubgradientSelection {
    ScalarField beta;
};

/// alpha > 0: beta = W'_sg(phi). Obstacle mode: the multiplier supplied by the
/// phase-field solve (or zero if none), checked against the normal-cone sign rule.
SubgradientSelection select_beta(const ScalarField& phi, const PotentialFamily& f,
                                 const ScalarField* multiplier = nullptr);

/// F with F(0) = F'(0) = 0 and F'' = 1/m.
double entropy_F(double s, const CoefficientSpec& m);

double mosco_recovery_bound(double alpha);

struct MoscoProbeRow {
    double alpha = 0.0;
    double energy = 0.0;        ///< space-time integral of the raw log potential, +inf on violation
    double max_distance = 0.0;  ///< sup distance of phi to [-1, 1]
    bool finite = true;
    bool distance_ok = true;    ///< max_distance <= alpha
};

/// One trajectory per alpha, sampled with time step dt each.
std::vector<MoscoProbeRow> mosco_liminf_probe(const std::vector<std::vector<ScalarField>>& phi_seq,
                                              const std::vector<double>& alpha_seq, double dt);

ScalarField scale_test_phase(const ScalarField& phi_tilde, double alpha, double theta);

struct DerivativeBoundRow {
    double alpha = 0.0;
    double theta = 0.0;
    double sup_d1 = 0.0, sup_d2 = 0.0, sup_d3 = 0.0;
    double bound_d1 = 0.0, bound_d2 = 0.0, bound_d3 = 0.0;
};

/// Suprema of |W'|, |W''|, |W'''| over (1 - alpha^theta) s for s in [-1, 1] against
/// alpha (ln 3 + |ln(alpha + alpha^theta)|), 2 alpha / (alpha + alpha^theta) and
/// alpha / (alpha + alpha^theta)^2.
DerivativeBoundRow derivative_bound_report(double alpha, double theta, int samples = 20001);

}  // namespace geoflow
