#pragma once
/// @file materials.hpp
/// @brief Model parameters and constitutive closures (density, flux, coefficients).

#include "geoflow/grid.hpp"

#include <cmath>
#include <string>

namespace geoflow {

/// Coefficient law c(s): constant, or affine c0 + c1*s clamped to [lower, upper].
struct CoefficientSpec {
    enum class Kind { Constant, Affine };
    Kind kind = Kind::Constant;
    double c0 = 1.0;
    double c1 = 0.0;
    double lower = 1.0;
    double upper = 1.0;

    static CoefficientSpec constant(double c) { return {Kind::Constant, c, 0.0, c, c}; }
    static CoefficientSpec affine(double c0, double c1, double lo, double hi) { return {Kind::Affine, c0, c1, lo, hi}; }

    double operator()(double s) const;
    /// Derivative where the clamp is inactive, zero otherwise.
    double slope(double s) const;
    /// Lipschitz constant of the law.
    double lipschitz() const { return kind == Kind::Constant ? 0.0 : std::abs(c1); }
};

enum class FluxMode { Discrete, ContinuousModel };

struct Params {
    double rho1 = 1.0;
    double rho2 = 3.0;
    CoefficientSpec nu = CoefficientSpec::constant(1.0);
    CoefficientSpec eta = CoefficientSpec::constant(1.0);
    CoefficientSpec m = CoefficientSpec::constant(1.0);
    CoefficientSpec a = CoefficientSpec::constant(1.0);
    double sigma_yield = 1.0;
    double gamma = 0.0;
    double alpha = 0.1;  ///< 0 selects obstacle mode
    double epsilon = 1.0;
    double kappa = 1.0;
    double theta = 0.4;
    double nu1 = 1.0, nu2 = 1.0;
    double eta1 = 1.0, eta2 = 1.0;
    double m1 = 1.0, m2 = 1.0;
    double a1 = 1.0;
    FluxMode flux_mode = FluxMode::Discrete;

    bool obstacle() const { return alpha == 0.0; }
};

/// Throws Error naming the offending field when a bound or sign condition fails.
void validate_params(const Params& p);

ScalarField density(const ScalarField& phi, const Params& p);
double density(double phi, const Params& p);
VectorField mass_flux(const ScalarField& phi, const VectorField& grad_mu, const Params& p, FluxMode mode);
ScalarField eval_coefficient(const CoefficientSpec& spec, const ScalarField& phi);

}  // namespace geoflow
