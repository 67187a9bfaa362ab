#include "geoflow/materials.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace geoflow {

double CoefficientSpec::operator()(double s) const {
    if (kind == Kind::Constant) return c0;
    return std::clamp(c0 + c1 * s, lower, upper);
}

double CoefficientSpec::slope(double s) const {
    if (kind == Kind::Constant) return 0.0;
    const double raw = c0 + c1 * s;
    return (raw > lower && raw < upper) ? c1 : 0.0;
}

namespace {

void check_bounds(const CoefficientSpec& c, const char* name, double lo, double hi, bool strict_lo) {
    if (c.kind == CoefficientSpec::Kind::Affine && !(c.lower <= c.upper))
        throw Error(fmt::format("{}: clamp lower {} exceeds upper {}", name, c.lower, c.upper));
    for (int k = 0; k <= 400; ++k) {
        const double s = -2.0 + 4.0 * k / 400.0;
        const double val = c(s);
        const bool below = strict_lo ? !(val >= lo && val > 0.0) : !(val >= lo);
        if (below || !(val <= hi) || !std::isfinite(val))
            throw Error(fmt::format("{}: value {} at s={} outside declared bounds [{}, {}]", name, val, s, lo, hi));
    }
}

}  // namespace

void validate_params(const Params& p) {
    if (!(p.rho1 > 0.0)) throw Error("rho1 must be positive");
    if (!(p.rho2 > 0.0)) throw Error("rho2 must be positive");
    if (!(p.sigma_yield > 0.0)) throw Error("sigma_yield must be positive");
    if (!(p.gamma >= 0.0)) throw Error("gamma must be non-negative");
    if (!(p.alpha >= 0.0)) throw Error("alpha must be non-negative");
    if (p.epsilon != 1.0) throw Error("epsilon: only the unit interface parameter is supported");
    if (!(p.kappa >= 0.0)) throw Error("kappa must be non-negative");
    if (!(p.theta > 0.0 && p.theta < 0.5)) throw Error("theta must lie in (0, 1/2)");
    if (!(p.nu1 > 0.0 && p.nu1 <= p.nu2)) throw Error("nu bounds require 0 < nu1 <= nu2");
    if (!(p.m1 > 0.0 && p.m1 <= p.m2)) throw Error("m bounds require 0 < m1 <= m2");
    if (!(p.eta1 >= 0.0 && p.eta1 <= p.eta2)) throw Error("eta bounds require 0 <= eta1 <= eta2");
    if (!(p.a1 > 0.0)) throw Error("a1 must be positive");
    check_bounds(p.nu, "nu", p.nu1, p.nu2, true);
    check_bounds(p.m, "m", p.m1, p.m2, true);
    check_bounds(p.eta, "eta", p.eta1, p.eta2, false);
    check_bounds(p.a, "a", p.a1, std::numeric_limits<double>::infinity(), true);
}

double density(double phi, const Params& p) { return 0.5 * (p.rho1 + p.rho2) + 0.5 * (p.rho2 - p.rho1) * phi; }

ScalarField density(const ScalarField& phi, const Params& p) {
    ScalarField r(phi.grid);
    r.values = (0.5 * (p.rho1 + p.rho2)) + (0.5 * (p.rho2 - p.rho1)) * phi.values.array();
    return r;
}

VectorField mass_flux(const ScalarField& phi, const VectorField& grad_mu, const Params& p, FluxMode mode) {
    const double c = -0.5 * (p.rho2 - p.rho1);
    VectorField j(grad_mu.grid, c * grad_mu.x, c * grad_mu.y);
    if (mode == FluxMode::ContinuousModel) {
        const ScalarField m = eval_coefficient(p.m, phi);
        const auto& o = operators(phi.grid);
        j.x.array() *= (o.avg_x * m.values).array();
        j.y.array() *= (o.avg_y * m.values).array();
    }
    return j;
}

ScalarField eval_coefficient(const CoefficientSpec& spec, const ScalarField& phi) {
    ScalarField out(phi.grid);
    for (int c = 0; c < phi.values.size(); ++c) out.values[c] = spec(phi.values[c]);
    return out;
}

}  // namespace geoflow
