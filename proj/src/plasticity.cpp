#include "geoflow/plasticity.hpp"

#include "geoflow/potentials.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>

namespace geoflow {

double frobenius(const Mat2& m) { return m.norm(); }

double plastic_density(double phi, const Mat2& s, const PlasticModel& model) {
    const double n = frobenius(s);
    if (n > model.sigma_yield) return kInf;
    return 0.5 * model.a(phi) * n * n;
}

double plastic_functional(const ScalarField& phi, const SymTensorField& s, const PlasticModel& model) {
    double acc = 0.0;
    for (int c = 0; c < phi.values.size(); ++c) {
        const double d = plastic_density(phi.values[c], s.at(c), model);
        if (!std::isfinite(d)) return kInf;
        acc += d;
    }
    return acc * phi.grid.cell_area();
}

Mat2 prox_plastic(double phi, const Mat2& r, double tau, const PlasticModel& model) {
    if (!(tau > 0.0)) throw Error("prox step must be positive");
    Mat2 s = r / (1.0 + tau * model.a(phi));
    const double n = frobenius(s);
    if (n > model.sigma_yield) {
        s *= model.sigma_yield / n;
        // rounding can leave the projection an ulp outside the ball
        while (frobenius(s) > model.sigma_yield) s *= 1.0 - std::numeric_limits<double>::epsilon();
    }
    return s;
}

Mat2 subgradient_residual(const Mat2& r, double tau, const Mat2& s_out) { return (r - s_out) / tau; }

void prox_plastic_field(const Vec& phi, const Vec& r, double tau, const PlasticModel& model, Vec& s, Vec& xi) {
    const int n = static_cast<int>(phi.size());
    s.resize(2 * n);
    xi.resize(2 * n);
    for (int c = 0; c < n; ++c) {
        const double shrink = 1.0 / (1.0 + tau * model.a(phi[c]));
        double a = r[c] * shrink, b = r[n + c] * shrink;
        const double norm = stf_norm(a, b);
        if (norm > model.sigma_yield) {
            a *= model.sigma_yield / norm;
            b *= model.sigma_yield / norm;
            while (stf_norm(a, b) > model.sigma_yield) {
                a *= 1.0 - std::numeric_limits<double>::epsilon();
                b *= 1.0 - std::numeric_limits<double>::epsilon();
            }
        }
        s[c] = a;
        s[n + c] = b;
        xi[c] = (r[c] - a) / tau;
        xi[n + c] = (r[n + c] - b) / tau;
    }
}

Mat2 prox_grid_search(double phi, const Mat2& r, double tau, const PlasticModel& model, double resolution) {
    // orthonormal coordinates (u, w) with S = (u E1 + w E2) / sqrt(2), |S|^2 = u^2 + w^2;
    // polar lattice so that the yield circle itself is sampled
    const double r2 = std::sqrt(2.0);
    const double ru = 0.5 * (r(0, 0) - r(1, 1)) * r2;
    const double rw = 0.5 * (r(0, 1) + r(1, 0)) * r2;
    const double coef = tau * model.a(phi);
    const double sig = model.sigma_yield;
    auto objective = [&](double rad, double ang) {
        const double u = rad * std::cos(ang), w = rad * std::sin(ang);
        return 0.5 * ((u - ru) * (u - ru) + (w - rw) * (w - rw)) + 0.5 * coef * rad * rad;
    };
    double best_r = 0.0, best_a = 0.0, best = objective(0.0, 0.0);
    auto sweep = [&](double r0, double r1, double a0, double a1, double dr, double da) {
        r0 = std::max(r0, 0.0);
        r1 = std::min(r1, sig);
        const int nr = static_cast<int>(std::ceil((r1 - r0) / dr));
        const int na = static_cast<int>(std::ceil((a1 - a0) / da));
        for (int i = 0; i <= nr; ++i) {
            const double rad = i == nr ? r1 : r0 + i * dr;
            for (int j = 0; j <= na; ++j) {
                const double ang = a0 + j * da;
                const double f = objective(rad, ang);
                if (f < best) {
                    best = f;
                    best_r = rad;
                    best_a = ang;
                }
            }
        }
    };
    const double dr = std::max(resolution, sig / 100.0);
    const double da = 2.0 * M_PI / 400.0;
    sweep(0.0, sig, 0.0, 2.0 * M_PI, dr, da);
    const double cr = best_r, ca = best_a;
    sweep(cr - 2.0 * dr, cr + 2.0 * dr, ca - 2.0 * da, ca + 2.0 * da, resolution, resolution / sig);
    const double u = best_r * std::cos(best_a), w = best_r * std::sin(best_a);
    Mat2 s;
    s << u / r2, w / r2, w / r2, -u / r2;
    return s;
}

InclusionResult solve_stress_inclusion(const SpMat& z, const Eigen::SparseLU<SpMat>& z_lu, const Vec& rhs,
                                       const Vec& phi, const PlasticModel& model, double tau,
                                       const InclusionOptions& opt, const Vec* xi_start) {
    InclusionResult out;
    Vec xi = xi_start ? *xi_start : Vec::Zero(rhs.size());
    const double scale = std::max(1.0, rhs.norm());
    Vec s, xi_new;
    for (int it = 1; it <= opt.max_iter; ++it) {
        const Vec s_lin = z_lu.solve(rhs - xi);
        const Vec r = s_lin + tau * xi;
        prox_plastic_field(phi, r, tau, model, s, xi_new);
        out.residual = (z * s + xi_new - rhs).norm();
        out.iterations = it;
        if (out.residual <= opt.tol * scale) {
            out.converged = true;
            break;
        }
        xi = (1.0 - opt.damping) * xi + opt.damping * xi_new;
    }
    out.s = s;
    out.xi = xi_new;
    return out;
}

}  // namespace geoflow
