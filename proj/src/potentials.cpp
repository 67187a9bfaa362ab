#include "geoflow/potentials.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>

namespace geoflow {

PotentialFamily family_of(const Params& p) { return {p.alpha, p.kappa}; }

double w_dw(double s) {
    const double q = 1.0 - s * s;
    return 0.25 * q * q;
}
double w_dw_prime(double s) { return s * s * s - s; }
double w_dw_second(double s) { return 3.0 * s * s - 1.0; }
double w_dw_third(double s) { return 6.0 * s; }

namespace {
double xlogx(double x) { return x == 0.0 ? 0.0 : x * std::log(x); }
}  // namespace

double w_sg_alpha(double s, double alpha) {
    const double b = 1.0 + alpha;
    if (std::abs(s) > b) return kInf;
    return alpha * (xlogx(b + s) + xlogx(b - s));
}

double w_sg_alpha_prime(double s, double alpha) {
    const double b = 1.0 + alpha;
    if (std::abs(s) >= b) return s > 0 ? kInf : -kInf;
    return alpha * (std::log(b + s) - std::log(b - s));
}

double w_sg_alpha_second(double s, double alpha) {
    const double b = 1.0 + alpha;
    if (std::abs(s) >= b) return kInf;
    return alpha * (1.0 / (b + s) + 1.0 / (b - s));
}

double w_sg_alpha_third(double s, double alpha) {
    const double b = 1.0 + alpha;
    if (std::abs(s) >= b) return s > 0 ? kInf : -kInf;
    const double l = b - s, r = b + s;
    return alpha * (1.0 / (l * l) - 1.0 / (r * r));
}

double w_sg_alpha_min(double alpha) { return w_sg_alpha(0.0, alpha); }

double w_sing(double s, const PotentialFamily& f) {
    if (f.obstacle()) return std::abs(s) <= 1.0 ? 0.0 : kInf;
    return w_sg_alpha(s, f.alpha) - w_sg_alpha_min(f.alpha);
}

double w_sing_prime(double s, const PotentialFamily& f) {
    if (f.obstacle()) return 0.0;
    return w_sg_alpha_prime(s, f.alpha);
}

double w_sing_second(double s, const PotentialFamily& f) {
    if (f.obstacle()) return 0.0;
    return w_sg_alpha_second(s, f.alpha);
}

double w_total(double s, const PotentialFamily& f) { return w_dw(s) + w_sing(s, f); }
double w_kappa(double s, const PotentialFamily& f) { return w_total(s, f) + 0.5 * f.kappa * s * s; }
double w_kappa_prime(double s, const PotentialFamily& f) { return w_dw_prime(s) + w_sing_prime(s, f) + f.kappa * s; }

double obstacle_project(double s) { return std::clamp(s, -1.0, 1.0); }

SubgradientSelection select_beta(const ScalarField& phi, const PotentialFamily& f, const ScalarField* multiplier) {
    const Grid& g = phi.grid;
    SubgradientSelection out{ScalarField(g)};
    if (!f.obstacle()) {
        int worst = -1;
        double worst_val = 0.0;
        for (int c = 0; c < g.cells(); ++c) {
            const double s = phi.values[c];
            if (!(std::abs(s) < f.bound())) {
                if (worst < 0 || std::abs(s) > worst_val) {
                    worst = c;
                    worst_val = std::abs(s);
                }
                continue;
            }
            out.beta.values[c] = w_sg_alpha_prime(s, f.alpha);
        }
        if (worst >= 0)
            throw Error(fmt::format("phase field outside potential domain at cell ({}, {}): |phi| = {}", worst % g.nx,
                                    worst / g.nx, worst_val));
        return out;
    }
    for (int c = 0; c < g.cells(); ++c) {
        const double s = phi.values[c];
        if (std::abs(s) > 1.0)
            throw Error(fmt::format("phase field outside [-1, 1] at cell ({}, {}): {}", c % g.nx, c / g.nx, s));
        const double b = multiplier ? multiplier->values[c] : 0.0;
        const bool ok = (s == 1.0) ? b >= 0.0 : (s == -1.0) ? b <= 0.0 : b == 0.0;
        if (!ok)
            throw Error(fmt::format("multiplier {} at cell ({}, {}) not in the normal cone at phi = {}", b, c % g.nx,
                                    c / g.nx, s));
        out.beta.values[c] = b;
    }
    return out;
}

double entropy_F(double s, const CoefficientSpec& m) {
    if (m.kind == CoefficientSpec::Kind::Constant) return 0.5 * s * s / m.c0;
    // F(s) = int_0^s (s - q) / m(q) dq, split at the clamp kinks, Gauss-Legendre per piece.
    std::vector<double> cuts{0.0, s};
    if (m.c1 != 0.0) {
        for (double lvl : {m.lower, m.upper}) {
            const double q = (lvl - m.c0) / m.c1;
            if ((q > 0.0 && q < s) || (q < 0.0 && q > s)) cuts.push_back(q);
        }
    }
    std::sort(cuts.begin(), cuts.end());
    static const std::array<double, 5> xg{-0.9061798459386640, -0.5384693101056831, 0.0, 0.5384693101056831,
                                          0.9061798459386640};
    static const std::array<double, 5> wg{0.2369268850561891, 0.4786286704993665, 0.5688888888888889,
                                          0.4786286704993665, 0.2369268850561891};
    const int sub = 16;
    double acc = 0.0;
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
        const double a = cuts[k], b = cuts[k + 1];
        const double w = (b - a) / sub;
        for (int i = 0; i < sub; ++i) {
            const double lo = a + i * w, mid = lo + 0.5 * w;
            for (int q = 0; q < 5; ++q) {
                const double x = mid + 0.5 * w * xg[q];
                acc += 0.5 * w * wg[q] * (s - x) / m(x);
            }
        }
    }
    // the integral runs from 0 to s; for s < 0 the sorted cuts reverse the orientation
    return s >= 0.0 ? acc : -acc;
}

double mosco_recovery_bound(double alpha) {
    if (alpha == 0.0) return 0.0;
    return alpha * ((alpha + 2.0) * std::log(alpha + 2.0) + alpha * std::log(alpha));
}

std::vector<MoscoProbeRow> mosco_liminf_probe(const std::vector<std::vector<ScalarField>>& phi_seq,
                                              const std::vector<double>& alpha_seq, double dt) {
    if (phi_seq.size() != alpha_seq.size()) throw Error("mosco probe: one trajectory per alpha required");
    std::vector<MoscoProbeRow> rows;
    for (std::size_t k = 0; k < alpha_seq.size(); ++k) {
        MoscoProbeRow r;
        r.alpha = alpha_seq[k];
        for (const auto& phi : phi_seq[k]) {
            const double area = phi.grid.cell_area();
            for (int c = 0; c < phi.values.size(); ++c) {
                const double s = phi.values[c];
                r.max_distance = std::max(r.max_distance, std::max(std::abs(s) - 1.0, 0.0));
                const double w = w_sg_alpha(s, r.alpha);
                if (!std::isfinite(w)) r.finite = false;
                else r.energy += w * area * dt;
            }
        }
        if (!r.finite) r.energy = kInf;
        r.distance_ok = r.max_distance <= r.alpha + 4.0 * std::numeric_limits<double>::epsilon() * (1.0 + r.alpha);
        rows.push_back(r);
    }
    return rows;
}

ScalarField scale_test_phase(const ScalarField& phi_tilde, double alpha, double theta) {
    ScalarField out(phi_tilde.grid);
    out.values = (1.0 - std::pow(alpha, theta)) * phi_tilde.values;
    return out;
}

DerivativeBoundRow derivative_bound_report(double alpha, double theta, int samples) {
    DerivativeBoundRow r;
    r.alpha = alpha;
    r.theta = theta;
    const double at = std::pow(alpha, theta);
    const double scale = 1.0 - at;
    for (int k = 0; k < samples; ++k) {
        const double s = scale * (-1.0 + 2.0 * k / (samples - 1));
        r.sup_d1 = std::max(r.sup_d1, std::abs(w_sg_alpha_prime(s, alpha)));
        r.sup_d2 = std::max(r.sup_d2, std::abs(w_sg_alpha_second(s, alpha)));
        r.sup_d3 = std::max(r.sup_d3, std::abs(w_sg_alpha_third(s, alpha)));
    }
    const double gap = alpha + at;
    r.bound_d1 = alpha * (std::log(3.0) + std::abs(std::log(gap)));
    r.bound_d2 = 2.0 * alpha / gap;
    r.bound_d3 = alpha / (gap * gap);
    return r;
}

}  // namespace geoflow
