#include "geoflow/stepper.hpp"

#include "geoflow/diagnostics.hpp"

#include <Eigen/SparseLU>
#include <fmt/format.h>

#include <cmath>
#include <map>
#include <mutex>
#include <tuple>

namespace geoflow {

namespace {

using Triplets = std::vector<Eigen::Triplet<double>>;

SpMat from_triplets(int r, int c, const Triplets& t) {
    SpMat m(r, c);
    m.setFromTriplets(t.begin(), t.end());
    return m;
}

double l2(const Vec& r, const Grid& g) { return std::sqrt(r.squaredNorm() * g.cell_area()); }

// Grid-dependent matrices for the momentum and stress sub-steps.
struct StepOperators {
    SpMat dx_on_x, dy_on_x, dx_on_y, dy_on_y;  // centred differences on the face lattices
    SpMat y_to_x, x_to_y;                      // four-point face interpolation
    SpMat select;                              // interior faces <- stacked faces
    SpMat grad_int;                            // pressure gradient on interior faces, cell 0 pinned
    std::vector<int> interior;                 // stacked indices of interior faces
};

std::unique_ptr<StepOperators> build_step_operators(const Grid& g) {
    auto s = std::make_unique<StepOperators>();
    const int nfx = g.xfaces(), nfy = g.yfaces();
    Triplets t;
    // x lattice: (nx+1) x ny, wall columns i = 0, nx
    for (int j = 0; j < g.ny; ++j)
        for (int i = 1; i < g.nx; ++i) {
            t.emplace_back(g.fx(i, j), g.fx(i + 1, j), 0.5 / g.hx);
            t.emplace_back(g.fx(i, j), g.fx(i - 1, j), -0.5 / g.hx);
        }
    s->dx_on_x = from_triplets(nfx, nfx, t);
    t.clear();
    for (int j = 0; j < g.ny; ++j)
        for (int i = 1; i < g.nx; ++i) {
            const int r = g.fx(i, j);
            if (j + 1 < g.ny) t.emplace_back(r, g.fx(i, j + 1), 0.5 / g.hy);
            else t.emplace_back(r, r, -0.5 / g.hy);
            if (j > 0) t.emplace_back(r, g.fx(i, j - 1), -0.5 / g.hy);
            else t.emplace_back(r, r, 0.5 / g.hy);
        }
    s->dy_on_x = from_triplets(nfx, nfx, t);
    t.clear();
    for (int j = 1; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            t.emplace_back(g.fy(i, j), g.fy(i, j + 1), 0.5 / g.hy);
            t.emplace_back(g.fy(i, j), g.fy(i, j - 1), -0.5 / g.hy);
        }
    s->dy_on_y = from_triplets(nfy, nfy, t);
    t.clear();
    for (int j = 1; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            const int r = g.fy(i, j);
            if (i + 1 < g.nx) t.emplace_back(r, g.fy(i + 1, j), 0.5 / g.hx);
            else t.emplace_back(r, r, -0.5 / g.hx);
            if (i > 0) t.emplace_back(r, g.fy(i - 1, j), -0.5 / g.hx);
            else t.emplace_back(r, r, 0.5 / g.hx);
        }
    s->dx_on_y = from_triplets(nfy, nfy, t);

    t.clear();
    for (int j = 0; j < g.ny; ++j)
        for (int i = 1; i < g.nx; ++i)
            for (int di = -1; di <= 0; ++di)
                for (int dj = 0; dj <= 1; ++dj) t.emplace_back(g.fx(i, j), g.fy(i + di, j + dj), 0.25);
    s->y_to_x = from_triplets(nfx, nfy, t);
    t.clear();
    for (int j = 1; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i)
            for (int di = 0; di <= 1; ++di)
                for (int dj = -1; dj <= 0; ++dj) t.emplace_back(g.fy(i, j), g.fx(i + di, j + dj), 0.25);
    s->x_to_y = from_triplets(nfy, nfx, t);

    const auto& o = operators(g);
    for (int f : o.interior_x) s->interior.push_back(f);
    for (int f : o.interior_y) s->interior.push_back(nfx + f);
    t.clear();
    for (std::size_t k = 0; k < s->interior.size(); ++k) t.emplace_back(static_cast<int>(k), s->interior[k], 1.0);
    s->select = from_triplets(static_cast<int>(s->interior.size()), nfx + nfy, t);

    Triplets tg;
    SpMat grad_full(nfx + nfy, g.cells());
    {
        Triplets gt;
        for (int k = 0; k < o.grad_x.outerSize(); ++k)
            for (SpMat::InnerIterator it(o.grad_x, k); it; ++it) gt.emplace_back(it.row(), it.col(), it.value());
        for (int k = 0; k < o.grad_y.outerSize(); ++k)
            for (SpMat::InnerIterator it(o.grad_y, k); it; ++it) gt.emplace_back(nfx + it.row(), it.col(), it.value());
        grad_full.setFromTriplets(gt.begin(), gt.end());
    }
    SpMat gi = s->select * grad_full;
    for (int k = 0; k < gi.outerSize(); ++k)
        for (SpMat::InnerIterator it(gi, k); it; ++it)
            if (it.col() > 0) tg.emplace_back(it.row(), it.col() - 1, it.value());
    s->grad_int = from_triplets(gi.rows(), g.cells() - 1, tg);
    return s;
}

const StepOperators& step_operators(const Grid& g) {
    static std::mutex mtx;
    static std::map<std::tuple<int, int, double, double>, std::unique_ptr<StepOperators>> cache;
    std::lock_guard<std::mutex> lock(mtx);
    auto& slot = cache[{g.nx, g.ny, g.lx, g.ly}];
    if (!slot) slot = build_step_operators(g);
    return *slot;
}

SpMat block_diag2(const SpMat& a, const SpMat& b) {
    Triplets t;
    for (int k = 0; k < a.outerSize(); ++k)
        for (SpMat::InnerIterator it(a, k); it; ++it) t.emplace_back(it.row(), it.col(), it.value());
    for (int k = 0; k < b.outerSize(); ++k)
        for (SpMat::InnerIterator it(b, k); it; ++it) t.emplace_back(a.rows() + it.row(), a.cols() + it.col(), it.value());
    return from_triplets(a.rows() + b.rows(), a.cols() + b.cols(), t);
}

// Skew transport 1/2 (B D - D^T B) summed over both directions.
SpMat skew_transport(const Vec& bx, const SpMat& dx, const Vec& by, const SpMat& dy) {
    SpMat a = bx.asDiagonal() * dx;
    SpMat b = by.asDiagonal() * dy;
    SpMat sum = a + b;
    SpMat sumt = sum.transpose();
    return 0.5 * (sum - sumt);
}

// Cell transport operator for the stress components.
SpMat stress_transport(const VectorField& v) {
    const auto& o = operators(v.grid);
    Vec ux, uy;
    cell_velocity(v, ux, uy);
    return skew_transport(ux, o.dx_even, uy, o.dy_even);
}

// Face transport operator for the momentum components with flux b.
SpMat momentum_transport(const Grid& g, const VectorField& b) {
    const auto& s = step_operators(g);
    const Vec by_on_x = s.y_to_x * b.y;
    const Vec bx_on_y = s.x_to_y * b.x;
    const SpMat cx = skew_transport(b.x, s.dx_on_x, by_on_x, s.dy_on_x);
    const SpMat cy = skew_transport(bx_on_y, s.dx_on_y, b.y, s.dy_on_y);
    return block_diag2(cx, cy);
}

Vec ch_transport(const VectorField& v, const Vec& gx, const Vec& gy) {
    const auto& o = operators(v.grid);
    return o.avg_x.transpose() * v.x.cwiseProduct(gx) + o.avg_y.transpose() * v.y.cwiseProduct(gy);
}

Vec skew_rate(const VectorField& v) {
    const auto& o = operators(v.grid);
    return 0.5 * (o.cell_from_vtx * (o.dyvx * v.x - o.dxvy * v.y));
}

// (S W - W S) in (s11, s12) components: (-2 w s12, 2 w s11).
SpMat jaumann_operator(const VectorField& v) {
    const Vec w = skew_rate(v);
    const int n = v.grid.cells();
    Triplets t;
    for (int c = 0; c < n; ++c) {
        t.emplace_back(c, n + c, -2.0 * w[c]);
        t.emplace_back(n + c, c, 2.0 * w[c]);
    }
    return from_triplets(2 * n, 2 * n, t);
}

struct Frozen {
    Vec nu, eta, m;       // coefficients at phi_k
    Vec rho_fx, rho_fy;   // face densities at phi_k
    Vec gx, gy;           // face gradient of phi_k
    SpMat lap_m;          // mobility Laplacian at phi_k
    SpMat visc;           // viscous operator at phi_k
};

Frozen freeze(const SimState& s, const Params& p) {
    const Grid& g = s.grid();
    const auto& o = operators(g);
    Frozen f;
    f.nu = eval_coefficient(p.nu, s.phi).values;
    f.eta = eval_coefficient(p.eta, s.phi).values;
    f.m = eval_coefficient(p.m, s.phi).values;
    const Vec rho = density(s.phi, p).values;
    f.rho_fx = o.avg_x * rho;
    f.rho_fy = o.avg_y * rho;
    f.gx = o.grad_x * s.phi.values;
    f.gy = o.grad_y * s.phi.values;
    f.lap_m = weighted_laplacian(g, f.m);
    f.visc = viscous_operator(g, f.nu);
    return f;
}

struct ChSystem {
    const ScalarField& phi_k;
    const Params& p;
    PotentialFamily fam;
    double h;
    SpMat lap;
    SpMat lap_m;
    Vec transport;
};

// Gibbs-Thomson expression mu + L phi - W'_dw(phi) - kappa (phi - phi_k)/2, i.e. the multiplier
// that would close the second equation.
Vec gt_expression(const ChSystem& sys, const Vec& phi, const Vec& mu) {
    Vec r = mu + sys.lap * phi;
    for (int c = 0; c < phi.size(); ++c)
        r[c] -= w_dw_prime(phi[c]) + 0.5 * sys.fam.kappa * (phi[c] - sys.phi_k.values[c]);
    return r;
}

Vec ch_residual1(const ChSystem& sys, const Vec& phi, const Vec& mu) {
    return (phi - sys.phi_k.values) / sys.h + sys.transport - sys.lap_m * mu;
}

}  // namespace

VectorField Forcing::sample(const Grid& g, double t) const {
    VectorField out(g);
    if (zero()) return out;
    for (int j = 0; j < g.ny; ++j)
        for (int i = 1; i < g.nx; ++i) out.x[g.fx(i, j)] = f(t, g.xn(i), g.yc(j))[0];
    for (int j = 1; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) out.y[g.fy(i, j)] = f(t, g.xc(i), g.yn(j))[1];
    return out;
}

VectorField Forcing::average(const Grid& g, double t0, double t1) const {
    VectorField out(g);
    if (zero()) return out;
    static const double xg[3] = {-0.7745966692414834, 0.0, 0.7745966692414834};
    static const double wg[3] = {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
    const double mid = 0.5 * (t0 + t1), half = 0.5 * (t1 - t0);
    for (int q = 0; q < 3; ++q) {
        const VectorField s = sample(g, mid + half * xg[q]);
        out.x += 0.5 * wg[q] * s.x;
        out.y += 0.5 * wg[q] * s.y;
    }
    return out;
}

ScalarField initial_mu(const ScalarField& phi, const Params& p) {
    const PotentialFamily fam = family_of(p);
    ScalarField mu(phi.grid, -(operators(phi.grid).lap_neumann * phi.values));
    for (int c = 0; c < phi.values.size(); ++c) mu.values[c] += w_dw_prime(phi.values[c]) + w_sing_prime(phi.values[c], fam);
    return mu;
}

ChResult inner_solve_ch(const ScalarField& phi_k, const VectorField& v_next, const Params& p, double h,
                        const SolverOptions& opt, const ChResult* warm) {
    const Grid& g = phi_k.grid;
    const auto& o = operators(g);
    const int n = g.cells();
    ChSystem sys{phi_k, p, family_of(p), h, o.lap_neumann,
                 weighted_laplacian(g, eval_coefficient(p.m, phi_k).values),
                 ch_transport(v_next, o.grad_x * phi_k.values, o.grad_y * phi_k.values)};
    const bool obstacle = sys.fam.obstacle();
    const double bound = sys.fam.bound();

    Vec phi = warm ? warm->phi.values : phi_k.values;
    Vec mu = warm ? warm->mu.values : initial_mu(phi_k, p).values;
    Vec beta = warm ? warm->beta.values : Vec::Zero(n);
    if (!obstacle)
        for (int c = 0; c < n; ++c)
            if (!(std::abs(phi[c]) < bound)) throw Error("phase-field Newton start outside the potential domain");

    // active[c]: +1 upper, -1 lower, 0 inactive
    std::vector<int> active(n, 0), previous(n, 2);
    // the multiplier carries the Laplacian's scale; an O(1) weight lets the sets cycle on steep profiles
    const double pdas_c = 2.0 / (g.hx * g.hx) + 2.0 / (g.hy * g.hy);
    auto update_sets = [&]() {
        for (int c = 0; c < n; ++c) {
            if (beta[c] + pdas_c * (phi[c] - 1.0) > 0.0) active[c] = 1;
            else if (beta[c] + pdas_c * (phi[c] + 1.0) < 0.0) active[c] = -1;
            else active[c] = 0;
        }
    };
    auto residual = [&](const Vec& ph, const Vec& m, Vec& r) {
        r.resize(2 * n);
        r.head(n) = ch_residual1(sys, ph, m);
        Vec r2 = gt_expression(sys, ph, m);
        for (int c = 0; c < n; ++c) {
            if (obstacle) {
                if (active[c] != 0) r2[c] = ph[c] - active[c];
            } else {
                r2[c] -= w_sg_alpha_prime(ph[c], sys.fam.alpha);
            }
        }
        r.tail(n) = r2;
    };

    ChResult out;
    Vec r;
    std::vector<double> history;
    for (int it = 0; it <= opt.max_newton; ++it) {
        if (obstacle) update_sets();
        residual(phi, mu, r);
        const double rn = l2(r, g);
        history.push_back(rn);
        const bool sets_stable = !obstacle || active == previous;
        if (rn <= opt.linear_tol && sets_stable) {
            out.iterations = it;
            out.residual = rn;
            break;
        }
        if (it == opt.max_newton) {
            std::string hist;
            for (double x : history) hist += fmt::format(" {:.3e}", x);
            throw Error("phase-field Newton did not converge; residual history:" + hist);
        }
        previous = active;

        Triplets t;
        for (int c = 0; c < n; ++c) t.emplace_back(c, c, 1.0 / h);
        for (int k = 0; k < sys.lap_m.outerSize(); ++k)
            for (SpMat::InnerIterator itm(sys.lap_m, k); itm; ++itm) t.emplace_back(itm.row(), n + itm.col(), -itm.value());
        for (int k = 0; k < sys.lap.outerSize(); ++k)
            for (SpMat::InnerIterator itl(sys.lap, k); itl; ++itl)
                if (!(obstacle && active[itl.row()] != 0)) t.emplace_back(n + itl.row(), itl.col(), itl.value());
        for (int c = 0; c < n; ++c) {
            if (obstacle && active[c] != 0) {
                t.emplace_back(n + c, c, 1.0);
                continue;
            }
            double d = -w_dw_second(phi[c]) - 0.5 * sys.fam.kappa;
            if (!obstacle) d -= w_sg_alpha_second(phi[c], sys.fam.alpha);
            t.emplace_back(n + c, c, d);
            t.emplace_back(n + c, n + c, 1.0);
        }
        SpMat jac = from_triplets(2 * n, 2 * n, t);
        Eigen::SparseLU<SpMat> lu;
        lu.compute(jac);
        if (lu.info() != Eigen::Success) throw Error("phase-field Jacobian factorization failed");
        const Vec delta = lu.solve(-r);
        const Vec dphi = delta.head(n), dmu = delta.tail(n);

        double step = 1.0;
        if (!obstacle) {
            // fraction to boundary
            for (int c = 0; c < n; ++c) {
                if (dphi[c] > 0.0) step = std::min(step, 0.99 * (bound - phi[c]) / dphi[c]);
                else if (dphi[c] < 0.0) step = std::min(step, 0.99 * (-bound - phi[c]) / dphi[c]);
            }
        }
        // backtrack on the residual; in obstacle mode the sets stay frozen during the search
        if (rn > 10.0 * opt.linear_tol) {
            Vec trial_r;
            while (true) {
                residual(phi + step * dphi, mu + step * dmu, trial_r);
                if (l2(trial_r, g) <= (1.0 - 1e-4 * step) * rn) break;
                step *= 0.5;
                if (step < 1e-12) throw Error(fmt::format("phase-field line search exhausted at residual {:.3e}", rn));
            }
        }
        phi += step * dphi;
        mu += step * dmu;
        if (obstacle) {
            const Vec expr = gt_expression(sys, phi, mu);
            for (int c = 0; c < n; ++c) {
                if (active[c] != 0) {
                    phi[c] = active[c];
                    beta[c] = expr[c];
                } else {
                    beta[c] = 0.0;
                }
            }
        }
    }
    if (!obstacle)
        for (int c = 0; c < n; ++c) beta[c] = w_sg_alpha_prime(phi[c], sys.fam.alpha);
    out.phi = ScalarField(g, phi);
    out.mu = ScalarField(g, mu);
    out.beta = ScalarField(g, beta);
    return out;
}

namespace {

struct StressSolve {
    InclusionResult inc;
    SpMat z;
    Vec rhs;
};

SpMat stress_matrix(const VectorField& v, const Params& p, double h) {
    const Grid& g = v.grid;
    const int n = g.cells();
    const auto& o = operators(g);
    const SpMat tr = stress_transport(v);
    SpMat diag_part = block_diag2(tr, tr);
    SpMat id(2 * n, 2 * n);
    id.setIdentity();
    SpMat z = id / h + diag_part + jaumann_operator(v);
    if (p.gamma > 0.0) z -= p.gamma * block_diag2(o.lap_neumann, o.lap_neumann);
    return z;
}

Vec stress_source(const VectorField& v, const Vec& eta) {
    const Vec bv = strain_dev_operator(v.grid) * v.stacked();
    const int n = v.grid.cells();
    Vec out(2 * n);
    out.head(n) = eta.cwiseProduct(bv.head(n));
    out.tail(n) = eta.cwiseProduct(bv.tail(n));
    return out;
}

StressSolve solve_stress(const SimState& s, const VectorField& v, const ScalarField& phi_k, const Frozen& fr,
                         const Params& p, double h, const SolverOptions& opt, const Vec* xi_start) {
    StressSolve out;
    out.z = stress_matrix(v, p, h);
    out.rhs = s.S.stacked() / h + stress_source(v, fr.eta);
    Eigen::SparseLU<SpMat> lu;
    lu.compute(out.z);
    if (lu.info() != Eigen::Success) throw Error("stress operator factorization failed");
    out.inc = solve_stress_inclusion(out.z, lu, out.rhs, phi_k.values, PlasticModel::from(p), h, opt.inclusion,
                                     xi_start);
    if (!out.inc.converged)
        throw Error(fmt::format("stress inclusion did not converge (residual {:.3e})", out.inc.residual));
    return out;
}

VectorField momentum_flux(const VectorField& a, const ScalarField& phi_k, const ScalarField& mu, const Frozen& fr,
                          const Params& p) {
    const VectorField j = mass_flux(phi_k, apply_gradient(mu), p, p.flux_mode);
    return VectorField(a.grid, fr.rho_fx.cwiseProduct(a.x) + j.x, fr.rho_fy.cwiseProduct(a.y) + j.y);
}

struct MomentumSystem {
    SpMat m;   // stacked face operator
    Vec rhs;   // stacked face force
};

MomentumSystem momentum_system(const SimState& s, const VectorField& a, const ScalarField& phi_new,
                               const ScalarField& mu_new, const SymTensorField& S_new, const Frozen& fr,
                               const Params& p, double h, const VectorField& f_avg) {
    const Grid& g = s.grid();
    const auto& o = operators(g);
    const Vec rho_new = density(phi_new, p).values;
    const Vec rx = o.avg_x * rho_new, ry = o.avg_y * rho_new;
    Vec time_diag(g.xfaces() + g.yfaces());
    time_diag << 0.5 * (rx + fr.rho_fx) / h, 0.5 * (ry + fr.rho_fy) / h;
    MomentumSystem ms;
    ms.m = SpMat(time_diag.asDiagonal()) + momentum_transport(g, momentum_flux(a, s.phi, mu_new, fr, p)) + fr.visc;

    const Vec mx = o.avg_x * mu_new.values, my = o.avg_y * mu_new.values;
    SymTensorField eta_s(g, fr.eta.cwiseProduct(S_new.s11), fr.eta.cwiseProduct(S_new.s12));
    const VectorField div_s = apply_divergence(eta_s);
    Vec rhs(g.xfaces() + g.yfaces());
    rhs << fr.rho_fx.cwiseProduct(s.v.x) / h + mx.cwiseProduct(fr.gx) + div_s.x + f_avg.x,
        fr.rho_fy.cwiseProduct(s.v.y) / h + my.cwiseProduct(fr.gy) + div_s.y + f_avg.y;
    ms.rhs = rhs;
    return ms;
}

struct MomentumSolve {
    VectorField v;
    ScalarField p;
};

MomentumSolve solve_momentum(const MomentumSystem& ms, const Grid& g) {
    const auto& so = step_operators(g);
    const SpMat mi = so.select * ms.m * SpMat(so.select.transpose());
    const int nu = static_cast<int>(mi.rows()), np = g.cells() - 1;
    Triplets t;
    for (int k = 0; k < mi.outerSize(); ++k)
        for (SpMat::InnerIterator it(mi, k); it; ++it) t.emplace_back(it.row(), it.col(), it.value());
    for (int k = 0; k < so.grad_int.outerSize(); ++k)
        for (SpMat::InnerIterator it(so.grad_int, k); it; ++it) {
            t.emplace_back(it.row(), nu + it.col(), it.value());
            t.emplace_back(nu + it.col(), it.row(), it.value());
        }
    const SpMat k = from_triplets(nu + np, nu + np, t);
    Vec b = Vec::Zero(nu + np);
    b.head(nu) = so.select * ms.rhs;
    Eigen::SparseLU<SpMat> lu;
    lu.compute(k);
    if (lu.info() != Eigen::Success) throw Error("momentum saddle-point factorization failed");
    const Vec x = lu.solve(b);
    MomentumSolve out;
    out.v = VectorField::from_stacked(g, SpMat(so.select.transpose()) * x.head(nu));
    Vec pr = Vec::Zero(g.cells());
    pr.tail(np) = x.tail(np);
    pr.array() -= pr.mean();
    out.p = ScalarField(g, pr);
    return out;
}

double momentum_residual(const MomentumSystem& ms, const MomentumSolve& sol, const Grid& g) {
    const auto& so = step_operators(g);
    const auto& o = operators(g);
    Vec gp(g.xfaces() + g.yfaces());
    gp << o.grad_x * sol.p.values, o.grad_y * sol.p.values;
    return l2(so.select * (ms.m * sol.v.stacked() + gp - ms.rhs), g);
}

}  // namespace

StepResult step(const SimState& state, const Params& p, double h, const VectorField& f_avg, const SolverOptions& opt) {
    const Grid& g = state.grid();
    const auto& o = operators(g);
    const PotentialFamily fam = family_of(p);
    const Frozen fr = freeze(state, p);

    VectorField v = state.v;
    ChResult ch;
    ch.phi = state.phi;
    ch.mu = state.mu;
    ch.beta = state.beta;
    if (!fam.obstacle()) {
        bool inside = true;
        for (int c = 0; c < g.cells(); ++c) inside = inside && std::abs(state.phi.values[c]) < fam.bound();
        if (!inside) throw Error("phase field outside the potential domain at step start");
    }
    Vec xi = state.xi.stacked();
    StepReport rep;
    StressSolve ss;
    MomentumSolve ms_sol;
    bool converged = false;
    double res_total = 0.0, res_prev = 0.0;
    double omega = opt.adaptive ? 1.0 : opt.damping;
    for (int it = 1; it <= opt.max_outer; ++it) {
        ch = inner_solve_ch(state.phi, v, p, h, opt, &ch);
        rep.newton_iterations += ch.iterations;
        ss = solve_stress(state, v, state.phi, fr, p, h, opt, &xi);
        xi = ss.inc.xi;
        rep.inclusion_iterations += ss.inc.iterations;
        const SymTensorField S_new = SymTensorField::from_stacked(g, ss.inc.s);
        const MomentumSystem msys = momentum_system(state, v, ch.phi, ch.mu, S_new, fr, p, h, f_avg);
        ms_sol = solve_momentum(msys, g);
        rep.outer_iterations = it;

        // residuals of every equation with the new velocity
        const VectorField& vn = ms_sol.v;
        const Vec tr_new = ch_transport(vn, fr.gx, fr.gy);
        const Vec tr_old = ch_transport(v, fr.gx, fr.gy);
        rep.res_ch = std::max(ch.residual, l2(tr_new - tr_old, g));
        const SpMat z_new = stress_matrix(vn, p, h);
        const Vec rhs_new = state.S.stacked() / h + stress_source(vn, fr.eta);
        rep.res_stress = l2(z_new * ss.inc.s + ss.inc.xi - rhs_new, g);
        const MomentumSystem msys_new = momentum_system(state, vn, ch.phi, ch.mu, S_new, fr, p, h, f_avg);
        rep.res_momentum = momentum_residual(msys_new, ms_sol, g);
        rep.res_div = (o.div_x * vn.x + o.div_y * vn.y).lpNorm<Eigen::Infinity>();
        res_total = std::max({rep.res_ch, rep.res_stress, rep.res_momentum});
        if (res_total <= opt.outer_tol) {
            v = vn;
            converged = true;
            break;
        }
        if (omega == 1.0 && it > 1 && res_total > 0.5 * res_prev) omega = opt.damping;
        res_prev = res_total;
        v = VectorField(g, (1.0 - omega) * v.x + omega * vn.x, (1.0 - omega) * v.y + omega * vn.y);
    }
    if (!converged)
        throw Error(fmt::format("outer iteration did not converge in {} sweeps (ch {:.3e}, stress {:.3e}, momentum {:.3e})",
                                opt.max_outer, rep.res_ch, rep.res_stress, rep.res_momentum));

    StepResult out;
    SimState& s = out.state;
    s = SimState(g);
    s.v = v;
    s.S = SymTensorField::from_stacked(g, ss.inc.s);
    s.xi = SymTensorField::from_stacked(g, ss.inc.xi);
    s.phi = ch.phi;
    s.mu = ch.mu;
    s.beta = ch.beta;
    s.p = ms_sol.p;
    s.t = state.t + h;

    // residual of the Gibbs-Thomson law including the splitting correction
    {
        Vec gt = s.mu.values + o.lap_neumann * s.phi.values;
        for (int c = 0; c < g.cells(); ++c)
            gt[c] -= w_dw_prime(s.phi.values[c]) + s.beta.values[c] + 0.5 * p.kappa * (s.phi.values[c] - state.phi.values[c]);
        rep.res_gt = l2(gt, g);
    }

    // energy budget
    const PlasticModel pm = PlasticModel::from(p);
    rep.diss_visc = s.v.stacked().dot(fr.visc * s.v.stacked()) * g.cell_area();
    rep.diss_gamma = p.gamma * face_dirichlet_form(s.S);
    rep.diss_mix = face_dirichlet_form(s.mu, fr.m);
    rep.diss_plastic = inner_product(s.xi, s.S);
    rep.plastic_value = plastic_functional(state.phi, s.S, pm);
    rep.f_work = inner_product(f_avg, s.v);
    rep.energy_before = total_energy(state, fam, p).total();
    rep.energy_after = total_energy(s, fam, p).total();
    rep.slack = rep.energy_before + h * rep.f_work - rep.energy_after -
                h * (rep.diss_visc + rep.diss_gamma + rep.diss_mix + rep.diss_plastic);
    rep.numerical_diss = numerical_dissipation(state, s, fam, p);
    rep.defect = rep.slack - rep.numerical_diss;
    out.report = rep;
    return out;
}

Trajectory run(const SimState& initial, const Params& p, const TimeGrid& tg, const Forcing& f,
               const SolverOptions& opt) {
    validate_params(p);
    Trajectory tr;
    tr.h = tg.h();
    tr.states.push_back(initial);
    for (int k = 0; k < tg.N; ++k) {
        const SimState& cur = tr.states.back();
        const double t0 = initial.t + k * tr.h, t1 = initial.t + (k + 1) * tr.h;
        VectorField fa = f.average(cur.grid(), t0, t1);
        try {
            StepResult r = step(cur, p, tr.h, fa, opt);
            r.state.t = t1;
            tr.states.push_back(std::move(r.state));
            tr.reports.push_back(r.report);
            tr.forcing.push_back(std::move(fa));
        } catch (const Error& e) {
            tr.complete = false;
            tr.failure = fmt::format("step {} failed: {}", k + 1, e.what());
            break;
        }
    }
    return tr;
}

}  // namespace geoflow
