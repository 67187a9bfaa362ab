#include "geoflow/diagnostics.hpp"

#include "geoflow/plasticity.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <tuple>

namespace geoflow {

namespace {

using Triplets = std::vector<Eigen::Triplet<double>>;
using GridKey = std::tuple<int, int, double, double>;
GridKey key_of(const Grid& g) { return {g.nx, g.ny, g.lx, g.ly}; }

// rows of the stacked face vector that are not wall-normal
SpMat interior_selection(const Grid& g) {
    const auto& o = operators(g);
    Triplets t;
    int r = 0;
    for (int f : o.interior_x) t.emplace_back(r++, f, 1.0);
    for (int f : o.interior_y) t.emplace_back(r++, g.xfaces() + f, 1.0);
    SpMat s(r, g.xfaces() + g.yfaces());
    s.setFromTriplets(t.begin(), t.end());
    return s;
}

struct Cell2 {
    Vec x, y;
};

Cell2 cell_vel(const VectorField& v) {
    Cell2 c;
    cell_velocity(v, c.x, c.y);
    return c;
}

Cell2 cell_grad(const ScalarField& u) {
    Cell2 c;
    cell_gradient(u, c.x, c.y);
    return c;
}

// sum_ij a_i b_j (grad w)_{ij} with (grad w)_{ij} = d_j w_i
double contract_vgrad(const Cell2& a, const Cell2& b, const TensorField& gw, const Grid& g) {
    const Vec s = a.x.cwiseProduct(b.x.cwiseProduct(gw.xx) + b.y.cwiseProduct(gw.xy)) +
                  a.y.cwiseProduct(b.x.cwiseProduct(gw.yx) + b.y.cwiseProduct(gw.yy));
    return s.sum() * g.cell_area();
}

double face_pair(const VectorField& a, const VectorField& b) { return inner_product(a, b); }

Vec face_density_stacked(const ScalarField& phi, const Params& p) {
    const auto& o = operators(phi.grid);
    const Vec rho = density(phi, p).values;
    Vec r(phi.grid.xfaces() + phi.grid.yfaces());
    r << o.avg_x * rho, o.avg_y * rho;
    return r;
}

double weighted_face_pair(const Vec& w, const VectorField& a, const VectorField& b) {
    return w.dot(a.stacked().cwiseProduct(b.stacked())) * a.grid.cell_area();
}

// sum over faces of m_f grad_f a grad_f b
double face_cross_weighted(const ScalarField& a, const ScalarField& b, const Vec& cell_weight) {
    const auto& o = operators(a.grid);
    const Vec ax = o.grad_x * a.values, ay = o.grad_y * a.values;
    const Vec bx = o.grad_x * b.values, by = o.grad_y * b.values;
    return ((o.avg_x * cell_weight).dot(ax.cwiseProduct(bx)) + (o.avg_y * cell_weight).dot(ay.cwiseProduct(by))) *
           a.grid.cell_area();
}

ScalarField sub(const ScalarField& a, const ScalarField& b) { return ScalarField(a.grid, a.values - b.values); }
VectorField sub(const VectorField& a, const VectorField& b) { return VectorField(a.grid, a.x - b.x, a.y - b.y); }
SymTensorField sub(const SymTensorField& a, const SymTensorField& b) {
    return SymTensorField(a.grid, a.s11 - b.s11, a.s12 - b.s12);
}
SymTensorField scale(const SymTensorField& a, const Vec& w) {
    return SymTensorField(a.grid, w.cwiseProduct(a.s11), w.cwiseProduct(a.s12));
}

double w_kappa_value(double s, const PotentialFamily& fam) { return w_kappa(s, fam); }
double w_kappa_slope(double s, const PotentialFamily& fam) {
    return w_dw_prime(s) + (fam.obstacle() ? 0.0 : w_sg_alpha_prime(s, fam.alpha)) + fam.kappa * s;
}
double w_second(double s, const PotentialFamily& fam) {
    return w_dw_second(s) + (fam.obstacle() ? 0.0 : w_sg_alpha_second(s, fam.alpha));
}

double bump(double s) { return s < 1.0 ? std::exp(1.0 - 1.0 / (1.0 - s * s)) : 0.0; }

// cell-centred gradients of both stress components
struct StressGrad {
    Cell2 g11, g12;
};
StressGrad stress_grad(const SymTensorField& s) {
    return {cell_grad(ScalarField(s.grid, s.s11)), cell_grad(ScalarField(s.grid, s.s12))};
}

// sum S_ij u_k d_k T_ij
double advect_pair(const SymTensorField& s, const Cell2& u, const StressGrad& gt) {
    const Vec a = u.x.cwiseProduct(gt.g11.x) + u.y.cwiseProduct(gt.g11.y);
    const Vec b = u.x.cwiseProduct(gt.g12.x) + u.y.cwiseProduct(gt.g12.y);
    return 2.0 * (s.s11.dot(a) + s.s12.dot(b)) * s.grid.cell_area();
}

// <(S W - W S), T> with w the skew rate of the velocity
double jaumann_pair(const SymTensorField& s, const Vec& w, const SymTensorField& t) {
    const Vec j11 = -2.0 * w.cwiseProduct(s.s12);
    const Vec j12 = 2.0 * w.cwiseProduct(s.s11);
    return 2.0 * (j11.dot(t.s11) + j12.dot(t.s12)) * s.grid.cell_area();
}

Vec skew_rate_of(const VectorField& v) { return sym_skw_split(v).skw.xy; }

double stress_face_cross(const SymTensorField& a, const SymTensorField& b) {
    return 2.0 * (face_cross_form(ScalarField(a.grid, a.s11), ScalarField(b.grid, b.s11)) +
                  face_cross_form(ScalarField(a.grid, a.s12), ScalarField(b.grid, b.s12)));
}

Cell2 cell_flux(const VectorField& j) { return cell_vel(j); }

}  // namespace

EnergyParts total_energy(const SimState& s, const PotentialFamily& fam, const Params& p) {
    const Grid& g = s.grid();
    const double area = g.cell_area();
    EnergyParts e;
    const Vec rho = face_density_stacked(s.phi, p);
    const Vec v = s.v.stacked();
    e.kin = 0.5 * rho.dot(v.cwiseProduct(v)) * area;
    e.el = (s.S.s11.squaredNorm() + s.S.s12.squaredNorm()) * area;
    e.grad = 0.5 * face_dirichlet_form(s.phi);
    for (int c = 0; c < g.cells(); ++c) {
        e.dw += w_dw(s.phi.values[c]);
        e.sing += w_sing(s.phi.values[c], fam);
    }
    e.dw *= area;
    e.sing *= area;
    return e;
}

double numerical_dissipation(const SimState& prev, const SimState& next, const PotentialFamily& fam, const Params& p) {
    const Grid& g = prev.grid();
    const double area = g.cell_area();
    const Vec rho = face_density_stacked(prev.phi, p);
    const Vec dv = next.v.stacked() - prev.v.stacked();
    double d = 0.5 * rho.dot(dv.cwiseProduct(dv)) * area;
    d += 0.5 * norm_l2(sub(next.S, prev.S)) * norm_l2(sub(next.S, prev.S));
    d += 0.5 * face_dirichlet_form(sub(next.phi, prev.phi));
    double q = 0.0;
    for (int c = 0; c < g.cells(); ++c) {
        const double a = prev.phi.values[c], b = next.phi.values[c];
        const double slope = w_dw_prime(b) + next.beta.values[c] + fam.kappa * b;
        q += slope * (b - a) - (w_kappa(b, fam) - w_kappa(a, fam));
    }
    return d + q * area;
}

namespace {

struct RieszSolver {
    SpMat sel;
    Eigen::SimplicialLDLT<SpMat> ldlt;
};

const RieszSolver& riesz_solver(const Grid& g) {
    static std::mutex mtx;
    static std::map<GridKey, std::unique_ptr<RieszSolver>> cache;
    std::lock_guard<std::mutex> lock(mtx);
    auto& slot = cache[key_of(g)];
    if (!slot) {
        auto rs = std::make_unique<RieszSolver>();
        rs->sel = interior_selection(g);
        SpMat h = rs->sel * velocity_gradient_form(g) * SpMat(rs->sel.transpose());
        SpMat id(h.rows(), h.cols());
        id.setIdentity();
        rs->ldlt.compute(h + id);
        if (rs->ldlt.info() != Eigen::Success) throw Error("Riesz map factorization failed");
        slot = std::move(rs);
    }
    return *slot;
}

}  // namespace

double dual_norm_sq(const VectorField& f) {
    const auto& rs = riesz_solver(f.grid);
    const Vec fi = rs.sel * f.stacked();
    const Vec u = rs.ldlt.solve(fi);
    return fi.dot(u) * f.grid.cell_area();
}

double korn_ratio(const VectorField& v) {
    const double s = sym_gradient_sq(v);
    return (inner_product(v, v) + velocity_gradient_sq(v)) / s;
}

KornEstimate estimate_korn(const Grid& g, double inflation) {
    const SpMat sel = interior_selection(g);
    const SpMat gform = sel * velocity_gradient_form(g) * SpMat(sel.transpose());
    const auto& o = operators(g);
    // pressure gradient on interior faces with cell 0 removed
    Triplets gt;
    for (int k = 0; k < o.grad_x.outerSize(); ++k)
        for (SpMat::InnerIterator it(o.grad_x, k); it; ++it) gt.emplace_back(it.row(), it.col(), it.value());
    for (int k = 0; k < o.grad_y.outerSize(); ++k)
        for (SpMat::InnerIterator it(o.grad_y, k); it; ++it) gt.emplace_back(g.xfaces() + it.row(), it.col(), it.value());
    SpMat grad_full(g.xfaces() + g.yfaces(), g.cells());
    grad_full.setFromTriplets(gt.begin(), gt.end());
    const SpMat gi = sel * grad_full;
    const int nu = static_cast<int>(gform.rows()), np = g.cells() - 1;
    Triplets t;
    for (int k = 0; k < gform.outerSize(); ++k)
        for (SpMat::InnerIterator it(gform, k); it; ++it) t.emplace_back(it.row(), it.col(), it.value());
    for (int k = 0; k < gi.outerSize(); ++k)
        for (SpMat::InnerIterator it(gi, k); it; ++it)
            if (it.col() > 0) {
                t.emplace_back(it.row(), nu + it.col() - 1, it.value());
                t.emplace_back(nu + it.col() - 1, it.row(), it.value());
            }
    SpMat kmat(nu + np, nu + np);
    kmat.setFromTriplets(t.begin(), t.end());
    Eigen::SparseLU<SpMat> lu;
    lu.compute(kmat);
    if (lu.info() != Eigen::Success) throw Error("Stokes eigen solve factorization failed");

    std::mt19937 rng(1234);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Vec v(nu);
    for (int i = 0; i < nu; ++i) v[i] = dist(rng);
    KornEstimate est;
    double lambda = 0.0;
    for (int it = 1; it <= 500; ++it) {
        Vec rhs = Vec::Zero(nu + np);
        rhs.head(nu) = v;
        const Vec w = lu.solve(rhs).head(nu);
        const double lam = w.dot(gform * w) / w.dot(w);
        v = w / w.norm();
        est.iterations = it;
        if (it > 3 && std::abs(lam - lambda) <= 1e-13 * lam) {
            lambda = lam;
            break;
        }
        lambda = lam;
    }
    est.lambda_min = lambda;
    const VectorField vf = VectorField::from_stacked(g, SpMat(sel.transpose()) * v);
    est.raw = korn_ratio(vf);
    est.k_omega = inflation * est.raw;
    return est;
}

EnergyTrace auxiliary_energy(const Trajectory& tr, const Params& p, double korn_constant) {
    EnergyTrace trace;
    trace.c = korn_constant / p.nu1;
    const PotentialFamily fam = family_of(p);
    double cum = 0.0;
    for (std::size_t k = 0; k < tr.states.size(); ++k) {
        EnergyRow r;
        r.t = tr.states[k].t;
        r.parts = total_energy(tr.states[k], fam, p);
        r.total = r.parts.total();
        r.aux = r.total;
        if (k > 0) {
            const StepReport& rep = tr.reports[k - 1];
            r.diss_visc = rep.diss_visc;
            r.diss_gamma = rep.diss_gamma;
            r.diss_mix = rep.diss_mix;
            r.diss_plastic = rep.diss_plastic;
            r.f_work = rep.f_work;
            cum += tr.h * dual_norm_sq(tr.forcing[k - 1]);
        }
        r.f_dual_cum = cum;
        r.monotone = r.aux - trace.c * cum;
        if (r.aux < r.total) trace.majorizes = false;
        if (!trace.rows.empty()) {
            trace.max_increase = std::max(trace.max_increase, r.monotone - trace.rows.back().monotone);
            trace.max_aux_increase = std::max(trace.max_aux_increase, r.aux - trace.rows.back().aux);
        }
        trace.rows.push_back(r);
    }
    return trace;
}

void write_energy_csv(const std::string& path, const EnergyTrace& trace) {
    std::ofstream os(path);
    if (!os) throw Error("cannot open " + path);
    os << "t,E_kin,E_el,E_pf_grad,E_pf_dw,E_pf_sing,E_total,E_aux,diss_visc,diss_gamma,diss_mix,diss_plastic,f_work\n";
    for (const auto& r : trace.rows)
        os << fmt::format("{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n",
                          r.t, r.parts.kin, r.parts.el, r.parts.grad, r.parts.dw, r.parts.sing, r.total, r.aux,
                          r.diss_visc, r.diss_gamma, r.diss_mix, r.diss_plastic, r.f_work);
}

double regularity_weight(const SymTensorField& s_tilde, const RegularityWeightCfg& cfg) {
    const double n = norm_linf(s_tilde);
    return cfg.korn_constant * cfg.korn_constant / cfg.nu1 * n * n;
}

double regularity_weight(const VectorField&, const SymTensorField& s_tilde, const ScalarField&, const ScalarField&,
                         const RegularityWeightCfg& cfg) {
    return regularity_weight(s_tilde, cfg);
}

// ---------------------------------------------------------------- test tuples

double TestTuple::chi(double t) const {
    if (t >= horizon) return 0.0;
    const double tau = t / horizon;
    return bump(tau) * std::cos(omega * t);
}

double TestTuple::chi_dot(double t) const {
    if (t >= horizon) return 0.0;
    const double tau = t / horizon;
    const double e = bump(tau);
    const double q = 1.0 - tau * tau;
    const double de = e * (-2.0 * tau / (q * q)) / horizon;
    return de * std::cos(omega * t) - e * omega * std::sin(omega * t);
}

namespace {
constexpr double kGaussX[5] = {-0.9061798459386640, -0.5384693101056831, 0.0, 0.5384693101056831,
                               0.9061798459386640};
constexpr double kGaussW[5] = {0.2369268850561891, 0.4786286704993665, 0.5688888888888889, 0.4786286704993665,
                               0.2369268850561891};
}  // namespace

double TestTuple::chi_mean(double t0, double t1) const {
    const double c = 0.5 * (t0 + t1), r = 0.5 * (t1 - t0);
    double s = 0.0;
    for (int i = 0; i < 5; ++i) s += kGaussW[i] * chi(c + r * kGaussX[i]);
    return 0.5 * s;
}

TupleFields TestTuple::spatial(const Grid& g) const {
    TupleFields f{VectorField(g), SymTensorField(g), ScalarField(g), ScalarField(g)};
    if (kind == TupleKind::Zero) return f;
    auto b = [&](double x, double y) { return bump(std::hypot(x - support.cx, y - support.cy) / support.r); };
    const bool vel = kind == TupleKind::Velocity || kind == TupleKind::Mixed;
    const bool str = kind == TupleKind::Stress || kind == TupleKind::Mixed;
    const bool pha = kind == TupleKind::Phase || kind == TupleKind::Mixed;
    const bool pot = kind == TupleKind::Potential || kind == TupleKind::Mixed;
    if (vel) {
        Vec psi(g.vertices());
        for (int j = 0; j <= g.ny; ++j)
            for (int i = 0; i <= g.nx; ++i) psi[g.vtx(i, j)] = amplitude * support.r * b(g.xn(i), g.yn(j));
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i <= g.nx; ++i) f.v.x[g.fx(i, j)] = (psi[g.vtx(i, j + 1)] - psi[g.vtx(i, j)]) / g.hy;
        for (int j = 0; j <= g.ny; ++j)
            for (int i = 0; i < g.nx; ++i) f.v.y[g.fy(i, j)] = -(psi[g.vtx(i + 1, j)] - psi[g.vtx(i, j)]) / g.hx;
    }
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            const int c = g.index(i, j);
            const double bb = b(g.xc(i), g.yc(j));
            if (str) {
                f.S.s11[c] = amplitude * a11 * bb;
                f.S.s12[c] = amplitude * a12 * bb;
            }
            if (pha) f.phi.values[c] = amplitude * bb;
            if (pot) f.mu.values[c] = amplitude * bb;
        }
    return f;
}

namespace {
TupleFields scaled(TupleFields f, double c) {
    f.v.x *= c;
    f.v.y *= c;
    f.S.s11 *= c;
    f.S.s12 *= c;
    f.phi.values *= c;
    f.mu.values *= c;
    return f;
}
}  // namespace

TupleFields TestTuple::at(const Grid& g, double t) const { return scaled(spatial(g), chi(t)); }
TupleFields TestTuple::rate(const Grid& g, double t) const { return scaled(spatial(g), chi_dot(t)); }

TestTuple make_test_tuple(TupleKind kind, double amplitude, const TupleSupport& support, double horizon,
                          const std::string& id) {
    if (!(support.r > 0.0)) throw Error("test tuple support radius must be positive");
    if (!(horizon > 0.0)) throw Error("test tuple horizon must be positive");
    TestTuple t;
    t.kind = kind;
    t.amplitude = kind == TupleKind::Zero ? 0.0 : amplitude;
    t.support = support;
    t.horizon = horizon;
    t.id = id.empty() ? fmt::format("k{}-a{:g}-c{:g},{:g}-r{:g}", static_cast<int>(kind), amplitude, support.cx,
                                    support.cy, support.r)
                      : id;
    return t;
}

void check_admissible(const TestTuple& tt, const Grid& g) {
    const TupleSupport& s = tt.support;
    if (tt.kind != TupleKind::Zero &&
        (s.cx - s.r < 0.0 || s.cx + s.r > g.lx || s.cy - s.r < 0.0 || s.cy + s.r > g.ly))
        throw Error(fmt::format("test tuple {}: support leaves the domain", tt.id));
    const TupleFields f = tt.spatial(g);
    const double div = norm_linf(apply_divergence(f.v));
    if (div > 1e-12 * std::max(1.0, norm_linf(f.v) / std::min(g.hx, g.hy)))
        throw Error(fmt::format("test tuple {}: velocity divergence {:.3e}", tt.id, div));
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            const int c = g.index(i, j);
            const double d = std::hypot(g.xc(i) - s.cx, g.yc(j) - s.cy);
            if (d >= s.r && (f.S.s11[c] != 0.0 || f.S.s12[c] != 0.0 || f.phi.values[c] != 0.0 || f.mu.values[c] != 0.0))
                throw Error(fmt::format("test tuple {}: field outside support at cell ({}, {})", tt.id, i, j));
        }
    if (tt.chi(tt.horizon) != 0.0) throw Error(fmt::format("test tuple {}: does not vanish at the horizon", tt.id));
}

std::vector<TestTuple> default_battery(const Grid& g, double horizon, double amplitude) {
    const double lx = g.lx, ly = g.ly, l = std::min(lx, ly);
    const double w = 2.0 * M_PI / horizon;
    struct Item {
        TupleKind kind;
        double cx, cy, r, omega, a11, a12;
        const char* name;
    };
    const std::vector<Item> items{
        {TupleKind::Velocity, 0.5, 0.5, 0.30, 0.0, 1.0, 0.5, "velocity-centre"},
        {TupleKind::Velocity, 0.35, 0.6, 0.22, w, 1.0, 0.5, "velocity-offset"},
        {TupleKind::Stress, 0.5, 0.5, 0.30, 0.0, 1.0, 0.5, "stress-centre"},
        {TupleKind::Stress, 0.62, 0.38, 0.25, w, 0.3, 1.0, "stress-offset"},
        {TupleKind::Phase, 0.5, 0.5, 0.30, 0.0, 1.0, 0.5, "phase-centre"},
        {TupleKind::Phase, 0.3, 0.32, 0.22, w, 1.0, 0.5, "phase-offset"},
        {TupleKind::Potential, 0.5, 0.5, 0.30, 0.0, 1.0, 0.5, "potential-centre"},
        {TupleKind::Potential, 0.68, 0.6, 0.22, w, 1.0, 0.5, "potential-offset"},
        {TupleKind::Mixed, 0.5, 0.5, 0.35, 0.0, 1.0, 0.5, "mixed-centre"},
        {TupleKind::Mixed, 0.42, 0.56, 0.26, w, -0.7, 0.4, "mixed-offset"},
    };
    std::vector<TestTuple> out;
    for (const auto& it : items) {
        TestTuple t = make_test_tuple(it.kind, amplitude, {it.cx * lx, it.cy * ly, it.r * l}, horizon, it.name);
        t.omega = it.omega;
        t.a11 = it.a11;
        t.a12 = it.a12;
        out.push_back(t);
    }
    return out;
}

std::vector<int> time_samples(int n_steps, int count) {
    std::vector<int> s;
    for (int k = 0; k < count; ++k) {
        const int idx = static_cast<int>(std::lround(static_cast<double>(k) * n_steps / (count - 1)));
        if (s.empty() || idx != s.back()) s.push_back(idx);
    }
    return s;
}

// ---------------------------------------------------------------- EVS

namespace {

// Quantities of step k (state k+1, coefficients at phi_k) shared by all tuples.
struct StepCache {
    SpMat visc;
    Vec eta, m, nu;
    Vec rho_faces;  // at phi_{k+1}
    Cell2 u;        // cell velocity of v_{k+1}
    Cell2 b;        // rho u + J at cells
    Cell2 gphi;     // centred gradient of phi_{k+1}
    Vec skew;       // skew rate of v_{k+1}
    SymTensorField bv;  // deviatoric strain of v_{k+1}
    ScalarField gt;     // -L phi + W'_dw(phi) + beta
};

StepCache make_step_cache(const Trajectory& tr, int k, const Params& p) {
    const SimState& prev = tr.states[k];
    const SimState& s = tr.states[k + 1];
    const Grid& g = s.grid();
    const auto& o = operators(g);
    StepCache c;
    c.nu = eval_coefficient(p.nu, prev.phi).values;
    c.eta = eval_coefficient(p.eta, prev.phi).values;
    c.m = eval_coefficient(p.m, prev.phi).values;
    c.visc = viscous_operator(g, c.nu);
    c.rho_faces = face_density_stacked(s.phi, p);
    c.u = cell_vel(s.v);
    const Vec rho = density(s.phi, p).values;
    const VectorField j = mass_flux(prev.phi, apply_gradient(s.mu), p, p.flux_mode);
    const Cell2 jc = cell_flux(j);
    c.b.x = rho.cwiseProduct(c.u.x) + jc.x;
    c.b.y = rho.cwiseProduct(c.u.y) + jc.y;
    c.gphi = cell_grad(s.phi);
    c.skew = skew_rate_of(s.v);
    c.bv = sym_gradient_dev(s.v);
    c.gt = ScalarField(g, -(o.lap_neumann * s.phi.values));
    for (int i = 0; i < g.cells(); ++i) c.gt.values[i] += w_dw_prime(s.phi.values[i]) + s.beta.values[i];
    return c;
}

struct EvsContext {
    const Trajectory& tr;
    const EnergyTrace& trace;
    const PotentialFamily& fam;
    const Params& p;
    WeightMode mode;
    RegularityWeightCfg cfg;
    std::vector<StepCache> steps;

    EvsContext(const Trajectory& t, const EnergyTrace& e, const PotentialFamily& f, const Params& pp, WeightMode m,
               const RegularityWeightCfg& c)
        : tr(t), trace(e), fam(f), p(pp), mode(m), cfg(c) {
        for (std::size_t k = 0; k + 1 < tr.states.size(); ++k) steps.push_back(make_step_cache(tr, static_cast<int>(k), p));
    }

    double boundary(const TestTuple& tt, int idx) const {
        const SimState& s = tr.states[idx];
        const Grid& g = s.grid();
        const TupleFields tf = tt.at(g, s.t);
        return trace.rows[idx].aux - weighted_face_pair(face_density_stacked(s.phi, p), s.v, tf.v) -
               inner_product(s.S, tf.S) - inner_product(s.phi, tf.phi);
    }

    // LHS and RHS increments of step k, weight value
    void step_terms(const TestTuple& tt, int k, double& lhs, double& rhs, double& weight) const {
        const SimState& prev = tr.states[k];
        const SimState& s = tr.states[k + 1];
        const StepReport& rep = tr.reports[k];
        const StepCache& c = steps[k];
        const Grid& g = s.grid();
        const double h = tr.h, area = g.cell_area();
        const auto& o = operators(g);
        // piecewise-constant state against the exact time integral of the test
        const TupleFields sp = tt.spatial(g);
        const TupleFields tf = scaled(sp, tt.chi_mean(prev.t, s.t));
        const TupleFields rt = scaled(sp, (tt.chi(s.t) - tt.chi(prev.t)) / h);
        const PlasticModel pm = PlasticModel::from(p);

        const double diss = rep.diss_visc + rep.diss_gamma + rep.diss_mix;
        double plast = plastic_functional(prev.phi, s.S, pm);
        double wmean = 0.0;
        {
            const double mid = 0.5 * (prev.t + s.t), r = 0.5 * h;
            for (int i = 0; i < 5; ++i) {
                const double c = tt.chi(mid + r * kGaussX[i]);
                const SymTensorField st(g, c * sp.S.s11, c * sp.S.s12);
                plast -= 0.5 * kGaussW[i] * plastic_functional(prev.phi, st, pm);
                if (mode == WeightMode::Korn) wmean += 0.5 * kGaussW[i] * regularity_weight(st, cfg);
            }
        }

        double mom = 0.0, str = 0.0, pha = 0.0, gtt = 0.0;
        if (tt.kind != TupleKind::Zero) {
            const TensorField gv = velocity_gradient(tf.v);
            mom += weighted_face_pair(c.rho_faces, s.v, rt.v);
            mom += contract_vgrad(c.u, c.b, gv, g);
            mom -= s.v.stacked().dot(c.visc * tf.v.stacked()) * area;
            mom -= inner_product(scale(s.S, c.eta), sym_gradient_dev(tf.v));
            mom += contract_vgrad(c.gphi, c.gphi, gv, g);

            str += inner_product(s.S, rt.S);
            str += advect_pair(s.S, c.u, stress_grad(tf.S));
            str -= jaumann_pair(s.S, c.skew, tf.S);
            str -= p.gamma * stress_face_cross(s.S, tf.S);
            str += inner_product(scale(c.bv, c.eta), tf.S);

            pha += inner_product(s.phi, rt.phi);
            const Vec adv = c.u.x.cwiseProduct(c.gphi.x) + c.u.y.cwiseProduct(c.gphi.y);
            pha -= adv.dot(tf.phi.values) * area;
            pha -= face_cross_weighted(s.mu, tf.phi, c.m);

            gtt -= inner_product(s.mu, tf.mu) - inner_product(c.gt, tf.mu);
        }
        (void)o;
        lhs = h * (diss + plast + mom + str + pha + gtt);

        weight = wmean;
        const double defect = trace.rows[k + 1].aux - trace.rows[k + 1].total;
        rhs = h * (weight * defect + rep.f_work - inner_product(tr.forcing[k], tf.v));
    }
};

}  // namespace

EvsResult eval_evs_inequality(const Trajectory& tr, const EnergyTrace& trace, const TestTuple& tt,
                              const PotentialFamily& fam, const Params& p, int s_idx, int t_idx, WeightMode mode,
                              const RegularityWeightCfg& cfg) {
    if (s_idx < 0 || t_idx >= static_cast<int>(tr.states.size()) || s_idx > t_idx)
        throw Error("EVS interval outside the trajectory");
    EvsResult r;
    if (s_idx == t_idx) return r;
    check_admissible(tt, tr.states[0].grid());
    EvsContext ctx(tr, trace, fam, p, mode, cfg);
    r.lhs = ctx.boundary(tt, t_idx) - ctx.boundary(tt, s_idx);
    for (int k = s_idx; k < t_idx; ++k) {
        double l, rr, w;
        ctx.step_terms(tt, k, l, rr, w);
        r.lhs += l;
        r.rhs += rr;
        r.weight_term += w;
    }
    r.slack = r.rhs - r.lhs;
    return r;
}

std::vector<EvsRow> evs_battery(const Trajectory& tr, const EnergyTrace& trace, const std::vector<TestTuple>& tuples,
                                const PotentialFamily& fam, const Params& p, const std::vector<int>& samples,
                                WeightMode mode, const RegularityWeightCfg& cfg) {
    EvsContext ctx(tr, trace, fam, p, mode, cfg);
    const int n = static_cast<int>(tr.states.size()) - 1;
    std::vector<EvsRow> rows;
    for (const auto& tt : tuples) {
        check_admissible(tt, tr.states[0].grid());
        std::vector<double> prefix(n + 1, 0.0), bnd(n + 1, 0.0);
        for (int k = 0; k < n; ++k) {
            double l, r, w;
            ctx.step_terms(tt, k, l, r, w);
            prefix[k + 1] = prefix[k] + (r - l);
        }
        for (int idx : samples) bnd[idx] = ctx.boundary(tt, idx);
        for (std::size_t a = 0; a < samples.size(); ++a)
            for (std::size_t b = a + 1; b < samples.size(); ++b) {
                const int s = samples[a], t = samples[b];
                rows.push_back({tt.id, s, t, prefix[t] - prefix[s] - (bnd[t] - bnd[s])});
            }
    }
    return rows;
}

// ---------------------------------------------------------------- weak forms

double check_weak_momentum(const Trajectory& tr, const VectorField& test, const Params& p, int s_idx, int t_idx) {
    const Grid& g = test.grid;
    const double area = g.cell_area();
    auto pair_rho = [&](int idx) {
        const SimState& s = tr.states[idx];
        return weighted_face_pair(face_density_stacked(s.phi, p), s.v, test);
    };
    double res = pair_rho(t_idx) - pair_rho(s_idx);
    const TensorField gv = velocity_gradient(test);
    const SymTensorField bt = sym_gradient_dev(test);
    for (int k = s_idx; k < t_idx; ++k) {
        const StepCache c = make_step_cache(tr, k, p);
        const SimState& s = tr.states[k + 1];
        double r = contract_vgrad(c.u, c.b, gv, g);
        r -= s.v.stacked().dot(c.visc * test.stacked()) * area;
        r -= inner_product(scale(s.S, c.eta), bt);
        r += contract_vgrad(c.gphi, c.gphi, gv, g);
        r += inner_product(tr.forcing[k], test);
        res -= tr.h * r;
    }
    return res;
}

double check_weak_ch(const Trajectory& tr, const ScalarField& test, const Params& p, int s_idx, int t_idx) {
    const Grid& g = test.grid;
    const auto& o = operators(g);
    double res = inner_product(tr.states[t_idx].phi, test) - inner_product(tr.states[s_idx].phi, test);
    const Vec gx = o.grad_x * test.values, gy = o.grad_y * test.values;
    for (int k = s_idx; k < t_idx; ++k) {
        const SimState& s = tr.states[k + 1];
        const Vec m = eval_coefficient(p.m, tr.states[k].phi).values;
        // <v . grad phi, z> = -<phi v, grad z> for solenoidal wall-tangent v
        const double adv = -((o.avg_x * s.phi.values).cwiseProduct(s.v.x).dot(gx) +
                             (o.avg_y * s.phi.values).cwiseProduct(s.v.y).dot(gy)) *
                           g.cell_area();
        const double mix = face_cross_weighted(s.mu, test, m);
        res += tr.h * (adv + mix);
    }
    return res;
}

GibbsThomsonAudit check_gibbs_thomson(const Trajectory& tr, const PotentialFamily& fam, const Params& p) {
    (void)fam;
    GibbsThomsonAudit a;
    for (std::size_t k = 1; k < tr.states.size(); ++k) {
        const SimState& s = tr.states[k];
        const SimState& prev = tr.states[k - 1];
        const auto& o = operators(s.grid());
        const Vec expr = -(o.lap_neumann * s.phi.values);
        for (int c = 0; c < s.grid().cells(); ++c) {
            const double r = s.mu.values[c] - (expr[c] + w_dw_prime(s.phi.values[c]) + s.beta.values[c]);
            const double kc = 0.5 * p.kappa * (s.phi.values[c] - prev.phi.values[c]);
            a.residual = std::max(a.residual, std::abs(r));
            a.kappa_correction = std::max(a.kappa_correction, std::abs(kc));
            a.corrected = std::max(a.corrected, std::abs(r - kc));
        }
    }
    return a;
}

// ---------------------------------------------------------------- relative energy

namespace {
void require_test_phase(const ScalarField& phi, const PotentialFamily& fam) {
    for (int c = 0; c < phi.values.size(); ++c) {
        const double s = std::abs(phi.values[c]);
        if (fam.obstacle() ? s > 1.0 : s >= 1.0)
            throw Error(fmt::format("test phase field out of range at cell {}: {}", c, phi.values[c]));
    }
}

ScalarField test_mu(const ScalarField& phi_t, const PotentialFamily& fam) {
    const auto& o = operators(phi_t.grid);
    ScalarField mu(phi_t.grid, -(o.lap_neumann * phi_t.values));
    for (int c = 0; c < phi_t.values.size(); ++c) {
        mu.values[c] += w_dw_prime(phi_t.values[c]);
        if (!fam.obstacle()) mu.values[c] += w_sg_alpha_prime(phi_t.values[c], fam.alpha);
    }
    return mu;
}
}  // namespace

SystemOperator apply_system_operator(const TestTuple& tt, double t, const Grid& g, const Params& p,
                                     const PotentialFamily& fam, const VectorField& f) {
    const auto& o = operators(g);
    const TupleFields tf = tt.at(g, t), rt = tt.rate(g, t);
    require_test_phase(tf.phi, fam);
    SystemOperator so;
    so.mu = test_mu(tf.phi, fam);
    const Vec rho = density(tf.phi, p).values;
    const Vec nu = eval_coefficient(p.nu, tf.phi).values;
    const Vec eta = eval_coefficient(p.eta, tf.phi).values;
    const Vec m = eval_coefficient(p.m, tf.phi).values;
    const double drho = 0.5 * (p.rho2 - p.rho1);

    // momentum
    const VectorField jt = mass_flux(tf.phi, apply_gradient(so.mu), p, p.flux_mode);
    const VectorField bflux(g, (o.avg_x * rho).cwiseProduct(tf.v.x) + jt.x, (o.avg_y * rho).cwiseProduct(tf.v.y) + jt.y);
    const Vec divb = o.div_x * bflux.x + o.div_y * bflux.y;
    const Cell2 bc = cell_vel(bflux);
    const Cell2 u = cell_vel(tf.v);
    const TensorField gv = velocity_gradient(tf.v);
    const Vec cx = bc.x.cwiseProduct(gv.xx) + bc.y.cwiseProduct(gv.xy) + u.x.cwiseProduct(divb);
    const Vec cy = bc.x.cwiseProduct(gv.yx) + bc.y.cwiseProduct(gv.yy) + u.y.cwiseProduct(divb);
    const Vec visc = viscous_operator(g, nu) * tf.v.stacked();
    const VectorField visc_f = VectorField::from_stacked(g, visc);
    const VectorField divs = apply_divergence(scale(tf.S, eta));
    const Vec mux = o.avg_x * so.mu.values, muy = o.avg_y * so.mu.values;
    const Vec gpx = o.grad_x * tf.phi.values, gpy = o.grad_y * tf.phi.values;
    const Vec dphi_t = rt.phi.values * drho;
    so.a1 = VectorField(g,
                        (o.avg_x * rho).cwiseProduct(rt.v.x) + (o.avg_x * dphi_t).cwiseProduct(tf.v.x) + o.avg_x * cx +
                            visc_f.x - divs.x - mux.cwiseProduct(gpx) - f.x,
                        (o.avg_y * rho).cwiseProduct(rt.v.y) + (o.avg_y * dphi_t).cwiseProduct(tf.v.y) + o.avg_y * cy +
                            visc_f.y - divs.y - muy.cwiseProduct(gpy) - f.y);
    so.a1.clamp_walls();

    // stress
    const StressGrad gs = stress_grad(tf.S);
    const Vec w = skew_rate_of(tf.v);
    const SymTensorField bv = sym_gradient_dev(tf.v);
    so.a2 = SymTensorField(g);
    so.a2.s11 = rt.S.s11 + u.x.cwiseProduct(gs.g11.x) + u.y.cwiseProduct(gs.g11.y) - 2.0 * w.cwiseProduct(tf.S.s12) -
                p.gamma * (o.lap_neumann * tf.S.s11) - eta.cwiseProduct(bv.s11);
    so.a2.s12 = rt.S.s12 + u.x.cwiseProduct(gs.g12.x) + u.y.cwiseProduct(gs.g12.y) + 2.0 * w.cwiseProduct(tf.S.s11) -
                p.gamma * (o.lap_neumann * tf.S.s12) - eta.cwiseProduct(bv.s12);

    // phase field
    const Cell2 gp = cell_grad(tf.phi);
    so.a3 = ScalarField(g, rt.phi.values + u.x.cwiseProduct(gp.x) + u.y.cwiseProduct(gp.y) -
                               weighted_laplacian(g, m) * so.mu.values);
    return so;
}

double relative_energy(const SimState& s, const TupleFields& tf, const PotentialFamily& fam, const Params& p) {
    require_test_phase(tf.phi, fam);
    const Grid& g = s.grid();
    const double area = g.cell_area();
    const VectorField dv = sub(s.v, tf.v);
    const Vec rho = face_density_stacked(s.phi, p);
    const Vec d = dv.stacked();
    double r = 0.5 * rho.dot(d.cwiseProduct(d)) * area;
    const SymTensorField ds = sub(s.S, tf.S);
    r += 0.5 * inner_product(ds, ds);
    r += 0.5 * face_dirichlet_form(sub(s.phi, tf.phi));
    double w = 0.0;
    for (int c = 0; c < g.cells(); ++c) {
        const double a = s.phi.values[c], b = tf.phi.values[c];
        w += w_kappa_value(a, fam) - w_kappa_value(b, fam) - w_kappa_slope(b, fam) * (a - b);
    }
    return r + w * area;
}

double relative_dissipation(const SimState& s, const TupleFields& tf, const TupleFields& rt,
                            const ScalarField& mu_t, const PotentialFamily& fam, const Params& p) {
    const Grid& g = s.grid();
    const auto& o = operators(g);
    const double area = g.cell_area();
    const Vec nu = eval_coefficient(p.nu, s.phi).values, nut = eval_coefficient(p.nu, tf.phi).values;
    const Vec m = eval_coefficient(p.m, s.phi).values, mt = eval_coefficient(p.m, tf.phi).values;
    const Vec eta = eval_coefficient(p.eta, s.phi).values, etat = eval_coefficient(p.eta, tf.phi).values;
    const Vec rho = density(s.phi, p).values, rhot = density(tf.phi, p).values;

    const VectorField w = sub(s.v, tf.v);
    const SymTensorField ds = sub(s.S, tf.S);
    const ScalarField dphi = sub(s.phi, tf.phi);
    const ScalarField dmu = sub(s.mu, mu_t);
    const Cell2 wc = cell_vel(w), u = cell_vel(s.v), ut = cell_vel(tf.v), dvt = cell_vel(rt.v);
    const TensorField gvt = velocity_gradient(tf.v), gw = velocity_gradient(w);
    const SymSkwParts pw = sym_skw_split(w);
    const TensorField symt = sym_skw_split(tf.v).sym;

    double tot = 0.0;
    tot += p.gamma * face_dirichlet_form(ds);
    tot += face_dirichlet_form(dmu, m);
    tot += w.stacked().dot(viscous_operator(g, nu) * w.stacked()) * area;
    {
        const Vec c = symt.xx.cwiseProduct(gw.xx) + symt.xy.cwiseProduct(gw.xy) + symt.yx.cwiseProduct(gw.yx) +
                      symt.yy.cwiseProduct(gw.yy);
        tot += 2.0 * (nu - nut).dot(c) * area;
    }
    tot += face_cross_weighted(mu_t, dmu, m);
    {
        Vec z = -(o.lap_neumann * dphi.values);
        for (int c = 0; c < g.cells(); ++c) z[c] += w_second(tf.phi.values[c], fam) * dphi.values[c];
        tot += (weighted_laplacian(g, mt) * mu_t.values).dot(z) * area;
    }
    {
        const Cell2 j = cell_flux(mass_flux(s.phi, apply_gradient(s.mu), p, p.flux_mode));
        const Cell2 jt = cell_flux(mass_flux(tf.phi, apply_gradient(mu_t), p, p.flux_mode));
        Cell2 c;
        c.x = rho.cwiseProduct(u.x) - rhot.cwiseProduct(ut.x) + j.x - jt.x;
        c.y = rho.cwiseProduct(u.y) - rhot.cwiseProduct(ut.y) + j.y - jt.y;
        tot += contract_vgrad(wc, c, gvt, g);
    }
    tot += (rho - rhot).dot(wc.x.cwiseProduct(dvt.x) + wc.y.cwiseProduct(dvt.y)) * area;
    {
        // (eta - eta~) [(S - S~) : grad v~ + S~ : grad w]
        double a = 0.0;
        for (int c = 0; c < g.cells(); ++c) {
            const Mat2 d = ds.at(c), st = tf.S.at(c), gt = gvt.at(c), gwm = gw.at(c);
            a += (eta[c] - etat[c]) * ((d.array() * gt.array()).sum() + (st.array() * gwm.array()).sum());
        }
        tot -= a * area;
    }
    {
        // (S - S~) (x) w : grad S~  +  2 (S - S~) skw(grad w) : S~
        const StressGrad gst = stress_grad(tf.S);
        double a = 0.0;
        for (int c = 0; c < g.cells(); ++c) {
            Mat2 wk;
            wk << 0.0, pw.skw.xy[c], pw.skw.yx[c], 0.0;
            a += 2.0 * ((ds.at(c) * wk).array() * tf.S.at(c).array()).sum();
        }
        tot -= advect_pair(ds, wc, gst) + a * area;
    }
    {
        const Cell2 gd = cell_grad(dphi);
        const Vec a = mu_t.values.cwiseProduct(gd.x.cwiseProduct(wc.x) + gd.y.cwiseProduct(wc.y));
        tot -= a.sum() * area - contract_vgrad(gd, gd, gvt, g);
    }
    tot += p.kappa * face_cross_form(dmu, dphi);
    {
        const Cell2 gpt = cell_grad(tf.phi);
        tot += p.kappa * (wc.x.cwiseProduct(gpt.x) + wc.y.cwiseProduct(gpt.y)).dot(dphi.values) * area;
    }
    return tot;
}

namespace {

// Per-level quantities of the dissipative inequality on levels [s_idx, t_idx]: relative energy,
// weight and the integrand of the step ending at each level.
struct DissipativeSeries {
    std::vector<double> rel, kw, gk;
};

DissipativeSeries dissipative_series(const Trajectory& tr, const TestTuple& tt, const PotentialFamily& fam,
                                     const Params& p, int s_idx, int t_idx, WeightMode mode,
                                     const RegularityWeightCfg& cfg) {
    const Grid& g = tr.states[0].grid();
    const auto& o = operators(g);
    const double drho = 0.5 * (p.rho2 - p.rho1);
    const PlasticModel pm = PlasticModel::from(p);
    const int n = t_idx - s_idx;
    DissipativeSeries d{std::vector<double>(n + 1, 0.0), std::vector<double>(n + 1, 0.0),
                        std::vector<double>(n + 1, 0.0)};
    for (int j = 0; j <= n; ++j) {
        const int idx = s_idx + j;
        const SimState& s = tr.states[idx];
        const TupleFields tf = tt.at(g, s.t);
        d.rel[j] = relative_energy(s, tf, fam, p);
        d.kw[j] = mode == WeightMode::Korn ? regularity_weight(tf.v, tf.S, tf.phi, tf.mu, cfg) : 0.0;
        if (j == 0) continue;
        const TupleFields rt = tt.rate(g, s.t);
        const SystemOperator so = apply_system_operator(tt, s.t, g, p, fam, tr.forcing[idx - 1]);
        const VectorField w = sub(s.v, tf.v);
        const SymTensorField ds = sub(s.S, tf.S);
        const ScalarField dphi = sub(s.phi, tf.phi);
        const Cell2 wc = cell_vel(w), ut = cell_vel(tf.v);
        Vec z = -(o.lap_neumann * dphi.values);
        for (int c = 0; c < g.cells(); ++c) {
            z[c] += (w_second(tf.phi.values[c], fam) + p.kappa) * dphi.values[c];
            z[c] -= drho * (wc.x[c] * ut.x[c] + wc.y[c] * ut.y[c]);
        }
        double val = face_pair(so.a1, w) + inner_product(so.a2, ds) + so.a3.values.dot(z) * g.cell_area();
        val += plastic_functional(s.phi, s.S, pm) - plastic_functional(s.phi, tf.S, pm);
        val += relative_dissipation(s, tf, rt, so.mu, fam, p) + d.kw[j] * d.rel[j];
        d.gk[j] = val;
    }
    return d;
}

// the interval [a, b] of a series starting at level 0; right-endpoint quadrature of int_tau^t K
DissipativeResult dissipative_on(const DissipativeSeries& d, double h, int a, int b) {
    std::vector<double> tail(b - a + 2, 0.0);
    for (int j = b; j > a; --j) tail[j - a] = tail[j - a + 1] + h * d.kw[j];
    DissipativeResult r;
    r.rhs = d.rel[a] * std::exp(tail[1]);
    r.lhs = d.rel[b];
    for (int j = a + 1; j <= b; ++j) r.lhs += h * d.gk[j] * std::exp(tail[j - a + 1]);
    r.slack = r.rhs - r.lhs;
    return r;
}

}  // namespace

DissipativeResult eval_dissipative_inequality(const Trajectory& tr, const TestTuple& tt, const PotentialFamily& fam,
                                              const Params& p, int s_idx, int t_idx, WeightMode mode,
                                              const RegularityWeightCfg& cfg) {
    if (s_idx < 0 || t_idx >= static_cast<int>(tr.states.size()) || s_idx > t_idx)
        throw Error("dissipative interval outside the trajectory");
    const DissipativeSeries d = dissipative_series(tr, tt, fam, p, s_idx, t_idx, mode, cfg);
    return dissipative_on(d, tr.h, 0, t_idx - s_idx);
}

std::vector<EvsRow> dissipative_battery(const Trajectory& tr, const std::vector<TestTuple>& tuples,
                                        const PotentialFamily& fam, const Params& p, const std::vector<int>& samples,
                                        WeightMode mode, const RegularityWeightCfg& cfg) {
    const int n = static_cast<int>(tr.states.size()) - 1;
    std::vector<EvsRow> rows;
    for (const auto& tt : tuples) {
        const DissipativeSeries d = dissipative_series(tr, tt, fam, p, 0, n, mode, cfg);
        for (std::size_t a = 0; a < samples.size(); ++a)
            for (std::size_t b = a + 1; b < samples.size(); ++b)
                rows.push_back({tt.id, samples[a], samples[b], dissipative_on(d, tr.h, samples[a], samples[b]).slack});
    }
    return rows;
}

// ---------------------------------------------------------------- Jaumann

double jaumann_neutrality(const VectorField& v, const SymTensorField& s) {
    const SymSkwParts parts = sym_skw_split(v);
    double worst = 0.0;
    for (int c = 0; c < s.s11.size(); ++c) {
        Mat2 w;
        w << 0.0, parts.skw.xy[c], parts.skw.yx[c], 0.0;
        const Mat2 m = s.at(c);
        const Mat2 j = m * w - w * m;
        worst = std::max(worst, std::abs((j.array() * m.array()).sum()));
    }
    return worst;
}

JaumannCheck jaumann_ibp_check(const VectorField& v, const SymTensorField& s, const SymTensorField& st) {
    const Grid& g = v.grid;
    const double area = g.cell_area();
    JaumannCheck out;
    out.direct = jaumann_pair(s, skew_rate_of(v), st);

    const Cell2 u = cell_vel(v);
    const StressGrad gs = stress_grad(s), gt = stress_grad(st);
    // component access: S_ab, d_r S_ab
    auto comp = [](double s11, double s12, int a, int b) { return a == b ? (a == 0 ? s11 : -s11) : s12; };
    double total = 0.0;
    for (int c = 0; c < g.cells(); ++c) {
        const double uc[2] = {u.x[c], u.y[c]};
        auto S = [&](int a, int b) { return comp(s.s11[c], s.s12[c], a, b); };
        auto T = [&](int a, int b) { return comp(st.s11[c], st.s12[c], a, b); };
        auto dS = [&](int r, int a, int b) {
            return comp(r == 0 ? gs.g11.x[c] : gs.g11.y[c], r == 0 ? gs.g12.x[c] : gs.g12.y[c], a, b);
        };
        auto dT = [&](int r, int a, int b) {
            return comp(r == 0 ? gt.g11.x[c] : gt.g11.y[c], r == 0 ? gt.g12.x[c] : gt.g12.y[c], a, b);
        };
        // int S_pq (d_r v_s) T_tu  ->  -int (d_r S_pq) v_s T_tu - int S_pq v_s d_r T_tu
        auto ibp = [&](int p, int q, int r, int sidx, int t, int uu) {
            return -dS(r, p, q) * uc[sidx] * T(t, uu) - S(p, q) * uc[sidx] * dT(r, t, uu);
        };
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                for (int k = 0; k < 2; ++k)
                    total += 0.5 * ibp(i, k, j, k, i, j) - 0.5 * ibp(i, k, k, j, i, j) - 0.5 * ibp(k, j, k, i, i, j) +
                             0.5 * ibp(k, j, i, k, i, j);
    }
    out.by_parts = total * area;
    out.residual = std::abs(out.direct - out.by_parts);
    return out;
}

}  // namespace geoflow
