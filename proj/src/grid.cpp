#include "geoflow/grid.hpp"

#include <Eigen/SparseCholesky>
#include <fmt/format.h>

#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <tuple>

#include "json.hpp"

namespace geoflow {

Grid::Grid(int nx_, int ny_, double lx_, double ly_) : nx(nx_), ny(ny_), lx(lx_), ly(ly_) {
    if (nx < 4 || ny < 4) throw Error(fmt::format("grid needs nx, ny >= 4 (got {}x{})", nx, ny));
    if (!(lx > 0.0) || !(ly > 0.0)) throw Error("grid lengths must be positive");
    hx = lx / nx;
    hy = ly / ny;
}

Vec VectorField::stacked() const {
    Vec s(x.size() + y.size());
    s << x, y;
    return s;
}

VectorField VectorField::from_stacked(const Grid& g, const Vec& s) {
    return VectorField(g, s.head(g.xfaces()), s.segment(g.xfaces(), g.yfaces()));
}

void VectorField::clamp_walls() {
    for (int j = 0; j < grid.ny; ++j) {
        x[grid.fx(0, j)] = 0.0;
        x[grid.fx(grid.nx, j)] = 0.0;
    }
    for (int i = 0; i < grid.nx; ++i) {
        y[grid.fy(i, 0)] = 0.0;
        y[grid.fy(i, grid.ny)] = 0.0;
    }
}

Mat2 SymTensorField::at(int c) const {
    Mat2 m;
    m << s11[c], s12[c], s12[c], -s11[c];
    return m;
}

void SymTensorField::set(int c, const Mat2& m) {
    s11[c] = 0.5 * (m(0, 0) - m(1, 1));
    s12[c] = 0.5 * (m(0, 1) + m(1, 0));
}

Vec SymTensorField::stacked() const {
    Vec s(2 * s11.size());
    s << s11, s12;
    return s;
}

SymTensorField SymTensorField::from_stacked(const Grid& g, const Vec& s) {
    const int n = g.cells();
    return SymTensorField(g, s.head(n), s.segment(n, n));
}

TensorField::TensorField(const Grid& g)
    : grid(g), xx(Vec::Zero(g.cells())), xy(Vec::Zero(g.cells())), yx(Vec::Zero(g.cells())),
      yy(Vec::Zero(g.cells())) {}

Mat2 TensorField::at(int c) const {
    Mat2 m;
    m << xx[c], xy[c], yx[c], yy[c];
    return m;
}

namespace {

using Triplets = std::vector<Eigen::Triplet<double>>;

SpMat build(int rows, int cols, const Triplets& t) {
    SpMat m(rows, cols);
    m.setFromTriplets(t.begin(), t.end());
    m.prune(0.0);
    return m;
}

// Centred cell differences; even ghosts copy the boundary cell.
SpMat centered_even(const Grid& g, bool along_x) {
    const double w = 0.5 / (along_x ? g.hx : g.hy);
    Triplets t;
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            const int c = g.index(i, j);
            const int k = along_x ? i : j;
            const int len = along_x ? g.nx : g.ny;
            const int cp = k + 1 < len ? (along_x ? g.index(i + 1, j) : g.index(i, j + 1)) : c;
            const int cm = k > 0 ? (along_x ? g.index(i - 1, j) : g.index(i, j - 1)) : c;
            t.emplace_back(c, cp, w);
            t.emplace_back(c, cm, -w);
        }
    return build(g.cells(), g.cells(), t);
}

using GridKey = std::tuple<int, int, double, double>;
GridKey key_of(const Grid& g) { return {g.nx, g.ny, g.lx, g.ly}; }

std::unique_ptr<GridOperators> assemble(const Grid& g) {
    auto o = std::make_unique<GridOperators>();
    const int n = g.cells(), nfx = g.xfaces(), nfy = g.yfaces(), nv = g.vertices();
    Triplets t;

    t.clear();
    for (int j = 0; j < g.ny; ++j)
        for (int i = 1; i < g.nx; ++i) {
            t.emplace_back(g.fx(i, j), g.index(i, j), 1.0 / g.hx);
            t.emplace_back(g.fx(i, j), g.index(i - 1, j), -1.0 / g.hx);
        }
    o->grad_x = build(nfx, n, t);
    t.clear();
    for (int j = 1; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            t.emplace_back(g.fy(i, j), g.index(i, j), 1.0 / g.hy);
            t.emplace_back(g.fy(i, j), g.index(i, j - 1), -1.0 / g.hy);
        }
    o->grad_y = build(nfy, n, t);

    t.clear();
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            t.emplace_back(g.index(i, j), g.fx(i + 1, j), 1.0 / g.hx);
            t.emplace_back(g.index(i, j), g.fx(i, j), -1.0 / g.hx);
        }
    o->div_x = build(n, nfx, t);
    t.clear();
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            t.emplace_back(g.index(i, j), g.fy(i, j + 1), 1.0 / g.hy);
            t.emplace_back(g.index(i, j), g.fy(i, j), -1.0 / g.hy);
        }
    o->div_y = build(n, nfy, t);

    o->lap_neumann = o->div_x * o->grad_x + o->div_y * o->grad_y;
    t.clear();
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            double d = 0.0;
            if (i == 0) d -= 2.0 / (g.hx * g.hx);
            if (i == g.nx - 1) d -= 2.0 / (g.hx * g.hx);
            if (j == 0) d -= 2.0 / (g.hy * g.hy);
            if (j == g.ny - 1) d -= 2.0 / (g.hy * g.hy);
            t.emplace_back(g.index(i, j), g.index(i, j), d);
        }
    o->lap_dirichlet = o->lap_neumann + build(n, n, t);

    t.clear();
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i <= g.nx; ++i) {
            if (i == 0) t.emplace_back(g.fx(i, j), g.index(0, j), 1.0);
            else if (i == g.nx) t.emplace_back(g.fx(i, j), g.index(g.nx - 1, j), 1.0);
            else {
                t.emplace_back(g.fx(i, j), g.index(i - 1, j), 0.5);
                t.emplace_back(g.fx(i, j), g.index(i, j), 0.5);
            }
        }
    o->avg_x = build(nfx, n, t);
    t.clear();
    for (int j = 0; j <= g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            if (j == 0) t.emplace_back(g.fy(i, j), g.index(i, 0), 1.0);
            else if (j == g.ny) t.emplace_back(g.fy(i, j), g.index(i, g.ny - 1), 1.0);
            else {
                t.emplace_back(g.fy(i, j), g.index(i, j - 1), 0.5);
                t.emplace_back(g.fy(i, j), g.index(i, j), 0.5);
            }
        }
    o->avg_y = build(nfy, n, t);

    t.clear();
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            t.emplace_back(g.index(i, j), g.fx(i, j), 0.5);
            t.emplace_back(g.index(i, j), g.fx(i + 1, j), 0.5);
        }
    o->cell_from_x = build(n, nfx, t);
    t.clear();
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
            t.emplace_back(g.index(i, j), g.fy(i, j), 0.5);
            t.emplace_back(g.index(i, j), g.fy(i, j + 1), 0.5);
        }
    o->cell_from_y = build(n, nfy, t);

    o->dx_even = centered_even(g, true);
    o->dy_even = centered_even(g, false);
    o->dxvx = o->div_x;
    o->dyvy = o->div_y;

    // shear derivatives at vertices with odd ghosts across the walls
    t.clear();
    for (int j = 0; j <= g.ny; ++j)
        for (int i = 0; i <= g.nx; ++i) {
            const int r = g.vtx(i, j);
            if (j == 0) t.emplace_back(r, g.fx(i, 0), 2.0 / g.hy);
            else if (j == g.ny) t.emplace_back(r, g.fx(i, g.ny - 1), -2.0 / g.hy);
            else {
                t.emplace_back(r, g.fx(i, j), 1.0 / g.hy);
                t.emplace_back(r, g.fx(i, j - 1), -1.0 / g.hy);
            }
        }
    o->dyvx = build(nv, nfx, t);
    t.clear();
    for (int j = 0; j <= g.ny; ++j)
        for (int i = 0; i <= g.nx; ++i) {
            const int r = g.vtx(i, j);
            if (i == 0) t.emplace_back(r, g.fy(0, j), 2.0 / g.hx);
            else if (i == g.nx) t.emplace_back(r, g.fy(g.nx - 1, j), -2.0 / g.hx);
            else {
                t.emplace_back(r, g.fy(i, j), 1.0 / g.hx);
                t.emplace_back(r, g.fy(i - 1, j), -1.0 / g.hx);
            }
        }
    o->dxvy = build(nv, nfy, t);

    t.clear();
    for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i)
            for (int dj = 0; dj < 2; ++dj)
                for (int di = 0; di < 2; ++di) t.emplace_back(g.index(i, j), g.vtx(i + di, j + dj), 0.25);
    o->cell_from_vtx = build(n, nv, t);

    t.clear();
    o->vtx_weight = Vec::Ones(nv);
    for (int j = 0; j <= g.ny; ++j)
        for (int i = 0; i <= g.nx; ++i) {
            std::vector<int> adj;
            for (int dj = -1; dj <= 0; ++dj)
                for (int di = -1; di <= 0; ++di) {
                    const int ci = i + di, cj = j + dj;
                    if (ci >= 0 && ci < g.nx && cj >= 0 && cj < g.ny) adj.push_back(g.index(ci, cj));
                }
            for (int c : adj) t.emplace_back(g.vtx(i, j), c, 1.0 / adj.size());
            o->vtx_weight[g.vtx(i, j)] = adj.size() / 4.0;
        }
    o->vtx_from_cell = build(nv, n, t);

    for (int j = 0; j < g.ny; ++j)
        for (int i = 1; i < g.nx; ++i) o->interior_x.push_back(g.fx(i, j));
    for (int j = 1; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) o->interior_y.push_back(g.fy(i, j));
    return o;
}

struct ProjectionSolver {
    Eigen::SimplicialLDLT<SpMat> ldlt;  // -Laplacian with cell 0 pinned
};

const ProjectionSolver& projection_solver(const Grid& g) {
    static std::mutex mtx;
    static std::map<GridKey, std::unique_ptr<ProjectionSolver>> cache;
    std::lock_guard<std::mutex> lock(mtx);
    auto& slot = cache[key_of(g)];
    if (!slot) {
        const int n = g.cells();
        auto ps = std::make_unique<ProjectionSolver>();
        SpMat a = -operators(g).lap_neumann;
        SpMat reduced = a.bottomRightCorner(n - 1, n - 1);
        ps->ldlt.compute(reduced);
        if (ps->ldlt.info() != Eigen::Success) throw Error("pressure Poisson factorization failed");
        slot = std::move(ps);
    }
    return *slot;
}

}  // namespace

const GridOperators& operators(const Grid& g) {
    static std::mutex mtx;
    static std::map<GridKey, std::unique_ptr<GridOperators>> cache;
    std::lock_guard<std::mutex> lock(mtx);
    auto& slot = cache[key_of(g)];
    if (!slot) slot = assemble(g);
    return *slot;
}

SpMat weighted_laplacian(const Grid& g, const Vec& w) {
    const auto& o = operators(g);
    const Vec wx = o.avg_x * w;
    const Vec wy = o.avg_y * w;
    SpMat fx = wx.asDiagonal() * o.grad_x;
    SpMat fy = wy.asDiagonal() * o.grad_y;
    return o.div_x * fx + o.div_y * fy;
}

namespace {
// stacked-face versions of the strain pieces
struct StrainPieces {
    SpMat exx, eyy, shear_a, shear_b;  // shear_a = dy vx, shear_b = dx vy, both at vertices
};

StrainPieces strain_pieces(const Grid& g) {
    const auto& o = operators(g);
    const int n = g.cells(), nfx = g.xfaces(), nfy = g.yfaces(), nv = g.vertices();
    Triplets t;
    StrainPieces s;
    auto lift = [&](const SpMat& m, int rows, int offset) {
        Triplets tt;
        for (int k = 0; k < m.outerSize(); ++k)
            for (SpMat::InnerIterator it(m, k); it; ++it) tt.emplace_back(it.row(), it.col() + offset, it.value());
        return build(rows, nfx + nfy, tt);
    };
    s.exx = lift(o.dxvx, n, 0);
    s.eyy = lift(o.dyvy, n, nfx);
    s.shear_a = lift(o.dyvx, nv, 0);
    s.shear_b = lift(o.dxvy, nv, nfx);
    return s;
}
}  // namespace

SpMat viscous_operator(const Grid& g, const Vec& nu) {
    const auto& o = operators(g);
    const StrainPieces s = strain_pieces(g);
    const Vec nu_v = (o.vtx_from_cell * nu).cwiseProduct(o.vtx_weight);
    SpMat shear = s.shear_a + s.shear_b;
    SpMat a = SpMat(s.exx.transpose()) * (2.0 * nu).asDiagonal() * s.exx +
              SpMat(s.eyy.transpose()) * (2.0 * nu).asDiagonal() * s.eyy +
              SpMat(shear.transpose()) * nu_v.asDiagonal() * shear;
    return a;
}

SpMat velocity_gradient_form(const Grid& g) {
    const auto& o = operators(g);
    const StrainPieces s = strain_pieces(g);
    return SpMat(s.exx.transpose()) * s.exx + SpMat(s.eyy.transpose()) * s.eyy +
           SpMat(s.shear_a.transpose()) * o.vtx_weight.asDiagonal() * s.shear_a +
           SpMat(s.shear_b.transpose()) * o.vtx_weight.asDiagonal() * s.shear_b;
}

SpMat strain_dev_operator(const Grid& g) {
    const auto& o = operators(g);
    const StrainPieces s = strain_pieces(g);
    SpMat top = 0.5 * (s.exx - s.eyy);
    SpMat bottom = 0.5 * (o.cell_from_vtx * SpMat(s.shear_a + s.shear_b));
    Triplets t;
    for (int k = 0; k < top.outerSize(); ++k)
        for (SpMat::InnerIterator it(top, k); it; ++it) t.emplace_back(it.row(), it.col(), it.value());
    for (int k = 0; k < bottom.outerSize(); ++k)
        for (SpMat::InnerIterator it(bottom, k); it; ++it) t.emplace_back(it.row() + g.cells(), it.col(), it.value());
    return build(2 * g.cells(), g.xfaces() + g.yfaces(), t);
}

namespace {
void check_vec(const Vec& v, int ni, const std::string& what) {
    for (int c = 0; c < v.size(); ++c)
        if (!std::isfinite(v[c])) throw Error(fmt::format("{}: non-finite value at ({}, {})", what, c % ni, c / ni));
}
}  // namespace

void require_finite(const ScalarField& u, const std::string& what) { check_vec(u.values, u.grid.nx, what); }
void require_finite(const VectorField& u, const std::string& what) {
    check_vec(u.x, u.grid.nx + 1, what + ".x");
    check_vec(u.y, u.grid.nx, what + ".y");
}
void require_finite(const SymTensorField& u, const std::string& what) {
    check_vec(u.s11, u.grid.nx, what + ".s11");
    check_vec(u.s12, u.grid.nx, what + ".s12");
}

VectorField apply_gradient(const ScalarField& u, Bc bc) {
    require_finite(u, "gradient input");
    const Grid& g = u.grid;
    const auto& o = operators(g);
    VectorField out(g, o.grad_x * u.values, o.grad_y * u.values);
    if (bc == Bc::Dirichlet) {
        for (int j = 0; j < g.ny; ++j) {
            out.x[g.fx(0, j)] = 2.0 * u(0, j) / g.hx;
            out.x[g.fx(g.nx, j)] = -2.0 * u(g.nx - 1, j) / g.hx;
        }
        for (int i = 0; i < g.nx; ++i) {
            out.y[g.fy(i, 0)] = 2.0 * u(i, 0) / g.hy;
            out.y[g.fy(i, g.ny)] = -2.0 * u(i, g.ny - 1) / g.hy;
        }
    }
    return out;
}

ScalarField apply_divergence(const VectorField& w, Bc) {
    require_finite(w, "divergence input");
    const auto& o = operators(w.grid);
    return ScalarField(w.grid, o.div_x * w.x + o.div_y * w.y);
}

VectorField apply_divergence(const SymTensorField& s, Bc) {
    require_finite(s, "tensor divergence input");
    const Grid& g = s.grid;
    const Vec d = -2.0 * (strain_dev_operator(g).transpose() * s.stacked());
    VectorField out = VectorField::from_stacked(g, d);
    out.clamp_walls();
    return out;
}

ScalarField apply_laplacian(const ScalarField& u, Bc bc) {
    require_finite(u, "laplacian input");
    const auto& o = operators(u.grid);
    return ScalarField(u.grid, (bc == Bc::Neumann ? o.lap_neumann : o.lap_dirichlet) * u.values);
}

TensorField velocity_gradient(const VectorField& v) {
    const auto& o = operators(v.grid);
    TensorField t(v.grid);
    t.xx = o.dxvx * v.x;
    t.yy = o.dyvy * v.y;
    t.xy = o.cell_from_vtx * (o.dyvx * v.x);
    t.yx = o.cell_from_vtx * (o.dxvy * v.y);
    return t;
}

SymSkwParts sym_skw_split(const VectorField& v) {
    require_finite(v, "sym_skw_split input");
    const auto& o = operators(v.grid);
    const Vec a = o.dyvx * v.x, b = o.dxvy * v.y;
    SymSkwParts out{TensorField(v.grid), TensorField(v.grid)};
    out.sym.xx = o.dxvx * v.x;
    out.sym.yy = o.dyvy * v.y;
    out.sym.xy = 0.5 * (o.cell_from_vtx * (a + b));
    out.sym.yx = out.sym.xy;
    out.skw.xy = 0.5 * (o.cell_from_vtx * (a - b));
    out.skw.yx = -out.skw.xy;
    return out;
}

SymTensorField sym_gradient_dev(const VectorField& v) {
    return SymTensorField::from_stacked(v.grid, strain_dev_operator(v.grid) * v.stacked());
}

void cell_velocity(const VectorField& v, Vec& ux, Vec& uy) {
    const auto& o = operators(v.grid);
    ux = o.cell_from_x * v.x;
    uy = o.cell_from_y * v.y;
}

void cell_gradient(const ScalarField& u, Vec& gx, Vec& gy) {
    const auto& o = operators(u.grid);
    gx = o.dx_even * u.values;
    gy = o.dy_even * u.values;
}

Projection leray_project(const VectorField& v_in) {
    require_finite(v_in, "leray_project input");
    const Grid& g = v_in.grid;
    const int n = g.cells();
    const auto& o = operators(g);
    VectorField v = v_in;
    v.clamp_walls();
    const Vec div = o.div_x * v.x + o.div_y * v.y;
    const auto& ps = projection_solver(g);
    Vec p = Vec::Zero(n);
    p.tail(n - 1) = ps.ldlt.solve(-div.tail(n - 1));
    if (ps.ldlt.info() != Eigen::Success) throw Error("pressure Poisson solve failed");
    VectorField out(g, v.x - o.grad_x * p, v.y - o.grad_y * p);
    const Vec res = o.div_x * out.x + o.div_y * out.y;
    const double scale = 1.0 + div.lpNorm<Eigen::Infinity>();
    const double r = res.lpNorm<Eigen::Infinity>();
    if (!(r <= 1e-10 * scale)) throw Error(fmt::format("projection residual {:.3e} above tolerance", r));
    p.array() -= p.mean();
    return {out, ScalarField(g, p)};
}

double mean_value(const ScalarField& u) { return u.values.sum() * u.grid.cell_area() / u.grid.measure(); }

double inner_product(const ScalarField& a, const ScalarField& b) { return a.values.dot(b.values) * a.grid.cell_area(); }
double inner_product(const VectorField& a, const VectorField& b) {
    return (a.x.dot(b.x) + a.y.dot(b.y)) * a.grid.cell_area();
}
double inner_product(const SymTensorField& a, const SymTensorField& b) {
    return 2.0 * (a.s11.dot(b.s11) + a.s12.dot(b.s12)) * a.grid.cell_area();
}
double inner_product(const TensorField& a, const TensorField& b) {
    return (a.xx.dot(b.xx) + a.xy.dot(b.xy) + a.yx.dot(b.yx) + a.yy.dot(b.yy)) * a.grid.cell_area();
}

double norm_l2(const ScalarField& u) { return std::sqrt(inner_product(u, u)); }
double norm_l2(const VectorField& u) { return std::sqrt(inner_product(u, u)); }
double norm_l2(const SymTensorField& u) { return std::sqrt(inner_product(u, u)); }
double norm_l2(const TensorField& u) { return std::sqrt(inner_product(u, u)); }

double norm_linf(const ScalarField& u) { return u.values.size() ? u.values.lpNorm<Eigen::Infinity>() : 0.0; }
double norm_linf(const VectorField& u) {
    return std::max(u.x.lpNorm<Eigen::Infinity>(), u.y.lpNorm<Eigen::Infinity>());
}
double norm_linf(const SymTensorField& u) {
    double m = 0.0;
    for (int c = 0; c < u.s11.size(); ++c) m = std::max(m, std::sqrt(2.0 * (u.s11[c] * u.s11[c] + u.s12[c] * u.s12[c])));
    return m;
}

double velocity_gradient_sq(const VectorField& v) {
    const auto& o = operators(v.grid);
    const Vec a = o.dyvx * v.x, b = o.dxvy * v.y;
    return ((o.dxvx * v.x).squaredNorm() + (o.dyvy * v.y).squaredNorm() +
            o.vtx_weight.dot(a.cwiseProduct(a) + b.cwiseProduct(b))) *
           v.grid.cell_area();
}

double sym_gradient_sq(const VectorField& v) {
    const auto& o = operators(v.grid);
    const Vec s = o.dyvx * v.x + o.dxvy * v.y;
    return ((o.dxvx * v.x).squaredNorm() + (o.dyvy * v.y).squaredNorm() + 0.5 * o.vtx_weight.dot(s.cwiseProduct(s))) *
           v.grid.cell_area();
}

double face_dirichlet_form(const ScalarField& u) {
    const auto& o = operators(u.grid);
    return ((o.grad_x * u.values).squaredNorm() + (o.grad_y * u.values).squaredNorm()) * u.grid.cell_area();
}

double face_dirichlet_form(const SymTensorField& s) {
    return 2.0 * (face_dirichlet_form(ScalarField(s.grid, s.s11)) + face_dirichlet_form(ScalarField(s.grid, s.s12)));
}

double face_dirichlet_form(const ScalarField& u, const Vec& w) {
    const auto& o = operators(u.grid);
    const Vec gx = o.grad_x * u.values, gy = o.grad_y * u.values;
    return ((o.avg_x * w).dot(gx.cwiseProduct(gx)) + (o.avg_y * w).dot(gy.cwiseProduct(gy))) * u.grid.cell_area();
}

double face_cross_form(const ScalarField& a, const ScalarField& b) {
    const auto& o = operators(a.grid);
    return ((o.grad_x * a.values).dot(o.grad_x * b.values) + (o.grad_y * a.values).dot(o.grad_y * b.values)) *
           a.grid.cell_area();
}

double norm_h1(const ScalarField& u) { return std::sqrt(inner_product(u, u) + face_dirichlet_form(u)); }
double norm_h1(const VectorField& v) { return std::sqrt(inner_product(v, v) + velocity_gradient_sq(v)); }

namespace {
const char* location_name(Location l) {
    switch (l) {
        case Location::Cell: return "cell";
        case Location::XFace: return "xface";
        case Location::YFace: return "yface";
    }
    return "cell";
}
Location location_from(const std::string& s) {
    if (s == "cell") return Location::Cell;
    if (s == "xface") return Location::XFace;
    if (s == "yface") return Location::YFace;
    throw Error("unknown field location " + s);
}
std::pair<int, int> extent(const Grid& g, Location l) {
    switch (l) {
        case Location::XFace: return {g.nx + 1, g.ny};
        case Location::YFace: return {g.nx, g.ny + 1};
        default: return {g.nx, g.ny};
    }
}
}  // namespace

void write_field_csv(const std::string& path, const FieldDump& d) {
    if (d.names.size() != d.cols.size()) throw Error("field dump: names/columns mismatch");
    const auto [ni, nj] = extent(d.grid, d.location);
    std::ofstream os(path);
    if (!os) throw Error("cannot open " + path);
    os << "i,j";
    for (const auto& n : d.names) os << ',' << n;
    os << '\n';
    for (int j = 0; j < nj; ++j)
        for (int i = 0; i < ni; ++i) {
            os << i << ',' << j;
            for (const Vec& c : d.cols) os << ',' << fmt::format("{:.17g}", c[i + ni * j]);
            os << '\n';
        }
    nlohmann::json side;
    side["nx"] = d.grid.nx;
    side["ny"] = d.grid.ny;
    side["lx"] = d.grid.lx;
    side["ly"] = d.grid.ly;
    side["location"] = location_name(d.location);
    side["role"] = d.role;
    side["time"] = d.time;
    side["columns"] = d.names;
    std::ofstream js(path + ".json");
    js << side.dump(2) << '\n';
}

FieldDump read_field_csv(const std::string& path) {
    std::ifstream js(path + ".json");
    if (!js) throw Error("missing sidecar for " + path);
    const nlohmann::json side = nlohmann::json::parse(js);
    FieldDump d;
    d.grid = Grid(side.at("nx").get<int>(), side.at("ny").get<int>(), side.at("lx").get<double>(),
                  side.at("ly").get<double>());
    d.location = location_from(side.at("location").get<std::string>());
    d.names = side.at("columns").get<std::vector<std::string>>();
    d.role = side.at("role").get<std::string>();
    d.time = side.at("time").get<double>();
    const auto [ni, nj] = extent(d.grid, d.location);
    d.cols.assign(d.names.size(), Vec::Zero(ni * nj));
    std::ifstream is(path);
    if (!is) throw Error("cannot open " + path);
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string tok;
        std::getline(ss, tok, ',');
        const int i = std::stoi(tok);
        std::getline(ss, tok, ',');
        const int j = std::stoi(tok);
        for (auto& col : d.cols) {
            std::getline(ss, tok, ',');
            col[i + ni * j] = std::stod(tok);
        }
    }
    return d;
}

}  // namespace geoflow
