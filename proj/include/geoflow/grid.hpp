#pragma once
/// @file grid.hpp
/// @brief Uniform rectangular grid, discrete fields and the operators shared by all modules.
///
/// Scalars and stresses live at cell centres. Vector fields are staggered: the x component
/// sits on x-faces ((nx+1) x ny values), the y component on y-faces (nx x (ny+1)).
/// Velocity gradients are formed at cell centres (normal strains) and vertices (shear).

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace geoflow {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using SpMat = Eigen::SparseMatrix<double>;
using Vec = Eigen::VectorXd;
using Mat2 = Eigen::Matrix2d;

struct Grid {
    int nx = 0;
    int ny = 0;
    double lx = 1.0;
    double ly = 1.0;
    double hx = 0.0;
    double hy = 0.0;
    static constexpr int dim = 2;

    Grid() = default;
    Grid(int nx_, int ny_, double lx_ = 1.0, double ly_ = 1.0);

    int cells() const { return nx * ny; }
    int xfaces() const { return (nx + 1) * ny; }
    int yfaces() const { return nx * (ny + 1); }
    int vertices() const { return (nx + 1) * (ny + 1); }

    int index(int i, int j) const { return i + nx * j; }
    int fx(int i, int j) const { return i + (nx + 1) * j; }
    int fy(int i, int j) const { return i + nx * j; }
    int vtx(int i, int j) const { return i + (nx + 1) * j; }

    double xc(int i) const { return (i + 0.5) * hx; }
    double yc(int j) const { return (j + 0.5) * hy; }
    double xn(int i) const { return i * hx; }
    double yn(int j) const { return j * hy; }
    double cell_area() const { return hx * hy; }
    double measure() const { return lx * ly; }

    bool operator==(const Grid& o) const { return nx == o.nx && ny == o.ny && lx == o.lx && ly == o.ly; }
};

/// Dirichlet: zero value on the wall (odd ghost reflection); Neumann: zero normal difference.
enum class Bc { Dirichlet, Neumann };

struct ScalarField {
    Grid grid;
    Vec values;

    ScalarField() = default;
    explicit ScalarField(const Grid& g, double c = 0.0) : grid(g), values(Vec::Constant(g.cells(), c)) {}
    ScalarField(const Grid& g, Vec v) : grid(g), values(std::move(v)) {}

    double& operator()(int i, int j) { return values[grid.index(i, j)]; }
    double operator()(int i, int j) const { return values[grid.index(i, j)]; }
};

/// Staggered vector field; wall-normal entries are the boundary faces.
struct VectorField {
    Grid grid;
    Vec x;
    Vec y;

    VectorField() = default;
    explicit VectorField(const Grid& g) : grid(g), x(Vec::Zero(g.xfaces())), y(Vec::Zero(g.yfaces())) {}
    VectorField(const Grid& g, Vec x_, Vec y_) : grid(g), x(std::move(x_)), y(std::move(y_)) {}

    Vec stacked() const;
    static VectorField from_stacked(const Grid& g, const Vec& s);
    /// Zero the wall-normal components.
    void clamp_walls();
};

/// Symmetric trace-free 2x2 tensor per cell stored as (s11, s12); s22 = -s11.
struct SymTensorField {
    Grid grid;
    Vec s11;
    Vec s12;

    SymTensorField() = default;
    explicit SymTensorField(const Grid& g) : grid(g), s11(Vec::Zero(g.cells())), s12(Vec::Zero(g.cells())) {}
    SymTensorField(const Grid& g, Vec a, Vec b) : grid(g), s11(std::move(a)), s12(std::move(b)) {}

    Mat2 at(int c) const;
    void set(int c, const Mat2& m);
    Vec stacked() const;
    static SymTensorField from_stacked(const Grid& g, const Vec& s);
};

/// Full 2x2 tensor per cell; (xy) is the derivative of the x component along y.
struct TensorField {
    Grid grid;
    Vec xx, xy, yx, yy;

    TensorField() = default;
    explicit TensorField(const Grid& g);
    Mat2 at(int c) const;
};

struct SymSkwParts {
    TensorField sym;
    TensorField skw;
};

struct Projection {
    VectorField v;
    ScalarField p;
};

struct GridOperators {
    // cell scalar -> face gradient (zero on wall faces), face field -> cell divergence
    SpMat grad_x, grad_y, div_x, div_y;
    SpMat lap_neumann, lap_dirichlet;
    // cell -> face averages (wall faces copy the adjacent cell), face -> cell averages
    SpMat avg_x, avg_y, cell_from_x, cell_from_y;
    // centred cell differences with even ghosts
    SpMat dx_even, dy_even;
    // velocity gradient pieces: normal strains at cells, shear derivatives at vertices
    SpMat dxvx, dyvy, dyvx, dxvy;
    SpMat cell_from_vtx, vtx_from_cell;
    Vec vtx_weight;  ///< dual-area fraction of each vertex (1 interior, 1/2 wall, 1/4 corner)
    std::vector<int> interior_x, interior_y;  ///< face indices not on a wall-normal boundary
};

const GridOperators& operators(const Grid& g);

/// div(w grad u) for a cell weight averaged to faces; zero flux through walls.
SpMat weighted_laplacian(const Grid& g, const Vec& cell_weight);
/// Symmetric positive semidefinite viscous operator with <A v, v> = int 2 nu |sym grad v|^2.
SpMat viscous_operator(const Grid& g, const Vec& nu_cell);
/// Matrix G with hx*hy * v^T G v = ||grad v||^2 on stacked faces.
SpMat velocity_gradient_form(const Grid& g);
/// Matrix of v -> sym_gradient_dev(v) on stacked faces, output stacked (s11, s12).
SpMat strain_dev_operator(const Grid& g);

void require_finite(const ScalarField& u, const std::string& what);
void require_finite(const VectorField& u, const std::string& what);
void require_finite(const SymTensorField& u, const std::string& what);

VectorField apply_gradient(const ScalarField& u, Bc bc = Bc::Neumann);
ScalarField apply_divergence(const VectorField& w, Bc bc = Bc::Dirichlet);
/// Tensor divergence defined as the negative adjoint of sym_gradient_dev.
VectorField apply_divergence(const SymTensorField& s, Bc bc = Bc::Neumann);
ScalarField apply_laplacian(const ScalarField& u, Bc bc = Bc::Neumann);
TensorField velocity_gradient(const VectorField& v);
SymSkwParts sym_skw_split(const VectorField& v);
SymTensorField sym_gradient_dev(const VectorField& v);
/// Cell-centred interpolant of a staggered field.
void cell_velocity(const VectorField& v, Vec& ux, Vec& uy);
/// Centred cell gradient of a cell scalar (even ghosts).
void cell_gradient(const ScalarField& u, Vec& gx, Vec& gy);

Projection leray_project(const VectorField& v);

double mean_value(const ScalarField& u);
double inner_product(const ScalarField& a, const ScalarField& b);
double inner_product(const VectorField& a, const VectorField& b);
double inner_product(const SymTensorField& a, const SymTensorField& b);
double inner_product(const TensorField& a, const TensorField& b);
double norm_l2(const ScalarField& u);
double norm_l2(const VectorField& u);
double norm_l2(const SymTensorField& u);
double norm_l2(const TensorField& u);
double norm_linf(const ScalarField& u);
double norm_linf(const VectorField& u);
double norm_linf(const SymTensorField& u);
double norm_h1(const ScalarField& u);
double norm_h1(const VectorField& v);

/// ||grad v||^2 with normal strains at cells and shear derivatives at vertices.
double velocity_gradient_sq(const VectorField& v);
/// ||sym grad v||^2 on the same stencil.
double sym_gradient_sq(const VectorField& v);

/// int |grad u|^2 on the compact face stencil, i.e. <-L u, u>.
double face_dirichlet_form(const ScalarField& u);
double face_dirichlet_form(const SymTensorField& s);
double face_dirichlet_form(const ScalarField& u, const Vec& cell_weight);
double face_cross_form(const ScalarField& a, const ScalarField& b);

enum class Location { Cell, XFace, YFace };

struct FieldDump {
    Grid grid;
    Location location = Location::Cell;
    std::vector<std::string> names;
    std::vector<Vec> cols;
    std::string role;
    double time = 0.0;
};

/// CSV with header i,j,<names...> plus a JSON sidecar at path + ".json".
void write_field_csv(const std::string& path, const FieldDump& d);
FieldDump read_field_csv(const std::string& path);

}  // namespace geoflow
