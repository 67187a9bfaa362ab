#include "geoflow/config.hpp"

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace geoflow {

namespace {

std::string trim(std::string s) {
    boost::algorithm::trim(s);
    return s;
}

double to_double(const std::string& s) {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (trim(s.substr(pos)) != "") throw std::invalid_argument("trailing characters");
    if (!std::isfinite(v)) throw std::invalid_argument("not finite");
    return v;
}

int to_int(const std::string& s) {
    std::size_t pos = 0;
    const long v = std::stol(s, &pos);
    if (trim(s.substr(pos)) != "") throw std::invalid_argument("trailing characters");
    return static_cast<int>(v);
}

bool to_bool(const std::string& s) {
    const std::string v = boost::algorithm::to_lower_copy(trim(s));
    if (v == "true" || v == "yes" || v == "1") return true;
    if (v == "false" || v == "no" || v == "0") return false;
    throw std::invalid_argument("expected true or false");
}

std::vector<double> to_list(const std::string& s) {
    std::vector<std::string> parts;
    boost::algorithm::split(parts, s, boost::algorithm::is_any_of(","));
    std::vector<double> out;
    for (const auto& p : parts) out.push_back(to_double(trim(p)));
    return out;
}

// "1.5" or "affine c0 c1 lower upper"
CoefficientSpec to_coefficient(const std::string& s) {
    std::istringstream is(s);
    std::string head;
    is >> head;
    if (head != "affine") return CoefficientSpec::constant(to_double(s));
    double c0, c1, lo, hi;
    if (!(is >> c0 >> c1 >> lo >> hi)) throw std::invalid_argument("expected affine c0 c1 lower upper");
    std::string rest;
    if (is >> rest) throw std::invalid_argument("trailing characters");
    return CoefficientSpec::affine(c0, c1, lo, hi);
}

std::string show(double v) { return fmt::format("{:g}", v); }
std::string show(const std::vector<double>& v) { return fmt::format("{:g}", fmt::join(v, ", ")); }
std::string show(const CoefficientSpec& c) {
    return c.kind == CoefficientSpec::Kind::Constant ? show(c.c0)
                                                     : fmt::format("affine {:g} {:g} {:g} {:g}", c.c0, c.c1, c.lower, c.upper);
}

struct Key {
    std::string help;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define GF_NUM(field, help)                                                                                  \
    Key {                                                                                                    \
        help, [](RunConfig& c, const std::string& v) { c.field = to_double(v); },                              \
            [](const RunConfig& c) { return show(static_cast<double>(c.field)); }                              \
    }
#define GF_INT(field, help)                                                                                  \
    Key {                                                                                                    \
        help, [](RunConfig& c, const std::string& v) { c.field = to_int(v); },                                 \
            [](const RunConfig& c) { return std::to_string(c.field); }                                         \
    }
#define GF_BOOL(field, help)                                                                                 \
    Key {                                                                                                    \
        help, [](RunConfig& c, const std::string& v) { c.field = to_bool(v); },                                \
            [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); }                         \
    }
#define GF_LIST(field, help)                                                                                 \
    Key {                                                                                                    \
        help, [](RunConfig& c, const std::string& v) { c.field = to_list(v); },                                \
            [](const RunConfig& c) { return show(c.field); }                                                   \
    }
#define GF_COEF(field, help)                                                                                 \
    Key {                                                                                                    \
        help, [](RunConfig& c, const std::string& v) { c.field = to_coefficient(v); },                         \
            [](const RunConfig& c) { return show(c.field); }                                                   \
    }

using Registry = std::map<std::string, std::map<std::string, Key>>;

const Registry& registry() {
    static const Registry r = [] {
        Registry k;
        k["grid"] = {{"nx", GF_INT(grid.nx, "cells along x")},
                     {"ny", GF_INT(grid.ny, "cells along y")},
                     {"lx", GF_NUM(grid.lx, "domain width")},
                     {"ly", GF_NUM(grid.ly, "domain height")}};
        k["time"] = {{"T", GF_NUM(time.T, "final time")}, {"N", GF_INT(time.N, "number of steps")}};
        k["material"] = {
            {"rho1", GF_NUM(params.rho1, "density of the phase phi = -1")},
            {"rho2", GF_NUM(params.rho2, "density of the phase phi = +1")},
            {"nu", GF_COEF(params.nu, "viscosity law: a number or 'affine c0 c1 lower upper'")},
            {"eta", GF_COEF(params.eta, "elastic coupling law")},
            {"m", GF_COEF(params.m, "mobility law")},
            {"a", GF_COEF(params.a, "plastic modulus law")},
            {"nu1", GF_NUM(params.nu1, "viscosity lower bound (default: from the law)")},
            {"nu2", GF_NUM(params.nu2, "viscosity upper bound (default: from the law)")},
            {"eta1", GF_NUM(params.eta1, "elastic coupling lower bound (default: from the law)")},
            {"eta2", GF_NUM(params.eta2, "elastic coupling upper bound (default: from the law)")},
            {"m1", GF_NUM(params.m1, "mobility lower bound (default: from the law)")},
            {"m2", GF_NUM(params.m2, "mobility upper bound (default: from the law)")},
            {"a1", GF_NUM(params.a1, "plastic modulus lower bound (default: from the law)")},
            {"sigma_yield", GF_NUM(params.sigma_yield, "yield stress")},
            {"gamma", GF_NUM(params.gamma, "stress diffusion; 0 uses the Korn weight")},
            {"alpha", GF_NUM(params.alpha, "logarithmic relaxation; 0 selects the obstacle potential")},
            {"epsilon", GF_NUM(params.epsilon, "interface parameter (only 1 is supported)")},
            {"kappa", GF_NUM(params.kappa, "convex splitting shift")},
            {"theta", GF_NUM(params.theta, "test-phase scaling exponent in (0, 1/2)")},
            {"flux",
             Key{"relative mass flux: discrete (-(rho2-rho1)/2 grad mu) or continuous (times m)",
                 [](RunConfig& c, const std::string& v) {
                     if (v == "discrete")
                         c.params.flux_mode = FluxMode::Discrete;
                     else if (v == "continuous")
                         c.params.flux_mode = FluxMode::ContinuousModel;
                     else
                         throw std::invalid_argument("expected discrete or continuous");
                 },
                 [](const RunConfig& c) {
                     return std::string(c.params.flux_mode == FluxMode::Discrete ? "discrete" : "continuous");
                 }}}};
        k["initial"] = {
            {"profile",
             Key{"tanh_drop or perturbed_constant",
                 [](RunConfig& c, const std::string& v) {
                     if (v == "tanh_drop")
                         c.initial.profile = InitialSpec::Profile::TanhDrop;
                     else if (v == "perturbed_constant")
                         c.initial.profile = InitialSpec::Profile::PerturbedConstant;
                     else
                         throw std::invalid_argument("expected tanh_drop or perturbed_constant");
                 },
                 [](const RunConfig& c) {
                     return std::string(c.initial.profile == InitialSpec::Profile::TanhDrop ? "tanh_drop"
                                                                                            : "perturbed_constant");
                 }}},
            {"cx", GF_NUM(initial.cx, "drop centre, fraction of lx")},
            {"cy", GF_NUM(initial.cy, "drop centre, fraction of ly")},
            {"rx", GF_NUM(initial.rx, "drop semi-axis, fraction of lx")},
            {"ry", GF_NUM(initial.ry, "drop semi-axis, fraction of ly")},
            {"width", GF_NUM(initial.width, "interface width factor")},
            {"mean", GF_NUM(initial.mean, "mean of the perturbed constant")},
            {"amplitude", GF_NUM(initial.amplitude, "perturbation amplitude")}};
        k["forcing"] = {
            {"kind",
             Key{"none, shear (sin(pi y/ly) along x) or swirl (rigid rotation field)",
                 [](RunConfig& c, const std::string& v) {
                     if (v == "none")
                         c.forcing.kind = ForcingSpec::Kind::None;
                     else if (v == "shear")
                         c.forcing.kind = ForcingSpec::Kind::Shear;
                     else if (v == "swirl")
                         c.forcing.kind = ForcingSpec::Kind::Swirl;
                     else
                         throw std::invalid_argument("expected none, shear or swirl");
                 },
                 [](const RunConfig& c) {
                     switch (c.forcing.kind) {
                         case ForcingSpec::Kind::Shear: return std::string("shear");
                         case ForcingSpec::Kind::Swirl: return std::string("swirl");
                         default: return std::string("none");
                     }
                 }}},
            {"amplitude", GF_NUM(forcing.amplitude, "force amplitude")},
            {"frequency", GF_NUM(forcing.frequency, "angular frequency of cos(w t) modulation")}};
        k["solver"] = {{"outer_tol", GF_NUM(solver.outer_tol, "coupling iteration tolerance")},
                       {"linear_tol", GF_NUM(solver.linear_tol, "inner solve tolerance")},
                       {"max_outer", GF_INT(solver.max_outer, "coupling iteration cap")},
                       {"damping", GF_NUM(solver.damping, "relaxation once sweeps stall")},
                       {"adaptive", GF_BOOL(solver.adaptive, "undamped sweeps while the residual halves")},
                       {"max_newton", GF_INT(solver.max_newton, "phase-field Newton cap")},
                       {"inclusion_tol", GF_NUM(solver.inclusion.tol, "stress inclusion tolerance")},
                       {"inclusion_max_iter", GF_INT(solver.inclusion.max_iter, "stress inclusion iteration cap")}};
        k["experiment"] = {
            {"tuple_amplitude", GF_NUM(experiment.tuple_amplitude, "amplitude of the test tuple battery")},
            {"samples", GF_INT(experiment.samples, "time sample count for interval pairs")},
            {"refine", GF_BOOL(experiment.refine, "measure the discretization tolerance by refinement")},
            {"korn_inflation", GF_NUM(experiment.korn_inflation, "safety factor on the Korn constant")},
            {"control_tol", GF_NUM(experiment.control_tol, "solver tolerance of the negative control")},
            {"alphas", GF_LIST(experiment.alphas, "alpha sweep values")},
            {"gammas", GF_LIST(experiment.gammas, "gamma sweep values (0 is always added)")},
            {"mosco_alphas", GF_LIST(experiment.mosco_alphas, "alpha values of the potential tables")},
            {"theta_control", GF_NUM(experiment.theta_control, "exponent of the scaled-phase control row")},
            {"prox_cases", GF_INT(experiment.prox_cases, "random prox oracle cases")},
            {"prox_pairs", GF_INT(experiment.prox_pairs, "random nonexpansiveness pairs")},
            {"prox_resolution", GF_NUM(experiment.prox_resolution, "oracle lattice resolution")}};
        k["output"] = {
            {"dir", Key{"output directory", [](RunConfig& c, const std::string& v) { c.out_dir = v; },
                        [](const RunConfig& c) { return c.out_dir; }}},
            {"checkpoint_every", GF_INT(checkpoint_every, "field dump cadence in steps (0: none)")}};
        k["run"] = {{"seed", Key{"random seed", [](RunConfig& c, const std::string& v) { c.seed = std::stoull(v); },
                                 [](const RunConfig& c) { return std::to_string(c.seed); }}}};
        return k;
    }();
    return r;
}

#undef GF_NUM
#undef GF_INT
#undef GF_BOOL
#undef GF_LIST
#undef GF_COEF

void fail(const std::string& field, const std::string& msg) { throw Error(field + ": " + msg); }

}  // namespace

RunConfig parse_config(const std::string& text) {
    boost::property_tree::ptree tree;
    std::istringstream is(text);
    try {
        boost::property_tree::ini_parser::read_ini(is, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw Error(fmt::format("config line {}: {}", e.line(), e.message()));
    }
    RunConfig cfg;
    std::set<std::string> given;
    const Registry& reg = registry();
    for (const auto& [section, body] : tree) {
        if (body.empty()) fail(section, "keys must belong to a section");
        const auto sec = reg.find(section);
        if (sec == reg.end()) fail(section, "unknown section");
        for (const auto& [key, value] : body) {
            const auto it = sec->second.find(key);
            if (it == sec->second.end()) fail(section + "." + key, "unknown key");
            const std::string raw = trim(value.data());
            try {
                it->second.set(cfg, raw);
            } catch (const std::exception& e) {
                fail(section + "." + key, fmt::format("cannot parse '{}' ({})", raw, e.what()));
            }
            given.insert(section + "." + key);
        }
    }
    // bounds follow the laws unless set explicitly
    auto derive = [&](const CoefficientSpec& spec, const char* lo, double& l, const char* hi, double* h) {
        if (!given.count(std::string("material.") + lo)) l = spec.lower;
        if (h && !given.count(std::string("material.") + hi)) *h = spec.upper;
    };
    Params& p = cfg.params;
    derive(p.nu, "nu1", p.nu1, "nu2", &p.nu2);
    derive(p.m, "m1", p.m1, "m2", &p.m2);
    derive(p.eta, "eta1", p.eta1, "eta2", &p.eta2);
    derive(p.a, "a1", p.a1, "", nullptr);
    if (cfg.grid.nx < 4) fail("grid.nx", "must be at least 4");
    if (cfg.grid.ny < 4) fail("grid.ny", "must be at least 4");
    if (!(cfg.grid.lx > 0.0)) fail("grid.lx", "must be positive");
    if (!(cfg.grid.ly > 0.0)) fail("grid.ly", "must be positive");
    cfg.grid = Grid(cfg.grid.nx, cfg.grid.ny, cfg.grid.lx, cfg.grid.ly);
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open config " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

void validate_config(const RunConfig& cfg) {
    const Grid& g = cfg.grid;
    if (g.nx < 4) fail("grid.nx", "must be at least 4");
    if (g.ny < 4) fail("grid.ny", "must be at least 4");
    if (!(g.lx > 0.0)) fail("grid.lx", "must be positive");
    if (!(g.ly > 0.0)) fail("grid.ly", "must be positive");
    if (!(cfg.time.T > 0.0)) fail("time.T", "must be positive");
    if (cfg.time.N < 1) fail("time.N", "must be at least 1");
    try {
        validate_params(cfg.params);
    } catch (const Error& e) {
        fail("material", e.what());
    }
    const InitialSpec& in = cfg.initial;
    if (in.profile == InitialSpec::Profile::TanhDrop) {
        if (!(in.rx > 0.0 && in.ry > 0.0)) fail("initial.rx", "semi-axes must be positive");
        if (!(in.width > 0.0)) fail("initial.width", "must be positive");
        if (!(in.cx - in.rx > 0.0 && in.cx + in.rx < 1.0)) fail("initial.cx", "drop must stay inside the domain");
        if (!(in.cy - in.ry > 0.0 && in.cy + in.ry < 1.0)) fail("initial.cy", "drop must stay inside the domain");
    } else {
        if (!(std::abs(in.mean) < 1.0)) fail("initial.mean", "must lie in (-1, 1)");
        if (!(in.amplitude >= 0.0)) fail("initial.amplitude", "must be non-negative");
        if (!(std::abs(in.mean) + 2.0 * in.amplitude < 1.0))
            fail("initial.amplitude", "mean +- 2 amplitude must stay inside (-1, 1)");
    }
    if (cfg.forcing.kind != ForcingSpec::Kind::None && !std::isfinite(cfg.forcing.amplitude))
        fail("forcing.amplitude", "must be finite");
    const SolverOptions& s = cfg.solver;
    if (!(s.outer_tol > 0.0)) fail("solver.outer_tol", "must be positive");
    if (!(s.linear_tol > 0.0)) fail("solver.linear_tol", "must be positive");
    if (s.max_outer < 1) fail("solver.max_outer", "must be at least 1");
    if (!(s.damping > 0.0 && s.damping <= 1.0)) fail("solver.damping", "must lie in (0, 1]");
    if (s.max_newton < 1) fail("solver.max_newton", "must be at least 1");
    if (!(s.inclusion.tol > 0.0)) fail("solver.inclusion_tol", "must be positive");
    if (s.inclusion.max_iter < 1) fail("solver.inclusion_max_iter", "must be at least 1");
    const ExperimentSpec& e = cfg.experiment;
    if (!(e.tuple_amplitude > 0.0)) fail("experiment.tuple_amplitude", "must be positive");
    if (e.samples < 2) fail("experiment.samples", "must be at least 2");
    if (e.samples > cfg.time.N + 1) fail("experiment.samples", "exceeds the number of time levels");
    if (!(e.korn_inflation >= 1.0)) fail("experiment.korn_inflation", "must be at least 1");
    if (!(e.control_tol > 0.0)) fail("experiment.control_tol", "must be positive");
    auto positive_list = [](const std::vector<double>& v, const char* field, bool allow_zero) {
        if (v.empty()) fail(field, "must not be empty");
        for (double x : v)
            if (!(allow_zero ? x >= 0.0 : x > 0.0)) fail(field, fmt::format("invalid entry {:g}", x));
    };
    positive_list(e.alphas, "experiment.alphas", false);
    positive_list(e.gammas, "experiment.gammas", true);
    positive_list(e.mosco_alphas, "experiment.mosco_alphas", false);
    if (!(e.theta_control > 0.0 && e.theta_control < 1.0)) fail("experiment.theta_control", "must lie in (0, 1)");
    if (e.prox_cases < 1) fail("experiment.prox_cases", "must be at least 1");
    if (e.prox_pairs < 1) fail("experiment.prox_pairs", "must be at least 1");
    if (!(e.prox_resolution > 0.0)) fail("experiment.prox_resolution", "must be positive");
    if (cfg.checkpoint_every < 0) fail("output.checkpoint_every", "must be non-negative");
    if (cfg.out_dir.empty()) fail("output.dir", "must not be empty");
}

SimState initial_state(const RunConfig& cfg) {
    const Grid& g = cfg.grid;
    const InitialSpec& in = cfg.initial;
    SimState s(g);
    if (in.profile == InitialSpec::Profile::TanhDrop) {
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i) {
                const double x = (g.xc(i) - in.cx * g.lx) / (in.rx * g.lx);
                const double y = (g.yc(j) - in.cy * g.ly) / (in.ry * g.ly);
                s.phi(i, j) = -std::tanh((std::sqrt(x * x + y * y) - 1.0) / (in.width * std::sqrt(2.0)));
            }
    } else {
        std::mt19937_64 rng(cfg.seed);
        // 53-bit uniform in [-1, 1), independent of the library's distribution code
        auto uniform = [&] { return 2.0 * static_cast<double>(rng() >> 11) * 0x1.0p-53 - 1.0; };
        for (int c = 0; c < g.cells(); ++c) s.phi.values[c] = in.amplitude * uniform();
        s.phi.values.array() += in.mean - s.phi.values.mean();
    }
    s.mu = initial_mu(s.phi, cfg.params);
    return s;
}

Forcing make_forcing(const RunConfig& cfg) {
    Forcing f;
    const ForcingSpec fs = cfg.forcing;
    const double lx = cfg.grid.lx, ly = cfg.grid.ly;
    switch (fs.kind) {
        case ForcingSpec::Kind::None: break;
        case ForcingSpec::Kind::Shear:
            f.f = [fs, ly](double t, double, double y) {
                return Eigen::Vector2d(fs.amplitude * std::sin(M_PI * y / ly) * std::cos(fs.frequency * t), 0.0);
            };
            break;
        case ForcingSpec::Kind::Swirl:
            f.f = [fs, lx, ly](double t, double x, double y) {
                const double c = fs.amplitude * std::cos(fs.frequency * t);
                return Eigen::Vector2d(-c * (y - 0.5 * ly), c * (x - 0.5 * lx));
            };
            break;
    }
    return f;
}

std::string config_reference() {
    const RunConfig defaults;
    std::string out;
    for (const auto& [section, keys] : registry()) {
        out += "[" + section + "]\n";
        for (const auto& [key, k] : keys) out += fmt::format("; {}\n{} = {}\n", k.help, key, k.get(defaults));
        out += "\n";
    }
    return out;
}

}  // namespace geoflow
