// Desk-scale acceptance suite: one PASS/FAIL line per criterion on the default configuration.

#include "geoflow/experiments.hpp"
#include "geoflow/stepper.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <thread>

using namespace geoflow;

namespace {

// Pinned tolerances.
constexpr double kMeanTol = 1e-10;
constexpr double kComplementarityTol = 1e-9;
constexpr double kLerayTol = 1e-10;
constexpr double kSplitTol = 1e-12;
constexpr double kNeutralityTol = 1e-14;  // relative to |S|^2 |grad v|
constexpr double kIbpMinRatio = 1.7;      // first order: halving h should roughly halve the residual

struct Outcome {
    bool pass = true;
    std::string detail;
};

int failures = 0;

void criterion(int id, const std::string& title, const std::function<Outcome()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failures;
    fmt::print("{} {:>2} {:<34} {} ({:.1f} s)\n", o.pass ? "PASS" : "FAIL", id, title, o.detail, secs);
    std::fflush(stdout);
}

struct Family {
    std::size_t count = 0;
    std::size_t failed = 0;
    double min_slack = INFINITY;
};

Family family(const Report& r, const std::string& prefix) {
    Family f;
    for (const Check* c : r.find(prefix)) {
        ++f.count;
        if (!c->pass) ++f.failed;
        f.min_slack = std::min(f.min_slack, c->slack);
    }
    return f;
}

bool ok(const Family& f) { return f.count > 0 && f.failed == 0; }

std::string show(const std::string& name, const Family& f) {
    return fmt::format("{} {}/{} min slack {:.3e}", name, f.count - f.failed, f.count, f.min_slack);
}

Vec random_vec(std::mt19937& rng, int n) {
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    Vec v(n);
    for (int i = 0; i < n; ++i) v[i] = d(rng);
    return v;
}

VectorField random_velocity(std::mt19937& rng, const Grid& g) {
    VectorField v(g, random_vec(rng, g.xfaces()), random_vec(rng, g.yfaces()));
    v.clamp_walls();
    return v;
}

}  // namespace

int main() {
    const RunConfig cfg = load_config(GEOFLOW_DEFAULT_CONFIG);
    validate_config(cfg);
    const int workers = std::max(1u, std::thread::hardware_concurrency());
    fmt::print("default config: {}x{} grid, T={}, N={}\n", cfg.grid.nx, cfg.grid.ny, cfg.time.T, cfg.time.N);

    const Report ede = cmd_ede_check(cfg, workers);
    criterion(1, "discrete energy inequality", [&] {
        const Family e = family(ede, "ede"), c = family(ede, "negative-control");
        const auto& nc = ede.tables["negative_control"];
        return Outcome{ok(e) && ok(c) && e.count == static_cast<std::size_t>(cfg.time.N),
                       fmt::format("{}; defect {:.2e} default vs {:.2e} at tol {}", show("steps", e),
                                   nc["max_defect_default"].get<double>(), nc["max_defect_control"].get<double>(),
                                   cfg.experiment.control_tol)};
    });

    criterion(2, "energy monotonicity", [&] {
        const Family m = family(ede, "monotone"), n = family(ede, "energy-nonincreasing");
        // with a body force only the shifted energy has to decrease
        RunConfig forced = cfg;
        forced.forcing.kind = ForcingSpec::Kind::Shear;
        forced.forcing.amplitude = 0.5;
        forced.forcing.frequency = 1.0;
        const Report rf = cmd_ede_check(forced, workers);
        const Family mf = family(rf, "monotone"), ef = family(rf, "ede");
        return Outcome{ok(m) && ok(n) && ok(mf) && ok(ef),
                       fmt::format("{}; {}; forced {}", show("shifted", m), show("f=0", n), show("shifted", mf))};
    });

    RunConfig zero_cfg = cfg;
    zero_cfg.params.gamma = 0.0;
    const Report evs0 = cmd_evs_battery(zero_cfg, workers);
    criterion(3, "energy-variational battery", [&] {
        const Family e = family(evs0, "evs"), z = family(evs0, "evs-zero-identity");
        const auto& refine = evs0.tables["battery"]["refinement"];
        double max_tol = 0.0;
        std::size_t tuples = evs0.tables["battery"]["tuples"].size();
        for (const Check* c : evs0.find("evs")) max_tol = std::max(max_tol, c->tol_discretization);
        const bool sizes = tuples >= 10 && e.count >= 10 * 45 && !refine.is_null();
        return Outcome{ok(e) && ok(z) && sizes,
                       fmt::format("{} tuples, {}; max tol_discretization {:.3e}; zero-tuple identity {:.2e}", tuples,
                                   show("rows", e), max_tol, evs0.tables["battery"]["zero_identity_error"].get<double>())};
    });

    RunConfig gamma_cfg = cfg;
    gamma_cfg.params.gamma = 0.1;
    const Report evsg = cmd_evs_battery(gamma_cfg, workers);
    criterion(4, "weight regimes", [&] {
        const Family g = family(evsg, "evs"), z = family(evs0, "evs");
        const bool modes = evsg.tables["battery"]["weight"] == "zero" && evs0.tables["battery"]["weight"] == "korn";
        return Outcome{ok(g) && ok(z) && modes,
                       fmt::format("gamma=0.1 zero weight {}/{}; gamma=0 korn weight (k={:.4f}) {}/{}",
                                   g.count - g.failed, g.count, evs0.tables["battery"]["korn"]["k_omega"].get<double>(),
                                   z.count - z.failed, z.count)};
    });

    const Report prox = cmd_prox_oracle(cfg, workers);
    criterion(5, "prox correctness", [&] {
        const Family o = family(prox, "prox-oracle"), n = family(prox, "prox-nonexpansive");
        const std::size_t cases = prox.tables["oracle"]["cases"].size();
        const int pairs = prox.tables["nonexpansive"]["pairs"].get<int>();
        return Outcome{ok(o) && ok(n) && cases >= 100 && pairs >= 1000,
                       fmt::format("{} cases, max error {:.2e} (tol 2e-3); {} pairs, max ratio {:.3f}", cases,
                                   prox.tables["oracle"]["max_error"].get<double>(), pairs,
                                   prox.tables["nonexpansive"]["max_ratio"].get<double>())};
    });

    criterion(6, "constraint preservation", [&] {
        const double alpha = cfg.params.alpha;
        double max_abs = 0.0, drift = 0.0;
        const Trajectory& tr = *ede.trajectory;
        const double m0 = mean_value(tr.states.front().phi);
        for (const SimState& s : tr.states) {
            max_abs = std::max(max_abs, norm_linf(s.phi));
            drift = std::max(drift, std::abs(mean_value(s.phi) - m0));
        }
        // a sharp drop so the bounds are active from the first step on
        RunConfig sharp = cfg;
        sharp.params.alpha = 0.0;
        sharp.initial.width = 0.1;
        const Trajectory ob = run(initial_state(sharp), sharp.params, sharp.time, make_forcing(sharp), sharp.solver);
        double ob_abs = 0.0, comp = 0.0, ob_drift = 0.0;
        long active = 0;
        bool sign = true;
        const double o0 = mean_value(ob.states.front().phi);
        for (const SimState& s : ob.states) {
            ob_abs = std::max(ob_abs, norm_linf(s.phi));
            ob_drift = std::max(ob_drift, std::abs(mean_value(s.phi) - o0));
            for (int c = 0; c < s.phi.grid.cells(); ++c) {
                const double ph = s.phi.values[c], b = s.beta.values[c];
                comp = std::max(comp, std::abs(b) * std::min(1.0 - std::abs(ph), 1.0));
                if ((ph == 1.0 && b < 0.0) || (ph == -1.0 && b > 0.0)) sign = false;
                if (std::abs(ph) == 1.0) ++active;
            }
        }
        const bool pass = ob.complete && max_abs < 1.0 + alpha && drift <= kMeanTol && ob_abs <= 1.0 &&
                          comp <= kComplementarityTol && sign && ob_drift <= kMeanTol && active > 0;
        return Outcome{pass, fmt::format("alpha={}: max|phi| {:.6f}, mean drift {:.1e}; obstacle: max|phi| {:.15g}, "
                                         "active cells {}, complementarity {:.1e}, mean drift {:.1e}",
                                         alpha, max_abs, drift, ob_abs, active, comp, ob_drift)};
    });

    const Report mosco = cmd_mosco(cfg, workers);
    const Report sweep = cmd_alpha_sweep(cfg, workers);
    criterion(7, "potential limit probes", [&] {
        const Family cf = family(mosco, "mosco-"), d = family(sweep, "alpha-distance"),
                     e = family(sweep, "alpha-energy-decreasing");
        return Outcome{ok(cf) && ok(d) && ok(e), fmt::format("recovery bound checks {}/{}; {}; {}", cf.count - cf.failed,
                                                             cf.count, show("distance", d), show("energy", e))};
    });

    criterion(8, "scaled test-function bounds", [&] {
        const Family s = family(mosco, "scaled-");
        std::string tail;
        for (const char* k : {"scaled-majorant-d", "scaled-decreasing-d", "scaled-control-d3-persists"}) {
            const Family f = family(mosco, k);
            tail += fmt::format(" {}:{}/{}", k, f.count - f.failed, f.count);
        }
        return Outcome{ok(s) && family(mosco, "scaled-control").count == 1, fmt::format("{} checks;{}", s.count, tail)};
    });

    criterion(9, "alpha-uniform estimates", [&] {
        const Family u = family(sweep, "alpha-uniform");
        return Outcome{ok(u) && u.count >= 7 * (cfg.experiment.alphas.size() - 1), show("columns x rows", u)};
    });

    criterion(10, "variational implies dissipative", [&] {
        const Family a = family(evs0, "dissipative"), b = family(evsg, "dissipative");
        return Outcome{ok(a) && ok(b), fmt::format("{}; {}", show("gamma=0", a), show("gamma=0.1", b))};
    });

    criterion(11, "structural identities", [&] {
        std::mt19937 rng(2024);
        const Grid g(cfg.grid.nx, cfg.grid.ny, cfg.grid.lx, cfg.grid.ly);
        double neutral = 0.0, split = 0.0, leray = 0.0;
        for (int k = 0; k < 20; ++k) {
            const VectorField v = random_velocity(rng, g);
            const SymTensorField s(g, random_vec(rng, g.cells()), random_vec(rng, g.cells()));
            const double scale = norm_linf(s) * norm_linf(s) * std::max(1.0, std::sqrt(velocity_gradient_sq(v)));
            neutral = std::max(neutral, jaumann_neutrality(v, s) / scale);
            const SymSkwParts p = sym_skw_split(v);
            const TensorField t = velocity_gradient(v);
            split = std::max({split, (p.sym.xx + p.skw.xx - t.xx).lpNorm<Eigen::Infinity>(),
                              (p.sym.xy + p.skw.xy - t.xy).lpNorm<Eigen::Infinity>(),
                              (p.sym.yx + p.skw.yx - t.yx).lpNorm<Eigen::Infinity>(),
                              (p.sym.yy + p.skw.yy - t.yy).lpNorm<Eigen::Infinity>(),
                              (p.sym.xy - p.sym.yx).lpNorm<Eigen::Infinity>(),
                              (p.skw.xy + p.skw.yx).lpNorm<Eigen::Infinity>()});
            const Projection a = leray_project(v), b = leray_project(a.v);
            leray = std::max(leray, norm_linf(VectorField(g, b.v.x - a.v.x, b.v.y - a.v.y)));
        }
        auto residual = [&](int n) {
            const Grid h(n, n, cfg.grid.lx, cfg.grid.ly);
            const TupleSupport sup{0.5, 0.5, 0.4};
            TestTuple a = make_test_tuple(TupleKind::Mixed, 1.0, sup, 1.0);
            TestTuple b = make_test_tuple(TupleKind::Stress, 1.0, {0.45, 0.55, 0.35}, 1.0);
            b.a11 = -0.4;
            b.a12 = 1.0;
            const TupleFields fa = a.spatial(h), fb = b.spatial(h);
            return jaumann_ibp_check(fa.v, fa.S, fb.S).residual;
        };
        const double r1 = residual(cfg.grid.nx), r2 = residual(2 * cfg.grid.nx), r3 = residual(4 * cfg.grid.nx);
        const bool pass = neutral <= kNeutralityTol && split <= kSplitTol && leray <= kLerayTol &&
                          r1 / r2 >= kIbpMinRatio && r2 / r3 >= kIbpMinRatio;
        return Outcome{pass, fmt::format("neutrality {:.1e}, sym/skw {:.1e}, leray {:.1e}, by-parts residuals "
                                         "{:.2e} {:.2e} {:.2e} (ratios {:.2f} {:.2f})",
                                         neutral, split, leray, r1, r2, r3, r1 / r2, r2 / r3)};
    });

    const Report semi = cmd_semiflow(cfg, workers);
    criterion(12, "semi-flow restart", [&] {
        const Family f = family(semi, "semiflow-"), r = family(semi, "restart-");
        return Outcome{ok(f) && ok(r), fmt::format("final mismatch {:.1e}; {}; {}",
                                                   semi.tables["semiflow"]["final_mismatch"].get<double>(),
                                                   show("semiflow", f), show("restart", r))};
    });

    fmt::print("{} of 12 criteria passed\n", 12 - failures);
    return failures == 0 ? 0 : 1;
}
