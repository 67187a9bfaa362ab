#include "geoflow/experiments.hpp"

#include "geoflow/plasticity.hpp"

#include <fmt/format.h>
#include <tbb/parallel_for.h>
#include <tbb/info.h>
#include <tbb/task_arena.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>

namespace geoflow {

using nlohmann::json;

// ---------------------------------------------------------------- report

bool Report::pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
}

std::vector<const Check*> Report::find(const std::string& prefix) const {
    std::vector<const Check*> out;
    for (const auto& c : checks)
        if (c.name.rfind(prefix, 0) == 0) out.push_back(&c);
    return out;
}

json Report::to_json() const {
    json j;
    j["command"] = command;
    j["pass"] = pass();
    j["config"] = config;
    json arr = json::array();
    for (const auto& c : checks) {
        json e;
        e["name"] = c.name;
        e["interval"] = c.s_idx >= 0 ? json{{"s_idx", c.s_idx}, {"t_idx", c.t_idx}, {"s", c.t0}, {"t", c.t1}} : json();
        e["tuple-id"] = c.tuple.empty() ? json() : json(c.tuple);
        e["slack"] = c.slack;
        e["tolerances"] = {{"solver", c.tol_solver}, {"discretization", c.tol_discretization}};
        e["pass"] = c.pass;
        arr.push_back(e);
    }
    j["checks"] = arr;
    j["tables"] = tables;
    return j;
}

namespace {

Check make_check(std::string name, double slack, double tol_solver = 0.0, double tol_disc = 0.0) {
    Check c;
    c.name = std::move(name);
    c.slack = slack;
    c.tol_solver = tol_solver;
    c.tol_discretization = tol_disc;
    c.pass = std::isfinite(slack) && slack >= -(tol_solver + tol_disc);
    return c;
}

Check interval_check(std::string name, const Trajectory& tr, int s, int t, double slack, double tol_solver,
                     double tol_disc = 0.0) {
    Check c = make_check(std::move(name), slack, tol_solver, tol_disc);
    c.s_idx = s;
    c.t_idx = t;
    c.t0 = tr.states[s].t;
    c.t1 = tr.states[t].t;
    return c;
}

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
    if (workers <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    tbb::task_arena arena(std::min(workers, tbb::info::default_concurrency()));
    arena.execute([&] { tbb::parallel_for(0, n, [&](int i) { fn(i); }); });
}

json coef_json(const CoefficientSpec& c) {
    if (c.kind == CoefficientSpec::Kind::Constant) return c.c0;
    return {{"affine", {c.c0, c.c1, c.lower, c.upper}}};
}

std::shared_ptr<const Trajectory> simulate(const RunConfig& cfg) {
    return std::make_shared<const Trajectory>(
        run(initial_state(cfg), cfg.params, cfg.time, make_forcing(cfg), cfg.solver));
}

// A failed run is a failed check; the caller stops there.
bool require_complete(Report& r, const Trajectory& tr, const std::string& label) {
    if (tr.complete) return true;
    Check c = make_check("run-complete" + (label.empty() ? "" : ":" + label), -1.0);
    c.pass = false;
    r.checks.push_back(c);
    r.tables["failure" + (label.empty() ? "" : ":" + label)] = tr.failure;
    return false;
}

double max_abs_energy(const Trajectory& tr) {
    double m = 0.0;
    for (const auto& rep : tr.reports) m = std::max({m, std::abs(rep.energy_before), std::abs(rep.energy_after)});
    return m;
}

double state_mismatch(const SimState& a, const SimState& b) {
    double m = 0.0;
    m = std::max(m, (a.v.x - b.v.x).lpNorm<Eigen::Infinity>());
    m = std::max(m, (a.v.y - b.v.y).lpNorm<Eigen::Infinity>());
    m = std::max(m, (a.S.s11 - b.S.s11).lpNorm<Eigen::Infinity>());
    m = std::max(m, (a.S.s12 - b.S.s12).lpNorm<Eigen::Infinity>());
    m = std::max(m, (a.phi.values - b.phi.values).lpNorm<Eigen::Infinity>());
    m = std::max(m, (a.mu.values - b.mu.values).lpNorm<Eigen::Infinity>());
    return m;
}

// ---------------------------------------------------------------- energy checks

void ede_checks(Report& r, const Trajectory& tr, const EnergyTrace& trace, bool unforced, const std::string& tag) {
    for (std::size_t k = 0; k < tr.reports.size(); ++k) {
        const StepReport& rep = tr.reports[k];
        const int s = static_cast<int>(k), t = s + 1;
        r.checks.push_back(interval_check(tag + "ede", tr, s, t, rep.slack, 1e-8 * (1.0 + std::abs(rep.energy_before))));
        r.checks.push_back(interval_check(tag + "monotone", tr, s, t,
                                          trace.rows[k].monotone - trace.rows[k + 1].monotone, 1e-8));
        if (unforced)
            r.checks.push_back(interval_check(tag + "energy-nonincreasing", tr, s, t,
                                              trace.rows[k].total - trace.rows[k + 1].total, 1e-8));
    }
}

json step_table(const Trajectory& tr) {
    json rows = json::array();
    for (std::size_t k = 0; k < tr.reports.size(); ++k) {
        const StepReport& rep = tr.reports[k];
        rows.push_back({{"step", k + 1},
                        {"E_before", rep.energy_before},
                        {"E_after", rep.energy_after},
                        {"slack", rep.slack},
                        {"numerical_dissipation", rep.numerical_diss},
                        {"defect", rep.defect},
                        {"outer_iterations", rep.outer_iterations},
                        {"residual", std::max({rep.res_ch, rep.res_stress, rep.res_momentum})}});
    }
    return rows;
}

double max_defect(const Trajectory& tr) {
    double m = 0.0;
    for (const auto& rep : tr.reports) m = std::max(m, std::abs(rep.defect));
    return m;
}

// ---------------------------------------------------------------- EVS battery

WeightMode weight_mode(const Params& p) { return p.gamma > 0.0 ? WeightMode::Zero : WeightMode::Korn; }

struct BatteryEval {
    KornEstimate korn;
    EnergyTrace trace;
    std::vector<EvsRow> evs;
    std::vector<EvsRow> diss;
};

std::vector<TestTuple> battery_tuples(const RunConfig& cfg) {
    std::vector<TestTuple> t{make_test_tuple(TupleKind::Zero, 0.0, {}, cfg.time.T, "zero")};
    for (auto& tt : default_battery(cfg.grid, cfg.time.T, cfg.experiment.tuple_amplitude)) t.push_back(tt);
    return t;
}

BatteryEval evaluate_battery(const RunConfig& cfg, const Trajectory& tr, const std::vector<int>& samples,
                             bool with_dissipative) {
    BatteryEval b;
    b.korn = estimate_korn(cfg.grid, cfg.experiment.korn_inflation);
    b.trace = auxiliary_energy(tr, cfg.params, b.korn.k_omega);
    const RegularityWeightCfg wc{b.korn.k_omega, cfg.params.nu1};
    const PotentialFamily fam = family_of(cfg.params);
    const auto tuples = battery_tuples(cfg);
    b.evs = evs_battery(tr, b.trace, tuples, fam, cfg.params, samples, weight_mode(cfg.params), wc);
    if (with_dissipative)
        b.diss = dissipative_battery(tr, tuples, fam, cfg.params, samples, weight_mode(cfg.params), wc);
    return b;
}

struct BatteryOutcome {
    BatteryEval base;
    std::vector<double> tol_disc;  ///< per EVS row
    double tol_solver = 0.0;
    json refinement;
};

// Base rows plus the discretization tolerance from one grid coarsening and one time refinement.
BatteryOutcome battery_with_tolerance(Report& r, const RunConfig& cfg, const Trajectory& tr, int workers,
                                      const std::string& tag) {
    BatteryOutcome out;
    const int n = cfg.time.N;
    const std::vector<int> samples = time_samples(n, cfg.experiment.samples);
    out.tol_solver = 1e-8 * (1.0 + max_abs_energy(tr));
    std::vector<int> fine_samples = samples;
    for (int& s : fine_samples) s *= 2;

    RunConfig coarse = cfg, fine = cfg;
    coarse.grid = Grid(std::max(4, cfg.grid.nx / 2), std::max(4, cfg.grid.ny / 2), cfg.grid.lx, cfg.grid.ly);
    fine.time.N = 2 * n;
    const bool refine = cfg.experiment.refine;
    BatteryEval evals[3];
    std::shared_ptr<const Trajectory> trs[3];
    parallel_for(refine ? 3 : 1, workers, [&](int i) {
        if (i == 0) {
            evals[0] = evaluate_battery(cfg, tr, samples, true);
            return;
        }
        const RunConfig& c = i == 1 ? coarse : fine;
        trs[i] = simulate(c);
        if (trs[i]->complete) evals[i] = evaluate_battery(c, *trs[i], i == 1 ? samples : fine_samples, false);
    });
    out.base = std::move(evals[0]);
    out.tol_disc.assign(out.base.evs.size(), 0.0);
    if (refine) {
        bool ok = require_complete(r, *trs[1], tag + "coarse-grid");
        ok = require_complete(r, *trs[2], tag + "fine-time") && ok;
        if (ok) {
            double dg = 0.0, dt = 0.0;
            for (std::size_t i = 0; i < out.base.evs.size(); ++i) {
                const double g = std::abs(evals[1].evs[i].slack - out.base.evs[i].slack);
                const double t = std::abs(evals[2].evs[i].slack - out.base.evs[i].slack);
                // first-order Richardson estimates of the base error in each direction
                out.tol_disc[i] = 2.0 * t + g;
                dg = std::max(dg, g);
                dt = std::max(dt, t);
            }
            out.refinement = {{"coarse_grid", {coarse.grid.nx, coarse.grid.ny}},
                              {"fine_steps", fine.time.N},
                              {"max_grid_change", dg},
                              {"max_time_change", dt},
                              {"rule", "2*|time change| + |grid change| per row"}};
        }
    }
    return out;
}

void battery_checks(Report& r, const Trajectory& tr, const BatteryOutcome& b, const std::string& tag) {
    std::map<std::string, double> min_slack, max_tol;
    std::map<std::string, bool> tuple_pass;
    for (std::size_t i = 0; i < b.base.evs.size(); ++i) {
        const EvsRow& row = b.base.evs[i];
        Check c = interval_check(tag + "evs", tr, row.s_idx, row.t_idx, row.slack, b.tol_solver, b.tol_disc[i]);
        c.tuple = row.tuple;
        r.checks.push_back(c);
        auto it = min_slack.find(row.tuple);
        min_slack[row.tuple] = it == min_slack.end() ? row.slack : std::min(it->second, row.slack);
        max_tol[row.tuple] = std::max(max_tol[row.tuple], b.tol_disc[i]);
        tuple_pass.try_emplace(row.tuple, true);
        tuple_pass[row.tuple] = tuple_pass[row.tuple] && c.pass;
    }
    // zero tuple against the per-step budget: sum of step slacks plus h (<xi, S> - P)
    double worst = 0.0, scale = 1.0;
    for (const auto& row : b.base.evs) {
        if (row.tuple != "zero") continue;
        double expected = 0.0;
        for (int k = row.s_idx; k < row.t_idx; ++k) {
            const StepReport& rep = tr.reports[k];
            expected += rep.slack + tr.h * (rep.diss_plastic - rep.plastic_value);
        }
        worst = std::max(worst, std::abs(row.slack - expected));
        scale = std::max(scale, std::abs(expected));
    }
    r.checks.push_back(make_check(tag + "evs-zero-identity", -worst, 1e-10 * scale));

    std::map<std::string, double> min_diss;
    for (const auto& row : b.base.diss) {
        if (!tuple_pass[row.tuple]) continue;
        Check c = interval_check(tag + "dissipative", tr, row.s_idx, row.t_idx, row.slack, b.tol_solver,
                                 max_tol[row.tuple]);
        c.tuple = row.tuple;
        r.checks.push_back(c);
        auto it = min_diss.find(row.tuple);
        min_diss[row.tuple] = it == min_diss.end() ? row.slack : std::min(it->second, row.slack);
    }
    json summary = json::array();
    for (const auto& [id, s] : min_slack)
        summary.push_back({{"tuple", id},
                           {"min_evs_slack", s},
                           {"max_tol_discretization", max_tol[id]},
                           {"min_dissipative_slack", min_diss.count(id) ? json(min_diss[id]) : json()}});
    json& t = r.tables[tag + "battery"];
    t["tuples"] = summary;
    t["korn"] = {{"k_omega", b.base.korn.k_omega},
                 {"raw", b.base.korn.raw},
                 {"lambda_min", b.base.korn.lambda_min},
                 {"iterations", b.base.korn.iterations}};
    t["refinement"] = b.refinement;
    t["tol_solver"] = b.tol_solver;
    t["zero_identity_error"] = worst;
}

// ---------------------------------------------------------------- sweeps

struct SweepRow {
    double key = 0.0;
    std::shared_ptr<const Trajectory> tr;
    double v = 0.0, S = 0.0, grad_phi = 0.0, grad_mu = 0.0, F = 0.0, lap_phi = 0.0, beta = 0.0;
    double stress_diffusion = 0.0;
};

SweepRow sweep_norms(double key, std::shared_ptr<const Trajectory> tr, const Params& p) {
    SweepRow r;
    r.key = key;
    r.tr = tr;
    const double h = tr->h;
    for (std::size_t k = 0; k < tr->states.size(); ++k) {
        const SimState& s = tr->states[k];
        const double area = s.grid().cell_area();
        r.v = std::max(r.v, norm_l2(s.v));
        r.S = std::max(r.S, norm_l2(s.S));
        r.grad_phi = std::max(r.grad_phi, std::sqrt(face_dirichlet_form(s.phi)));
        double F = 0.0;
        for (int c = 0; c < s.grid().cells(); ++c) F += entropy_F(s.phi.values[c], p.m);
        r.F = std::max(r.F, F * area);
        if (k == 0) continue;
        r.grad_mu += h * face_dirichlet_form(s.mu);
        r.lap_phi += h * norm_l2(apply_laplacian(s.phi)) * norm_l2(apply_laplacian(s.phi));
        r.beta += h * norm_l2(s.beta) * norm_l2(s.beta);
        r.stress_diffusion += h * p.gamma * face_dirichlet_form(s.S);
    }
    r.grad_mu = std::sqrt(r.grad_mu);
    r.lap_phi = std::sqrt(r.lap_phi);
    r.beta = std::sqrt(r.beta);
    return r;
}

double linf_l2_distance(const Trajectory& a, const Trajectory& b) {
    double m = 0.0;
    for (std::size_t k = 0; k < std::min(a.states.size(), b.states.size()); ++k)
        m = std::max(m, norm_l2(ScalarField(a.states[k].grid(), a.states[k].phi.values - b.states[k].phi.values)));
    return m;
}

}  // namespace

json config_json(const RunConfig& cfg) {
    const Params& p = cfg.params;
    json j;
    j["grid"] = {{"nx", cfg.grid.nx}, {"ny", cfg.grid.ny}, {"lx", cfg.grid.lx}, {"ly", cfg.grid.ly}};
    j["time"] = {{"T", cfg.time.T}, {"N", cfg.time.N}};
    j["material"] = {{"rho1", p.rho1},   {"rho2", p.rho2},   {"nu", coef_json(p.nu)},
                     {"eta", coef_json(p.eta)}, {"m", coef_json(p.m)}, {"a", coef_json(p.a)},
                     {"nu1", p.nu1},     {"nu2", p.nu2},     {"eta1", p.eta1},
                     {"eta2", p.eta2},   {"m1", p.m1},       {"m2", p.m2},
                     {"a1", p.a1},       {"sigma_yield", p.sigma_yield}, {"gamma", p.gamma},
                     {"alpha", p.alpha}, {"epsilon", p.epsilon}, {"kappa", p.kappa},
                     {"theta", p.theta},
                     {"flux", p.flux_mode == FluxMode::Discrete ? "discrete" : "continuous"}};
    const InitialSpec& in = cfg.initial;
    j["initial"] = {{"profile", in.profile == InitialSpec::Profile::TanhDrop ? "tanh_drop" : "perturbed_constant"},
                    {"cx", in.cx},     {"cy", in.cy},   {"rx", in.rx},
                    {"ry", in.ry},     {"width", in.width}, {"mean", in.mean},
                    {"amplitude", in.amplitude}};
    const char* kinds[] = {"none", "shear", "swirl"};
    j["forcing"] = {{"kind", kinds[static_cast<int>(cfg.forcing.kind)]},
                    {"amplitude", cfg.forcing.amplitude},
                    {"frequency", cfg.forcing.frequency}};
    const SolverOptions& s = cfg.solver;
    j["solver"] = {{"outer_tol", s.outer_tol},   {"linear_tol", s.linear_tol},
                   {"max_outer", s.max_outer},   {"damping", s.damping},
                   {"adaptive", s.adaptive},     {"max_newton", s.max_newton},
                   {"inclusion_tol", s.inclusion.tol}, {"inclusion_max_iter", s.inclusion.max_iter}};
    const ExperimentSpec& e = cfg.experiment;
    j["experiment"] = {{"tuple_amplitude", e.tuple_amplitude}, {"samples", e.samples},
                       {"refine", e.refine},                   {"korn_inflation", e.korn_inflation},
                       {"control_tol", e.control_tol},         {"alphas", e.alphas},
                       {"gammas", e.gammas},                   {"mosco_alphas", e.mosco_alphas},
                       {"theta_control", e.theta_control},     {"prox_cases", e.prox_cases},
                       {"prox_pairs", e.prox_pairs},           {"prox_resolution", e.prox_resolution}};
    j["output"] = {{"dir", cfg.out_dir}, {"checkpoint_every", cfg.checkpoint_every}};
    j["run"] = {{"seed", cfg.seed}};
    return j;
}

// ---------------------------------------------------------------- commands

Report cmd_ede_check(const RunConfig& cfg, int workers) {
    validate_config(cfg);
    Report r;
    r.command = "ede_check";
    r.config = config_json(cfg);
    RunConfig control = cfg;
    control.solver.outer_tol = cfg.experiment.control_tol;
    control.solver.linear_tol = cfg.experiment.control_tol;
    control.solver.inclusion.tol = cfg.experiment.control_tol;
    std::shared_ptr<const Trajectory> trs[2];
    parallel_for(2, workers, [&](int i) { trs[i] = simulate(i == 0 ? cfg : control); });
    r.trajectory = trs[0];
    if (!require_complete(r, *trs[0], "")) return r;
    const KornEstimate korn = estimate_korn(cfg.grid, cfg.experiment.korn_inflation);
    const EnergyTrace trace = auxiliary_energy(*trs[0], cfg.params, korn.k_omega);
    r.traces.push_back({"", trace});
    ede_checks(r, *trs[0], trace, cfg.forcing.kind == ForcingSpec::Kind::None, "");
    r.tables["steps"] = step_table(*trs[0]);
    r.tables["monotone_constant"] = trace.c;

    // negative control: a loose solve must leave a visible defect in the budget
    if (require_complete(r, *trs[1], "control")) {
        const double base = max_defect(*trs[0]), loose = max_defect(*trs[1]);
        double min_slack = kInf;
        for (const auto& rep : trs[1]->reports) min_slack = std::min(min_slack, rep.slack);
        r.checks.push_back(make_check("negative-control", loose - 100.0 * std::max(base, 1e-15)));
        r.tables["negative_control"] = {{"solver_tol", cfg.experiment.control_tol},
                                        {"max_defect_default", base},
                                        {"max_defect_control", loose},
                                        {"min_slack_control", min_slack},
                                        {"steps", step_table(*trs[1])}};
    }
    return r;
}

Report cmd_evs_battery(const RunConfig& cfg, int workers) {
    validate_config(cfg);
    Report r;
    r.command = "evs_battery";
    r.config = config_json(cfg);
    const auto tr = simulate(cfg);
    r.trajectory = tr;
    if (!require_complete(r, *tr, "")) return r;
    const BatteryOutcome b = battery_with_tolerance(r, cfg, *tr, workers, "");
    r.traces.push_back({"", b.base.trace});
    battery_checks(r, *tr, b, "");
    r.tables["battery"]["weight"] = weight_mode(cfg.params) == WeightMode::Korn ? "korn" : "zero";
    return r;
}

Report cmd_alpha_sweep(const RunConfig& cfg, int workers) {
    validate_config(cfg);
    Report r;
    r.command = "alpha_sweep";
    r.config = config_json(cfg);
    std::vector<double> alphas = cfg.experiment.alphas;
    std::sort(alphas.begin(), alphas.end(), std::greater<>());
    alphas.push_back(0.0);  // obstacle limit
    std::vector<SweepRow> rows(alphas.size());
    parallel_for(static_cast<int>(alphas.size()), workers, [&](int i) {
        RunConfig c = cfg;
        c.params.alpha = alphas[i];
        rows[i] = sweep_norms(alphas[i], simulate(c), c.params);
    });
    for (std::size_t i = 0; i < rows.size(); ++i)
        if (!require_complete(r, *rows[i].tr, fmt::format("alpha={:g}", alphas[i]))) return r;
    r.trajectory = rows.front().tr;

    json table = json::array();
    for (const auto& row : rows)
        table.push_back({{"alpha", row.key},      {"v_LinfL2", row.v},      {"S_LinfL2", row.S},
                         {"grad_phi_LinfL2", row.grad_phi}, {"grad_mu_L2L2", row.grad_mu},
                         {"F_sup", row.F},        {"lap_phi_L2L2", row.lap_phi}, {"beta_L2L2", row.beta}});
    r.tables["uniform_bounds"] = table;

    // every column of every smaller alpha within twice the reference row
    const SweepRow& ref = rows.front();
    const std::vector<std::pair<const char*, double SweepRow::*>> cols{
        {"v", &SweepRow::v},         {"S", &SweepRow::S},     {"grad_phi", &SweepRow::grad_phi},
        {"grad_mu", &SweepRow::grad_mu}, {"F", &SweepRow::F}, {"lap_phi", &SweepRow::lap_phi},
        {"beta", &SweepRow::beta}};
    for (std::size_t i = 1; i + 1 < rows.size(); ++i)
        for (const auto& [name, m] : cols) {
            Check c = make_check(fmt::format("alpha-uniform:{}", name), 2.0 * ref.*m - rows[i].*m);
            c.tuple = fmt::format("alpha={:g}", rows[i].key);
            r.checks.push_back(c);
        }

    json cauchy = json::array();
    for (std::size_t i = 0; i + 1 < rows.size(); ++i)
        cauchy.push_back({{"alpha", rows[i].key},
                          {"next", rows[i + 1].key},
                          {"phi_diff_LinfL2", linf_l2_distance(*rows[i].tr, *rows[i + 1].tr)},
                          {"phi_diff_to_obstacle", linf_l2_distance(*rows[i].tr, *rows.back().tr)}});
    r.tables["cauchy"] = cauchy;

    // liminf probe on the relaxed runs
    std::vector<std::vector<ScalarField>> phis;
    std::vector<double> probe_alphas;
    for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
        std::vector<ScalarField> seq;
        for (std::size_t k = 1; k < rows[i].tr->states.size(); ++k) seq.push_back(rows[i].tr->states[k].phi);
        phis.push_back(std::move(seq));
        probe_alphas.push_back(rows[i].key);
    }
    const auto probe = mosco_liminf_probe(phis, probe_alphas, rows.front().tr->h);
    json pt = json::array();
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const auto& p = probe[i];
        pt.push_back({{"alpha", p.alpha},
                      {"energy", p.finite ? json(p.energy) : json("inf")},
                      {"max_distance", p.max_distance}});
        Check c = make_check("alpha-distance", p.alpha - p.max_distance,
                             4.0 * std::numeric_limits<double>::epsilon() * (1.0 + p.alpha));
        c.tuple = fmt::format("alpha={:g}", p.alpha);
        r.checks.push_back(c);
        if (i > 0) {
            Check e = make_check("alpha-energy-decreasing", probe[i - 1].energy - p.energy);
            e.tuple = fmt::format("alpha={:g}", p.alpha);
            r.checks.push_back(e);
        }
    }
    r.tables["mosco_probe"] = pt;
    const KornEstimate korn = estimate_korn(cfg.grid, cfg.experiment.korn_inflation);
    for (const auto& row : rows) {
        Params p = cfg.params;
        p.alpha = row.key;
        r.traces.push_back({fmt::format("alpha_{:g}", row.key), auxiliary_energy(*row.tr, p, korn.k_omega)});
    }
    return r;
}

Report cmd_gamma_sweep(const RunConfig& cfg, int workers) {
    validate_config(cfg);
    Report r;
    r.command = "gamma_sweep";
    r.config = config_json(cfg);
    std::vector<double> gammas = cfg.experiment.gammas;
    gammas.push_back(0.0);
    std::sort(gammas.begin(), gammas.end(), std::greater<>());
    gammas.erase(std::unique(gammas.begin(), gammas.end()), gammas.end());
    std::vector<SweepRow> rows(gammas.size());
    parallel_for(static_cast<int>(gammas.size()), workers, [&](int i) {
        RunConfig c = cfg;
        c.params.gamma = gammas[i];
        rows[i] = sweep_norms(gammas[i], simulate(c), c.params);
    });
    for (std::size_t i = 0; i < rows.size(); ++i)
        if (!require_complete(r, *rows[i].tr, fmt::format("gamma={:g}", gammas[i]))) return r;

    json table = json::array();
    for (const auto& row : rows)
        table.push_back({{"gamma", row.key}, {"gamma_grad_S_L2L2", row.stress_diffusion}, {"S_LinfL2", row.S}});
    r.tables["gamma"] = table;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        Check c = make_check("gamma-diffusion-decreasing", rows[i - 1].stress_diffusion - rows[i].stress_diffusion);
        c.tuple = fmt::format("gamma={:g}", rows[i].key);
        r.checks.push_back(c);
    }
    // no blow-up towards the limit, and the gamma-independent energy bound |S|^2 <= 2 E_0
    const double e0 = total_energy(rows.back().tr->states[0], family_of(cfg.params), cfg.params).total();
    for (const auto& row : rows) {
        Check c = make_check("gamma-stress-bounded", 2.0 * rows.back().S - row.S);
        c.tuple = fmt::format("gamma={:g}", row.key);
        r.checks.push_back(c);
        Check e = make_check("gamma-stress-energy-bound", std::sqrt(2.0 * e0) - row.S);
        e.tuple = c.tuple;
        r.checks.push_back(e);
    }

    RunConfig zero = cfg;
    zero.params.gamma = 0.0;
    const auto& tr0 = rows.back().tr;
    r.trajectory = tr0;
    const BatteryOutcome b = battery_with_tolerance(r, zero, *tr0, workers, "gamma0-");
    r.traces.push_back({"gamma_0", b.base.trace});
    battery_checks(r, *tr0, b, "gamma0-");
    r.tables["gamma0-battery"]["weight"] = "korn";
    return r;
}

Report cmd_mosco(const RunConfig& cfg, int) {
    validate_config(cfg);
    Report r;
    r.command = "mosco";
    r.config = config_json(cfg);
    std::vector<double> alphas = cfg.experiment.mosco_alphas;
    std::sort(alphas.begin(), alphas.end(), std::greater<>());

    json rec = json::array();
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        const double a = alphas[i];
        const double value = mosco_recovery_bound(a);
        // closed form expanded term by term
        const double closed = a * a * std::log(a + 2.0) + 2.0 * a * std::log(a + 2.0) + a * a * std::log(a);
        rec.push_back({{"alpha", a}, {"bound", value}, {"closed_form", closed}});
        Check c = make_check("mosco-closed-form", -std::abs(value - closed), 1e-14 * std::abs(closed));
        c.tuple = fmt::format("alpha={:g}", a);
        r.checks.push_back(c);
        if (i > 0) {
            Check d = make_check("mosco-decreasing", mosco_recovery_bound(alphas[i - 1]) - value);
            d.tuple = c.tuple;
            r.checks.push_back(d);
        }
    }
    r.checks.push_back(make_check("mosco-below", 1e-3 - mosco_recovery_bound(alphas.back())));
    r.tables["recovery_bound"] = rec;

    auto derivative_table = [&](double theta, bool control) {
        json t = json::array();
        std::vector<DerivativeBoundRow> rows;
        for (double a : alphas) rows.push_back(derivative_bound_report(a, theta));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto& d = rows[i];
            t.push_back({{"alpha", d.alpha},
                         {"sup_d1", d.sup_d1}, {"sup_d2", d.sup_d2}, {"sup_d3", d.sup_d3},
                         {"bound_d1", d.bound_d1}, {"bound_d2", d.bound_d2}, {"bound_d3", d.bound_d3}});
            if (control) continue;
            const std::string id = fmt::format("alpha={:g}", d.alpha);
            const double sup[3] = {d.sup_d1, d.sup_d2, d.sup_d3}, bnd[3] = {d.bound_d1, d.bound_d2, d.bound_d3};
            for (int q = 0; q < 3; ++q) {
                Check c = make_check(fmt::format("scaled-majorant-d{}", q + 1), bnd[q] - sup[q], 1e-12 * bnd[q]);
                c.tuple = id;
                r.checks.push_back(c);
                if (i > 0) {
                    const auto& p = rows[i - 1];
                    const double prev[3] = {p.sup_d1, p.sup_d2, p.sup_d3};
                    const double prev_bnd[3] = {p.bound_d1, p.bound_d2, p.bound_d3};
                    Check m = make_check(fmt::format("scaled-decreasing-d{}", q + 1), prev[q] - sup[q]);
                    m.tuple = id;
                    r.checks.push_back(m);
                    Check mb = make_check(fmt::format("scaled-majorant-decreasing-d{}", q + 1), prev_bnd[q] - bnd[q]);
                    mb.tuple = id;
                    r.checks.push_back(mb);
                }
            }
        }
        if (control)
            // the third derivative must not vanish: its supremum grows along the sweep
            r.checks.push_back(make_check("scaled-control-d3-persists", rows.back().sup_d3 - rows.front().sup_d3));
        return t;
    };
    r.tables["scaled_bounds"] = derivative_table(cfg.params.theta, false);
    r.tables["scaled_bounds_control"] = derivative_table(cfg.experiment.theta_control, true);
    r.tables["theta"] = cfg.params.theta;
    r.tables["theta_control"] = cfg.experiment.theta_control;
    return r;
}

Report cmd_prox_oracle(const RunConfig& cfg, int) {
    validate_config(cfg);
    Report r;
    r.command = "prox_oracle";
    r.config = config_json(cfg);
    const ExperimentSpec& e = cfg.experiment;
    std::mt19937_64 rng(cfg.seed);
    auto uniform = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
    auto stf = [](double a, double b) {
        Mat2 m;
        m << a, b, b, -a;
        return m;
    };
    double worst = 0.0;
    json cases = json::array();
    for (int k = 0; k < e.prox_cases; ++k) {
        PlasticModel pm = PlasticModel::from(cfg.params);
        pm.sigma_yield = 0.5 + 1.5 * uniform();
        const double phi = 2.0 * uniform() - 1.0, tau = 0.01 + uniform();
        const double scale = 2.5 * pm.sigma_yield;
        const Mat2 rr = stf(scale * (2.0 * uniform() - 1.0), scale * (2.0 * uniform() - 1.0));
        const double err = (prox_plastic(phi, rr, tau, pm) - prox_grid_search(phi, rr, tau, pm, e.prox_resolution)).norm();
        worst = std::max(worst, err);
        cases.push_back({{"phi", phi}, {"tau", tau}, {"sigma_yield", pm.sigma_yield}, {"error", err}});
    }
    r.checks.push_back(make_check("prox-oracle", 2e-3 - worst));
    double ratio = 0.0;
    const PlasticModel pm = PlasticModel::from(cfg.params);
    for (int k = 0; k < e.prox_pairs; ++k) {
        const double phi = 2.0 * uniform() - 1.0, tau = 0.01 + 2.0 * uniform();
        const Mat2 a = stf(3.0 * (2.0 * uniform() - 1.0), 3.0 * (2.0 * uniform() - 1.0));
        const Mat2 b = stf(3.0 * (2.0 * uniform() - 1.0), 3.0 * (2.0 * uniform() - 1.0));
        const double d = (a - b).norm();
        if (d > 0.0) ratio = std::max(ratio, (prox_plastic(phi, a, tau, pm) - prox_plastic(phi, b, tau, pm)).norm() / d);
    }
    r.checks.push_back(make_check("prox-nonexpansive", 1.0 - ratio, 1e-14));
    r.tables["oracle"] = {{"max_error", worst}, {"resolution", e.prox_resolution}, {"cases", cases}};
    r.tables["nonexpansive"] = {{"pairs", e.prox_pairs}, {"max_ratio", ratio}};
    return r;
}

Report cmd_semiflow(const RunConfig& cfg, int workers) {
    validate_config(cfg);
    Report r;
    r.command = "semiflow";
    r.config = config_json(cfg);
    const int n = cfg.time.N, half = n / 2;
    const auto straight = simulate(cfg);
    r.trajectory = straight;
    if (!require_complete(r, *straight, "straight")) return r;
    const double h = straight->h;
    const TimeGrid rest{h * (n - half), n - half};
    const auto restarted = std::make_shared<const Trajectory>(
        run(straight->states[half], cfg.params, rest, make_forcing(cfg), cfg.solver));
    if (!require_complete(r, *restarted, "restarted")) return r;

    const double mismatch = state_mismatch(straight->states.back(), restarted->states.back());
    r.checks.push_back(make_check("semiflow-final-state", 1e-8 - mismatch));
    double worst_level = 0.0;
    for (int k = 0; k <= n - half; ++k)
        worst_level = std::max(worst_level, state_mismatch(straight->states[half + k], restarted->states[k]));

    const KornEstimate korn = estimate_korn(cfg.grid, cfg.experiment.korn_inflation);
    const EnergyTrace trace = auxiliary_energy(*restarted, cfg.params, korn.k_omega);
    const EnergyTrace full = auxiliary_energy(*straight, cfg.params, korn.k_omega);
    const double e_half = full.rows[half].total;
    r.checks.push_back(make_check("semiflow-initial-energy", -std::abs(trace.rows[0].total - e_half),
                                  1e-14 * (1.0 + std::abs(e_half))));
    ede_checks(r, *restarted, trace, cfg.forcing.kind == ForcingSpec::Kind::None, "restart-");

    // restarted battery on its own samples; the straight run's rows on the shifted intervals match
    const std::vector<int> samples = time_samples(n - half, std::min(cfg.experiment.samples, n - half + 1));
    const RegularityWeightCfg wc{korn.k_omega, cfg.params.nu1};
    const PotentialFamily fam = family_of(cfg.params);
    const auto tuples = battery_tuples(cfg);
    std::vector<int> shifted = samples;
    for (int& s : shifted) s += half;
    std::vector<EvsRow> rows_restart, rows_straight;
    parallel_for(2, workers, [&](int i) {
        if (i == 0)
            rows_restart = evs_battery(*restarted, trace, tuples, fam, cfg.params, samples, weight_mode(cfg.params), wc);
        else
            rows_straight = evs_battery(*straight, full, tuples, fam, cfg.params, shifted, weight_mode(cfg.params), wc);
    });
    const double tol = 1e-8 * (1.0 + max_abs_energy(*restarted));
    double diff = 0.0;
    for (std::size_t i = 0; i < rows_restart.size(); ++i) {
        Check c = interval_check("restart-evs", *restarted, rows_restart[i].s_idx, rows_restart[i].t_idx,
                                 rows_restart[i].slack, tol);
        c.tuple = rows_restart[i].tuple;
        r.checks.push_back(c);
        diff = std::max(diff, std::abs(rows_restart[i].slack - rows_straight[i].slack));
    }
    r.checks.push_back(make_check("semiflow-restriction", -diff, tol));
    r.tables["semiflow"] = {{"restart_level", half},
                            {"restart_time", straight->states[half].t},
                            {"final_mismatch", mismatch},
                            {"max_level_mismatch", worst_level},
                            {"energy_at_restart", e_half},
                            {"max_restriction_difference", diff}};
    r.traces.push_back({"", full});
    r.traces.push_back({"restart", trace});
    return r;
}

std::vector<std::string> command_names() {
    return {"ede_check", "evs_battery", "alpha_sweep", "gamma_sweep", "mosco", "prox_oracle", "semiflow"};
}

Report run_command(const std::string& name, const RunConfig& cfg, int workers) {
    static const std::map<std::string, std::function<Report(const RunConfig&, int)>> table{
        {"ede_check", cmd_ede_check}, {"evs_battery", cmd_evs_battery}, {"alpha_sweep", cmd_alpha_sweep},
        {"gamma_sweep", cmd_gamma_sweep}, {"mosco", cmd_mosco}, {"prox_oracle", cmd_prox_oracle},
        {"semiflow", cmd_semiflow}};
    const auto it = table.find(name);
    if (it == table.end()) throw Error("unknown command " + name);
    return it->second(cfg, workers);
}

void write_outputs(const Report& r, const std::string& dir, int checkpoint_every) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    {
        std::ofstream os(fs::path(dir) / "report.json");
        if (!os) throw Error("cannot write report.json in " + dir);
        os << r.to_json().dump(2) << "\n";
    }
    for (std::size_t i = 0; i < r.traces.size(); ++i) {
        const std::string name = i == 0 ? "energy.csv" : "energy_" + r.traces[i].label + ".csv";
        write_energy_csv((fs::path(dir) / name).string(), r.traces[i].trace);
    }
    if (checkpoint_every > 0 && r.trajectory) {
        const fs::path fields = fs::path(dir) / "fields";
        fs::create_directories(fields);
        const auto& states = r.trajectory->states;
        for (std::size_t k = 0; k < states.size(); k += checkpoint_every) {
            const SimState& s = states[k];
            FieldDump cells{s.grid(), Location::Cell, {"phi", "mu", "beta", "p", "S11", "S12"},
                            {s.phi.values, s.mu.values, s.beta.values, s.p.values, s.S.s11, s.S.s12},
                            "state", s.t};
            write_field_csv((fields / fmt::format("cells_{:05d}.csv", k)).string(), cells);
            FieldDump vx{s.grid(), Location::XFace, {"vx"}, {s.v.x}, "velocity", s.t};
            write_field_csv((fields / fmt::format("vx_{:05d}.csv", k)).string(), vx);
            FieldDump vy{s.grid(), Location::YFace, {"vy"}, {s.v.y}, "velocity", s.t};
            write_field_csv((fields / fmt::format("vy_{:05d}.csv", k)).string(), vy);
        }
    }
}

}  // namespace geoflow
