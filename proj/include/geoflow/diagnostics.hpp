#pragma once
/// @file diagnostics.hpp
/// @brief Energies, auxiliary energy audit, Korn constant, test tuples and the evaluators for the
/// energy-variational, weak-form and relative-energy inequalities.

#include "geoflow/grid.hpp"
#include "geoflow/materials.hpp"
#include "geoflow/potentials.hpp"
#include "geoflow/stepper.hpp"

#include <string>
#include <vector>

namespace geoflow {

struct EnergyParts {
    double kin = 0.0;
    double el = 0.0;
    double grad = 0.0;
    double dw = 0.0;
    double sing = 0.0;  ///< normalised logarithmic part (0 inside the box in obstacle mode)
    double total() const { return kin + el + grad + dw + sing; }
};

EnergyParts total_energy(const SimState& s, const PotentialFamily& fam, const Params& p);

/// Non-negative remainder of the implicit step: kinetic, elastic and gradient increments plus the
/// convexity gap of W_kappa.
double numerical_dissipation(const SimState& prev, const SimState& next, const PotentialFamily& fam, const Params& p);

/// Squared dual norm of f against the discrete H^1 norm ||w||^2 + ||grad w||^2 (Riesz map).
double dual_norm_sq(const VectorField& f);

struct KornEstimate {
    double k_omega = 0.0;     ///< inflated constant
    double raw = 0.0;         ///< 2 + 2 / lambda_min before inflation
    double lambda_min = 0.0;  ///< smallest Stokes eigenvalue of -Laplacian on solenoidal fields
    int iterations = 0;
};

/// Smallest k with ||v||^2 + ||grad v||^2 <= k ||sym grad v||^2 on discrete solenoidal fields,
/// by inverse power iteration, inflated by 10%.
KornEstimate estimate_korn(const Grid& g, double inflation = 1.1);
/// (||v||^2 + ||grad v||^2) / ||sym grad v||^2.
double korn_ratio(const VectorField& v);

struct EnergyRow {
    double t = 0.0;
    EnergyParts parts;
    double total = 0.0;
    double aux = 0.0;
    double diss_visc = 0.0, diss_gamma = 0.0, diss_mix = 0.0, diss_plastic = 0.0;
    double f_work = 0.0;
    double f_dual_cum = 0.0;  ///< sum_j h ||f_j||^2 in the dual proxy norm
    double monotone = 0.0;    ///< aux - C * f_dual_cum
};

struct EnergyTrace {
    std::vector<EnergyRow> rows;
    double c = 0.0;              ///< k_Omega / nu1
    bool majorizes = true;       ///< aux >= total on every row
    double max_increase = 0.0;   ///< largest increase of the monotone part
    double max_aux_increase = 0.0;
};

EnergyTrace auxiliary_energy(const Trajectory& tr, const Params& p, double korn_constant);
void write_energy_csv(const std::string& path, const EnergyTrace& trace);

struct RegularityWeightCfg {
    double korn_constant = 1.0;
    double nu1 = 1.0;
};

/// k_Omega^2 / nu1 * ||S_tilde||_inf^2.
double regularity_weight(const SymTensorField& s_tilde, const RegularityWeightCfg& cfg);
/// Four-argument form; only the stress argument enters.
double regularity_weight(const VectorField& v_tilde, const SymTensorField& s_tilde, const ScalarField& phi_tilde,
                         const ScalarField& mu_tilde, const RegularityWeightCfg& cfg);

enum class TupleKind { Zero, Velocity, Stress, Phase, Potential, Mixed };

struct TupleSupport {
    double cx = 0.5;
    double cy = 0.5;
    double r = 0.25;
};

struct TupleFields {
    VectorField v;
    SymTensorField S;
    ScalarField phi;
    ScalarField mu;
};

/// Separable test functions chi(t) * spatial profile. The velocity is the discrete curl of a
/// vertex stream function, so its discrete divergence vanishes to rounding.
struct TestTuple {
    std::string id;
    TupleKind kind = TupleKind::Zero;
    double amplitude = 0.0;
    TupleSupport support;
    double horizon = 1.0;
    double omega = 0.0;      ///< temporal oscillation
    double a11 = 1.0;        ///< stress shape [[a11, a12], [a12, -a11]]
    double a12 = 0.5;

    double chi(double t) const;
    double chi_dot(double t) const;
    /// (1/(t1-t0)) int_{t0}^{t1} chi, five-point Gauss-Legendre.
    double chi_mean(double t0, double t1) const;
    TupleFields spatial(const Grid& g) const;
    TupleFields at(const Grid& g, double t) const;
    TupleFields rate(const Grid& g, double t) const;
};

TestTuple make_test_tuple(TupleKind kind, double amplitude, const TupleSupport& support, double horizon,
                          const std::string& id = "");
/// Throws when the velocity is not solenoidal, a field leaks outside its support box, or the
/// support leaves the domain.
void check_admissible(const TestTuple& tt, const Grid& g);
/// Ten tuples of mixed kinds, amplitudes and supports scaled to the domain.
std::vector<TestTuple> default_battery(const Grid& g, double horizon, double amplitude);

enum class WeightMode { Zero, Korn };

struct EvsResult {
    double lhs = 0.0;
    double rhs = 0.0;
    double slack = 0.0;
    double weight_term = 0.0;
};

EvsResult eval_evs_inequality(const Trajectory& tr, const EnergyTrace& trace, const TestTuple& tt,
                              const PotentialFamily& fam, const Params& p, int s_idx, int t_idx, WeightMode mode,
                              const RegularityWeightCfg& cfg);

struct EvsRow {
    std::string tuple;
    int s_idx = 0;
    int t_idx = 0;
    double slack = 0.0;
};

/// All pairs s < t of `samples` for every tuple.
std::vector<EvsRow> evs_battery(const Trajectory& tr, const EnergyTrace& trace, const std::vector<TestTuple>& tuples,
                                const PotentialFamily& fam, const Params& p, const std::vector<int>& samples,
                                WeightMode mode, const RegularityWeightCfg& cfg);

/// Ten uniformly spaced indices of [0, N] (0 and N included).
std::vector<int> time_samples(int n_steps, int count = 10);

/// Weak momentum balance against a time-independent solenoidal field; LHS - RHS.
double check_weak_momentum(const Trajectory& tr, const VectorField& test, const Params& p, int s_idx, int t_idx);
/// Weak phase-field equation against a time-independent scalar; LHS - RHS.
double check_weak_ch(const Trajectory& tr, const ScalarField& test, const Params& p, int s_idx, int t_idx);

struct GibbsThomsonAudit {
    double residual = 0.0;           ///< max |mu - (-L phi + W'_dw + beta)| over steps
    double kappa_correction = 0.0;   ///< max |kappa (phi_{k+1} - phi_k) / 2|
    double corrected = 0.0;          ///< max residual after removing the splitting term
};
GibbsThomsonAudit check_gibbs_thomson(const Trajectory& tr, const PotentialFamily& fam, const Params& p);

struct SystemOperator {
    VectorField a1;      ///< momentum residual on faces
    SymTensorField a2;   ///< stress residual
    ScalarField a3;      ///< phase-field residual
    ScalarField mu;      ///< chemical potential of the test phase field
};

/// Residual of the test tuple in the strong equations at time t.
SystemOperator apply_system_operator(const TestTuple& tt, double t, const Grid& g, const Params& p,
                                     const PotentialFamily& fam, const VectorField& f);

/// Relative total energy of a state with respect to test fields.
double relative_energy(const SimState& s, const TupleFields& tf, const PotentialFamily& fam, const Params& p);
/// Relative dissipation (without the weight term) between a state and test fields.
double relative_dissipation(const SimState& s, const TupleFields& tf, const TupleFields& tf_rate,
                            const ScalarField& mu_tilde, const PotentialFamily& fam, const Params& p);

struct DissipativeResult {
    double lhs = 0.0;
    double rhs = 0.0;
    double slack = 0.0;
};

DissipativeResult eval_dissipative_inequality(const Trajectory& tr, const TestTuple& tt, const PotentialFamily& fam,
                                              const Params& p, int s_idx, int t_idx, WeightMode mode,
                                              const RegularityWeightCfg& cfg);

/// Same pairs as evs_battery for the dissipative inequality.
std::vector<EvsRow> dissipative_battery(const Trajectory& tr, const std::vector<TestTuple>& tuples,
                                        const PotentialFamily& fam, const Params& p, const std::vector<int>& samples,
                                        WeightMode mode, const RegularityWeightCfg& cfg);

struct JaumannCheck {
    double direct = 0.0;
    double by_parts = 0.0;
    double residual = 0.0;
};

/// <S skw(grad v) - skw(grad v) S, S_tilde> directly and after moving the derivative off v.
JaumannCheck jaumann_ibp_check(const VectorField& v, const SymTensorField& s, const SymTensorField& s_tilde);

/// Cellwise max of |(S W - W S) : S| for the skew part W of grad v.
double jaumann_neutrality(const VectorField& v, const SymTensorField& s);

}  // namespace geoflow
