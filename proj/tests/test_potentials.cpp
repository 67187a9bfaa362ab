#include "doctest.h"

#include "geoflow/materials.hpp"
#include "geoflow/potentials.hpp"

#include <cmath>
#include <random>

using namespace geoflow;

TEST_CASE("density interpolates the pure phases") {
    Params p;
    Grid g(4, 4);
    CHECK(density(ScalarField(g, -1.0), p).values.maxCoeff() == doctest::Approx(1.0));
    CHECK(density(ScalarField(g, 1.0), p).values.minCoeff() == doctest::Approx(3.0));
    CHECK(density(ScalarField(g, 0.0), p).values.mean() == doctest::Approx(2.0));
    // on [-1-alpha, 1+alpha] the lower bound shifts by alpha (rho2 - rho1) / 2 but stays positive
    const double alpha = 0.1;
    for (double s = -1.0 - alpha; s <= 1.0 + alpha; s += 0.01) {
        CHECK(density(s, p) >= 1.0 - alpha * 0.5 * (p.rho2 - p.rho1) - 1e-12);
        CHECK(density(s, p) > 0.0);
        if (std::abs(s) <= 1.0) CHECK(density(s, p) >= 1.0 - 1e-12);
    }
}

TEST_CASE("mass flux in both modes") {
    Grid g(4, 4);
    Params p;
    p.m = CoefficientSpec::constant(2.0);
    p.m1 = p.m2 = 2.0;
    const ScalarField phi(g, 0.3);
    VectorField gm(g, Vec::Ones(g.xfaces()), Vec::Zero(g.yfaces()));
    const VectorField jd = mass_flux(phi, gm, p, FluxMode::Discrete);
    const VectorField jc = mass_flux(phi, gm, p, FluxMode::ContinuousModel);
    CHECK(jd.x[g.fx(2, 1)] == doctest::Approx(-1.0));
    CHECK(jc.x[g.fx(2, 1)] == doctest::Approx(-2.0));
    CHECK(jd.y.norm() == 0.0);

    CHECK(mass_flux(phi, VectorField(g), p, FluxMode::ContinuousModel).x.norm() == 0.0);
    Params same = p;
    same.rho2 = same.rho1;
    CHECK(mass_flux(phi, gm, same, FluxMode::Discrete).x.norm() == 0.0);
    CHECK(mass_flux(phi, gm, same, FluxMode::ContinuousModel).x.norm() == 0.0);

    // linear in the gradient
    VectorField g3(g, 3.0 * gm.x, 3.0 * gm.y);
    const VectorField j3 = mass_flux(phi, g3, p, FluxMode::ContinuousModel);
    CHECK((j3.x - 3.0 * jc.x).norm() == 0.0);
}

TEST_CASE("coefficients respect their bounds") {
    Grid g(8, 8);
    CHECK(eval_coefficient(CoefficientSpec::constant(0.7), ScalarField(g, 0.2)).values.maxCoeff() == 0.7);
    const CoefficientSpec aff = CoefficientSpec::affine(1.0, 0.8, 0.5, 1.5);
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> d(-1.5, 1.5);
    ScalarField phi(g);
    for (int c = 0; c < g.cells(); ++c) phi.values[c] = d(rng);
    const Vec v = eval_coefficient(aff, phi).values;
    CHECK(v.minCoeff() >= 0.5);
    CHECK(v.maxCoeff() <= 1.5);

    // finite-difference slope of an affine eta stays below the declared constant
    double worst = 0.0;
    const double ds = 1e-4;
    for (double s = -2.0; s < 2.0; s += ds) worst = std::max(worst, std::abs(aff(s + ds) - aff(s)) / ds);
    CHECK(worst <= aff.lipschitz() + 1e-9);
}

TEST_CASE("parameter validation names the field") {
    Params p;
    CHECK_NOTHROW(validate_params(p));
    Params bad = p;
    bad.rho1 = -1.0;
    CHECK_THROWS_WITH_AS(validate_params(bad), doctest::Contains("rho1"), Error);
    bad = p;
    bad.theta = 0.6;
    CHECK_THROWS_WITH_AS(validate_params(bad), doctest::Contains("theta"), Error);
    bad = p;
    bad.nu = CoefficientSpec::affine(1.0, 1.0, 0.5, 2.0);
    CHECK_THROWS_WITH_AS(validate_params(bad), doctest::Contains("nu"), Error);
    bad = p;
    bad.a = CoefficientSpec::constant(0.5);
    CHECK_THROWS_WITH_AS(validate_params(bad), doctest::Contains("a"), Error);
}

TEST_CASE("double well values and derivatives") {
    CHECK(w_dw(1.0) == 0.0);
    CHECK(w_dw(-1.0) == 0.0);
    CHECK(w_dw(0.0) == doctest::Approx(0.25));
    const double e = 1e-5;
    for (double s = -1.5; s <= 1.5; s += 0.01) {
        if (std::abs(std::abs(s) - 1.0) > 1e-9) CHECK(w_dw(s) > 0.0);
        CHECK(std::abs(w_dw_prime(s) - (w_dw(s + e) - w_dw(s - e)) / (2 * e)) <= 1e-6);
        CHECK(std::abs(w_dw_second(s) - (w_dw_prime(s + e) - w_dw_prime(s - e)) / (2 * e)) <= 1e-6);
        CHECK(std::abs(w_dw_third(s) - (w_dw_second(s + e) - w_dw_second(s - e)) / (2 * e)) <= 1e-6);
    }
}

TEST_CASE("logarithmic family") {
    CHECK(w_sg_alpha(0.0, 1.0) == doctest::Approx(4.0 * std::log(2.0)).epsilon(1e-12));
    for (double a : {0.5, 0.1, 0.01}) {
        CHECK(w_sg_alpha_prime(0.0, a) == 0.0);
        const double edge = 2.0 * a * (1.0 + a) * std::log(2.0 * (1.0 + a));
        CHECK(w_sg_alpha(1.0 + a, a) == doctest::Approx(edge).epsilon(1e-12));
        CHECK(w_sg_alpha((1.0 + a) * (1.0 - 1e-12), a) == doctest::Approx(edge).epsilon(1e-9));
        CHECK(std::isinf(w_sg_alpha(1.0 + a + 1e-9, a)));
        const double b = 1.0 + a;
        for (double s = -b * 0.999; s < b; s += b * 0.01) {
            CHECK(w_sg_alpha_second(s, a) >= 0.0);
            CHECK(w_sing(s, PotentialFamily{a, 1.0}) >= 0.0);
        }
        const double e = 1e-6;
        for (double s = -0.9; s <= 0.9; s += 0.1) {
            CHECK(std::abs(w_sg_alpha_prime(s, a) - (w_sg_alpha(s + e, a) - w_sg_alpha(s - e, a)) / (2 * e)) <= 1e-6);
            CHECK(std::abs(w_sg_alpha_third(s, a) -
                           (w_sg_alpha_second(s + e, a) - w_sg_alpha_second(s - e, a)) / (2 * e)) <= 1e-4);
        }
    }
}

TEST_CASE("obstacle clamp and subgradient selection") {
    CHECK(obstacle_project(1.3) == 1.0);
    CHECK(obstacle_project(-0.4) == -0.4);
    std::mt19937 rng(11);
    std::uniform_real_distribution<double> d(-3.0, 3.0);
    for (int k = 0; k < 1000; ++k) {
        double a = d(rng), b = d(rng);
        if (a > b) std::swap(a, b);
        CHECK(obstacle_project(a) <= obstacle_project(b));
    }

    Grid g(6, 6);
    const PotentialFamily log_fam{0.1, 1.0};
    CHECK(select_beta(ScalarField(g, 0.0), log_fam).beta.values.norm() == 0.0);
    const PotentialFamily obst{0.0, 1.0};
    CHECK(select_beta(ScalarField(g, 0.5), obst).beta.values.norm() == 0.0);
    CHECK_THROWS_AS(select_beta(ScalarField(g, 1.2), log_fam), Error);

    ScalarField phi(g, 0.2);
    phi(1, 1) = 1.0;
    phi(2, 3) = -1.0;
    ScalarField mult(g, 0.0);
    mult(1, 1) = 0.7;
    mult(2, 3) = -0.4;
    const ScalarField beta = select_beta(phi, obst, &mult).beta;
    CHECK(beta(1, 1) >= 0.0);
    CHECK(beta(2, 3) <= 0.0);
    // variational inequality beta (s - phi) <= 0 for s in [-1, 1]
    for (int k = 0; k < 200; ++k) {
        const double s = d(rng) / 3.0;
        for (int c = 0; c < g.cells(); ++c) CHECK(beta.values[c] * (s - phi.values[c]) <= 1e-15);
    }
    ScalarField wrong = mult;
    wrong(1, 1) = -0.7;
    CHECK_THROWS_AS(select_beta(phi, obst, &wrong), Error);
}

TEST_CASE("entropy function") {
    const CoefficientSpec one = CoefficientSpec::constant(1.0);
    CHECK(entropy_F(1.0, one) == doctest::Approx(0.5));
    CHECK(entropy_F(0.0, one) == 0.0);
    const double e = 1e-6;
    CHECK(std::abs(entropy_F(e, one) - entropy_F(-e, one)) / (2 * e) < 1e-9);

    // affine mobility against a fine composite Simpson oracle of int_0^s (s - r) / m(r) dr
    const CoefficientSpec aff = CoefficientSpec::affine(1.0, 0.5, 0.6, 1.6);
    for (double s : {-1.2, -0.3, 0.4, 1.0}) {
        const int n = 20000;
        const double hh = s / n;
        double sum = 0.0;
        for (int i = 0; i <= n; ++i) {
            const double r = i * hh;
            const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
            sum += w * (s - r) / aff(r);
        }
        CHECK(entropy_F(s, aff) == doctest::Approx(sum * hh / 3.0).epsilon(1e-8));
    }
}

TEST_CASE("mosco recovery bound") {
    CHECK(mosco_recovery_bound(0.1) == doctest::Approx(0.1 * (2.1 * std::log(2.1) + 0.1 * std::log(0.1))).epsilon(1e-12));
    CHECK(mosco_recovery_bound(0.1) == doctest::Approx(0.13278).epsilon(1e-4));
    CHECK(mosco_recovery_bound(1.0) == doctest::Approx(3.0 * std::log(3.0)).epsilon(1e-12));
    double prev = mosco_recovery_bound(0.5);
    for (double a = 0.49; a > 1e-5; a *= 0.9) {
        const double v = mosco_recovery_bound(a);
        CHECK(v < prev);
        prev = v;
    }
    CHECK(mosco_recovery_bound(1e-4) < 1e-3);
}

TEST_CASE("mosco liminf probe") {
    Grid g(4, 4);
    const std::vector<double> alphas{0.1, 0.01};
    std::vector<std::vector<ScalarField>> edge, zero, outside;
    for (double a : alphas) {
        edge.push_back({ScalarField(g, 1.0 + a), ScalarField(g, 1.0 + a)});
        zero.push_back({ScalarField(g, 0.0), ScalarField(g, 0.0)});
        outside.push_back({ScalarField(g, 1.2)});
    }
    const auto re = mosco_liminf_probe(edge, alphas, 0.5);
    for (std::size_t k = 0; k < alphas.size(); ++k) {
        CHECK(re[k].max_distance == doctest::Approx(alphas[k]).epsilon(1e-12));
        CHECK(re[k].distance_ok);
    }
    const auto rz = mosco_liminf_probe(zero, alphas, 0.5);
    for (std::size_t k = 0; k < alphas.size(); ++k)
        CHECK(rz[k].energy == doctest::Approx(1.0 * 1.0 * w_sg_alpha(0.0, alphas[k])).epsilon(1e-12));
    CHECK(std::abs(rz[1].energy) < std::abs(rz[0].energy));
    const auto ro = mosco_liminf_probe(outside, alphas, 1.0);
    for (const auto& r : ro) CHECK_FALSE(r.finite);
}

TEST_CASE("scaled test phases and derivative bounds") {
    Grid g(8, 8);
    std::mt19937 rng(2);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    ScalarField phi(g);
    for (int c = 0; c < g.cells(); ++c) phi.values[c] = d(rng);
    phi.values[0] = 1.0;
    for (double a : {0.1, 0.01}) {
        const ScalarField s = scale_test_phase(phi, a, 0.4);
        CHECK(norm_linf(s) <= 1.0 - std::pow(a, 0.4) + 1e-15);
    }
    DerivativeBoundRow prev = derivative_bound_report(0.1, 0.4);
    for (double a : {1e-2, 1e-3, 1e-4}) {
        const DerivativeBoundRow r = derivative_bound_report(a, 0.4);
        CHECK(r.sup_d1 < prev.sup_d1);
        CHECK(r.sup_d2 < prev.sup_d2);
        CHECK(r.sup_d3 < prev.sup_d3);
        CHECK(r.sup_d1 <= r.bound_d1);
        CHECK(r.sup_d2 <= r.bound_d2);
        CHECK(r.sup_d3 <= r.bound_d3);
        prev = r;
    }
    // beyond theta = 1/2 the third-derivative majorant grows
    CHECK(derivative_bound_report(1e-4, 0.6).bound_d3 > derivative_bound_report(1e-1, 0.6).bound_d3);
    CHECK(derivative_bound_report(1e-4, 0.6).sup_d3 > derivative_bound_report(1e-1, 0.6).sup_d3);
}
