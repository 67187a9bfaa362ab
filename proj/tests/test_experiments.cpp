#include "doctest.h"

#include "geoflow/experiments.hpp"

#include <filesystem>
#include <fstream>

using namespace geoflow;

namespace {

RunConfig small_config() {
    return parse_config(R"(
[grid]
nx = 12
ny = 12
[time]
T = 0.2
N = 8
[experiment]
samples = 5
prox_cases = 20
prox_pairs = 100
)");
}

}  // namespace

TEST_CASE("energy check on a small run, with the negative control") {
    const Report r = cmd_ede_check(small_config());
    CHECK(r.pass());
    CHECK(r.find("ede").size() == 8);
    CHECK(r.find("energy-nonincreasing").size() == 8);
    REQUIRE(r.find("negative-control").size() == 1);
    CHECK(r.tables["negative_control"]["max_defect_control"].get<double>() >
          100.0 * r.tables["negative_control"]["max_defect_default"].get<double>());
    CHECK(r.traces.size() == 1);
}

TEST_CASE("rest state passes the energy check with zero slack") {
    RunConfig c = small_config();
    c.initial.profile = InitialSpec::Profile::PerturbedConstant;
    c.initial.amplitude = 0.0;
    c.initial.mean = 0.2;
    const Report r = cmd_ede_check(c);
    for (const char* fam : {"ede", "monotone", "energy-nonincreasing"})
        for (const Check* e : r.find(fam)) CHECK(e->pass);
    for (const Check* e : r.find("ede")) CHECK(std::abs(e->slack) <= 1e-12);
    // nothing moves, so a loose solver cannot show a larger defect: the control has no power here
    REQUIRE(r.find("negative-control").size() == 1);
    CHECK_FALSE(r.find("negative-control")[0]->pass);
}

TEST_CASE("variational battery reports tolerances and the zero-tuple identity") {
    const Report r = cmd_evs_battery(small_config());
    CHECK(r.pass());
    // 11 tuples x 10 pairs
    CHECK(r.find("evs").size() >= 110);
    const auto zero = r.find("evs-zero-identity");
    REQUIRE(zero.size() == 1);
    CHECK(zero[0]->pass);
    bool any_tol = false;
    for (const Check* c : r.find("evs"))
        if (c->name == "evs" && c->tol_discretization > 0.0) any_tol = true;
    CHECK(any_tol);
    CHECK(r.tables["battery"]["weight"] == "korn");

    RunConfig g = small_config();
    g.params.gamma = 0.1;
    g.experiment.refine = false;
    const Report rg = cmd_evs_battery(g);
    CHECK(rg.pass());
    CHECK(rg.tables["battery"]["weight"] == "zero");
}

TEST_CASE("prox oracle and potential tables") {
    const Report p = cmd_prox_oracle(small_config());
    CHECK(p.pass());
    CHECK(p.tables["oracle"]["cases"].size() == 20);
    const Report m = cmd_mosco(small_config());
    CHECK(m.pass());
    CHECK(m.tables["recovery_bound"].size() == 4);
}

TEST_CASE("restart reproduces the straight run") {
    const Report r = cmd_semiflow(small_config());
    CHECK(r.pass());
    CHECK(r.tables["semiflow"]["final_mismatch"].get<double>() <= 1e-8);
}

TEST_CASE("outputs and determinism") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "geoflow_outputs_test";
    fs::remove_all(dir);
    RunConfig c = small_config();
    const Report a = cmd_prox_oracle(c), b = cmd_prox_oracle(c);
    CHECK(a.to_json().dump() == b.to_json().dump());
    c.seed = 3;
    CHECK(cmd_prox_oracle(c).to_json().dump() != a.to_json().dump());

    const Report e = cmd_ede_check(small_config());
    write_outputs(e, dir.string(), 4);
    CHECK(fs::exists(dir / "report.json"));
    CHECK(fs::exists(dir / "energy.csv"));
    CHECK(fs::exists(dir / "fields" / "cells_00004.csv"));
    CHECK(fs::exists(dir / "fields" / "vx_00008.csv"));
    std::ifstream is(dir / "report.json");
    const nlohmann::json j = nlohmann::json::parse(is);
    CHECK(j["pass"] == true);
    const auto& first = j["checks"][0];
    for (const char* k : {"name", "interval", "tuple-id", "slack", "tolerances", "pass"}) CHECK(first.contains(k));
    CHECK(j["config"]["material"]["rho2"] == 3.0);
    fs::remove_all(dir);
    CHECK_THROWS_AS(run_command("nope", small_config()), Error);
}
