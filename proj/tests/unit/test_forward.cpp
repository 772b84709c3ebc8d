#include <doctest.h>

#include <cmath>

#include "gridfuse/case_io.hpp"
#include "gridfuse/error.hpp"
#include "gridfuse/forward.hpp"
#include "gridfuse/harness.hpp"
#include "gridfuse/scenario.hpp"
#include "support.hpp"

using namespace gridfuse;

namespace {

// Oracle comparison: total specified injection per bus (loads, generation and
// the DER real power) fed to the independent polar solver.
double max_oracle_gap(const GridCase& g, const DerFleet& fleet, const GroundTruth& t) {
    const std::size_t n = g.size();
    std::vector<Complex> s(n);
    std::vector<bool> reg(n, false);
    std::vector<double> vset(n, 1.0);
    for (std::size_t k = 0; k < n; ++k) s[k] = g.scheduled_injection(g.buses()[k].id);
    for (std::size_t k = 0; k < fleet.pv.size(); ++k) s[g.index_of(fleet.pv[k].bus)] += t.pv_ac[k];
    for (std::size_t k = 0; k < fleet.battery.size(); ++k) s[g.index_of(fleet.battery[k].bus)] += t.battery_ac[k];
    for (const auto& gen : g.generators()) {
        const std::size_t k = g.index_of(gen.bus);
        const auto ty = g.buses()[k].type;
        if (ty == BusType::pv || ty == BusType::ref) {
            reg[k] = true;
            vset[k] = gen.v_set;
        }
    }
    const auto v = testsupport::polar_powerflow(g, s, reg, vset);
    double worst = 0.0;
    for (std::size_t k = 0; k < n; ++k) worst = std::max(worst, std::abs(v[k] - t.voltages[k]));
    return worst;
}

}  // namespace

TEST_CASE("power flow on a flat two-bus case") {
    const auto g = load_case(testsupport::case_file("case2.m"));
    const auto t = solve_combined_powerflow(g, {}, {}, {});
    CHECK(t.voltages[0] == Complex(1.0, 0.0));
    CHECK(std::abs(t.voltages[1]) < 1.0);
    CHECK(max_oracle_gap(g, {}, t) < 1e-9);
    // The slack supplies the load plus the series loss.
    const double loss = std::norm((t.voltages[0] - t.voltages[1]) / Complex(0.01, 0.1)) * 0.01;
    CHECK(t.bus_injection[0].real() == doctest::Approx(0.5 + loss).epsilon(1e-9));
}

TEST_CASE("power flow with DER injections matches the polar oracle") {
    SUBCASE("three-bus ring") {
        const auto c = load_scenario(testsupport::scenario_file("case3_combined.json"));
        const auto g = load_scenario_case(c);
        const auto t = scenario_truth(c, g).front();
        CHECK(t.pv_ac[0] > 0.0);
        CHECK(t.battery_ac[0] < 0.0);
        CHECK(t.dispatch[0] == Dispatch::charging);
        CHECK(max_oracle_gap(g, c.fleet(), t) < 1e-9);
    }
    SUBCASE("118-bus system with eleven PV plants") {
        const auto c = load_scenario(testsupport::scenario_file("ieee118_A.json"));
        const auto g = load_scenario_case(c);
        const auto t = scenario_truth(c, g).front();
        CHECK(max_oracle_gap(g, c.fleet(), t) < 1e-8);
    }
}

TEST_CASE("battery energy bookkeeping") {
    auto c = load_scenario(testsupport::scenario_file("case3_combined.json"));
    const auto g = load_scenario_case(c);
    const auto& bt = c.battery[0].system;
    const double base_w = g.base_mva() * 1e6;
    for (double current : {-2.0, 2.0}) {
        const auto t = solve_combined_powerflow(g, c.fleet(), c.pv_points(), std::vector<BatterySchedule>{{0.5, current}});
        const auto& s = t.battery[0];
        const double dc_w = bt.n_parallel_scale * s.v_bt * s.i_bt;
        if (current > 0) {
            CHECK(t.battery_ac[0] * base_w == doctest::Approx(t.battery_eta[0] * dc_w).epsilon(1e-12));
            CHECK(t.battery_ac[0] * base_w < dc_w);
        } else {
            CHECK(t.battery_ac[0] * base_w == doctest::Approx(dc_w / t.battery_eta[0]).epsilon(1e-12));
            CHECK(-t.battery_ac[0] * base_w > -dc_w);
            // Rectifier efficiency is evaluated at the AC power actually drawn.
            CHECK(t.battery_eta[0] ==
                  doctest::Approx(inverter_efficiency(-t.battery_ac[0] * base_w, bt.rectifier)).epsilon(1e-7));
        }
    }
    CHECK_THROWS_AS(solve_combined_powerflow(g, c.fleet(), c.pv_points(), {}), DataError);
}

TEST_CASE("measurement synthesis") {
    const auto c = load_scenario(testsupport::scenario_file("case3_combined.json"));
    const auto g = load_scenario_case(c);
    const auto fleet = c.fleet();
    const auto t = scenario_truth(c, g).front();

    SUBCASE("zero draw scale reproduces the truth") {
        NoiseModel exact = c.noise;
        exact.draw_scale = 0.0;
        const auto m = synthesize_measurements(g, fleet, t, exact, 5);
        REQUIRE(m.rtu.size() == g.rtu_buses().size());
        for (const auto& r : m.rtu) {
            const std::size_t k = g.index_of(r.bus);
            CHECK(r.p_z == -t.bus_injection[k].real());
            CHECK(r.q_z == t.bus_injection[k].imag());
            CHECK(r.v_z == std::abs(t.voltages[k]));
            CHECK(r.sigma == exact.rtu_sigma);
        }
        CHECK(m.pv[0].z.z_v == t.pv[0].v_pv);
        CHECK(m.pv[0].z.z_i == t.pv[0].i_pv);
        CHECK(m.pv[0].z.z_ph == t.pv[0].i_ph);
        CHECK(m.battery[0].z.z_v == t.battery[0].v_bt);
        CHECK(m.battery[0].z.z_i == t.battery[0].i_bt);
        CHECK(m.pv_poi[0].p_z == -t.pv_ac[0]);
    }
    SUBCASE("seeded determinism") {
        const auto a = synthesize_measurements(g, fleet, t, c.noise, 17, 3);
        const auto b = synthesize_measurements(g, fleet, t, c.noise, 17, 3);
        const auto d = synthesize_measurements(g, fleet, t, c.noise, 17, 4);
        CHECK(a.pv[0].z.z_v == b.pv[0].z.z_v);
        CHECK(a.rtu[1].p_z == b.rtu[1].p_z);
        CHECK(a.pv[0].z.z_v != d.pv[0].z.z_v);
    }
    SUBCASE("errors are zero-mean with the configured spread") {
        const int n = 4000;
        double sum = 0.0, sum_sq = 0.0, rtu_sum_sq = 0.0;
        for (int s = 0; s < n; ++s) {
            const auto m = synthesize_measurements(g, fleet, t, c.noise, 1000 + static_cast<std::uint64_t>(s));
            const double e = (m.pv[0].z.z_v - t.pv[0].v_pv) / c.noise.der_sigma;
            sum += e;
            sum_sq += e * e;
            const double r = (m.rtu[0].v_z - std::abs(t.voltages[0])) / c.noise.rtu_sigma;
            rtu_sum_sq += r * r;
        }
        CHECK(std::abs(sum / n) < 4.0 / std::sqrt(n));
        CHECK(std::abs(sum_sq / n - 1.0) < 0.1);
        CHECK(std::abs(rtu_sum_sq / n - 1.0) < 0.1);
    }
    SUBCASE("bad data scales and flags its target") {
        const auto m = synthesize_measurements(g, fleet, t, c.noise, 2);
        const std::vector<BadData> spec{{"pv3.v", 0.10}, {"bt1.i", -0.2}, {"rtu2.p", 0.5}};
        const auto bad = inject_bad_data(m, fleet, spec);
        CHECK(bad.pv[0].z.z_v == doctest::Approx(1.1 * m.pv[0].z.z_v).epsilon(1e-15));
        CHECK(bad.pv[0].biased_v);
        CHECK_FALSE(bad.pv[0].biased_i);
        CHECK(bad.pv[0].z.z_i == m.pv[0].z.z_i);
        CHECK(bad.battery[0].z.z_i == doctest::Approx(0.8 * m.battery[0].z.z_i).epsilon(1e-15));
        CHECK(bad.rtu_at(2)->biased);
        CHECK(bad.rtu_at(2)->p_z == doctest::Approx(1.5 * m.rtu_at(2)->p_z).epsilon(1e-15));
        const std::vector<BadData> example{{"pv3.v", 0.10}};
        MeasurementSet plain = m;
        plain.pv[0].z.z_v = 500.0;
        CHECK(inject_bad_data(plain, fleet, example).pv[0].z.z_v == doctest::Approx(550.0));
        const std::vector<BadData> unknown{{"pv9.v", 0.1}};
        CHECK_THROWS_WITH_AS(inject_bad_data(m, fleet, unknown), "unknown bad-data target 'pv9.v'", DataError);
    }
}

TEST_CASE("parameter perturbation") {
    const auto c = load_scenario(testsupport::scenario_file("case3_combined.json"));
    const auto fleet = c.fleet();
    const std::vector<ParameterError> errs{{"pv3.r_s", 0.5}, {"bt1.r_se", -0.2}};
    const auto p = perturb_parameters(fleet, errs);
    CHECK(parameter_value(p.fleet, "pv3.r_s") == doctest::Approx(0.15).epsilon(1e-15));
    CHECK(p.truth.at("pv3.r_s") == 0.1);
    CHECK(parameter_value(p.fleet, "bt1.r_se") == doctest::Approx(0.04).epsilon(1e-15));
    CHECK(parameter_value(p.fleet, "pv3.r_sh") == parameter_value(fleet, "pv3.r_sh"));
    CHECK_THROWS_AS(parameter_value(fleet, "pv3.colour"), DataError);
    const std::vector<ParameterError> bad{{"pv9.r_s", 0.5}};
    CHECK_THROWS_AS(perturb_parameters(fleet, bad), DataError);
}

TEST_CASE("time series truth follows the SoC trajectory") {
    const auto c = load_scenario(testsupport::scenario_file("case3_soc.json"));
    const auto g = load_scenario_case(c);
    const auto truth = scenario_truth(c, g);
    REQUIRE(truth.size() == static_cast<std::size_t>(c.time_steps + 1));
    const auto& bt = c.battery[0].system;
    const auto soc = step_soc(bt, c.battery[0].current, c.time_steps, c.dt, c.battery[0].soc0);
    for (std::size_t s = 0; s < truth.size(); ++s) {
        CHECK(truth[s].battery[0].v_soc == doctest::Approx(soc[s]).epsilon(1e-14));
        CHECK(truth[s].battery[0].v_oc == doctest::Approx(bt.ocv_a + bt.ocv_b * soc[s]).epsilon(1e-14));
        CHECK(truth[s].battery[0].i_bt == c.battery[0].current[s]);
    }
}
