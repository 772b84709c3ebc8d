#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gridfuse/error.hpp"
#include "gridfuse/harness.hpp"
#include "support.hpp"

using namespace gridfuse;
using nlohmann::json;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::filesystem::path scratch_dir(const std::string& name) {
    const auto d = std::filesystem::temp_directory_path() / ("gridfuse_test_" + name);
    std::filesystem::remove_all(d);
    return d;
}

EstimateRecord rec(int inst, const std::string& family, const std::string& comp, double est, double truth,
                   bool conv = true) {
    return {inst, "combined", family, comp, 0, est, truth, conv};
}

}  // namespace

TEST_CASE("parallel runs reproduce the serial run") {
    const auto c = load_scenario(testsupport::scenario_file("case3_combined.json"));
    RunOptions serial;
    serial.instances = 6;
    serial.threads = 1;
    RunOptions parallel = serial;
    parallel.threads = 3;
    const auto a = run_scenario(c, serial);
    const auto b = run_scenario(c, parallel);
    CHECK(estimates_csv(a.records) == estimates_csv(b.records));
    CHECK(metrics_json(a) == metrics_json(b));
    CHECK(manifest_json(a) == manifest_json(b));
}

TEST_CASE("instance seeds are independent of the instance count") {
    const auto c = load_scenario(testsupport::scenario_file("case3_combined.json"));
    RunOptions two;
    two.instances = 2;
    RunOptions four;
    four.instances = 4;
    const auto a = run_scenario(c, two);
    const auto b = run_scenario(c, four);
    std::vector<EstimateRecord> head;
    for (const auto& r : b.records)
        if (r.instance < 2) head.push_back(r);
    CHECK(estimates_csv(a.records) == estimates_csv(head));
}

TEST_CASE("reports round-trip through disk") {
    const auto c = load_scenario(testsupport::scenario_file("case3_soc.json"));
    RunOptions o;
    o.instances = 3;
    const auto report = run_scenario(c, o);
    const auto dir = scratch_dir("roundtrip");
    write_report(report, dir);
    for (const char* f : {"estimates.csv", "metrics.json", "manifest.json", "timing.csv", "soc_series.csv"})
        CHECK(std::filesystem::exists(dir / f));

    const auto back = read_report(dir);
    CHECK(back.records.size() == report.records.size());
    CHECK(metrics_json(back) == slurp(dir / "metrics.json"));
    CHECK(estimates_csv(back.records) == slurp(dir / "estimates.csv"));

    const auto series = soc_error_series(report, "combined");
    CHECK(series.size() == static_cast<std::size_t>(c.time_steps));
    CHECK(series.front().first == 1);

    const auto m = json::parse(slurp(dir / "metrics.json"));
    for (const char* key : {"n_instances", "n_failed", "failed_instances", "mean_iterations", "nrmse", "var_avg",
                            "error_pct", "soc_final_abs_error_pct"})
        CHECK(m["routines"]["combined"].contains(key));
    const auto man = json::parse(slurp(dir / "manifest.json"));
    CHECK(man["config_hash"].get<std::string>().size() == 16);
    CHECK(man["base_seed"] == 11);
    std::filesystem::remove_all(dir);
}

TEST_CASE("CSV parsing") {
    const std::vector<EstimateRecord> rs{rec(0, "v_pv", "pv3", 0.1 + 0.2, 1.0 / 3.0), rec(1, "solve", "grid", 7, 0, false)};
    const auto back = parse_estimates_csv(estimates_csv(rs));
    REQUIRE(back.size() == 2);
    CHECK(back[0].estimate == 0.1 + 0.2);
    CHECK(back[0].truth == 1.0 / 3.0);
    CHECK_FALSE(back[1].converged);
    CHECK_THROWS_AS(parse_estimates_csv("instance,routine\n0,x\n"), DataError);
}

TEST_CASE("metrics from hand-built records") {
    RunReport r;
    r.scenario_id = "hand";
    r.n_instances = 3;
    r.records = {
        rec(0, "v_pv", "pv1", 2.0, 1.0), rec(0, "v_pv", "pv2", 4.0, 4.0),
        rec(1, "v_pv", "pv1", 0.0, 1.0), rec(1, "v_pv", "pv2", 4.0, 4.0),
        // A failed instance is excluded from every statistic.
        rec(2, "v_pv", "pv1", 1e9, 1.0), rec(2, "solve", "combined", 200, 0, false),
    };
    const auto m = json::parse(metrics_json(r))["routines"]["combined"];
    CHECK(m["n_failed"] == 1);
    CHECK(m["failed_instances"] == json::array({2}));
    // Squared errors 1, 0, 1, 0 over a grand truth mean of 2.5.
    CHECK(m["nrmse"]["v_pv"].get<double>() == doctest::Approx(std::sqrt(0.5) / 2.5).epsilon(1e-14));
    // pv1 estimates {2, 0} have population variance 1; pv2 has 0.
    CHECK(m["var_avg"]["v_pv"].get<double>() == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(m["error_pct"]["v_pv"]["count"] == 4);
    CHECK(m["error_pct"]["v_pv"]["max_abs"].get<double>() == doctest::Approx(100.0));
}

TEST_CASE("noise-free runs score zero error") {
    auto c = load_scenario(testsupport::scenario_file("case3_combined.json"));
    c.noise.draw_scale = 0.0;
    RunOptions o;
    o.instances = 2;
    const auto m = json::parse(metrics_json(run_scenario(c, o)));
    for (const auto& [routine, v] : m["routines"].items()) {
        CHECK(v["n_failed"] == 0);
        for (const auto& [family, value] : v["nrmse"].items()) {
            INFO(routine, " ", family);
            if (!value.is_null()) CHECK(std::abs(value.get<double>()) < 1e-7);
        }
    }
}

TEST_CASE("thread count resolution") {
    CHECK(resolve_threads(3) == 3);
    CHECK(resolve_threads(0) >= 1);
    ::setenv("GRIDFUSE_THREADS", "2", 1);
    CHECK(resolve_threads(5) == 2);
    ::unsetenv("GRIDFUSE_THREADS");
}
