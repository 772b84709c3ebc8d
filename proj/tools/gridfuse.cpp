// gridfuse command line: simulate, estimate, montecarlo, report.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 solver non-convergence.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "gridfuse/error.hpp"
#include "gridfuse/harness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int exit_usage = 1;
constexpr int exit_data = 2;
constexpr int exit_solver = 3;

struct Common {
    std::string scenario;
    std::string case_path;
    std::optional<int> instances;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string routine = "combined";
    int threads = 0;
    bool exact = false;
    gridfuse::est::SolveOptions solve;
};

fs::path data_dir() {
    if (const char* env = std::getenv("GRIDFUSE_DATA_DIR")) return env;
    return GRIDFUSE_DATA_DIR;
}

/// A, B and C name the bundled IEEE-118 scenarios; anything else is a file path.
gridfuse::ScenarioConfig resolve_scenario(const Common& c) {
    gridfuse::ScenarioConfig config;
    if (c.scenario.empty()) {
        if (c.case_path.empty()) throw gridfuse::DataError("either --scenario or --case is required");
        config.id = fs::path(c.case_path).stem().string();
        config.case_ref = c.case_path;
    } else {
        fs::path path = c.scenario;
        if (c.scenario == "A" || c.scenario == "B" || c.scenario == "C")
            path = data_dir() / "scenarios" / ("ieee118_" + c.scenario + ".json");
        config = gridfuse::load_scenario(path);
    }
    if (!c.case_path.empty()) {
        config.case_ref = c.case_path;
        config.case_path = c.case_path;
    }
    if (c.exact) config.noise.draw_scale = 0.0;
    return config;
}

json pv_json(const gridfuse::PvState& s) {
    return {{"v_sh", s.v_sh}, {"v_pv", s.v_pv}, {"i_pv", s.i_pv}, {"i_d", s.i_d}, {"i_ph", s.i_ph}, {"p_pv", s.p_pv}};
}

json battery_json(const gridfuse::BatteryState& s) {
    return {{"v_soc", s.v_soc}, {"v_oc", s.v_oc}, {"v_bt", s.v_bt}, {"i_bt", s.i_bt}, {"p_bt", s.p_bt}};
}

json voltages_json(const gridfuse::GridCase& grid, const std::vector<gridfuse::Complex>& v) {
    json out = json::array();
    for (std::size_t k = 0; k < v.size(); ++k)
        out.push_back({{"bus", grid.buses()[k].id}, {"vr", v[k].real()}, {"vi", v[k].imag()}});
    return out;
}

json truth_json(const gridfuse::GridCase& grid, const gridfuse::GroundTruth& t) {
    json j;
    j["voltages"] = voltages_json(grid, t.voltages);
    j["pv"] = json::array();
    for (std::size_t k = 0; k < t.pv.size(); ++k) {
        auto e = pv_json(t.pv[k]);
        e["p_ac_pu"] = t.pv_ac[k];
        e["eta"] = t.pv_eta[k];
        j["pv"].push_back(e);
    }
    j["battery"] = json::array();
    for (std::size_t k = 0; k < t.battery.size(); ++k) {
        auto e = battery_json(t.battery[k]);
        e["p_ac_pu"] = t.battery_ac[k];
        e["eta"] = t.battery_eta[k];
        e["dispatch"] = t.dispatch[k] == gridfuse::Dispatch::charging ? "charging" : "discharging";
        j["battery"].push_back(e);
    }
    j["powerflow_iterations"] = t.iterations;
    j["max_residual"] = t.max_residual;
    return j;
}

json measurements_json(const gridfuse::MeasurementSet& m) {
    auto rtu = [](const std::vector<gridfuse::RtuMeasurement>& v) {
        json out = json::array();
        for (const auto& r : v)
            out.push_back({{"bus", r.bus}, {"p_z", r.p_z}, {"q_z", r.q_z}, {"v_z", r.v_z}, {"sigma", r.sigma},
                           {"biased", r.biased}});
        return out;
    };
    json j;
    j["rtu"] = rtu(m.rtu);
    j["pv_poi"] = rtu(m.pv_poi);
    j["bt_poi"] = rtu(m.bt_poi);
    j["pv"] = json::array();
    for (const auto& r : m.pv)
        j["pv"].push_back({{"z_v", r.z.z_v}, {"z_i", r.z.z_i}, {"z_ph", r.z.z_ph}, {"biased_v", r.biased_v},
                           {"biased_i", r.biased_i}, {"biased_ph", r.biased_ph}});
    j["battery"] = json::array();
    for (const auto& r : m.battery)
        j["battery"].push_back({{"z_v", r.z.z_v}, {"z_i", r.z.z_i}, {"biased_v", r.biased_v}, {"biased_i", r.biased_i}});
    return j;
}

void emit(const json& j, const std::string& out_dir, const std::string& file) {
    const std::string text = j.dump(2) + "\n";
    if (out_dir.empty()) {
        std::cout << text;
        return;
    }
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    std::ofstream f(fs::path(out_dir) / file, std::ios::binary);
    if (!f || !(f << text)) throw gridfuse::DataError("cannot write " + (fs::path(out_dir) / file).string());
}

/// Ground truth and measurements of one instance at the estimation instant.
struct Instance {
    gridfuse::ScenarioConfig config;
    gridfuse::GridCase grid;
    std::vector<gridfuse::GroundTruth> truth;
    int step = 0;
    gridfuse::MeasurementSet meas;
};

Instance build_instance(const Common& c) {
    auto config = resolve_scenario(c);
    auto grid = gridfuse::load_scenario_case(config);
    auto truth = gridfuse::scenario_truth(config, grid);
    const int step = config.time_steps > 0 ? 1 : 0;
    const std::uint64_t seed = c.seed.value_or(config.base_seed);
    auto meas = gridfuse::synthesize_measurements(grid, config.fleet(), truth[static_cast<std::size_t>(step)],
                                                  config.noise, seed, static_cast<std::uint64_t>(step));
    meas = gridfuse::inject_bad_data(meas, config.fleet(), config.bad_data);
    return {std::move(config), std::move(grid), std::move(truth), step, std::move(meas)};
}

int cmd_simulate(const Common& c) {
    const Instance in = build_instance(c);
    json j;
    j["scenario"] = in.config.id;
    j["step"] = in.step;
    j["truth"] = truth_json(in.grid, in.truth[static_cast<std::size_t>(in.step)]);
    j["measurements"] = measurements_json(in.meas);
    emit(j, c.out, "simulate.json");
    return 0;
}

json solve_json(const std::string& name, const gridfuse::est::Estimates& e) {
    return {{"name", name},         {"converged", e.converged},    {"iterations", e.iterations},
            {"objective", e.objective}, {"kkt_residual", e.kkt_residual}, {"diagnostic", e.diagnostic}};
}

int cmd_estimate(const Common& c) {
    namespace est = gridfuse::est;
    const Instance in = build_instance(c);
    const auto perturbed = gridfuse::perturb_parameters(in.config.fleet(), in.config.parameter_errors);
    const auto& fleet = perturbed.fleet;
    const auto& truth = in.truth[static_cast<std::size_t>(in.step)];
    std::vector<std::optional<est::BatteryHistory>> prev(fleet.battery.size());
    if (in.step > 0)
        for (std::size_t b = 0; b < prev.size(); ++b)
            prev[b] = est::BatteryHistory{in.truth[0].battery[b].v_oc, in.truth[0].battery[b].v_bt,
                                          in.truth[0].battery[b].i_bt};

    json j;
    j["scenario"] = in.config.id;
    j["routine"] = c.routine;
    j["solves"] = json::array();
    bool all_converged = true;
    auto record = [&](const std::string& name, const est::SystemEstimate& e) {
        j["solves"].push_back(solve_json(name, e.raw));
        all_converged = all_converged && e.raw.converged;
        for (const auto& [path, value] : e.params) j["params"][path] = value;
    };

    if (c.routine == "grid") {
        const auto e = est::estimate_standalone_grid(in.grid, in.meas, c.solve);
        record("grid", e);
        j["voltages"] = voltages_json(in.grid, e.voltages);
    } else if (c.routine == "pv") {
        for (std::size_t k = 0; k < fleet.pv.size(); ++k) {
            std::vector<std::string> own;
            for (const auto& p : in.config.unknown_params)
                if (p.rfind(fleet.pv[k].name + ".", 0) == 0) own.push_back(p);
            const auto e = est::estimate_standalone_pv(fleet.pv[k], in.meas.pv[k], own, c.solve);
            record(fleet.pv[k].name, e);
            j["pv"].push_back(pv_json(e.pv[0]));
        }
    } else if (c.routine == "battery") {
        for (std::size_t b = 0; b < fleet.battery.size(); ++b) {
            std::vector<std::string> own;
            for (const auto& p : in.config.unknown_params)
                if (p.rfind(fleet.battery[b].name + ".", 0) == 0) own.push_back(p);
            const auto e = est::estimate_standalone_battery(fleet.battery[b], in.meas.battery[b], prev[b], own, c.solve);
            record(fleet.battery[b].name, e);
            j["battery"].push_back(battery_json(e.battery[0]));
        }
    } else {
        const std::vector<std::string> unknown =
            c.routine == "combined-param" ? in.config.unknown_params : std::vector<std::string>{};
        const auto e = est::estimate_combined(in.grid, fleet, in.meas, unknown, prev, truth.dispatch, c.solve);
        record("combined", e);
        j["voltages"] = voltages_json(in.grid, e.voltages);
        for (const auto& s : e.pv) j["pv"].push_back(pv_json(s));
        for (const auto& s : e.battery) j["battery"].push_back(battery_json(s));
    }
    emit(j, c.out, "estimate.json");
    return all_converged ? 0 : exit_solver;
}

int cmd_montecarlo(const Common& c) {
    const auto config = resolve_scenario(c);
    gridfuse::RunOptions opts;
    opts.instances = c.instances;
    opts.seed = c.seed;
    opts.threads = c.threads;
    opts.solve = c.solve;
    const auto report = gridfuse::run_scenario(config, opts);
    const std::string dir = c.out.empty() ? "results/" + config.id : c.out;
    gridfuse::write_report(report, dir);
    std::cout << gridfuse::metrics_json(report);

    const auto metrics = json::parse(gridfuse::metrics_json(report));
    bool any_success = false;
    for (const auto& [routine, m] : metrics["routines"].items())
        any_success = any_success || m["n_failed"].get<int>() < report.n_instances;
    return any_success ? 0 : exit_solver;
}

int cmd_report(const std::string& in_dir, const std::string& out) {
    const auto report = gridfuse::read_report(in_dir);
    const std::string text = gridfuse::metrics_json(report);
    if (out.empty()) {
        std::cout << text;
    } else {
        std::ofstream f(out, std::ios::binary);
        if (!f || !(f << text)) throw gridfuse::DataError("cannot write " + out);
    }
    return 0;
}

void add_common(CLI::App* app, Common& c, bool with_instances) {
    app->add_option("--scenario", c.scenario, "A, B, C or a scenario JSON path");
    app->add_option("--case", c.case_path, "grid case (.m or .json); overrides the scenario's case");
    app->add_option("--seed", c.seed, "base seed");
    app->add_option("--out", c.out, "output directory");
    app->add_option("--max-iterations", c.solve.max_iterations, "Newton iteration limit per solve")
        ->check(CLI::PositiveNumber);
    if (with_instances) {
        app->add_option("--instances", c.instances, "number of Monte-Carlo instances")->check(CLI::PositiveNumber);
        app->add_option("--threads", c.threads, "worker threads (GRIDFUSE_THREADS overrides)")
            ->check(CLI::NonNegativeNumber);
    } else {
        app->add_flag("--exact", c.exact, "synthesize noise-free measurements");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Joint parameter and state estimation for grids with PV and battery storage"};
    app.require_subcommand(1);
    Common c;
    std::string report_in, report_out;

    auto* simulate = app.add_subcommand("simulate", "ground truth and one synthesized measurement set");
    add_common(simulate, c, false);
    auto* estimate = app.add_subcommand("estimate", "estimate one instance with one routine");
    add_common(estimate, c, false);
    estimate->add_option("--routine", c.routine, "estimation routine")
        ->check(CLI::IsMember({"grid", "pv", "battery", "combined", "combined-param"}));
    auto* montecarlo = app.add_subcommand("montecarlo", "run a full Monte-Carlo scenario and write a report");
    add_common(montecarlo, c, true);
    auto* report = app.add_subcommand("report", "recompute metrics from stored estimates");
    report->add_option("--in", report_in, "report directory written by montecarlo")->required();
    report->add_option("--out", report_out, "metrics file (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : exit_usage;
    }

    try {
        if (*simulate) return cmd_simulate(c);
        if (*estimate) return cmd_estimate(c);
        if (*montecarlo) return cmd_montecarlo(c);
        return cmd_report(report_in, report_out);
    } catch (const gridfuse::SolverError& e) {
        std::cerr << "solver error: " << e.what() << "\n";
        return exit_solver;
    } catch (const gridfuse::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return exit_data;
    } catch (const gridfuse::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_data;
    }
}
