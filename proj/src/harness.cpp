#include "gridfuse/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "gridfuse/error.hpp"
#include "gridfuse/metrics.hpp"

namespace gridfuse {

using nlohmann::json;

namespace {

struct InstanceResult {
    std::vector<EstimateRecord> records;
    std::vector<TimingRecord> timing;
};

/// Everything shared read-only by all instances of a run.
struct RunContext {
    const ScenarioConfig& config;
    GridCase grid;
    DerFleet true_fleet;
    DerFleet est_fleet;
    std::map<std::string, double> param_truth;
    std::vector<GroundTruth> truth;  ///< per instant
    std::vector<int> steps;          ///< estimation instants
    const est::SolveOptions& solve;
};

std::vector<std::string> own_unknowns(const std::vector<std::string>& unknown, const std::string& name) {
    std::vector<std::string> out;
    for (const auto& p : unknown)
        if (p.rfind(name + ".", 0) == 0) out.push_back(p);
    return out;
}

class Recorder {
public:
    Recorder(std::vector<EstimateRecord>& out, int instance, std::string routine)
        : out_(out), instance_(instance), routine_(std::move(routine)) {}

    void add(const std::string& family, const std::string& component, int step, double est, double truth,
             bool converged) {
        out_.push_back({instance_, routine_, family, component, step, est, truth, converged});
    }

    void solve_row(const std::string& component, int step, const est::Estimates& raw) {
        add("solve", component, step, static_cast<double>(raw.iterations), 0.0, raw.converged);
    }

    void pv(const std::string& name, int step, const PvState& e, const PvState& t, bool ok) {
        add("v_pv", name, step, e.v_pv, t.v_pv, ok);
        add("v_sh", name, step, e.v_sh, t.v_sh, ok);
        add("i_pv", name, step, e.i_pv, t.i_pv, ok);
        add("p_pv", name, step, e.p_pv, t.p_pv, ok);
    }

    void battery(const std::string& name, int step, const BatteryState& e, const BatteryState& t, bool ok) {
        add("v_bt", name, step, e.v_bt, t.v_bt, ok);
        add("v_oc", name, step, e.v_oc, t.v_oc, ok);
        add("v_soc", name, step, e.v_soc, t.v_soc, ok);
        add("i_bt", name, step, e.i_bt, t.i_bt, ok);
        add("p_bt", name, step, e.p_bt, t.p_bt, ok);
    }

    void grid(const GridCase& g, int step, const std::vector<Complex>& e, const std::vector<Complex>& t, bool ok) {
        for (std::size_t k = 0; k < g.size(); ++k)
            add("grid_vm", "bus" + std::to_string(g.buses()[k].id), step, std::abs(e[k]), std::abs(t[k]), ok);
    }

    void params(const std::map<std::string, double>& est, const std::map<std::string, double>& truth, int step,
                bool ok) {
        for (const auto& [path, value] : est) add("param", path, step, value, truth.at(path), ok);
    }

private:
    std::vector<EstimateRecord>& out_;
    int instance_;
    std::string routine_;
};

void solver_failure(Recorder& rec, const std::string& component, int step) {
    rec.add("solve", component, step, -1.0, 0.0, false);
}

std::optional<est::BatteryHistory> history_of(const BatteryState& s) { return est::BatteryHistory{s.v_oc, s.v_bt, s.i_bt}; }

void run_standalone(const RunContext& ctx, const std::vector<MeasurementSet>& meas, Recorder& rec) {
    const auto& fleet = ctx.est_fleet;
    const auto& unknown = ctx.config.unknown_params;
    std::vector<std::optional<est::BatteryHistory>> prev(fleet.battery.size());
    if (ctx.steps.front() > 0)
        for (std::size_t b = 0; b < prev.size(); ++b) prev[b] = history_of(ctx.truth[0].battery[b]);
    std::vector<bool> chain_alive(fleet.battery.size(), true);

    for (std::size_t si = 0; si < ctx.steps.size(); ++si) {
        const int s = ctx.steps[si];
        const auto& m = meas[si];
        const auto& t = ctx.truth[static_cast<std::size_t>(s)];
        try {
            const auto e = est::estimate_standalone_grid(ctx.grid, m, ctx.solve);
            rec.solve_row("grid", s, e.raw);
            rec.grid(ctx.grid, s, e.voltages, t.voltages, e.raw.converged);
        } catch (const SolverError&) {
            solver_failure(rec, "grid", s);
        }
        for (std::size_t k = 0; k < fleet.pv.size(); ++k) {
            const auto& sys = fleet.pv[k];
            try {
                const auto e = est::estimate_standalone_pv(sys, m.pv[k], own_unknowns(unknown, sys.name), ctx.solve);
                rec.solve_row(sys.name, s, e.raw);
                rec.pv(sys.name, s, e.pv[0], t.pv[k], e.raw.converged);
                rec.params(e.params, ctx.param_truth, s, e.raw.converged);
            } catch (const SolverError&) {
                solver_failure(rec, sys.name, s);
            }
        }
        for (std::size_t b = 0; b < fleet.battery.size(); ++b) {
            const auto& sys = fleet.battery[b];
            if (!chain_alive[b]) {
                solver_failure(rec, sys.name, s);
                continue;
            }
            try {
                const auto e = est::estimate_standalone_battery(sys, m.battery[b], prev[b],
                                                                own_unknowns(unknown, sys.name), ctx.solve);
                rec.solve_row(sys.name, s, e.raw);
                rec.battery(sys.name, s, e.battery[0], t.battery[b], e.raw.converged);
                rec.params(e.params, ctx.param_truth, s, e.raw.converged);
                prev[b] = history_of(e.battery[0]);
            } catch (const SolverError&) {
                solver_failure(rec, sys.name, s);
                chain_alive[b] = false;
            }
        }
    }
}

void run_combined(const RunContext& ctx, const std::vector<MeasurementSet>& meas, Recorder& rec) {
    const auto& fleet = ctx.est_fleet;
    std::vector<std::optional<est::BatteryHistory>> prev(fleet.battery.size());
    if (ctx.steps.front() > 0)
        for (std::size_t b = 0; b < prev.size(); ++b) prev[b] = history_of(ctx.truth[0].battery[b]);

    for (std::size_t si = 0; si < ctx.steps.size(); ++si) {
        const int s = ctx.steps[si];
        const auto& t = ctx.truth[static_cast<std::size_t>(s)];
        try {
            const auto e = est::estimate_combined(ctx.grid, fleet, meas[si], ctx.config.unknown_params, prev,
                                                  t.dispatch, ctx.solve);
            const bool ok = e.raw.converged;
            rec.solve_row("combined", s, e.raw);
            rec.grid(ctx.grid, s, e.voltages, t.voltages, ok);
            for (std::size_t k = 0; k < fleet.pv.size(); ++k) rec.pv(fleet.pv[k].name, s, e.pv[k], t.pv[k], ok);
            for (std::size_t b = 0; b < fleet.battery.size(); ++b) {
                rec.battery(fleet.battery[b].name, s, e.battery[b], t.battery[b], ok);
                prev[b] = history_of(e.battery[b]);
            }
            rec.params(e.params, ctx.param_truth, s, ok);
        } catch (const SolverError&) {
            // The chain cannot continue without a previous estimate.
            for (std::size_t rest = si; rest < ctx.steps.size(); ++rest) solver_failure(rec, "combined", ctx.steps[rest]);
            return;
        }
    }
}

InstanceResult run_instance(const RunContext& ctx, int instance, std::uint64_t seed) {
    InstanceResult out;
    std::vector<MeasurementSet> meas;
    for (int s : ctx.steps) {
        auto m = synthesize_measurements(ctx.grid, ctx.true_fleet, ctx.truth[static_cast<std::size_t>(s)],
                                         ctx.config.noise, seed, static_cast<std::uint64_t>(s));
        meas.push_back(inject_bad_data(m, ctx.true_fleet, ctx.config.bad_data));
    }
    for (const auto& routine : ctx.config.routines) {
        Recorder rec(out.records, instance, routine);
        const auto start = std::chrono::steady_clock::now();
        if (routine == "standalone")
            run_standalone(ctx, meas, rec);
        else
            run_combined(ctx, meas, rec);
        const std::chrono::duration<double> took = std::chrono::steady_clock::now() - start;
        out.timing.push_back({instance, routine, took.count()});
    }
    return out;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(line);
    while (std::getline(is, cur, sep)) out.push_back(cur);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path.string());
    f << text;
    if (!f) throw DataError("cannot write " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

using Column = std::pair<std::string, int>;  // component, step

std::set<int> failed_instances(const std::vector<EstimateRecord>& records, const std::string& routine) {
    std::set<int> failed;
    for (const auto& r : records)
        if (r.routine == routine && !r.converged) failed.insert(r.instance);
    return failed;
}

json family_metrics(const std::vector<const EstimateRecord*>& rows) {
    std::vector<Column> columns;
    std::map<Column, double> truth;
    std::map<int, std::map<Column, double>> by_instance;
    for (const auto* r : rows) {
        const Column c{r->component, r->step};
        truth[c] = r->truth;
        by_instance[r->instance][c] = r->estimate;
    }
    for (const auto& [c, _] : truth) columns.push_back(c);

    std::vector<double> est;
    std::vector<double> tv;
    for (const auto& c : columns) tv.push_back(truth[c]);
    std::size_t n_s = 0;
    for (const auto& [inst, values] : by_instance) {
        if (values.size() != columns.size()) throw DataError("instance " + std::to_string(inst) + " has missing estimates");
        for (const auto& c : columns) est.push_back(values.at(c));
        ++n_s;
    }

    json j;
    try {
        j["nrmse"] = metrics::nrmse(est, n_s, tv);
    } catch (const DataError&) {
        j["nrmse"] = nullptr;
    }
    j["var_avg"] = metrics::variance_avg(est, n_s, columns.size());

    std::vector<double> errors;
    for (const auto* r : rows)
        if (r->truth != 0.0) errors.push_back(metrics::estimation_error(r->estimate, r->truth));
    const auto s = metrics::summarize(errors);
    j["error_pct"] = {{"count", s.count}};
    if (s.count > 0) {
        j["error_pct"]["mean"] = s.mean;
        j["error_pct"]["median"] = s.median;
        j["error_pct"]["q1"] = s.q1;
        j["error_pct"]["q3"] = s.q3;
        j["error_pct"]["iqr"] = s.iqr();
        j["error_pct"]["mean_abs"] = s.mean_abs;
        j["error_pct"]["max_abs"] = s.max_abs;
    }
    j["n_components"] = columns.size();
    return j;
}

std::vector<std::string> routines_of(const RunReport& report) {
    std::vector<std::string> out;
    for (const auto& r : report.records)
        if (std::find(out.begin(), out.end(), r.routine) == out.end()) out.push_back(r.routine);
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

int resolve_threads(int requested) {
    if (const char* env = std::getenv("GRIDFUSE_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    if (requested > 0) return requested;
    return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<GroundTruth> scenario_truth(const ScenarioConfig& config, const GridCase& grid) {
    const DerFleet fleet = config.fleet();
    const auto points = config.pv_points();
    const int n_steps = config.time_steps;
    std::vector<std::vector<double>> soc;
    for (const auto& site : config.battery)
        soc.push_back(n_steps > 0 ? step_soc(site.system, site.current, n_steps, config.dt, site.soc0)
                                  : std::vector<double>{site.soc0});
    std::vector<GroundTruth> out;
    for (int s = 0; s <= n_steps; ++s) {
        std::vector<BatterySchedule> schedule;
        for (std::size_t b = 0; b < config.battery.size(); ++b)
            schedule.push_back({soc[b][static_cast<std::size_t>(s)], config.battery[b].current[static_cast<std::size_t>(s)]});
        out.push_back(solve_combined_powerflow(grid, fleet, points, schedule));
    }
    return out;
}

RunReport run_scenario(const ScenarioConfig& config, const RunOptions& opts) {
    const GridCase grid = load_scenario_case(config);
    const DerFleet true_fleet = config.fleet();
    const auto perturbed = perturb_parameters(true_fleet, config.parameter_errors);
    std::map<std::string, double> param_truth;
    for (const auto& p : config.unknown_params) param_truth[p] = parameter_value(true_fleet, p);

    std::vector<int> steps;
    if (config.time_steps == 0)
        steps.push_back(0);
    else
        for (int s = 1; s <= config.time_steps; ++s) steps.push_back(s);

    const RunContext ctx{config, grid, true_fleet, perturbed.fleet, param_truth,
                         scenario_truth(config, grid), steps, opts.solve};

    RunReport report;
    report.scenario_id = config.id;
    report.base_seed = opts.seed.value_or(config.base_seed);
    report.n_instances = opts.instances.value_or(config.n_instances);
    if (report.n_instances < 1) throw DataError("instance count must be at least 1");
    report.config_json = config.canonical_json();

    const int n = report.n_instances;
    std::vector<InstanceResult> results(static_cast<std::size_t>(n));
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (int i = next++; i < n; i = next++) {
            try {
                results[static_cast<std::size_t>(i)] =
                    run_instance(ctx, i, report.base_seed + static_cast<std::uint64_t>(i));
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next = n;
            }
        }
    };
    const int threads = std::min(resolve_threads(opts.threads), n);
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);

    for (auto& r : results) {
        report.records.insert(report.records.end(), r.records.begin(), r.records.end());
        report.timing.insert(report.timing.end(), r.timing.begin(), r.timing.end());
    }
    return report;
}

std::vector<std::pair<int, double>> soc_error_series(const RunReport& report, const std::string& routine) {
    const auto failed = failed_instances(report.records, routine);
    std::map<int, std::pair<double, int>> acc;
    for (const auto& r : report.records) {
        if (r.routine != routine || r.family != "v_soc" || failed.contains(r.instance)) continue;
        auto& [sum, count] = acc[r.step];
        sum += std::abs(r.estimate - r.truth) * 100.0;
        ++count;
    }
    std::vector<std::pair<int, double>> out;
    for (const auto& [step, v] : acc) out.emplace_back(step, v.first / v.second);
    return out;
}

std::string metrics_json(const RunReport& report) {
    json root;
    root["scenario"] = report.scenario_id;
    root["n_instances"] = report.n_instances;
    json routines = json::object();
    for (const auto& routine : routines_of(report)) {
        const auto failed = failed_instances(report.records, routine);
        std::map<std::string, std::vector<const EstimateRecord*>> families;
        double iterations = 0.0;
        int solves = 0;
        for (const auto& r : report.records) {
            if (r.routine != routine || failed.contains(r.instance)) continue;
            if (r.family == "solve") {
                iterations += r.estimate;
                ++solves;
            } else {
                families[r.family].push_back(&r);
            }
        }
        json j;
        j["n_instances"] = report.n_instances;
        j["n_failed"] = failed.size();
        j["failed_instances"] = std::vector<int>(failed.begin(), failed.end());
        j["mean_iterations"] = solves > 0 ? json(iterations / solves) : json(nullptr);
        json nr = json::object(), var = json::object(), err = json::object();
        for (const auto& [family, rows] : families) {
            const json m = family_metrics(rows);
            nr[family] = m["nrmse"];
            var[family] = m["var_avg"];
            err[family] = m["error_pct"];
        }
        j["nrmse"] = nr;
        j["var_avg"] = var;
        j["error_pct"] = err;
        const auto soc = soc_error_series(report, routine);
        if (soc.size() > 1) j["soc_final_abs_error_pct"] = soc.back().second;
        routines[routine] = j;
    }
    root["routines"] = routines;
    return root.dump(2) + "\n";
}

std::string manifest_json(const RunReport& report) {
    json j;
    j["scenario"] = report.scenario_id;
    j["base_seed"] = report.base_seed;
    j["n_instances"] = report.n_instances;
    j["instance_seed"] = "base_seed + instance";
    j["prng"] = "splitmix64 counter stream, Box-Muller gaussian";
    j["config_hash"] = hex64(fnv1a(report.config_json));
    j["config"] = json::parse(report.config_json);
    return j.dump(2) + "\n";
}

std::string estimates_csv(const std::vector<EstimateRecord>& records) {
    std::string out = "instance,routine,family,component,step,estimate,truth,converged\n";
    for (const auto& r : records) {
        if (r.component.find_first_of(",\n") != std::string::npos)
            throw DataError("component name '" + r.component + "' cannot be written to CSV");
        out += std::to_string(r.instance) + ',' + r.routine + ',' + r.family + ',' + r.component + ',' +
               std::to_string(r.step) + ',' + format_double(r.estimate) + ',' + format_double(r.truth) + ',' +
               (r.converged ? "1" : "0") + '\n';
    }
    return out;
}

std::vector<EstimateRecord> parse_estimates_csv(const std::string& text) {
    std::vector<EstimateRecord> out;
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line_no == 1 || line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != 8) throw DataError("estimates.csv line " + std::to_string(line_no) + ": expected 8 fields");
        try {
            EstimateRecord r;
            r.instance = std::stoi(f[0]);
            r.routine = f[1];
            r.family = f[2];
            r.component = f[3];
            r.step = std::stoi(f[4]);
            r.estimate = std::strtod(f[5].c_str(), nullptr);
            r.truth = std::strtod(f[6].c_str(), nullptr);
            r.converged = f[7] == "1";
            out.push_back(std::move(r));
        } catch (const std::logic_error&) {
            throw DataError("estimates.csv line " + std::to_string(line_no) + ": malformed number");
        }
    }
    return out;
}

void write_report(const RunReport& report, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
    write_file(dir / "estimates.csv", estimates_csv(report.records));
    write_file(dir / "metrics.json", metrics_json(report));
    write_file(dir / "manifest.json", manifest_json(report));

    std::string timing = "instance,routine,seconds\n";
    for (const auto& t : report.timing)
        timing += std::to_string(t.instance) + ',' + t.routine + ',' + format_double(t.seconds) + '\n';
    write_file(dir / "timing.csv", timing);

    std::string soc = "routine,step,mean_abs_soc_error_pct\n";
    bool any = false;
    for (const auto& routine : routines_of(report))
        for (const auto& [step, err] : soc_error_series(report, routine)) {
            soc += routine + ',' + std::to_string(step) + ',' + format_double(err) + '\n';
            any = true;
        }
    if (any) write_file(dir / "soc_series.csv", soc);
}

RunReport read_report(const std::filesystem::path& dir) {
    RunReport r;
    json m;
    try {
        m = json::parse(read_file(dir / "manifest.json"));
        r.scenario_id = m.at("scenario").get<std::string>();
        r.base_seed = m.at("base_seed").get<std::uint64_t>();
        r.n_instances = m.at("n_instances").get<int>();
        r.config_json = m.at("config").dump();
    } catch (const json::exception& e) {
        throw DataError(std::string("manifest.json: ") + e.what());
    }
    r.records = parse_estimates_csv(read_file(dir / "estimates.csv"));
    return r;
}

}  // namespace gridfuse
