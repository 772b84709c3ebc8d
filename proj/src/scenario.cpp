#include "gridfuse/scenario.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "gridfuse/error.hpp"

namespace gridfuse {

namespace {

using nlohmann::json;

template <typename T>
T get(const json& j, const std::string& key, const std::string& where) {
    if (!j.contains(key)) throw DataError("scenario field '" + where + key + "' is missing");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw DataError("scenario field '" + where + key + "' has the wrong type");
    }
}

template <typename T>
T get_or(const json& j, const std::string& key, const std::string& where, T fallback) {
    return j.contains(key) ? get<T>(j, key, where) : fallback;
}

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw DataError("scenario field '" + where + key + "' is not part of the schema");
    }
}

InverterCurve parse_curve(const json& j, const std::string& where, InverterCurve fallback) {
    if (j.is_null()) return fallback;
    if (!j.is_object()) throw DataError("scenario field '" + where + "' must be an object");
    reject_unknown(j, {"m", "gamma", "eta10", "eta100", "rated_w"}, where + ".");
    if (j.contains("eta10")) {
        return fit_inverter_curve(get<double>(j, "eta10", where + "."), get<double>(j, "eta100", where + "."),
                                  get<double>(j, "rated_w", where + "."), fallback.kind);
    }
    InverterCurve c{get<double>(j, "m", where + "."), get<double>(j, "gamma", where + "."), fallback.kind};
    validate(c);
    return c;
}

json curve_json(const InverterCurve& c) { return {{"m", c.m}, {"gamma", c.gamma}}; }

json merged(const json& defaults, const json& entry) {
    json out = defaults.is_object() ? defaults : json::object();
    out.merge_patch(entry);
    return out;
}

std::vector<double> parse_profile(const json& j, int steps, const std::string& where) {
    const std::size_t n = static_cast<std::size_t>(steps) + 1;
    if (j.is_number()) return std::vector<double>(n, j.get<double>());
    if (j.is_array()) {
        auto v = j.get<std::vector<double>>();
        if (v.size() != n)
            throw DataError("scenario field '" + where + "' needs " + std::to_string(n) + " samples");
        return v;
    }
    if (!j.is_object()) throw DataError("scenario field '" + where + "' has the wrong type");
    reject_unknown(j, {"shape", "current", "discharge_steps"}, where + ".");
    if (get<std::string>(j, "shape", where + ".") != "discharge_charge")
        throw DataError("scenario field '" + where + ".shape' must be \"discharge_charge\"");
    const double amp = get<double>(j, "current", where + ".");
    const int d = get_or<int>(j, "discharge_steps", where + ".", steps / 2);
    if (d < 0 || d > steps) throw DataError("scenario field '" + where + ".discharge_steps' out of range");
    // Discharge at +amp, pass through zero at instant d, then charge at -amp;
    // with d = steps/2 the trapezoid nets zero charge.
    std::vector<double> v(n);
    for (int s = 0; s <= steps; ++s) v[static_cast<std::size_t>(s)] = s < d ? amp : (s == d ? 0.0 : -amp);
    if (steps == 0) v[0] = amp;
    return v;
}

}  // namespace

std::string to_letter(ScenarioKind kind) {
    switch (kind) {
        case ScenarioKind::clean: return "A";
        case ScenarioKind::bad_data: return "B";
        case ScenarioKind::unknown_parameter: return "C";
    }
    return "A";
}

DerFleet ScenarioConfig::fleet() const {
    DerFleet f;
    for (const auto& s : pv) f.pv.push_back(s.system);
    for (const auto& s : battery) f.battery.push_back(s.system);
    return f;
}

std::vector<PvOperatingPoint> ScenarioConfig::pv_points() const {
    std::vector<PvOperatingPoint> out;
    for (const auto& s : pv) out.push_back(s.point);
    return out;
}

std::string ScenarioConfig::canonical_json() const {
    json j;
    j["schema"] = 1;
    j["id"] = id;
    j["case"] = case_ref;
    j["scenario"] = to_letter(kind);
    if (tile) {
        j["tile"] = {{"copies", tile->copies}, {"tie_buses", tile->tie_buses}, {"tie_r", tile->tie_r},
                     {"tie_x", tile->tie_x}};
    }
    json pvs = json::array();
    for (const auto& s : pv) {
        const auto& p = s.system;
        pvs.push_back({{"name", p.name}, {"bus", p.bus}, {"r_s", p.r_s}, {"r_sh", p.r_sh}, {"i_0", p.i_0},
                       {"a", p.a}, {"n_parallel_scale", p.n_parallel_scale}, {"i_ph_stc", p.i_ph_stc},
                       {"alpha_t", p.alpha_t}, {"inverter", curve_json(p.inverter)},
                       {"irradiance", s.point.irradiance}, {"t_cell", s.point.t_cell}, {"v_op", s.point.v_op}});
    }
    j["pv"] = std::move(pvs);
    json bts = json::array();
    for (const auto& s : battery) {
        const auto& b = s.system;
        bts.push_back({{"name", b.name}, {"bus", b.bus}, {"c_cap", b.c_cap}, {"r_se", b.r_se},
                       {"r_sd", std::isinf(b.r_sd) ? json(nullptr) : json(b.r_sd)}, {"ocv_a", b.ocv_a},
                       {"ocv_b", b.ocv_b}, {"n_parallel_scale", b.n_parallel_scale},
                       {"inverter", curve_json(b.inverter)}, {"rectifier", curve_json(b.rectifier)},
                       {"soc0", s.soc0}, {"profile", s.current}});
    }
    j["battery"] = std::move(bts);
    j["noise"] = {{"rtu_sigma", noise.rtu_sigma}, {"der_sigma", noise.der_sigma}, {"draw_scale", noise.draw_scale}};
    json bad = json::array();
    for (const auto& b : bad_data) bad.push_back({{"target", b.target}, {"bias", b.bias}});
    j["bad_data"] = std::move(bad);
    j["unknown_params"] = unknown_params;
    json perr = json::array();
    for (const auto& e : parameter_errors) perr.push_back({{"path", e.path}, {"rel_error", e.rel_error}});
    j["parameter_errors"] = std::move(perr);
    j["n_instances"] = n_instances;
    j["base_seed"] = base_seed;
    j["time"] = {{"steps", time_steps}, {"dt", dt}};
    j["routines"] = routines;
    return j.dump();
}

ScenarioConfig parse_scenario(std::string_view text, const std::filesystem::path& base_dir) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("scenario JSON: ") + e.what());
    }
    if (!j.is_object()) throw DataError("scenario must be a JSON object");
    reject_unknown(j,
                   {"schema", "id", "case", "scenario", "tile", "pv_defaults", "pv", "battery_defaults", "battery",
                    "noise", "bad_data", "unknown_params", "parameter_errors", "n_instances", "base_seed", "time",
                    "routines", "description"},
                   "");
    if (get<int>(j, "schema", "") != 1) throw DataError("scenario field 'schema' must be 1");

    ScenarioConfig c;
    c.id = get_or<std::string>(j, "id", "", "scenario");
    c.case_ref = get<std::string>(j, "case", "");
    const auto case_rel = std::filesystem::path(c.case_ref);
    c.case_path = case_rel.is_absolute() ? case_rel : base_dir / case_rel;

    const auto letter = get_or<std::string>(j, "scenario", "", "A");
    if (letter == "A") c.kind = ScenarioKind::clean;
    else if (letter == "B") c.kind = ScenarioKind::bad_data;
    else if (letter == "C") c.kind = ScenarioKind::unknown_parameter;
    else throw DataError("scenario field 'scenario' must be A, B or C");

    if (j.contains("time")) {
        const auto& t = j["time"];
        reject_unknown(t, {"steps", "dt"}, "time.");
        c.time_steps = get_or<int>(t, "steps", "time.", 0);
        c.dt = get_or<double>(t, "dt", "time.", 300.0);
        if (c.time_steps < 0) throw DataError("scenario field 'time.steps' must be non-negative");
        if (!(c.dt > 0.0)) throw DataError("scenario field 'time.dt' must be positive");
    }

    if (j.contains("tile")) {
        const auto& t = j["tile"];
        reject_unknown(t, {"copies", "tie_buses", "tie_r", "tie_x"}, "tile.");
        TileSpec spec;
        spec.copies = get<int>(t, "copies", "tile.");
        spec.tie_buses = get<std::vector<BusId>>(t, "tie_buses", "tile.");
        spec.tie_r = get_or<double>(t, "tie_r", "tile.", spec.tie_r);
        spec.tie_x = get_or<double>(t, "tie_x", "tile.", spec.tie_x);
        c.tile = spec;
    }

    const json pv_defaults = j.value("pv_defaults", json::object());
    if (j.contains("pv")) {
        if (!j["pv"].is_array()) throw DataError("scenario field 'pv' must be an array");
        for (std::size_t k = 0; k < j["pv"].size(); ++k) {
            const std::string w = "pv[" + std::to_string(k) + "].";
            const json e = merged(pv_defaults, j["pv"][k]);
            reject_unknown(e,
                           {"name", "bus", "r_s", "r_sh", "i_0", "a", "n_parallel_scale", "i_ph_stc", "alpha_t",
                            "inverter", "irradiance", "t_cell", "v_op"},
                           w);
            PvSite s;
            PvSystem& p = s.system;
            p.name = get_or<std::string>(e, "name", w, "pv" + std::to_string(k));
            p.bus = get<int>(e, "bus", w);
            p.r_s = get_or<double>(e, "r_s", w, p.r_s);
            p.r_sh = get_or<double>(e, "r_sh", w, p.r_sh);
            p.i_0 = get_or<double>(e, "i_0", w, p.i_0);
            p.a = get_or<double>(e, "a", w, p.a);
            p.n_parallel_scale = get_or<double>(e, "n_parallel_scale", w, p.n_parallel_scale);
            p.i_ph_stc = get_or<double>(e, "i_ph_stc", w, p.i_ph_stc);
            p.alpha_t = get_or<double>(e, "alpha_t", w, p.alpha_t);
            p.inverter = parse_curve(e.value("inverter", json()), w + "inverter", p.inverter);
            s.point.irradiance = get_or<double>(e, "irradiance", w, s.point.irradiance);
            s.point.t_cell = get_or<double>(e, "t_cell", w, s.point.t_cell);
            s.point.v_op = get<double>(e, "v_op", w);
            validate(p);
            c.pv.push_back(std::move(s));
        }
    }

    const json bt_defaults = j.value("battery_defaults", json::object());
    if (j.contains("battery")) {
        if (!j["battery"].is_array()) throw DataError("scenario field 'battery' must be an array");
        for (std::size_t k = 0; k < j["battery"].size(); ++k) {
            const std::string w = "battery[" + std::to_string(k) + "].";
            const json e = merged(bt_defaults, j["battery"][k]);
            reject_unknown(e,
                           {"name", "bus", "c_cap", "r_se", "r_sd", "ocv_a", "ocv_b", "n_parallel_scale",
                            "inverter", "rectifier", "soc0", "profile"},
                           w);
            BatterySite s;
            BatterySystem& b = s.system;
            b.name = get_or<std::string>(e, "name", w, "bt" + std::to_string(k));
            b.bus = get<int>(e, "bus", w);
            b.c_cap = get_or<double>(e, "c_cap", w, b.c_cap);
            b.r_se = get_or<double>(e, "r_se", w, b.r_se);
            if (e.contains("r_sd"))
                b.r_sd = e["r_sd"].is_null() ? std::numeric_limits<double>::infinity() : get<double>(e, "r_sd", w);
            b.ocv_a = get_or<double>(e, "ocv_a", w, b.ocv_a);
            b.ocv_b = get_or<double>(e, "ocv_b", w, b.ocv_b);
            b.n_parallel_scale = get_or<double>(e, "n_parallel_scale", w, b.n_parallel_scale);
            b.dt = c.dt;
            b.inverter = parse_curve(e.value("inverter", json()), w + "inverter", b.inverter);
            b.rectifier = parse_curve(e.value("rectifier", json()), w + "rectifier", b.rectifier);
            s.soc0 = get_or<double>(e, "soc0", w, s.soc0);
            if (!e.contains("profile")) throw DataError("scenario field '" + w + "profile' is missing");
            s.current = parse_profile(e["profile"], c.time_steps, w + "profile");
            validate(b);
            c.battery.push_back(std::move(s));
        }
    }

    if (j.contains("noise")) {
        const auto& n = j["noise"];
        reject_unknown(n, {"rtu_sigma", "der_sigma", "draw_scale"}, "noise.");
        c.noise.rtu_sigma = get_or<double>(n, "rtu_sigma", "noise.", c.noise.rtu_sigma);
        c.noise.der_sigma = get_or<double>(n, "der_sigma", "noise.", c.noise.der_sigma);
        c.noise.draw_scale = get_or<double>(n, "draw_scale", "noise.", c.noise.draw_scale);
        if (!(c.noise.rtu_sigma > 0.0 && c.noise.der_sigma > 0.0))
            throw DataError("scenario field 'noise': sigmas must be positive (use draw_scale 0 for exact data)");
        if (c.noise.draw_scale < 0.0) throw DataError("scenario field 'noise.draw_scale' must be non-negative");
    }

    for (std::size_t k = 0; k < j.value("bad_data", json::array()).size(); ++k) {
        const auto& e = j["bad_data"][k];
        const std::string w = "bad_data[" + std::to_string(k) + "].";
        c.bad_data.push_back({get<std::string>(e, "target", w), get<double>(e, "bias", w)});
    }
    c.unknown_params = get_or<std::vector<std::string>>(j, "unknown_params", "", {});
    for (std::size_t k = 0; k < j.value("parameter_errors", json::array()).size(); ++k) {
        const auto& e = j["parameter_errors"][k];
        const std::string w = "parameter_errors[" + std::to_string(k) + "].";
        c.parameter_errors.push_back({get<std::string>(e, "path", w), get<double>(e, "rel_error", w)});
    }

    c.n_instances = get_or<int>(j, "n_instances", "", c.n_instances);
    if (c.n_instances < 1) throw DataError("scenario field 'n_instances' must be at least 1");
    c.base_seed = get_or<std::uint64_t>(j, "base_seed", "", c.base_seed);
    c.routines = get_or<std::vector<std::string>>(j, "routines", "", c.routines);
    for (const auto& r : c.routines)
        if (r != "standalone" && r != "combined")
            throw DataError("scenario field 'routines' accepts \"standalone\" and \"combined\"");

    const DerFleet fleet = c.fleet();
    std::set<std::string> names;
    for (const auto& p : fleet.pv)
        if (!names.insert(p.name).second) throw DataError("duplicate DER name '" + p.name + "'");
    for (const auto& b : fleet.battery)
        if (!names.insert(b.name).second) throw DataError("duplicate DER name '" + b.name + "'");
    for (const auto& path : c.unknown_params) {
        const auto dot = path.rfind('.');
        const std::string who = dot == std::string::npos ? path : path.substr(0, dot);
        const std::string field = dot == std::string::npos ? "" : path.substr(dot + 1);
        bool ok = false;
        for (const auto& p : fleet.pv) ok = ok || (p.name == who && (field == "r_s" || field == "r_sh"));
        for (const auto& b : fleet.battery) ok = ok || (b.name == who && field == "r_se");
        if (!ok) throw DataError("scenario field 'unknown_params': '" + path + "' is not a declared parameter");
    }
    for (const auto& e : c.parameter_errors) (void)parameter_value(fleet, e.path);
    return c;
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open scenario file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scenario(ss.str(), path.parent_path());
}

void validate_against(const ScenarioConfig& config, const GridCase& grid) {
    for (const auto& s : config.pv)
        if (!grid.has_bus(s.system.bus))
            throw DataError("PV " + s.system.name + " attached to missing bus " + std::to_string(s.system.bus));
    for (const auto& s : config.battery)
        if (!grid.has_bus(s.system.bus))
            throw DataError("battery " + s.system.name + " attached to missing bus " + std::to_string(s.system.bus));
}

GridCase load_scenario_case(const ScenarioConfig& config) {
    GridCase grid = load_case(config.case_path);
    if (config.tile) grid = tile_case(grid, *config.tile);
    validate_against(config, grid);
    return grid;
}

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace gridfuse
