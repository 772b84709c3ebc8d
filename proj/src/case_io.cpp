#include "gridfuse/case_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "gridfuse/error.hpp"

namespace gridfuse {

namespace {

using nlohmann::json;

struct MatRow {
    int line = 0;
    std::vector<double> values;
};

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void fail(int line, const std::string& what) {
    throw DataError("line " + std::to_string(line) + ": " + what);
}

double parse_number(std::string_view tok, int line) {
    double v = 0.0;
    if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(v))
        fail(line, "invalid number '" + std::string(tok) + "'");
    return v;
}

void parse_row_text(std::string_view text, int line, std::vector<MatRow>& rows) {
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find(';', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view seg = text.substr(start, end - start);
        MatRow row{line, {}};
        std::size_t i = 0;
        while (i < seg.size()) {
            while (i < seg.size() && (seg[i] == ' ' || seg[i] == '\t' || seg[i] == ',' || seg[i] == '\r')) ++i;
            std::size_t j = i;
            while (j < seg.size() && seg[j] != ' ' && seg[j] != '\t' && seg[j] != ',' && seg[j] != '\r') ++j;
            if (j > i) row.values.push_back(parse_number(seg.substr(i, j - i), line));
            i = j;
        }
        if (!row.values.empty()) rows.push_back(std::move(row));
        start = end + 1;
    }
}

struct MatpowerBlocks {
    std::optional<double> base_mva;
    std::map<std::string, std::vector<MatRow>> matrices;
    std::map<std::string, int> opened_at;
};

MatpowerBlocks scan_matpower(std::string_view text) {
    MatpowerBlocks out;
    std::string current;  // matrix being read, empty outside
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size() && pos < text.size() + 1) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        std::string_view line = text.substr(pos, nl - pos);
        ++line_no;
        pos = nl + 1;
        if (const auto pc = line.find('%'); pc != std::string_view::npos) line = line.substr(0, pc);
        line = trim(line);

        if (!current.empty()) {
            const auto close = line.find(']');
            parse_row_text(line.substr(0, close), line_no, out.matrices[current]);
            if (close != std::string_view::npos) current.clear();
        } else if (line.starts_with("mpc.")) {
            const auto eq = line.find('=');
            if (eq == std::string_view::npos) fail(line_no, "expected assignment");
            const std::string name(trim(line.substr(4, eq - 4)));
            std::string_view rhs = trim(line.substr(eq + 1));
            if (rhs.starts_with('[')) {
                if (out.matrices.contains(name)) fail(line_no, "duplicate block mpc." + name);
                out.matrices[name];
                out.opened_at[name] = line_no;
                rhs.remove_prefix(1);
                const auto close = rhs.find(']');
                parse_row_text(rhs.substr(0, close), line_no, out.matrices[name]);
                if (close == std::string_view::npos) current = name;
            } else if (name == "baseMVA") {
                if (rhs.ends_with(';')) rhs.remove_suffix(1);
                out.base_mva = parse_number(trim(rhs), line_no);
            }
        }
        if (nl == text.size()) break;
    }
    if (!current.empty()) fail(out.opened_at[current], "unterminated block mpc." + current);
    return out;
}

BusType bus_type_from(double code, int line) {
    if (code == 1.0) return BusType::pq;
    if (code == 2.0) return BusType::pv;
    if (code == 3.0) return BusType::ref;
    fail(line, "unsupported bus type " + std::to_string(code));
}

int as_id(double v, int line) {
    if (v != std::floor(v) || v < 1.0 || v > 2.0e9) fail(line, "invalid bus id");
    return static_cast<int>(v);
}

std::string type_name(BusType t) {
    switch (t) {
        case BusType::pq: return "pq";
        case BusType::pv: return "pv";
        case BusType::ref: return "ref";
    }
    return "pq";
}

BusType type_from_name(const std::string& s) {
    if (s == "pq") return BusType::pq;
    if (s == "pv") return BusType::pv;
    if (s == "ref") return BusType::ref;
    throw DataError("case field 'type': unknown bus type '" + s + "'");
}

template <typename T>
T field(const json& j, const char* key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) throw DataError("case field '" + where + "." + key + "' is missing");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw DataError("case field '" + where + "." + key + "' has the wrong type");
    }
}

}  // namespace

GridCase parse_matpower(std::string_view text) {
    const MatpowerBlocks blocks = scan_matpower(text);
    if (!blocks.base_mva) throw DataError("missing block mpc.baseMVA");
    for (const char* name : {"bus", "branch", "gen"})
        if (!blocks.matrices.contains(name)) throw DataError(std::string("missing block mpc.") + name);
    const double base = *blocks.base_mva;
    if (!(base > 0.0)) throw DataError("base_mva must be positive");

    std::vector<Bus> buses;
    for (const auto& r : blocks.matrices.at("bus")) {
        if (r.values.size() < 9)
            fail(r.line, "bus row has " + std::to_string(r.values.size()) + " columns, expected at least 9");
        Bus b;
        b.id = as_id(r.values[0], r.line);
        b.type = bus_type_from(r.values[1], r.line);
        b.load_p = r.values[2] / base;
        b.load_q = r.values[3] / base;
        b.shunt_g = r.values[4] / base;
        b.shunt_b = r.values[5] / base;
        const double vm = r.values[7], va = r.values[8] * std::numbers::pi / 180.0;
        b.v_real = vm * std::cos(va);
        b.v_imag = vm * std::sin(va);
        buses.push_back(b);
    }

    std::vector<Branch> branches;
    for (const auto& r : blocks.matrices.at("branch")) {
        if (r.values.size() < 11)
            fail(r.line, "branch row has " + std::to_string(r.values.size()) + " columns, expected at least 11");
        if (r.values[10] == 0.0) continue;
        const double ratio = r.values[8], shift = r.values[9];
        if ((ratio != 0.0 && ratio != 1.0) || shift != 0.0)
            fail(r.line, "transformer taps and phase shifts are not supported");
        const double rr = r.values[2], x = r.values[3];
        const double z2 = rr * rr + x * x;
        if (z2 == 0.0) fail(r.line, "branch has zero impedance");
        branches.push_back({as_id(r.values[0], r.line), as_id(r.values[1], r.line), rr / z2, -x / z2, r.values[4]});
    }

    std::vector<Generator> gens;
    for (const auto& r : blocks.matrices.at("gen")) {
        if (r.values.size() < 8)
            fail(r.line, "gen row has " + std::to_string(r.values.size()) + " columns, expected at least 8");
        if (r.values[7] <= 0.0) continue;
        gens.push_back({as_id(r.values[0], r.line), r.values[1] / base, r.values[2] / base, r.values[5]});
    }
    return GridCase::with_default_measurements(base, std::move(buses), std::move(branches), std::move(gens));
}

std::string serialize_case_json(const GridCase& grid) {
    json j;
    j["schema"] = 1;
    j["base_mva"] = grid.base_mva();
    json buses = json::array();
    for (const auto& b : grid.buses()) {
        buses.push_back({{"id", b.id},
                         {"type", type_name(b.type)},
                         {"load_p", b.load_p},
                         {"load_q", b.load_q},
                         {"shunt_g", b.shunt_g},
                         {"shunt_b", b.shunt_b},
                         {"v_real", b.v_real},
                         {"v_imag", b.v_imag}});
    }
    j["buses"] = std::move(buses);
    json branches = json::array();
    for (const auto& br : grid.branches())
        branches.push_back({{"from", br.from}, {"to", br.to}, {"g", br.g}, {"b", br.b}, {"shunt_b", br.shunt_b}});
    j["branches"] = std::move(branches);
    json gens = json::array();
    for (const auto& g : grid.generators()) gens.push_back({{"bus", g.bus}, {"p", g.p}, {"q", g.q}, {"v_set", g.v_set}});
    j["generators"] = std::move(gens);
    j["rtu_buses"] = std::vector<BusId>(grid.rtu_buses().begin(), grid.rtu_buses().end());
    j["zero_injection_buses"] =
        std::vector<BusId>(grid.zero_injection_buses().begin(), grid.zero_injection_buses().end());
    return j.dump(2) + "\n";
}

GridCase parse_case_json(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("case JSON: ") + e.what());
    }
    if (field<int>(j, "schema", "case") != 1) throw DataError("case field 'case.schema' must be 1");
    const auto base = field<double>(j, "base_mva", "case");
    std::vector<Bus> buses;
    const auto jb = field<json>(j, "buses", "case");
    for (std::size_t k = 0; k < jb.size(); ++k) {
        const std::string w = "buses[" + std::to_string(k) + "]";
        Bus b;
        b.id = field<int>(jb[k], "id", w);
        b.type = type_from_name(field<std::string>(jb[k], "type", w));
        b.load_p = field<double>(jb[k], "load_p", w);
        b.load_q = field<double>(jb[k], "load_q", w);
        b.shunt_g = field<double>(jb[k], "shunt_g", w);
        b.shunt_b = field<double>(jb[k], "shunt_b", w);
        b.v_real = field<double>(jb[k], "v_real", w);
        b.v_imag = field<double>(jb[k], "v_imag", w);
        buses.push_back(b);
    }
    std::vector<Branch> branches;
    const auto jr = field<json>(j, "branches", "case");
    for (std::size_t k = 0; k < jr.size(); ++k) {
        const std::string w = "branches[" + std::to_string(k) + "]";
        branches.push_back({field<int>(jr[k], "from", w), field<int>(jr[k], "to", w), field<double>(jr[k], "g", w),
                            field<double>(jr[k], "b", w), field<double>(jr[k], "shunt_b", w)});
    }
    std::vector<Generator> gens;
    const auto jg = field<json>(j, "generators", "case");
    for (std::size_t k = 0; k < jg.size(); ++k) {
        const std::string w = "generators[" + std::to_string(k) + "]";
        gens.push_back({field<int>(jg[k], "bus", w), field<double>(jg[k], "p", w), field<double>(jg[k], "q", w),
                        field<double>(jg[k], "v_set", w)});
    }
    const auto rtu = field<std::vector<BusId>>(j, "rtu_buses", "case");
    const auto zi = field<std::vector<BusId>>(j, "zero_injection_buses", "case");
    return GridCase(base, std::move(buses), std::move(branches), std::move(gens), {rtu.begin(), rtu.end()},
                    {zi.begin(), zi.end()});
}

GridCase load_case(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open case file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string ext = path.extension().string();
    if (ext == ".m") return parse_matpower(ss.str());
    if (ext == ".json") return parse_case_json(ss.str());
    throw DataError("unsupported case file extension '" + ext + "'");
}

BusId tiled_bus_id(const GridCase& base, BusId id, int copy) {
    BusId max_id = 0;
    for (const auto& b : base.buses()) max_id = std::max(max_id, b.id);
    return id + copy * max_id;
}

GridCase tile_case(const GridCase& base, const TileSpec& spec) {
    if (spec.copies < 1) throw DataError("tile copies must be at least 1");
    for (BusId id : spec.tie_buses)
        if (!base.has_bus(id)) throw DataError("tie bus " + std::to_string(id) + " not in the base case");
    const double z2 = spec.tie_r * spec.tie_r + spec.tie_x * spec.tie_x;
    if (!(z2 > 0.0)) throw DataError("tie line impedance must be non-zero");

    std::vector<Bus> buses;
    std::vector<Branch> branches;
    std::vector<Generator> gens;
    std::set<BusId> rtu, zi;
    for (int c = 0; c < spec.copies; ++c) {
        for (Bus b : base.buses()) {
            const BusId old = b.id;
            b.id = tiled_bus_id(base, old, c);
            if (c > 0 && b.type == BusType::ref) b.type = BusType::pv;
            buses.push_back(b);
            if (base.is_rtu(old)) rtu.insert(b.id);
            if (base.is_zero_injection(old)) zi.insert(b.id);
        }
        for (Branch br : base.branches()) {
            br.from = tiled_bus_id(base, br.from, c);
            br.to = tiled_bus_id(base, br.to, c);
            branches.push_back(br);
        }
        for (Generator g : base.generators()) {
            g.bus = tiled_bus_id(base, g.bus, c);
            gens.push_back(g);
        }
        if (c + 1 < spec.copies)
            for (BusId id : spec.tie_buses)
                branches.push_back({tiled_bus_id(base, id, c), tiled_bus_id(base, id, c + 1), spec.tie_r / z2,
                                    -spec.tie_x / z2, 0.0});
    }
    return GridCase(base.base_mva(), std::move(buses), std::move(branches), std::move(gens), std::move(rtu),
                    std::move(zi));
}

}  // namespace gridfuse
