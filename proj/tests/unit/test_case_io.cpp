#include <doctest.h>

#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "gridfuse/case_io.hpp"
#include "gridfuse/error.hpp"
#include "gridfuse/scenario.hpp"
#include "support.hpp"

using namespace gridfuse;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const char* k_two_bus = R"(mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1 0 138 1 1.1 0.9;
  2 1 50 20 0 0 1 1 0 138 1 1.1 0.9;
];
mpc.gen = [
  1 0 0 100 -100 1 100 1 100 0;
];
mpc.branch = [
  1 2 0 0.1 0 100 100 100 0 0 1 -360 360;
];
)";

// Independent count of in-service rows inside the mpc.branch block.
int count_in_service_branches(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    bool inside = false;
    int n = 0;
    while (std::getline(in, line)) {
        if (auto pc = line.find('%'); pc != std::string::npos) line.resize(pc);
        if (!inside) {
            inside = line.find("mpc.branch") != std::string::npos && line.find('[') != std::string::npos;
            continue;
        }
        if (line.find(']') != std::string::npos) break;
        std::istringstream row(line);
        std::vector<double> v;
        double x;
        while (row >> x) v.push_back(x);
        if (v.size() >= 11 && v[10] != 0.0) ++n;
    }
    return n;
}

std::string scenario_text(const std::string& body) {
    return R"({"schema": 1, "case": ")" + testsupport::case_file("case3_combined.m").string() + "\"" + body + "}";
}

}  // namespace

TEST_CASE("MATPOWER examples") {
    SUBCASE("two-bus pure reactance") {
        const auto g = parse_matpower(k_two_bus);
        REQUIRE(g.branches().size() == 1);
        CHECK(g.branches()[0].g == 0.0);
        CHECK(g.branches()[0].b == doctest::Approx(-10.0).epsilon(1e-15));
        CHECK(g.buses()[1].load_p == doctest::Approx(0.5));
        CHECK(g.buses()[1].load_q == doctest::Approx(0.2));
        CHECK(g.rtu_buses() == std::set<BusId>{1, 2});
    }
    SUBCASE("three-bus ring") {
        const auto g = load_case(testsupport::case_file("case3_combined.m"));
        CHECK(g.size() == 3);
        CHECK(g.branches().size() == 3);
        CHECK(g.zero_injection_buses() == std::set<BusId>{3});
    }
    SUBCASE("IEEE 118-bus system") {
        const auto path = testsupport::case_file("case118.m");
        const auto g = load_case(path);
        CHECK(g.size() == 118);
        CHECK(g.branches().size() == 186);
        CHECK(static_cast<int>(g.branches().size()) == count_in_service_branches(slurp(path)));
        CHECK(g.buses()[g.reference_index()].type == BusType::ref);
    }
}

TEST_CASE("MATPOWER errors carry line numbers") {
    std::string t = k_two_bus;
    SUBCASE("transformer tap") {
        t.replace(t.find("0 0 1 -360"), 1, "0.98");
        CHECK_THROWS_WITH_AS(parse_matpower(t), "line 10: transformer taps and phase shifts are not supported",
                             DataError);
    }
    SUBCASE("missing block") {
        t = t.substr(0, t.find("mpc.branch"));
        CHECK_THROWS_WITH_AS(parse_matpower(t), "missing block mpc.branch", DataError);
    }
    SUBCASE("bad number") {
        t.replace(t.find("50 20"), 2, "5x");
        CHECK_THROWS_WITH_AS(parse_matpower(t), "line 4: invalid number '5x'", DataError);
    }
    SUBCASE("unterminated block") {
        t = t.substr(0, t.rfind(']'));
        CHECK_THROWS_WITH_AS(parse_matpower(t), "line 9: unterminated block mpc.branch", DataError);
    }
    SUBCASE("short row") {
        t.replace(t.find("2 1 50 20 0 0 1 1 0 138 1 1.1 0.9"), 33, "2 1 50");
        CHECK_THROWS_WITH_AS(parse_matpower(t), "line 4: bus row has 3 columns, expected at least 9", DataError);
    }
    SUBCASE("unknown extension") { CHECK_THROWS_AS(load_case("grid.raw"), DataError); }
}

TEST_CASE("MATPOWER fuzzing never escapes the error type") {
    const std::string base = slurp(testsupport::case_file("case3_combined.m"));
    std::mt19937_64 gen(123);
    const std::string alphabet = "0123456789.-+e;[]% \n\tmpcx=,";
    int parsed = 0, rejected = 0;
    for (int k = 0; k < 2000; ++k) {
        std::string t = base;
        const int edits = 1 + static_cast<int>(gen() % 4);
        for (int e = 0; e < edits; ++e) {
            const std::size_t pos = gen() % t.size();
            switch (gen() % 3) {
                case 0: t[pos] = alphabet[gen() % alphabet.size()]; break;
                case 1: t.erase(pos, 1 + gen() % 8); break;
                default: t.insert(pos, 1, alphabet[gen() % alphabet.size()]); break;
            }
        }
        try {
            (void)parse_matpower(t);
            ++parsed;
        } catch (const DataError&) {
            ++rejected;
        }
    }
    CHECK(parsed + rejected == 2000);
    CHECK(rejected > 0);
}

TEST_CASE("native JSON case format") {
    const auto g = load_case(testsupport::case_file("case118.m"));
    const std::string once = serialize_case_json(g);
    const auto back = parse_case_json(once);
    CHECK(serialize_case_json(back) == once);
    CHECK(back.size() == g.size());
    CHECK(back.rtu_buses() == g.rtu_buses());

    CHECK_THROWS_AS(parse_case_json("{"), DataError);
    CHECK_THROWS_WITH_AS(parse_case_json(R"({"schema": 2})"), "case field 'case.schema' must be 1", DataError);
    CHECK_THROWS_AS(parse_case_json(R"({"schema": 1, "base_mva": 100})"), DataError);
}

TEST_CASE("tiled cases") {
    const auto base = load_case(testsupport::case_file("case118.m"));
    TileSpec spec;
    spec.copies = 3;
    spec.tie_buses = {12, 49};
    const auto t = tile_case(base, spec);
    CHECK(t.size() == 3 * 118);
    CHECK(t.branches().size() == 3 * 186 + 2 * 2);
    CHECK(tiled_bus_id(base, 12, 2) == 12 + 236);
    int refs = 0;
    for (const auto& b : t.buses()) refs += b.type == BusType::ref;
    CHECK(refs == 1);
    spec.tie_buses = {9999};
    CHECK_THROWS_AS(tile_case(base, spec), DataError);
}

TEST_CASE("scenario loading") {
    SUBCASE("solar-only 118-bus scenario") {
        const auto c = load_scenario(testsupport::scenario_file("ieee118_A.json"));
        CHECK(c.pv.size() == 11);
        CHECK(c.battery.empty());
        CHECK(c.unknown_params.empty());
        CHECK(c.kind == ScenarioKind::clean);
        validate_against(c, load_scenario_case(c));
    }
    SUBCASE("mixed fleet with an unknown battery resistance") {
        const auto c = load_scenario(testsupport::scenario_file("ieee118_C2b.json"));
        CHECK(c.pv.size() == 10);
        CHECK(c.battery.size() == 1);
        CHECK(c.unknown_params == std::vector<std::string>{"bt106.r_se"});
    }
    SUBCASE("empty fleet") {
        const auto c = parse_scenario(scenario_text(""), ".");
        CHECK(c.pv.empty());
        CHECK(c.battery.empty());
        CHECK(c.fleet().pv.empty());
    }
    SUBCASE("canonical JSON is a fixed point") {
        const auto c = load_scenario(testsupport::scenario_file("case3_combined.json"));
        const auto again = parse_scenario(c.canonical_json(), ".");
        CHECK(again.canonical_json() == c.canonical_json());
    }
    SUBCASE("schema violations") {
        CHECK_THROWS_WITH_AS(parse_scenario(scenario_text(R"(, "colour": 1)"), "."),
                             "scenario field 'colour' is not part of the schema", DataError);
        CHECK_THROWS_WITH_AS(parse_scenario(R"({"schema": 1})", "."), "scenario field 'case' is missing", DataError);
        CHECK_THROWS_WITH_AS(parse_scenario(scenario_text(R"(, "n_instances": 0)"), "."),
                             "scenario field 'n_instances' must be at least 1", DataError);
        CHECK_THROWS_WITH_AS(parse_scenario(scenario_text(R"(, "unknown_params": ["pv9.r_s"])"), "."),
                             "scenario field 'unknown_params': 'pv9.r_s' is not a declared parameter", DataError);
    }
    SUBCASE("DER on a missing bus") {
        auto c = load_scenario(testsupport::scenario_file("case3_combined.json"));
        c.pv[0].system.bus = 7;
        CHECK_THROWS_WITH_AS(validate_against(c, load_case(c.case_path)), "PV pv3 attached to missing bus 7",
                             DataError);
    }
}

TEST_CASE("FNV-1a reference values") {
    CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
}
