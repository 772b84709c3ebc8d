#include <doctest.h>

#include <random>

#include "gridfuse/error.hpp"
#include "gridfuse/forward.hpp"
#include "support.hpp"

using namespace gridfuse;
using testsupport::rel_diff;

namespace {

GridCase ring3(double r, double x) {
    std::vector<Bus> buses(3);
    for (int k = 0; k < 3; ++k) buses[static_cast<std::size_t>(k)].id = k + 1;
    buses[0].type = BusType::ref;
    buses[1].load_p = 0.9;
    buses[1].load_q = 0.3;
    const double z2 = r * r + x * x;
    std::vector<Branch> branches{{1, 2, r / z2, -x / z2, 0.0}, {2, 3, r / z2, -x / z2, 0.0}, {1, 3, r / z2, -x / z2, 0.0}};
    return GridCase::with_default_measurements(100.0, buses, branches, {{1, 0.0, 0.0, 1.02}});
}

}  // namespace

TEST_CASE("admittance stamping") {
    SUBCASE("single branch") {
        std::vector<Bus> buses(2);
        buses[0].id = 1;
        buses[0].type = BusType::ref;
        buses[1].id = 2;
        GridCase g(100.0, buses, {{1, 2, 1.0, -10.0, 0.0}}, {}, {}, {1, 2});
        const auto y = build_admittance(g);
        CHECK(y.at(0, 0) == Complex(1.0, -10.0));
        CHECK(y.at(1, 1) == Complex(1.0, -10.0));
        CHECK(y.at(0, 1) == Complex(-1.0, 10.0));
        CHECK(y.at(1, 0) == Complex(-1.0, 10.0));
    }
    SUBCASE("ring with equal branches") {
        const auto g = ring3(0.01, 0.1);
        const auto y = build_admittance(g);
        const Complex one = -y.at(0, 1);
        for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(y.at(k, k) - 2.0 * one) < 1e-12);
    }
    SUBCASE("parallel branches add") {
        std::vector<Bus> buses(2);
        buses[0].id = 1;
        buses[0].type = BusType::ref;
        buses[1].id = 2;
        GridCase g(100.0, buses, {{1, 2, 1.0, -10.0, 0.0}, {1, 2, 2.0, -5.0, 0.0}}, {}, {}, {1, 2});
        CHECK(build_admittance(g).at(0, 1) == Complex(-3.0, 15.0));
    }
    SUBCASE("IEEE-118 against a dense stamp") {
        const auto g = load_case(testsupport::case_file("case118.m"));
        const auto y = build_admittance(g);
        const auto dense = testsupport::dense_admittance(g);
        double worst = 0.0;
        for (std::size_t k = 0; k < g.size(); ++k)
            for (std::size_t l = 0; l < g.size(); ++l)
                worst = std::max(worst, std::abs(y.at(k, l) - dense(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l))));
        CHECK(worst < 1e-12);
        // Without shunts every row of the series part sums to zero.
        for (std::size_t k = 0; k < g.size(); ++k) {
            Complex row{0.0, 0.0};
            for (std::size_t l = 0; l < g.size(); ++l) row += y.at(k, l);
            const auto& bus = g.buses()[k];
            Complex shunts{bus.shunt_g, bus.shunt_b};
            for (const auto& br : g.branches())
                if (br.from == bus.id || br.to == bus.id) shunts += Complex{0.0, br.shunt_b / 2.0};
            CHECK(std::abs(row - shunts) < 1e-9);
        }
    }
    SUBCASE("disconnected bus") {
        std::vector<Bus> buses(3);
        buses[0].id = 1;
        buses[0].type = BusType::ref;
        buses[1].id = 2;
        buses[2].id = 3;
        GridCase g(100.0, buses, {{1, 2, 1.0, -10.0, 0.0}}, {}, {}, {1, 2, 3});
        CHECK_THROWS_WITH_AS(build_admittance(g), doctest::Contains("disconnected bus"), DataError);
    }
}

TEST_CASE("grid case invariants") {
    std::vector<Bus> buses(2);
    buses[0].id = 1;
    buses[0].type = BusType::ref;
    buses[1].id = 2;
    CHECK_THROWS_AS(GridCase(100.0, buses, {{1, 3, 1.0, -10.0, 0.0}}, {}, {}, {1, 2}), DataError);
    CHECK_THROWS_AS(GridCase(100.0, buses, {{1, 2, 1.0, -10.0, 0.0}}, {}, {1}, {1, 2}), DataError);
    CHECK_THROWS_AS(GridCase(0.0, buses, {{1, 2, 1.0, -10.0, 0.0}}, {}, {}, {1, 2}), DataError);
    CHECK_THROWS_AS(GridCase(100.0, buses, {{1, 2, 0.0, 0.0, 0.0}}, {}, {}, {1, 2}), DataError);
    buses[1].id = 1;
    CHECK_THROWS_AS(GridCase(100.0, buses, {{1, 1, 1.0, -10.0, 0.0}}, {}, {}, {1}), DataError);
}

TEST_CASE("feature transform") {
    auto f = feature_transform(1.0, 0.5, 1.0);
    CHECK(f.g == 1.0);
    CHECK(f.b == 0.5);
    f = feature_transform(0.0, 0.0, 0.97);
    CHECK(f.g == 0.0);
    CHECK(f.b == 0.0);
    f = feature_transform(0.8, -0.2, 1.02);
    CHECK(f.g == doctest::Approx(0.768935025).epsilon(1e-9));
    CHECK(f.b == doctest::Approx(-0.192233756).epsilon(1e-9));
    CHECK_THROWS_WITH_AS(feature_transform(1.0, 0.0, 0.0), "invalid voltage magnitude measurement", DataError);
    CHECK_THROWS_AS(feature_transform(1.0, 0.0, -1.0), DataError);

    std::mt19937_64 gen(1);
    std::uniform_real_distribution<double> u(-2.0, 2.0), uv(0.8, 1.2);
    for (int i = 0; i < 200; ++i) {
        const double p = u(gen), q = u(gen), v = uv(gen);
        const auto t = feature_transform(p, q, v);
        CHECK(rel_diff(t.g * v * v, p, 1e-300) < 1e-15);
        CHECK(rel_diff(t.b * v * v, q, 1e-300) < 1e-15);
    }
}

TEST_CASE("RTU injection residual") {
    CHECK(rtu_injection_residual(1.0, 0.2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0) == Complex(0.0, 0.0));
    // v = (1, 0), g = 1, b = 0.5 draws (1, 0.5).
    CHECK(rtu_injection_residual(1.0, 0.0, 1.0, 0.5, 0.0, 0.0, 1.0, 0.5) == Complex(0.0, 0.0));
    CHECK(rtu_injection_residual(1.0, 0.0, 1.0, 0.5, 0.0, 0.0, 0.0, 0.0) == Complex(1.0, 0.5));

    std::mt19937_64 gen(3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < 100; ++i) {
        const double g = u(gen), b = u(gen), vr = u(gen), vi = u(gen), nr = u(gen), ni = u(gen), a = 3.0 * u(gen);
        const Complex r1 = rtu_injection_residual(a * vr, a * vi, g, b, a * nr, a * ni, 0.0, 0.0);
        const Complex r0 = rtu_injection_residual(vr, vi, g, b, nr, ni, 0.0, 0.0);
        CHECK(std::abs(r1 - a * r0) < 1e-14);
    }
}

TEST_CASE("load current") {
    CHECK(load_current(1.0, 0.0, 1.0, 0.0) == Complex(1.0, 0.0));
    CHECK(load_current(0.0, 1.0, 1.0, 0.0) == Complex(0.0, -1.0));
    // Drawn current of a consumer: I = conj(S / V).
    const Complex v{0.98, 0.05}, s{0.9, 0.3};
    const Complex expect = std::conj(s / v);
    const Complex got = load_current(0.9, 0.3, 0.98, 0.05);
    CHECK(std::abs(got - expect) < 1e-15);
    CHECK_THROWS_WITH_AS(load_current(1.0, 0.0, 0.0, 0.0), "singular load current", DataError);

    // Jacobian against central differences.
    std::mt19937_64 gen(9);
    std::uniform_real_distribution<double> u(-1.0, 1.0), uv(0.9, 1.1);
    for (int i = 0; i < 100; ++i) {
        const double p = u(gen), q = u(gen), er = uv(gen), ei = 0.2 * u(gen), h = 1e-6;
        const Complex d_er = (load_current(p, q, er + h, ei) - load_current(p, q, er - h, ei)) / (2 * h);
        const double denom = er * er + ei * ei;
        // d/der of (p er + q ei)/|v|^2 and (p ei - q er)/|v|^2
        const double a_r = p / denom - 2 * er * (p * er + q * ei) / (denom * denom);
        const double a_i = -q / denom - 2 * er * (p * ei - q * er) / (denom * denom);
        CHECK(rel_diff(d_er.real(), a_r) < 1e-6);
        CHECK(rel_diff(d_er.imag(), a_i) < 1e-6);
    }
}

TEST_CASE("KCL residual at a power flow solution") {
    const auto g = ring3(0.01, 0.1);
    const auto y = build_admittance(g);
    SUBCASE("flat voltages without injections") {
        std::vector<Complex> v(3, Complex{1.0, 0.0});
        for (BusId id : {1, 2, 3}) CHECK(std::abs(grid_kcl_residual(g, y, id, v, {})) < 1e-15);
    }
    SUBCASE("load bus against the polar oracle") {
        std::vector<Complex> s{{0, 0}, {-0.9, -0.3}, {0, 0}};
        const auto v = testsupport::polar_powerflow(g, s, {true, false, false}, {1.02, 1.0, 1.0});
        const Complex drawn = load_current(0.9, 0.3, v[1].real(), v[1].imag());
        CHECK(std::abs(grid_kcl_residual(g, y, 2, v, std::vector<Complex>{drawn})) < 1e-10);
        // Bus 3 carries nothing: zero-injection balance.
        CHECK(g.is_zero_injection(3));
        CHECK(std::abs(grid_kcl_residual(g, y, 3, v, {})) < 1e-10);
        CHECK_THROWS_AS(grid_kcl_residual(g, y, 7, v, {}), DataError);
    }
}

TEST_CASE("forward solution satisfies every KCL residual") {
    const auto g = load_case(testsupport::case_file("case118.m"));
    const auto t = solve_combined_powerflow(g, {}, {}, {});
    const auto y = build_admittance(g);
    double worst = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
        const Complex v = t.voltages[k];
        const Complex s = t.bus_injection[k];
        // Injection as a drawn current of the opposite sign.
        const Complex drawn = -std::conj(s / v);
        worst = std::max(worst, std::abs(grid_kcl_residual(g, y, g.buses()[k].id, t.voltages, std::vector<Complex>{drawn})));
    }
    CHECK(worst < 1e-10);
}
