#pragma once

// Shared fixtures for the unit and acceptance suites.

#include <cmath>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gridfuse/case_io.hpp"
#include "gridfuse/scenario.hpp"

namespace testsupport {

inline std::filesystem::path data_dir() { return GRIDFUSE_TEST_DATA_DIR; }
inline std::filesystem::path case_file(const std::string& name) { return data_dir() / "cases" / name; }
inline std::filesystem::path scenario_file(const std::string& name) { return data_dir() / "scenarios" / name; }

/// |a - b| relative to the larger magnitude, with an absolute floor.
inline double rel_diff(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central difference of f around x along coordinate j.
inline double central_difference(const std::function<double(std::span<const double>)>& f, std::vector<double> x,
                                 std::size_t j, double h) {
    const double x0 = x[j];
    x[j] = x0 + h;
    const double fp = f(x);
    x[j] = x0 - h;
    const double fm = f(x);
    return (fp - fm) / (2.0 * h);
}

}  // namespace testsupport

#include <Eigen/Dense>

#include "gridfuse/network.hpp"

namespace testsupport {

/// Dense nodal admittance stamped straight from the branch and bus lists.
inline Eigen::MatrixXcd dense_admittance(const gridfuse::GridCase& grid) {
    const auto n = static_cast<Eigen::Index>(grid.size());
    Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
    for (const auto& br : grid.branches()) {
        const auto f = static_cast<Eigen::Index>(grid.index_of(br.from));
        const auto t = static_cast<Eigen::Index>(grid.index_of(br.to));
        const std::complex<double> ys{br.g, br.b};
        const std::complex<double> ysh{0.0, br.shunt_b / 2.0};
        y(f, f) += ys + ysh;
        y(t, t) += ys + ysh;
        y(f, t) -= ys;
        y(t, f) -= ys;
    }
    for (std::size_t k = 0; k < grid.size(); ++k) {
        const auto& b = grid.buses()[k];
        y(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)) += std::complex<double>{b.shunt_g, b.shunt_b};
    }
    return y;
}

/// Polar-coordinate Newton power flow with a finite-difference Jacobian, used
/// as an oracle independent of the library's rectangular solver. Buses listed
/// in `regulated` hold |V| = v_set; the reference holds v_set at angle 0.
inline std::vector<std::complex<double>> polar_powerflow(const gridfuse::GridCase& grid,
                                                         const std::vector<std::complex<double>>& s_spec,
                                                         const std::vector<bool>& regulated,
                                                         const std::vector<double>& v_set) {
    const Eigen::MatrixXcd y = dense_admittance(grid);
    const std::size_t n = grid.size();
    const std::size_t ref = grid.reference_index();
    std::vector<std::size_t> ang, mag;
    for (std::size_t k = 0; k < n; ++k) {
        if (k == ref) continue;
        ang.push_back(k);
        if (!regulated[k]) mag.push_back(k);
    }
    std::vector<double> th(n, 0.0), vm(n, 1.0);
    for (std::size_t k = 0; k < n; ++k)
        if (regulated[k] || k == ref) vm[k] = v_set[k];

    auto voltages = [&] {
        std::vector<std::complex<double>> v(n);
        for (std::size_t k = 0; k < n; ++k) v[k] = std::polar(vm[k], th[k]);
        return v;
    };
    auto mismatch = [&]() {
        const auto v = voltages();
        Eigen::VectorXcd ve(static_cast<Eigen::Index>(n));
        for (std::size_t k = 0; k < n; ++k) ve[static_cast<Eigen::Index>(k)] = v[k];
        const Eigen::VectorXcd i = y * ve;
        Eigen::VectorXd f(static_cast<Eigen::Index>(ang.size() + mag.size()));
        Eigen::Index r = 0;
        for (auto k : ang) f[r++] = (v[k] * std::conj(i[static_cast<Eigen::Index>(k)])).real() - s_spec[k].real();
        for (auto k : mag) f[r++] = (v[k] * std::conj(i[static_cast<Eigen::Index>(k)])).imag() - s_spec[k].imag();
        return f;
    };
    auto state = [&](Eigen::Index j) -> double& {
        const auto a = static_cast<Eigen::Index>(ang.size());
        return j < a ? th[ang[static_cast<std::size_t>(j)]] : vm[mag[static_cast<std::size_t>(j - a)]];
    };
    const auto m = static_cast<Eigen::Index>(ang.size() + mag.size());
    for (int it = 0; it < 30; ++it) {
        const Eigen::VectorXd f = mismatch();
        if (f.lpNorm<Eigen::Infinity>() < 1e-12) break;
        Eigen::MatrixXd jac(m, m);
        for (Eigen::Index j = 0; j < m; ++j) {
            const double x0 = state(j);
            const double h = 1e-7;
            state(j) = x0 + h;
            const Eigen::VectorXd fp = mismatch();
            state(j) = x0 - h;
            const Eigen::VectorXd fm = mismatch();
            state(j) = x0;
            jac.col(j) = (fp - fm) / (2.0 * h);
        }
        const Eigen::VectorXd dx = jac.partialPivLu().solve(-f);
        for (Eigen::Index j = 0; j < m; ++j) state(j) += dx[j];
    }
    return voltages();
}

}  // namespace testsupport
