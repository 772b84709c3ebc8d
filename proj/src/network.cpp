#include "gridfuse/network.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gridfuse/error.hpp"

namespace gridfuse {

GridCase::GridCase(double base_mva, std::vector<Bus> buses, std::vector<Branch> branches,
                   std::vector<Generator> generators, std::set<BusId> rtu_buses,
                   std::set<BusId> zero_injection_buses)
    : base_mva_(base_mva),
      buses_(std::move(buses)),
      branches_(std::move(branches)),
      generators_(std::move(generators)),
      rtu_buses_(std::move(rtu_buses)),
      zero_injection_(std::move(zero_injection_buses)) {
    if (!(base_mva_ > 0.0)) throw DataError("base_mva must be positive");
    if (buses_.empty()) throw DataError("grid case has no buses");

    bool have_reference = false;
    for (std::size_t k = 0; k < buses_.size(); ++k) {
        const auto [it, inserted] = index_.emplace(buses_[k].id, k);
        if (!inserted) throw DataError("duplicate bus id " + std::to_string(buses_[k].id));
        if (buses_[k].type == BusType::ref && !have_reference) {
            reference_ = k;
            have_reference = true;
        }
    }
    if (!have_reference) throw DataError("grid case has no reference bus");

    for (const auto& br : branches_) {
        if (!has_bus(br.from) || !has_bus(br.to))
            throw DataError("branch " + std::to_string(br.from) + "-" + std::to_string(br.to) +
                            " references an undeclared bus");
        if (br.g == 0.0 && br.b == 0.0)
            throw DataError("branch " + std::to_string(br.from) + "-" + std::to_string(br.to) +
                            " has zero series admittance");
    }
    for (const auto& gen : generators_)
        if (!has_bus(gen.bus)) throw DataError("generator on undeclared bus " + std::to_string(gen.bus));
    for (BusId id : rtu_buses_) {
        if (!has_bus(id)) throw DataError("RTU on undeclared bus " + std::to_string(id));
        if (zero_injection_.contains(id))
            throw DataError("bus " + std::to_string(id) + " is both RTU-measured and zero-injection");
    }
    for (BusId id : zero_injection_)
        if (!has_bus(id)) throw DataError("zero-injection set names undeclared bus " + std::to_string(id));
}

GridCase GridCase::with_default_measurements(double base_mva, std::vector<Bus> buses,
                                             std::vector<Branch> branches,
                                             std::vector<Generator> generators) {
    std::set<BusId> with_gen;
    for (const auto& g : generators) with_gen.insert(g.bus);
    std::set<BusId> rtu, zi;
    for (const auto& b : buses) {
        if (with_gen.contains(b.id) || b.load_p != 0.0 || b.load_q != 0.0)
            rtu.insert(b.id);
        else
            zi.insert(b.id);
    }
    return GridCase(base_mva, std::move(buses), std::move(branches), std::move(generators), std::move(rtu),
                    std::move(zi));
}

std::size_t GridCase::index_of(BusId id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) throw DataError("unknown bus id " + std::to_string(id));
    return it->second;
}

Complex GridCase::scheduled_injection(BusId id) const {
    const Bus& bus = buses_[index_of(id)];
    Complex s{-bus.load_p, -bus.load_q};
    for (const auto& g : generators_)
        if (g.bus == id) s += Complex{g.p, g.q};
    return s;
}

GridCase GridCase::with_measurements(std::set<BusId> rtu_buses, std::set<BusId> zero_injection) const {
    return GridCase(base_mva_, buses_, branches_, generators_, std::move(rtu_buses), std::move(zero_injection));
}

Admittance build_admittance(const GridCase& grid) {
    const auto n = static_cast<Eigen::Index>(grid.size());
    std::vector<Eigen::Triplet<Complex>> stamps;
    stamps.reserve(grid.branches().size() * 4 + grid.size());
    std::vector<int> degree(grid.size(), 0);

    for (const auto& br : grid.branches()) {
        const auto k = static_cast<Eigen::Index>(grid.index_of(br.from));
        const auto l = static_cast<Eigen::Index>(grid.index_of(br.to));
        const Complex series{br.g, br.b};
        const Complex charging{0.0, br.shunt_b / 2.0};
        stamps.emplace_back(k, k, series + charging);
        stamps.emplace_back(l, l, series + charging);
        stamps.emplace_back(k, l, -series);
        stamps.emplace_back(l, k, -series);
        ++degree[static_cast<std::size_t>(k)];
        ++degree[static_cast<std::size_t>(l)];
    }
    for (std::size_t k = 0; k < grid.size(); ++k) {
        const Bus& bus = grid.buses()[k];
        if (degree[k] == 0) throw DataError("disconnected bus " + std::to_string(bus.id));
        if (bus.shunt_g != 0.0 || bus.shunt_b != 0.0) {
            const auto i = static_cast<Eigen::Index>(k);
            stamps.emplace_back(i, i, Complex{bus.shunt_g, bus.shunt_b});
        }
    }

    Admittance out;
    out.y.resize(n, n);
    out.y.setFromTriplets(stamps.begin(), stamps.end());
    out.y.makeCompressed();
    return out;
}

FeatureConductance feature_transform(double p_z, double q_z, double v_z) {
    if (!(v_z > 0.0)) throw DataError("invalid voltage magnitude measurement");
    const double v2 = v_z * v_z;
    return {p_z / v2, q_z / v2};
}

Complex rtu_injection_residual(double v_real, double v_imag, double g_z, double b_z, double n_real,
                               double n_imag, double i_real, double i_imag) {
    return {g_z * v_real - b_z * v_imag + n_real - i_real, g_z * v_imag + b_z * v_real + n_imag - i_imag};
}

Complex load_current(double p, double q, double v_real, double v_imag) {
    const double m2 = v_real * v_real + v_imag * v_imag;
    if (m2 == 0.0) throw DataError("singular load current");
    return {(p * v_real + q * v_imag) / m2, (p * v_imag - q * v_real) / m2};
}

Complex grid_kcl_residual(const GridCase& grid, const Admittance& y, BusId bus,
                          std::span<const Complex> voltages, std::span<const Complex> attached_drawn) {
    const auto k = static_cast<Eigen::Index>(grid.index_of(bus));
    if (voltages.size() != grid.size()) throw DataError("voltage vector does not match the case");
    Complex r{0.0, 0.0};
    for (Eigen::SparseMatrix<Complex, Eigen::RowMajor>::InnerIterator it(y.y, k); it; ++it)
        r += it.value() * voltages[static_cast<std::size_t>(it.col())];
    for (const Complex& i : attached_drawn) r += i;
    return r;
}

std::vector<Complex> network_currents(const Admittance& y, std::span<const Complex> voltages) {
    std::vector<Complex> out(y.size(), Complex{});
    for (Eigen::Index k = 0; k < y.y.outerSize(); ++k)
        for (Eigen::SparseMatrix<Complex, Eigen::RowMajor>::InnerIterator it(y.y, k); it; ++it)
            out[static_cast<std::size_t>(k)] += it.value() * voltages[static_cast<std::size_t>(it.col())];
    return out;
}

}  // namespace gridfuse
