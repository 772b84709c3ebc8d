#pragma once

// AC network equivalent circuit: buses, pi-model branches, nodal admittance
// and the current-voltage residuals of measured and unmeasured buses.
//
// All AC quantities are per-unit on the case MVA base. Currents follow the
// "drawn" convention: a bus element drawing current I from node k appears in
// the KCL of k as +I, so generators draw negative current.

#include <complex>
#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/SparseCore>

namespace gridfuse {

using BusId = int;
using Complex = std::complex<double>;

enum class BusType { pq = 1, pv = 2, ref = 3 };

struct Bus {
    BusId id = 0;
    BusType type = BusType::pq;
    double load_p = 0.0;   ///< pu, consumed
    double load_q = 0.0;   ///< pu, consumed
    double shunt_g = 0.0;  ///< pu at 1.0 pu voltage
    double shunt_b = 0.0;
    double v_real = 1.0;
    double v_imag = 0.0;
    std::optional<Complex> injection;  ///< true net injection, ground truth only
};

struct Branch {
    BusId from = 0;
    BusId to = 0;
    double g = 0.0;        ///< series conductance
    double b = 0.0;        ///< series susceptance (negative for inductive lines)
    double shunt_b = 0.0;  ///< total line charging, split half per end
};

struct Generator {
    BusId bus = 0;
    double p = 0.0;      ///< pu
    double q = 0.0;      ///< pu
    double v_set = 1.0;  ///< regulated magnitude, pu
};

/// Immutable AC grid case. Construction validates every structural invariant.
class GridCase {
public:
    GridCase(double base_mva, std::vector<Bus> buses, std::vector<Branch> branches,
             std::vector<Generator> generators, std::set<BusId> rtu_buses,
             std::set<BusId> zero_injection_buses);

    /// RTUs on every bus with in-service generation or load; the remaining buses
    /// are zero-injection.
    static GridCase with_default_measurements(double base_mva, std::vector<Bus> buses,
                                              std::vector<Branch> branches,
                                              std::vector<Generator> generators);

    double base_mva() const noexcept { return base_mva_; }
    const std::vector<Bus>& buses() const noexcept { return buses_; }
    const std::vector<Branch>& branches() const noexcept { return branches_; }
    const std::vector<Generator>& generators() const noexcept { return generators_; }
    const std::set<BusId>& rtu_buses() const noexcept { return rtu_buses_; }
    const std::set<BusId>& zero_injection_buses() const noexcept { return zero_injection_; }

    std::size_t size() const noexcept { return buses_.size(); }
    bool has_bus(BusId id) const { return index_.contains(id); }
    /// Dense index of a bus id; throws DataError for unknown ids.
    std::size_t index_of(BusId id) const;
    /// Index of the angle reference (the first bus of type ref).
    std::size_t reference_index() const noexcept { return reference_; }

    bool is_rtu(BusId id) const { return rtu_buses_.contains(id); }
    bool is_zero_injection(BusId id) const { return zero_injection_.contains(id); }

    /// Net scheduled injection of generators minus loads at a bus (pu).
    Complex scheduled_injection(BusId id) const;

    /// Copy with a different measurement placement.
    GridCase with_measurements(std::set<BusId> rtu_buses, std::set<BusId> zero_injection) const;

private:
    double base_mva_;
    std::vector<Bus> buses_;
    std::vector<Branch> branches_;
    std::vector<Generator> generators_;
    std::set<BusId> rtu_buses_;
    std::set<BusId> zero_injection_;
    std::unordered_map<BusId, std::size_t> index_;
    std::size_t reference_ = 0;
};

/// Nodal admittance matrix, row-major so that one KCL row is one contiguous range.
struct Admittance {
    Eigen::SparseMatrix<Complex, Eigen::RowMajor> y;

    Complex at(std::size_t k, std::size_t l) const { return y.coeff(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l)); }
    std::size_t size() const noexcept { return static_cast<std::size_t>(y.rows()); }
};

/// Stamps every branch (pi model) and bus shunt. Parallel branches add up.
/// Throws DataError("disconnected bus ...") for a bus without incident branches.
Admittance build_admittance(const GridCase& grid);

struct FeatureConductance {
    double g = 0.0;
    double b = 0.0;
};

/// Converts an RTU (P, Q, |V|) triple into the conductance/susceptance of its
/// measurement circuit: g = p/|V|^2, b = q/|V|^2.
FeatureConductance feature_transform(double p_z, double q_z, double v_z);

/// Residual of an RTU measurement circuit with current noise (n_real, n_imag)
/// against a drawn current (i_real, i_imag). Affine in every argument.
Complex rtu_injection_residual(double v_real, double v_imag, double g_z, double b_z,
                               double n_real, double n_imag, double i_real, double i_imag);

/// Current drawn by a constant-power element consuming (p, q) at voltage v.
Complex load_current(double p, double q, double v_real, double v_imag);

/// KCL residual at a bus: network current leaving the bus plus every current
/// drawn by elements attached to it.
Complex grid_kcl_residual(const GridCase& grid, const Admittance& y, BusId bus,
                          std::span<const Complex> voltages, std::span<const Complex> attached_drawn);

/// Network current leaving every bus, (Y V)_k.
std::vector<Complex> network_currents(const Admittance& y, std::span<const Complex> voltages);

}  // namespace gridfuse
