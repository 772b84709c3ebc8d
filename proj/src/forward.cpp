#include "gridfuse/forward.hpp"

#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>

#include "gridfuse/error.hpp"
#include "gridfuse/rng.hpp"

namespace gridfuse {

namespace {

enum class Role { pq, pv, ref };

struct PowerFlowResult {
    std::vector<Complex> v;
    int iterations = 0;
};

/// Rectangular Newton power flow with power mismatch equations
/// (PQ: dP, dQ; PV: dP, d|V|^2; reference fixed).
PowerFlowResult run_powerflow(const GridCase& grid, const Admittance& y, std::span<const Complex> s_sched,
                              const PowerFlowOptions& opts) {
    const std::size_t n = grid.size();
    std::vector<Role> role(n, Role::pq);
    std::vector<double> v_set(n, 1.0);
    for (std::size_t k = 0; k < n; ++k) {
        const Bus& b = grid.buses()[k];
        v_set[k] = std::hypot(b.v_real, b.v_imag);
        if (!(v_set[k] > 0.0)) v_set[k] = 1.0;
    }
    std::vector<bool> has_gen(n, false);
    for (const auto& g : grid.generators()) {
        const std::size_t k = grid.index_of(g.bus);
        if (!has_gen[k]) v_set[k] = g.v_set;
        has_gen[k] = true;
    }
    for (std::size_t k = 0; k < n; ++k) {
        const BusType t = grid.buses()[k].type;
        if (has_gen[k] && (t == BusType::pv || t == BusType::ref)) role[k] = Role::pv;
    }
    const std::size_t ref = grid.reference_index();
    role[ref] = Role::ref;

    std::vector<int> pos(n, -1);
    int m = 0;
    for (std::size_t k = 0; k < n; ++k)
        if (role[k] != Role::ref) pos[k] = m++;

    PowerFlowResult out;
    out.v.assign(n, Complex{1.0, 0.0});
    for (std::size_t k = 0; k < n; ++k)
        if (role[k] != Role::pq) out.v[k] = Complex{v_set[k], 0.0};

    Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
    bool analyzed = false;
    std::vector<Eigen::Triplet<double>> trips;
    Eigen::VectorXd f(2 * m);

    for (out.iterations = 0;; ++out.iterations) {
        const std::vector<Complex> i = network_currents(y, out.v);
        double worst = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            if (role[k] == Role::ref) continue;
            const Complex s = out.v[k] * std::conj(i[k]);
            const auto r = static_cast<Eigen::Index>(2 * pos[k]);
            f[r] = s.real() - s_sched[k].real();
            f[r + 1] = role[k] == Role::pq ? s.imag() - s_sched[k].imag() : std::norm(out.v[k]) - v_set[k] * v_set[k];
            worst = std::max({worst, std::abs(f[r]), std::abs(f[r + 1])});
        }
        if (!std::isfinite(worst)) throw SolverError("power flow diverged", worst);
        if (worst < opts.tol) break;
        if (out.iterations >= opts.max_iterations)
            throw SolverError("power flow did not converge", worst);

        trips.clear();
        for (std::size_t k = 0; k < n; ++k) {
            if (role[k] == Role::ref) continue;
            const int r = 2 * pos[k];
            const double ek = out.v[k].real(), fk = out.v[k].imag();
            const auto row = static_cast<Eigen::Index>(k);
            for (Eigen::SparseMatrix<Complex, Eigen::RowMajor>::InnerIterator it(y.y, row); it; ++it) {
                const auto j = static_cast<std::size_t>(it.col());
                if (role[j] == Role::ref) continue;
                const int c = 2 * pos[j];
                const double g = it.value().real(), b = it.value().imag();
                const bool d = j == k;
                trips.emplace_back(r, c, ek * g + fk * b + (d ? i[k].real() : 0.0));
                trips.emplace_back(r, c + 1, -ek * b + fk * g + (d ? i[k].imag() : 0.0));
                if (role[k] == Role::pq) {
                    trips.emplace_back(r + 1, c, fk * g - ek * b - (d ? i[k].imag() : 0.0));
                    trips.emplace_back(r + 1, c + 1, -fk * b - ek * g + (d ? i[k].real() : 0.0));
                }
            }
            if (role[k] == Role::pv) {
                trips.emplace_back(r + 1, r, 2.0 * ek);
                trips.emplace_back(r + 1, r + 1, 2.0 * fk);
            }
        }
        Eigen::SparseMatrix<double> jac(2 * m, 2 * m);
        jac.setFromTriplets(trips.begin(), trips.end());
        jac.makeCompressed();
        if (!analyzed) {
            lu.analyzePattern(jac);
            analyzed = true;
        }
        lu.factorize(jac);
        if (lu.info() != Eigen::Success) throw SolverError("singular power flow Jacobian", worst);
        const Eigen::VectorXd dx = lu.solve(-f);
        for (std::size_t k = 0; k < n; ++k) {
            if (role[k] == Role::ref) continue;
            const auto r = static_cast<Eigen::Index>(2 * pos[k]);
            out.v[k] += Complex{dx[r], dx[r + 1]};
        }
    }
    return out;
}

}  // namespace

GroundTruth solve_combined_powerflow(const GridCase& grid, const DerFleet& fleet,
                                     std::span<const PvOperatingPoint> pv_points,
                                     std::span<const BatterySchedule> schedule, const PowerFlowOptions& opts) {
    if (pv_points.size() != fleet.pv.size()) throw DataError("one operating point per PV is required");
    if (schedule.size() != fleet.battery.size()) throw DataError("one schedule entry per battery is required");
    const double base_w = grid.base_mva() * 1e6;
    const std::size_t n = grid.size();

    GroundTruth t;
    std::vector<Complex> s_sched(n);
    for (std::size_t k = 0; k < n; ++k) s_sched[k] = grid.scheduled_injection(grid.buses()[k].id);

    for (std::size_t k = 0; k < fleet.pv.size(); ++k) {
        const PvSystem& pv = fleet.pv[k];
        validate(pv);
        const double i_ph = photocurrent(pv.i_ph_stc, pv.alpha_t, pv_points[k].irradiance, pv_points[k].t_cell);
        const PvState s = solve_pv_operating_point(pv, i_ph, pv_points[k].v_op);
        if (s.i_pv < 0.0) throw DataError("PV " + pv.name + ": operating voltage beyond open circuit");
        const double p_w = pv.n_parallel_scale * s.p_pv;
        const double eta = inverter_efficiency(p_w, pv.inverter);
        t.pv.push_back(s);
        t.pv_eta.push_back(eta);
        t.pv_ac.push_back(eta * dc_watts_to_pu(p_w, grid.base_mva()));
        s_sched[grid.index_of(pv.bus)] += t.pv_ac.back();
    }

    for (std::size_t k = 0; k < fleet.battery.size(); ++k) {
        const BatterySystem& bt = fleet.battery[k];
        validate(bt);
        const BatteryState s = battery_state_at(bt, schedule[k].v_soc, schedule[k].i_bt);
        const double p_w = bt.n_parallel_scale * s.p_bt;
        double eta = 0.0, p_ac = 0.0;
        if (s.i_bt >= 0.0) {
            t.dispatch.push_back(Dispatch::discharging);
            eta = inverter_efficiency(p_w, bt.inverter);
            p_ac = eta * p_w / base_w;
        } else {
            // Rectifier efficiency depends on the AC power it draws: fixed point.
            t.dispatch.push_back(Dispatch::charging);
            const double stored = -p_w;
            eta = inverter_efficiency(stored, bt.rectifier);
            for (int it = 0; it < opts.efficiency_iterations; ++it) {
                const double next = inverter_efficiency(stored / eta, bt.rectifier);
                const bool done = std::abs(next - eta) < opts.efficiency_tol;
                eta = next;
                if (done) break;
            }
            p_ac = -stored / eta / base_w;
        }
        t.battery.push_back(s);
        t.battery_eta.push_back(eta);
        t.battery_ac.push_back(p_ac);
        s_sched[grid.index_of(bt.bus)] += p_ac;
    }

    const Admittance y = build_admittance(grid);
    PowerFlowResult pf = run_powerflow(grid, y, s_sched, opts);
    t.voltages = std::move(pf.v);
    t.iterations = pf.iterations;

    // Net injections after the solve; generators at regulated buses absorb the
    // balance, so the non-DER part is recomputed from the network currents.
    const std::vector<Complex> i_net = network_currents(y, t.voltages);
    t.bus_injection.resize(n);
    for (std::size_t k = 0; k < n; ++k) t.bus_injection[k] = t.voltages[k] * std::conj(i_net[k]);
    for (std::size_t k = 0; k < fleet.pv.size(); ++k) t.bus_injection[grid.index_of(fleet.pv[k].bus)] -= t.pv_ac[k];
    for (std::size_t k = 0; k < fleet.battery.size(); ++k)
        t.bus_injection[grid.index_of(fleet.battery[k].bus)] -= t.battery_ac[k];

    // Verification of every device, coupling and balance residual.
    double worst = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const BusType ty = grid.buses()[k].type;
        const Complex mismatch = t.bus_injection[k] - grid.scheduled_injection(grid.buses()[k].id);
        bool regulated = k == grid.reference_index();
        for (const auto& g : grid.generators())
            if (g.bus == grid.buses()[k].id && (ty == BusType::pv || ty == BusType::ref)) regulated = true;
        if (k != grid.reference_index()) worst = std::max(worst, std::abs(mismatch.real()));
        if (!regulated) worst = std::max(worst, std::abs(mismatch.imag()));
    }
    for (std::size_t k = 0; k < fleet.pv.size(); ++k) {
        const PvState& s = t.pv[k];
        for (double r : pv_residuals(s, fleet.pv[k], {s.v_pv, s.i_pv, s.i_ph}, {}))
            worst = std::max(worst, std::abs(r));
        const Complex v = t.voltages[grid.index_of(fleet.pv[k].bus)];
        const Complex i_inj = std::conj(Complex{t.pv_ac[k], 0.0} / v);
        const Complex c = pv_coupling_residuals(s, fleet.pv[k].n_parallel_scale, v, i_inj, t.pv_eta[k], grid.base_mva());
        worst = std::max({worst, std::abs(c.real()), std::abs(c.imag())});
    }
    for (std::size_t k = 0; k < fleet.battery.size(); ++k) {
        const BatteryState& s = t.battery[k];
        for (double r : battery_residuals(s, fleet.battery[k], {s.v_bt, s.i_bt}, {}))
            worst = std::max(worst, std::abs(r) / std::max(1.0, std::abs(s.v_bt)));
        const Complex v = t.voltages[grid.index_of(fleet.battery[k].bus)];
        const Complex i_inj = std::conj(Complex{t.battery_ac[k], 0.0} / v);
        const double eta_inv = t.dispatch[k] == Dispatch::discharging ? t.battery_eta[k] : 1.0;
        const double eta_rec = t.dispatch[k] == Dispatch::charging ? t.battery_eta[k] : 1.0;
        const Complex c = battery_coupling_residuals(s, fleet.battery[k].n_parallel_scale, v, i_inj, eta_inv, eta_rec,
                                                     t.dispatch[k], grid.base_mva());
        worst = std::max({worst, std::abs(c.real()), std::abs(c.imag())});
    }
    t.max_residual = worst;
    if (!(worst < opts.verify_tol)) throw SolverError("ground truth fails verification", worst);
    return t;
}

std::vector<double> step_soc(const BatterySystem& bt, std::span<const double> i_bt_profile, int n_steps, double dt,
                             double soc0) {
    if (n_steps < 0) throw DataError("negative step count");
    if (i_bt_profile.size() != static_cast<std::size_t>(n_steps) + 1)
        throw DataError("current profile needs n_steps + 1 samples");
    if (!(soc0 >= 0.0 && soc0 <= 1.0)) throw DataError("battery over/under charge in schedule");
    const double k = dt / (2.0 * bt.c_cap);
    const double leak = std::isinf(bt.r_sd) ? 0.0 : k / bt.r_sd;
    std::vector<double> soc{soc0};
    for (int s = 1; s <= n_steps; ++s) {
        const auto u = static_cast<std::size_t>(s);
        double next = (soc.back() * (1.0 - leak) - k * (i_bt_profile[u] + i_bt_profile[u - 1])) / (1.0 + leak);
        // A schedule that exactly empties or fills the battery lands within rounding of the bound.
        constexpr double slack = 1e-12;
        if (!(next >= -slack && next <= 1.0 + slack)) throw DataError("battery over/under charge in schedule");
        next = std::clamp(next, 0.0, 1.0);
        soc.push_back(next);
    }
    return soc;
}

MeasurementSet synthesize_measurements(const GridCase& grid, const DerFleet& fleet, const GroundTruth& truth,
                                       const NoiseModel& noise, std::uint64_t seed, std::uint64_t stream) {
    if (noise.rtu_sigma < 0.0 || noise.der_sigma < 0.0) throw DataError("noise sigmas must be non-negative");
    CounterRng rng(seed, stream);
    const double rtu_draw = noise.rtu_sigma * noise.draw_scale;
    const double der_draw = noise.der_sigma * noise.draw_scale;
    // Every channel consumes one draw even at zero sigma so streams stay aligned.
    const auto draw = [&](double sigma) { return sigma * rng.gaussian(); };

    // Channels of a circuit injecting s at voltage v: p_z = G|V|^2 = -P, q_z = B|V|^2 = Q.
    const auto meter = [&](BusId bus, Complex s_inj, double vm) {
        RtuMeasurement m;
        m.bus = bus;
        m.sigma = noise.rtu_sigma;
        m.p_z = -s_inj.real() + draw(rtu_draw);
        m.q_z = s_inj.imag() + draw(rtu_draw);
        m.v_z = vm + draw(rtu_draw);
        return m;
    };

    MeasurementSet out;
    for (BusId id : grid.rtu_buses()) {
        const std::size_t k = grid.index_of(id);
        out.rtu.push_back(meter(id, truth.bus_injection[k], std::abs(truth.voltages[k])));
    }
    for (std::size_t k = 0; k < fleet.pv.size(); ++k) {
        const std::size_t b = grid.index_of(fleet.pv[k].bus);
        out.pv_poi.push_back(meter(fleet.pv[k].bus, Complex{truth.pv_ac[k], 0.0}, std::abs(truth.voltages[b])));
    }
    for (std::size_t k = 0; k < fleet.battery.size(); ++k) {
        const std::size_t b = grid.index_of(fleet.battery[k].bus);
        out.bt_poi.push_back(
            meter(fleet.battery[k].bus, Complex{truth.battery_ac[k], 0.0}, std::abs(truth.voltages[b])));
    }
    for (const auto& s : truth.pv) {
        PvReading r;
        r.sigma_v = r.sigma_i = r.sigma_ph = noise.der_sigma;
        r.z.z_v = s.v_pv + draw(der_draw);
        r.z.z_i = s.i_pv + draw(der_draw);
        r.z.z_ph = s.i_ph + draw(der_draw);
        out.pv.push_back(r);
    }
    for (const auto& s : truth.battery) {
        BatteryReading r;
        r.sigma_v = r.sigma_i = noise.der_sigma;
        r.z.z_v = s.v_bt + draw(der_draw);
        r.z.z_i = s.i_bt + draw(der_draw);
        out.battery.push_back(r);
    }
    return out;
}

MeasurementSet inject_bad_data(const MeasurementSet& meas, const DerFleet& fleet, std::span<const BadData> spec) {
    MeasurementSet out = meas;
    for (const auto& bad : spec) {
        const auto dot = bad.target.rfind('.');
        if (dot == std::string::npos) throw DataError("unknown bad-data target '" + bad.target + "'");
        const std::string who = bad.target.substr(0, dot), channel = bad.target.substr(dot + 1);
        const double f = 1.0 + bad.bias;
        bool found = false;
        for (std::size_t k = 0; k < fleet.pv.size() && !found; ++k) {
            if (fleet.pv[k].name != who) continue;
            auto& r = out.pv[k];
            if (channel == "v") r.z.z_v *= f, r.biased_v = true, found = true;
            else if (channel == "i") r.z.z_i *= f, r.biased_i = true, found = true;
            else if (channel == "ph") r.z.z_ph *= f, r.biased_ph = true, found = true;
        }
        for (std::size_t k = 0; k < fleet.battery.size() && !found; ++k) {
            if (fleet.battery[k].name != who) continue;
            auto& r = out.battery[k];
            if (channel == "v") r.z.z_v *= f, r.biased_v = true, found = true;
            else if (channel == "i") r.z.z_i *= f, r.biased_i = true, found = true;
        }
        if (!found && who.starts_with("rtu")) {
            for (auto& m : out.rtu) {
                if (std::to_string(m.bus) != who.substr(3)) continue;
                if (channel == "p") m.p_z *= f, found = true;
                else if (channel == "q") m.q_z *= f, found = true;
                else if (channel == "v") m.v_z *= f, found = true;
                m.biased = m.biased || found;
            }
        }
        if (!found) throw DataError("unknown bad-data target '" + bad.target + "'");
    }
    return out;
}

namespace {

double* parameter_slot(DerFleet& fleet, const std::string& path) {
    const auto dot = path.rfind('.');
    if (dot == std::string::npos) return nullptr;
    const std::string who = path.substr(0, dot), field = path.substr(dot + 1);
    for (auto& pv : fleet.pv) {
        if (pv.name != who) continue;
        if (field == "r_s") return &pv.r_s;
        if (field == "r_sh") return &pv.r_sh;
        if (field == "i_0") return &pv.i_0;
        if (field == "a") return &pv.a;
        return nullptr;
    }
    for (auto& bt : fleet.battery) {
        if (bt.name != who) continue;
        if (field == "r_se") return &bt.r_se;
        if (field == "c_cap") return &bt.c_cap;
        if (field == "r_sd") return &bt.r_sd;
        return nullptr;
    }
    return nullptr;
}

}  // namespace

double parameter_value(const DerFleet& fleet, const std::string& path) {
    DerFleet copy = fleet;
    const double* slot = parameter_slot(copy, path);
    if (slot == nullptr) throw DataError("unknown parameter path '" + path + "'");
    return *slot;
}

PerturbedFleet perturb_parameters(const DerFleet& fleet, std::span<const ParameterError> errors) {
    PerturbedFleet out{fleet, {}};
    for (const auto& e : errors) {
        double* slot = parameter_slot(out.fleet, e.path);
        if (slot == nullptr) throw DataError("unknown parameter path '" + e.path + "'");
        out.truth.emplace(e.path, parameter_value(fleet, e.path));
        *slot *= 1.0 + e.rel_error;
    }
    return out;
}

}  // namespace gridfuse
