#include "gridfuse/der.hpp"

#include <cmath>
#include <limits>

#include "gridfuse/error.hpp"

namespace gridfuse {

void validate(const InverterCurve& curve) {
    if (!(curve.m > 0.0 && curve.m <= 2.0)) throw DataError("inverter curve asymptote must lie in (0, 2]");
    if (!(curve.gamma > 0.0)) throw DataError("inverter curve gamma must be positive");
}

InverterCurve fit_inverter_curve(double eta_at_10pct, double eta_at_rated, double rated_w, ConverterKind kind) {
    if (!(rated_w > 0.0)) throw DataError("rated power must be positive");
    if (!(eta_at_10pct > 0.5 && eta_at_10pct < eta_at_rated && eta_at_rated < 1.0))
        throw DataError("datasheet efficiencies must satisfy 0.5 < eta(10%) < eta(100%) < 1");

    // With u = exp(-0.1 gamma P_rated): m = e10 (1 + u) = e100 (1 + u^10).
    const auto g = [&](double u) { return eta_at_10pct * (1.0 + u) - eta_at_rated * (1.0 + std::pow(u, 10)); };
    const double u_peak = std::pow(eta_at_10pct / (10.0 * eta_at_rated), 1.0 / 9.0);
    if (!(g(u_peak) > 0.0)) throw DataError("datasheet points admit no truncated sigmoid");

    double lo = 0.0, hi = u_peak;
    for (int it = 0; it < 200 && hi - lo > 1e-16; ++it) {
        const double mid = 0.5 * (lo + hi);
        (g(mid) < 0.0 ? lo : hi) = mid;
    }
    const double u = 0.5 * (lo + hi);
    InverterCurve curve{eta_at_10pct * (1.0 + u), -std::log(u) / (0.1 * rated_w), kind};
    validate(curve);
    return curve;
}

double inverter_efficiency(double p_w, const InverterCurve& curve) {
    if (p_w < 0.0) throw DataError("negative converter power");
    return curve.m / (1.0 + std::exp(-curve.gamma * p_w));
}

double diode_current(double v_sh, double i_0, double a) {
    const double x = v_sh / a;
    if (x <= diode_exponent_clamp) return i_0 * std::expm1(x);
    const double e = std::exp(diode_exponent_clamp);
    return i_0 * (e * (1.0 + (x - diode_exponent_clamp)) - 1.0);
}

double diode_conductance(double v_sh, double i_0, double a) {
    return i_0 / a * std::exp(std::min(v_sh / a, diode_exponent_clamp));
}

double diode_curvature(double v_sh, double i_0, double a) {
    const double x = v_sh / a;
    if (x > diode_exponent_clamp) return 0.0;
    return i_0 / (a * a) * std::exp(x);
}

double photocurrent(double i_ph_stc, double alpha_t, double irradiance, double t_cell) {
    return i_ph_stc * (irradiance / 1000.0) * (1.0 + alpha_t * (t_cell - 25.0));
}

void validate(const PvSystem& pv) {
    if (!(pv.r_s > 0.0)) throw DataError("PV " + pv.name + ": r_s must be positive");
    if (!(pv.r_sh > 0.0)) throw DataError("PV " + pv.name + ": r_sh must be positive");
    if (!(pv.i_0 > 0.0)) throw DataError("PV " + pv.name + ": i_0 must be positive");
    if (!(pv.a > 0.0)) throw DataError("PV " + pv.name + ": a must be positive");
    if (!(pv.n_parallel_scale > 0.0)) throw DataError("PV " + pv.name + ": n_parallel_scale must be positive");
    validate(pv.inverter);
}

std::array<double, 4> pv_residuals(const PvState& s, const PvSystem& sys, const PvMeasurement& z,
                                   const PvNoise& n) {
    return {
        -z.z_ph - n.n_ph + diode_current(s.v_sh, sys.i_0, sys.a) + s.v_sh / sys.r_sh + s.i_pv,
        -s.i_pv + z.z_i + n.n_i,
        s.i_pv - (s.v_sh - s.v_pv) / sys.r_s,
        -s.v_pv + z.z_v + n.n_v,
    };
}

PvState solve_pv_operating_point(const PvSystem& sys, double i_ph, double v_pv) {
    // f(v_sh) = i_ph - I_D - v_sh/R_SH - (v_sh - v_pv)/R_S is strictly decreasing.
    const auto f = [&](double v) {
        return i_ph - diode_current(v, sys.i_0, sys.a) - v / sys.r_sh - (v - v_pv) / sys.r_s;
    };
    const auto df = [&](double v) { return -diode_conductance(v, sys.i_0, sys.a) - 1.0 / sys.r_sh - 1.0 / sys.r_s; };

    double lo = v_pv - 1.0, hi = v_pv + 1.0;
    for (int k = 0; f(lo) < 0.0 && k < 200; ++k) lo -= 2.0 * (hi - lo);
    for (int k = 0; f(hi) > 0.0 && k < 200; ++k) hi += 2.0 * (hi - lo);
    if (f(lo) < 0.0 || f(hi) > 0.0) throw SolverError("PV " + sys.name + ": cannot bracket the operating point");

    double v = 0.5 * (lo + hi);
    for (int it = 0; it < 200; ++it) {
        const double fv = f(v);
        (fv > 0.0 ? lo : hi) = v;
        double next = v - fv / df(v);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (std::abs(next - v) <= 1e-15 * std::max(1.0, std::abs(v))) {
            v = next;
            break;
        }
        v = next;
    }

    PvState s;
    s.v_sh = v;
    s.v_pv = v_pv;
    s.i_pv = (v - v_pv) / sys.r_s;
    s.i_d = diode_current(v, sys.i_0, sys.a);
    s.i_ph = i_ph;
    s.p_pv = s.i_pv * s.v_pv;
    return s;
}

void validate(const BatterySystem& bt) {
    if (!(bt.c_cap > 0.0)) throw DataError("battery " + bt.name + ": c_cap must be positive");
    if (!(bt.r_se > 0.0)) throw DataError("battery " + bt.name + ": r_se must be positive");
    if (!(bt.r_sd > 0.0)) throw DataError("battery " + bt.name + ": r_sd must be positive");
    if (bt.ocv_b == 0.0) throw DataError("degenerate OCV map");
    if (!(bt.dt > 0.0)) throw DataError("battery " + bt.name + ": dt must be positive");
    if (!(bt.n_parallel_scale > 0.0)) throw DataError("battery " + bt.name + ": n_parallel_scale must be positive");
    validate(bt.inverter);
    validate(bt.rectifier);
}

std::array<double, 3> battery_residuals(const BatteryState& s, const BatterySystem& sys,
                                        const BatteryMeasurement& z, const BatteryNoise& n) {
    return {
        -s.i_bt + z.z_i + n.n_i,
        (s.v_bt - s.v_oc) / sys.r_se + s.i_bt,
        -s.v_bt + z.z_v + n.n_v,
    };
}

double soc_update_residual(double v_oc_t, double v_oc_prev, double v_bt_t, double v_bt_prev,
                           const BatterySystem& sys) {
    if (sys.ocv_b == 0.0) throw DataError("degenerate OCV map");
    const double i_t = (v_oc_t - v_bt_t) / sys.r_se;
    const double i_prev = (v_oc_prev - v_bt_prev) / sys.r_se;
    return (v_oc_t - v_oc_prev) / sys.ocv_b + sys.dt / (2.0 * sys.c_cap) * (i_t + i_prev);
}

namespace {
bool outside_band(double soc) { return soc < 0.2 || soc > 0.8; }
}  // namespace

OcvValue ocv_from_soc(double v_soc, const BatterySystem& sys) {
    if (!(v_soc >= 0.0 && v_soc <= 1.0)) throw DataError("state of charge outside [0, 1]");
    return {sys.ocv_a + sys.ocv_b * v_soc, outside_band(v_soc)};
}

SocValue soc_from_ocv(double v_oc, const BatterySystem& sys) {
    if (sys.ocv_b == 0.0) throw DataError("degenerate OCV map");
    const double soc = (v_oc - sys.ocv_a) / sys.ocv_b;
    if (!(soc >= 0.0 && soc <= 1.0)) throw DataError("state of charge outside [0, 1]");
    return {soc, outside_band(soc)};
}

BatteryState battery_state_at(const BatterySystem& sys, double v_soc, double i_bt) {
    BatteryState s;
    s.v_soc = v_soc;
    s.v_oc = sys.ocv_a + sys.ocv_b * v_soc;
    s.i_bt = i_bt;
    s.v_bt = s.v_oc - sys.r_se * i_bt;
    s.p_bt = s.v_bt * s.i_bt;
    return s;
}

Complex pv_coupling_residuals(const PvState& pv, double n_parallel_scale, Complex v, Complex i,
                              double eta_inv, double base_mva) {
    const double p_dc = dc_watts_to_pu(n_parallel_scale * pv.i_pv * pv.v_pv, base_mva);
    const double p_ac = v.real() * i.real() + v.imag() * i.imag();
    return {eta_inv * p_dc - p_ac, v.imag() * i.real() - v.real() * i.imag()};
}

Complex battery_coupling_residuals(const BatteryState& bt, double n_parallel_scale, Complex v, Complex i,
                                   double eta_inv, double eta_rec, Dispatch dispatch, double base_mva) {
    const double p_dc = dc_watts_to_pu(n_parallel_scale * bt.i_bt * bt.v_bt, base_mva);
    const double p_ac = v.real() * i.real() + v.imag() * i.imag();
    const double r_q = v.imag() * i.real() - v.real() * i.imag();
    if (dispatch == Dispatch::discharging) return {eta_inv * p_dc - p_ac, r_q};
    return {p_dc - eta_rec * p_ac, r_q};
}

}  // namespace gridfuse
