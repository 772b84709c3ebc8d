#pragma once

// DC-side equivalent circuits of grid-tied solar PV (single-diode model) and
// battery storage (zeroth-order model with a capacitor SoC subcircuit), the
// converter efficiency curves, and the AC/DC power coupling at the point of
// interconnection.
//
// DC quantities are in volts, amps, ohms and farads of one aggregated unit
// circuit; n_parallel_scale identical units feed the inverter, so the plant
// DC power in watts is n_parallel_scale * V * I.

#include <array>
#include <string>

#include "gridfuse/network.hpp"

namespace gridfuse {

enum class ConverterKind { inversion, rectification };

/// Truncated sigmoid efficiency eta(P) = m / (1 + exp(-gamma P)), P in watts.
struct InverterCurve {
    double m = 0.98;
    double gamma = 1e-6;
    ConverterKind kind = ConverterKind::inversion;
};

void validate(const InverterCurve& curve);

/// Fits (m, gamma) through two datasheet points: efficiency at 10% and at 100%
/// of rated power. Throws DataError when the points admit no sigmoid.
InverterCurve fit_inverter_curve(double eta_at_10pct, double eta_at_rated, double rated_w, ConverterKind kind);

/// Efficiency at converter power p_w >= 0. Throws DataError("negative converter power").
double inverter_efficiency(double p_w, const InverterCurve& curve);

/// Diode exponent argument beyond which the exponential is continued linearly.
inline constexpr double diode_exponent_clamp = 40.0;

/// Shockley current i_0 (exp(v/a) - 1) with a C1 linear continuation past the clamp.
double diode_current(double v_sh, double i_0, double a);
/// d/dv of diode_current.
double diode_conductance(double v_sh, double i_0, double a);
/// d2/dv2 of diode_current (zero on the linear continuation).
double diode_curvature(double v_sh, double i_0, double a);

/// Photocurrent pseudo-measurement from irradiance (W/m2) and cell temperature (C).
double photocurrent(double i_ph_stc, double alpha_t, double irradiance, double t_cell);

struct PvSystem {
    std::string name;
    BusId bus = 0;
    double r_s = 0.05;
    double r_sh = 50.0;
    double i_0 = 1e-9;
    double a = 0.33;  ///< n k T / q folded into volts
    double n_parallel_scale = 1.0;
    double i_ph_stc = 5.0;
    double alpha_t = 0.0005;  ///< 1/C
    InverterCurve inverter{};
};

void validate(const PvSystem& pv);

struct PvState {
    double v_sh = 0.0;
    double v_pv = 0.0;
    double i_pv = 0.0;
    double i_d = 0.0;
    double i_ph = 0.0;
    double p_pv = 0.0;  ///< unit-circuit DC power i_pv * v_pv
};

struct PvMeasurement {
    double z_v = 0.0;
    double z_i = 0.0;
    double z_ph = 0.0;
};

struct PvNoise {
    double n_ph = 0.0;
    double n_i = 0.0;
    double n_v = 0.0;
};

/// Measurement-circuit residuals of one PV unit:
///   r1 = -z_ph - n_ph + I_D(V_SH) + V_SH/R_SH + I_PV
///   r2 = -I_PV + z_i + n_i
///   r3 = I_PV - (V_SH - V_PV)/R_S
///   r4 = -V_PV + z_v + n_v
std::array<double, 4> pv_residuals(const PvState& state, const PvSystem& sys, const PvMeasurement& meas,
                                   const PvNoise& noise);

/// Operating point of a PV unit at a fixed terminal voltage (the MPPT setpoint).
PvState solve_pv_operating_point(const PvSystem& sys, double i_ph, double v_pv);

enum class Dispatch { discharging, charging };

struct BatterySystem {
    std::string name;
    BusId bus = 0;
    double c_cap = 36000.0;
    double r_se = 0.05;
    double r_sd = 1e12;  ///< may be +inf
    double ocv_a = 34.0;
    double ocv_b = 12.0;
    double dt = 300.0;
    double n_parallel_scale = 1.0;
    InverterCurve inverter{};
    InverterCurve rectifier{0.96, 1e-6, ConverterKind::rectification};
};

void validate(const BatterySystem& bt);

struct BatteryState {
    double v_soc = 0.5;
    double v_oc = 0.0;
    double v_bt = 0.0;
    double i_bt = 0.0;  ///< positive while discharging
    double p_bt = 0.0;  ///< unit-circuit DC power i_bt * v_bt
};

struct BatteryMeasurement {
    double z_v = 0.0;
    double z_i = 0.0;
};

struct BatteryNoise {
    double n_i = 0.0;
    double n_v = 0.0;
};

/// r1 = -I_Bt + z_i + n_i;  r2 = (V_Bt - V_OC)/R_SE + I_Bt;  r3 = -V_Bt + z_v + n_v
std::array<double, 3> battery_residuals(const BatteryState& state, const BatterySystem& sys,
                                        const BatteryMeasurement& meas, const BatteryNoise& noise);

/// Trapezoidal SoC step expressed in open-circuit voltages, self-discharge
/// neglected. Zero on the trapezoidal trajectory.
double soc_update_residual(double v_oc_t, double v_oc_prev, double v_bt_t, double v_bt_prev, const BatterySystem& sys);

struct OcvValue {
    double volts = 0.0;
    bool outside_linear_band = false;  ///< SoC outside [0.2, 0.8]
};

OcvValue ocv_from_soc(double v_soc, const BatterySystem& sys);

struct SocValue {
    double v_soc = 0.0;
    bool outside_linear_band = false;
};

SocValue soc_from_ocv(double v_oc, const BatterySystem& sys);

/// Battery state at a given SoC and DC current.
BatteryState battery_state_at(const BatterySystem& sys, double v_soc, double i_bt);

/// Plant DC watts to per-unit on the case base.
inline double dc_watts_to_pu(double watts, double base_mva) { return watts / (base_mva * 1e6); }

/// PV inverter coupling with the AC injection i_inj (generator convention):
///   r_p = eta * P_dc[pu] - Re(V conj(I)),  r_q = V_i I_r - V_r I_i.
Complex pv_coupling_residuals(const PvState& pv, double n_parallel_scale, Complex v_bus, Complex i_inj,
                              double eta_inv, double base_mva);

/// Battery converter coupling; the dispatch flag selects inversion or rectification.
Complex battery_coupling_residuals(const BatteryState& bt, double n_parallel_scale, Complex v_bus, Complex i_inj,
                                   double eta_inv, double eta_rec, Dispatch dispatch, double base_mva);

}  // namespace gridfuse
