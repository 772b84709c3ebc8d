#pragma once

#include <string>
#include <vector>

#include "gridfuse/der.hpp"
#include "gridfuse/network.hpp"

namespace gridfuse {

/// One RTU-style measurement circuit (P, Q, |V|) at a bus.
///
/// The channels are the element's equivalent shunt admittance scaled by |V|^2:
/// p_z = G|V|^2 is real power absorbed by the element, q_z = B|V|^2 is the
/// negative of the reactive power it absorbs. The circuit then draws
/// (G + jB) V + n from the bus.
struct RtuMeasurement {
    BusId bus = 0;
    double p_z = 0.0;
    double q_z = 0.0;
    double v_z = 1.0;
    double sigma = 0.001;  ///< standard deviation used for weighting
    bool biased = false;

    /// Recomputed on every call so it can never go stale.
    FeatureConductance conductance() const { return feature_transform(p_z, q_z, v_z); }
    double weight() const { return 1.0 / (sigma * sigma); }
};

struct PvReading {
    PvMeasurement z;
    double sigma_v = 0.1;
    double sigma_i = 0.1;
    double sigma_ph = 0.1;
    bool biased_v = false;
    bool biased_i = false;
    bool biased_ph = false;
};

struct BatteryReading {
    BatteryMeasurement z;
    double sigma_v = 0.1;
    double sigma_i = 0.1;
    bool biased_v = false;
    bool biased_i = false;
};

struct DerFleet {
    std::vector<PvSystem> pv;
    std::vector<BatterySystem> battery;
};

/// Everything the estimators consume for one snapshot.
struct MeasurementSet {
    std::vector<RtuMeasurement> rtu;     ///< bus RTUs, one per measured bus, ascending bus index
    std::vector<RtuMeasurement> pv_poi;  ///< point-of-interconnection meter per PV
    std::vector<RtuMeasurement> bt_poi;  ///< point-of-interconnection meter per battery
    std::vector<PvReading> pv;
    std::vector<BatteryReading> battery;

    const RtuMeasurement* rtu_at(BusId bus) const {
        for (const auto& m : rtu)
            if (m.bus == bus) return &m;
        return nullptr;
    }
};

}  // namespace gridfuse
