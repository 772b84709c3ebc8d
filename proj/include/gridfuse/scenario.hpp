#pragma once

// Scenario configuration: grid case, DER fleet with operating inputs, noise,
// bad data, unknown and perturbed parameters, Monte-Carlo size and seeding.
// The JSON schema is documented in docs/scenario_schema.md.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gridfuse/case_io.hpp"
#include "gridfuse/forward.hpp"

namespace gridfuse {

enum class ScenarioKind { clean, bad_data, unknown_parameter };  ///< A, B, C

std::string to_letter(ScenarioKind kind);

struct PvSite {
    PvSystem system;
    PvOperatingPoint point;
};

struct BatterySite {
    BatterySystem system;
    double soc0 = 0.5;
    /// DC current per instant, index 0 is the initial instant; a snapshot run uses only index 0.
    std::vector<double> current;
};

struct ScenarioConfig {
    std::string id;
    std::filesystem::path case_path;  ///< resolved against the scenario directory
    std::string case_ref;              ///< as written in the scenario file
    ScenarioKind kind = ScenarioKind::clean;
    std::optional<TileSpec> tile;
    std::vector<PvSite> pv;
    std::vector<BatterySite> battery;
    NoiseModel noise;
    std::vector<BadData> bad_data;
    std::vector<std::string> unknown_params;
    std::vector<ParameterError> parameter_errors;
    int n_instances = 100;
    std::uint64_t base_seed = 1;
    int time_steps = 0;  ///< 0 for a single snapshot
    double dt = 300.0;
    std::vector<std::string> routines{"standalone", "combined"};

    DerFleet fleet() const;
    std::vector<PvOperatingPoint> pv_points() const;
    /// Canonical JSON of the fully resolved configuration (hashing, manifests).
    std::string canonical_json() const;
};

/// Parses and resolves a scenario; relative case paths are taken from base_dir.
/// Schema violations raise DataError naming the field.
ScenarioConfig parse_scenario(std::string_view json_text, const std::filesystem::path& base_dir);
ScenarioConfig load_scenario(const std::filesystem::path& path);

/// Loads the case of a scenario (tiling applied) and checks DER placement.
GridCase load_scenario_case(const ScenarioConfig& config);
void validate_against(const ScenarioConfig& config, const GridCase& grid);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes);

}  // namespace gridfuse
