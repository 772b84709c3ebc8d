#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "gridfuse/network.hpp"

namespace gridfuse {

/// Parses the MATPOWER subset: baseMVA, bus, branch and gen matrices.
/// Loads and shunts are converted to per-unit, out-of-service branches and
/// generators are skipped, and branches with off-nominal taps or phase shifts
/// are rejected. RTUs go on every bus with generation or load, the remaining
/// buses are zero-injection. Errors carry the offending line number.
GridCase parse_matpower(std::string_view text);

/// Native JSON case format ("schema": 1).
std::string serialize_case_json(const GridCase& grid);
GridCase parse_case_json(std::string_view text);

/// Loads a case by extension: ".m" for MATPOWER, ".json" for the native format.
GridCase load_case(const std::filesystem::path& path);

struct TileSpec {
    int copies = 1;
    std::vector<BusId> tie_buses;  ///< bus ids of the base case joined between consecutive copies
    double tie_r = 0.001;
    double tie_x = 0.01;
};

/// Copies the case `copies` times with bus ids offset per copy and joins copy
/// k to copy k + 1 through a line at each tie bus. Only the first copy keeps
/// the reference bus; the others regulate it as a voltage-controlled bus.
GridCase tile_case(const GridCase& base, const TileSpec& spec);

/// Bus id of `id` in copy `copy` of a tiled case.
BusId tiled_bus_id(const GridCase& base, BusId id, int copy);

}  // namespace gridfuse
