#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace fedbug {

/// One swept axis over a base config. Axis names: gu_percentage, schedule,
/// alpha, participation_rate, seed. Every axis value runs once per entry of
/// `seeds` (or once with the base seed when `seeds` is empty).
struct SweepSpec {
    nlohmann::json base;
    std::string base_dir = ".";
    std::string axis;
    std::vector<nlohmann::json> values;
    std::vector<std::uint64_t> seeds;

    void validate() const;
};

/// Reads {"base": path-or-object, "axis": {name: [values]}, "seeds": [...]}.
SweepSpec parse_sweep_file(const std::string& path);

struct SweepCell {
    std::string axis_value;  // compact JSON of the axis value
    std::uint64_t seed = 0;
    std::string dir;         // relative to the sweep output directory
    bool ok = false;
    std::string error;
    double final_accuracy = 0.0;
};

struct SweepSummaryRow {
    std::string axis_value;
    std::size_t n_runs = 0;
    std::size_t n_ok = 0;
    double mean_final_accuracy = 0.0;
    double std_final_accuracy = 0.0;  // sample standard deviation, 0 for one run
    std::string status;
};

struct SweepResult {
    std::vector<SweepCell> cells;
    std::vector<SweepSummaryRow> summary;
};

/// Base config with the axis value and seed applied.
nlohmann::json cell_config(const SweepSpec& spec, const nlohmann::json& value, std::uint64_t seed);

/// Runs every (value, seed) cell on a pool of `threads` workers. Each cell
/// writes its own run directory; failures are recorded and the sweep goes on.
/// sweep_runs.csv and sweep_summary.csv are written once all cells finish.
SweepResult run_sweep(const SweepSpec& spec, const std::filesystem::path& out_dir, std::size_t threads = 1);

}  // namespace fedbug
