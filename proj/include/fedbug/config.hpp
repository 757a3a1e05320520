#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedbug/engine.hpp"
#include "fedbug/model.hpp"
#include "fedbug/partition.hpp"

namespace fedbug {

struct DatasetConfig {
    std::string kind = "blobs";  // blobs | csv
    // blobs
    std::size_t n_per_class = 400;
    int num_classes = 10;
    std::size_t dim = 32;
    double spread = 0.5;
    std::uint64_t seed = 0;
    // csv (relative paths resolve against the config file's directory)
    std::string train_path;
    std::string test_path;
};

struct ExperimentConfig {
    DatasetConfig dataset;
    PartitionSpec partition;  // seed always follows fl.seed
    std::vector<ModuleDesc> modules;
    FLConfig fl;
};

/// Strict parse: unknown keys are rejected with suggestions, type and range
/// errors name the field path (e.g. "fl.schedule.P"). Missing fields take
/// their defaults.
ExperimentConfig parse_config(const nlohmann::json& doc, const std::string& base_dir = ".");
ExperimentConfig parse_config_file(const std::string& path);

/// Every field with its effective value; parse_config(resolved_json(c)) == c.
nlohmann::json resolved_json(const ExperimentConfig& cfg);

TrainTest load_data(const ExperimentConfig& cfg);

/// Dimension checks between the model and the loaded data.
void check_model_fits(const ExperimentConfig& cfg, const LabeledDataset& train);

}  // namespace fedbug
