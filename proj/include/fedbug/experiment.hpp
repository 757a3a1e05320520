#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fedbug/config.hpp"
#include "fedbug/engine.hpp"

namespace fedbug {

/// Loads the data, checks the model against it and runs the federated loop.
RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& options = {});

/// Git blob id of `content`: SHA-1 over "blob <size>\0" followed by the bytes.
std::string git_blob_sha1(const std::string& content);

/// Writes resolved_config.json, metrics.csv and inputs.sha1 (git blob ids of
/// the resolved config and any dataset files) into `dir`, creating it.
/// Returns the blob id of the resolved config.
std::string write_run_directory(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                                const std::vector<RoundMetrics>& rounds);

}  // namespace fedbug
