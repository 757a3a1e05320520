#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fedbug/model.hpp"
#include "fedbug/partition.hpp"
#include "fedbug/schedule.hpp"

namespace fedbug {

enum class Algo { kFedAvg, kFedProx };

std::string to_string(Algo algo);

struct FLConfig {
    std::size_t rounds = 100;
    std::size_t local_epochs = 1;
    std::size_t batch_size = 50;
    double eta_g = 1.0;
    double eta_l = 0.1;
    double weight_decay = 0.001;
    double participation_rate = 0.1;
    Algo algo = Algo::kFedAvg;
    double mu = 0.0001;  // proximal weight, used only by FedProx
    UnfreezeSchedule schedule = Vanilla{};
    std::uint64_t seed = 0;

    /// Throws ConfigError naming the offending field.
    void validate() const;
};

struct RoundMetrics {
    std::size_t round = 0;
    std::vector<std::size_t> sampled_clients;
    double test_accuracy = 0.0;
    double test_loss = 0.0;
    double mean_train_loss = 0.0;
    double client_drift = 0.0;
    std::int64_t wall_time_ms = 0;

    /// Equality of every field except wall time.
    bool same_results(const RoundMetrics& other) const;
};

/// max(1, round(rate * N)) distinct clients drawn uniformly, sorted ascending.
std::vector<std::size_t> sample_clients(std::size_t n_clients, double rate, std::mt19937_64& rng);

struct LocalResult {
    ParamDelta delta;
    double mean_train_loss = 0.0;
    std::size_t iterations = 0;
    std::vector<bool> ever_trainable;  // modules updated at least once
};

/// One client's local phase: clone the global model, run
/// K = epochs * ceil(|shard| / batch) SGD iterations (reshuffling each epoch)
/// with the schedule deciding which modules move at each iteration, and
/// return the difference to the global model.
///
/// `stop_after` truncates the phase after that many iterations while keeping
/// the schedule computed for the full K (used to inspect mid-GU states).
LocalResult local_train(const ModularModel& global, const LabeledDataset& data,
                        const ClientShard& shard, const FLConfig& cfg, std::mt19937_64& rng,
                        std::size_t round = 0, std::optional<std::size_t> stop_after = std::nullopt);

/// `model += eta_g / |deltas| * sum(deltas)`; deltas are expected in ascending
/// client-id order.
void aggregate(ModularModel& model, std::span<const ParamDelta> deltas, double eta_g);

struct Evaluation {
    double accuracy = 0.0;
    double loss = 0.0;
};

/// Argmax accuracy (ties go to the lowest class index) and mean cross entropy.
Evaluation evaluate(const ModularModel& model, const LabeledDataset& test);

/// Mean pairwise L2 distance between client deltas; 0 for fewer than two.
double client_drift(std::span<const ParamDelta> deltas);

struct RunOptions {
    std::size_t threads = 1;
    bool record_timing = true;
    std::function<void(const RoundMetrics&)> on_round;
};

struct RunResult {
    std::vector<RoundMetrics> rounds;
    ModularModel final_model;
};

/// Full federated loop. The initial model is drawn from the model-init stream
/// of `cfg.seed`; clients train on per-(round, client) RNG streams so results
/// do not depend on the thread count.
RunResult run(const FLConfig& cfg, std::span<const ModuleDesc> arch, const LabeledDataset& train,
              const LabeledDataset& test, const PartitionSpec& partition_spec,
              const RunOptions& options = {});

/// Columns: round, algo, schedule, P, seed, test_accuracy, test_loss,
/// mean_train_loss, client_drift, wall_time_ms.
void write_metrics_csv(std::ostream& out, const FLConfig& cfg, std::span<const RoundMetrics> rounds);

}  // namespace fedbug
