#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedbug/tensor.hpp"

namespace fedbug {

struct LabeledDataset {
    Tensor features;          // (n, d)
    std::vector<int> labels;  // n entries in [0, num_classes)
    int num_classes = 0;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t dim() const { return features.dim(1); }

    /// Throws DataError unless shapes agree, n >= 1 and every label is valid.
    void validate() const;

    /// Rows `indices` gathered into a (k, d) tensor plus their labels.
    std::pair<Tensor, std::vector<int>> gather(std::span<const std::size_t> indices) const;
};

enum class PartitionMode { kIID, kDirichlet };

struct PartitionSpec {
    PartitionMode mode = PartitionMode::kIID;
    double alpha = 0.3;
    std::size_t n_clients = 1;
    std::uint64_t seed = 0;
};

struct ClientShard {
    std::size_t client_id = 0;
    std::vector<std::size_t> indices;  // sorted ascending
};

/// Splits the dataset into `n_clients` disjoint, covering, non-empty shards.
///
/// IID: seeded shuffle cut into near-equal contiguous pieces. Dirichlet: for each
/// class, client proportions are drawn from Dir(alpha * 1_N) and the shuffled
/// class samples are dealt out with largest-remainder rounding. Draws that
/// leave a client empty are retried a bounded number of times; after that,
/// single samples are moved from the largest shard to each empty one.
std::vector<ClientShard> partition(const LabeledDataset& data, const PartitionSpec& spec);

/// (n_clients, num_classes) matrix of per-client label counts.
std::vector<std::vector<std::size_t>> class_counts(const LabeledDataset& data,
                                                   std::span<const ClientShard> shards);

struct TrainTest {
    LabeledDataset train;
    LabeledDataset test;
};

/// C Gaussian clusters in d dimensions with unit-variance noise around random
/// unit-norm centres scaled by 1/spread. Each class keeps 80% of its
/// `n_per_class` samples for training and 20% for testing.
TrainTest make_blobs(std::size_t n_per_class, int num_classes, std::size_t dim, double spread,
                     std::uint64_t seed);

/// Parses rows of `label,f1,...,fd`. d comes from the first row; when
/// `num_classes` is 0 it is inferred as max(label) + 1.
LabeledDataset load_csv(const std::string& path, int num_classes = 0);

}  // namespace fedbug
