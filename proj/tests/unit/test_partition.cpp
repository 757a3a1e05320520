#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "fedbug/error.hpp"
#include "fedbug/partition.hpp"

using namespace fedbug;

namespace {

LabeledDataset balanced(std::size_t n, int classes) {
    LabeledDataset d;
    d.features = Tensor({n, 1}, 0.0);
    d.num_classes = classes;
    for (std::size_t i = 0; i < n; ++i) {
        d.features[i] = static_cast<double>(i);
        d.labels.push_back(static_cast<int>(i % static_cast<std::size_t>(classes)));
    }
    return d;
}

void expect_permutation_partition(const std::vector<ClientShard>& shards, std::size_t n) {
    std::vector<std::size_t> all;
    for (const auto& s : shards) {
        EXPECT_FALSE(s.indices.empty());
        EXPECT_TRUE(std::is_sorted(s.indices.begin(), s.indices.end()));
        all.insert(all.end(), s.indices.begin(), s.indices.end());
    }
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> expected(n);
    std::iota(expected.begin(), expected.end(), 0);
    EXPECT_EQ(all, expected);
}

std::string write_temp(const std::string& name, const std::string& content) {
    const auto path = std::filesystem::temp_directory_path() / name;
    std::ofstream(path) << content;
    return path.string();
}

}  // namespace

TEST(Partition, SingleClientGetsEverything) {
    const auto data = balanced(37, 3);
    for (auto mode : {PartitionMode::kIID, PartitionMode::kDirichlet}) {
        const auto shards = partition(data, {mode, 0.3, 1, 4});
        ASSERT_EQ(shards.size(), 1u);
        EXPECT_EQ(shards[0].indices.size(), 37u);
    }
}

TEST(Partition, IidExactDivision) {
    const auto shards = partition(balanced(100, 10), {PartitionMode::kIID, 0.3, 4, 1});
    for (const auto& s : shards) EXPECT_EQ(s.indices.size(), 25u);
    expect_permutation_partition(shards, 100);
}

TEST(Partition, TooFewSamples) {
    EXPECT_THROW(partition(balanced(3, 2), {PartitionMode::kIID, 0.3, 4, 1}), DataError);
    EXPECT_THROW(partition(balanced(3, 2), {PartitionMode::kDirichlet, 0.3, 4, 1}), DataError);
    EXPECT_THROW(partition(balanced(30, 2), {PartitionMode::kDirichlet, 0.0, 4, 1}), ConfigError);
}

TEST(Partition, DirichletIsPermutationPartitionEvenWhenSkewed) {
    const auto data = balanced(200, 10);
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const auto shards = partition(data, {PartitionMode::kDirichlet, 0.05, 40, seed});
        ASSERT_EQ(shards.size(), 40u);
        expect_permutation_partition(shards, 200);
    }
}

TEST(Partition, Deterministic) {
    const auto data = balanced(500, 5);
    const PartitionSpec spec{PartitionMode::kDirichlet, 0.3, 7, 99};
    const auto a = partition(data, spec), b = partition(data, spec);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].indices, b[i].indices);
}

TEST(Partition, LargeAlphaApproachesIid) {
    const auto data = balanced(10000, 10);
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto shards = partition(data, {PartitionMode::kDirichlet, 1e6, 10, seed});
        const auto counts = class_counts(data, shards);
        for (std::size_t c = 0; c < 10; ++c) {
            double total = 0;
            for (const auto& row : counts) total += static_cast<double>(row[c]);
            for (const auto& row : counts) worst = std::max(worst, std::abs(row[c] / total - 0.1));
        }
    }
    EXPECT_LT(worst, 0.01);
}

TEST(Partition, SmallerAlphaIsMoreSkewed) {
    const auto data = balanced(1000, 10);
    auto mean_max_share = [&](double alpha) {
        double acc = 0;
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
            const auto shards = partition(data, {PartitionMode::kDirichlet, alpha, 10, seed});
            const auto counts = class_counts(data, shards);
            double m = 0;
            for (std::size_t i = 0; i < counts.size(); ++i) {
                const double n = static_cast<double>(shards[i].indices.size());
                for (auto c : counts[i]) m = std::max(m, static_cast<double>(c) / n);
            }
            acc += m;
        }
        return acc / 50;
    };
    EXPECT_GT(mean_max_share(0.1), mean_max_share(10.0));
}

TEST(Blobs, DeterministicAndBalanced) {
    const auto a = make_blobs(20, 3, 4, 0.5, 7);
    const auto b = make_blobs(20, 3, 4, 0.5, 7);
    EXPECT_TRUE(a.train.features.bit_equal(b.train.features));
    EXPECT_TRUE(a.test.features.bit_equal(b.test.features));
    EXPECT_EQ(a.train.size(), 48u);
    EXPECT_EQ(a.test.size(), 12u);
    for (int c = 0; c < 3; ++c) {
        const auto total = std::count(a.train.labels.begin(), a.train.labels.end(), c) +
                           std::count(a.test.labels.begin(), a.test.labels.end(), c);
        EXPECT_EQ(total, 20);
    }
}

TEST(Csv, ParsesTwoRows) {
    const auto d = load_csv(write_temp("fedbug_two.csv", "0,1.0,2.0\n1,3.0,4.0\n"));
    EXPECT_EQ(d.size(), 2u);
    EXPECT_EQ(d.dim(), 2u);
    EXPECT_EQ(d.num_classes, 2);
    EXPECT_EQ(d.features.at(1, 0), 3.0);
}

TEST(Csv, Errors) {
    EXPECT_THROW(load_csv("/nonexistent/fedbug.csv"), DataError);
    EXPECT_THROW(load_csv(write_temp("fedbug_empty.csv", "")), DataError);
    try {
        load_csv(write_temp("fedbug_ragged.csv", "0,1,2\n1,3\n"));
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
    }
    EXPECT_THROW(load_csv(write_temp("fedbug_nan.csv", "0,1,x\n")), DataError);
    EXPECT_THROW(load_csv(write_temp("fedbug_label.csv", "0,1\n5,2\n"), 3), DataError);
}
