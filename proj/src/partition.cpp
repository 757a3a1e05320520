#include "fedbug/partition.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "fedbug/error.hpp"
#include "fedbug/rng.hpp"

namespace fedbug {

void LabeledDataset::validate() const {
    if (labels.empty()) throw DataError("dataset is empty");
    if (features.rank() != 2 || features.dim(0) != labels.size()) {
        throw DataError("dataset features shape " + features.shape_string() + " does not match " +
                        std::to_string(labels.size()) + " labels");
    }
    if (num_classes < 1) throw DataError("dataset must have at least one class");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes) {
            throw DataError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                            " outside [0, " + std::to_string(num_classes) + ")");
        }
    }
}

std::pair<Tensor, std::vector<int>> LabeledDataset::gather(std::span<const std::size_t> indices) const {
    const std::size_t d = dim();
    Tensor x({indices.size(), d});
    std::vector<int> y(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const double* src = features.data() + indices[r] * d;
        std::copy(src, src + d, x.data() + r * d);
        y[r] = labels[indices[r]];
    }
    return {std::move(x), std::move(y)};
}

namespace {

constexpr int kMaxDirichletAttempts = 10;

// Splits `total` items according to `proportions` (summing to 1), rounding by
// largest remainder with ties going to the lower index.
std::vector<std::size_t> largest_remainder(std::span<const double> proportions, std::size_t total) {
    const std::size_t n = proportions.size();
    std::vector<std::size_t> counts(n);
    std::vector<double> remainder(n);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double exact = proportions[i] * static_cast<double>(total);
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        remainder[i] = exact - std::floor(exact);
        assigned += counts[i];
    }
    // Guard against floating-point overshoot.
    while (assigned > total) {
        auto it = std::max_element(counts.begin(), counts.end());
        --*it;
        --assigned;
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t i = 0; assigned < total; i = (i + 1) % n) {
        ++counts[order[i]];
        ++assigned;
    }
    return counts;
}

std::vector<double> draw_dirichlet(double alpha, std::size_t n, std::mt19937_64& rng) {
    std::gamma_distribution<double> gamma(alpha, 1.0);
    std::vector<double> p(n);
    double sum = 0.0;
    for (auto& v : p) {
        v = gamma(rng);
        sum += v;
    }
    if (!(sum > 0.0) || !std::isfinite(sum)) {
        // Every variate underflowed: the limit of a tiny alpha is a one-hot draw.
        std::fill(p.begin(), p.end(), 0.0);
        p[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)] = 1.0;
        return p;
    }
    for (auto& v : p) v /= sum;
    return p;
}

std::vector<std::vector<std::size_t>> dirichlet_attempt(
    const std::vector<std::vector<std::size_t>>& by_class, const PartitionSpec& spec, int attempt) {
    auto rng = make_stream(spec.seed, Stream::kPartition, 1, static_cast<std::uint64_t>(attempt));
    std::vector<std::vector<std::size_t>> shards(spec.n_clients);
    for (const auto& members : by_class) {
        if (members.empty()) continue;
        std::vector<std::size_t> shuffled = members;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        const auto p = draw_dirichlet(spec.alpha, spec.n_clients, rng);
        const auto counts = largest_remainder(p, shuffled.size());
        std::size_t offset = 0;
        for (std::size_t c = 0; c < spec.n_clients; ++c) {
            shards[c].insert(shards[c].end(), shuffled.begin() + static_cast<std::ptrdiff_t>(offset),
                             shuffled.begin() + static_cast<std::ptrdiff_t>(offset + counts[c]));
            offset += counts[c];
        }
    }
    return shards;
}

bool any_empty(const std::vector<std::vector<std::size_t>>& shards) {
    return std::any_of(shards.begin(), shards.end(), [](const auto& s) { return s.empty(); });
}

}  // namespace

std::vector<ClientShard> partition(const LabeledDataset& data, const PartitionSpec& spec) {
    data.validate();
    const std::size_t n = data.size();
    if (spec.n_clients < 1) throw ConfigError("partition.n_clients must be >= 1");
    if (n < spec.n_clients) {
        throw DataError("cannot split " + std::to_string(n) + " samples across " +
                        std::to_string(spec.n_clients) + " clients");
    }
    if (spec.mode == PartitionMode::kDirichlet && !(spec.alpha > 0.0)) {
        throw ConfigError("partition.alpha must be > 0");
    }

    std::vector<std::vector<std::size_t>> shards;
    if (spec.mode == PartitionMode::kIID || spec.n_clients == 1) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        auto rng = make_stream(spec.seed, Stream::kPartition, 0);
        std::shuffle(order.begin(), order.end(), rng);
        shards.resize(spec.n_clients);
        const std::size_t base = n / spec.n_clients;
        const std::size_t extra = n % spec.n_clients;
        std::size_t offset = 0;
        for (std::size_t c = 0; c < spec.n_clients; ++c) {
            const std::size_t len = base + (c < extra ? 1 : 0);
            shards[c].assign(order.begin() + static_cast<std::ptrdiff_t>(offset),
                             order.begin() + static_cast<std::ptrdiff_t>(offset + len));
            offset += len;
        }
    } else {
        std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(data.num_classes));
        for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);
        for (int attempt = 0; attempt < kMaxDirichletAttempts; ++attempt) {
            shards = dirichlet_attempt(by_class, spec, attempt);
            if (!any_empty(shards)) break;
        }
        for (auto& s : shards) std::sort(s.begin(), s.end());
        for (std::size_t c = 0; c < shards.size(); ++c) {
            if (!shards[c].empty()) continue;
            auto donor = std::max_element(shards.begin(), shards.end(),
                                          [](const auto& a, const auto& b) { return a.size() < b.size(); });
            shards[c].push_back(donor->back());
            donor->pop_back();
        }
    }

    std::vector<ClientShard> out(spec.n_clients);
    for (std::size_t c = 0; c < spec.n_clients; ++c) {
        out[c].client_id = c;
        out[c].indices = std::move(shards[c]);
        std::sort(out[c].indices.begin(), out[c].indices.end());
    }
    return out;
}

std::vector<std::vector<std::size_t>> class_counts(const LabeledDataset& data,
                                                   std::span<const ClientShard> shards) {
    std::vector<std::vector<std::size_t>> counts(
        shards.size(), std::vector<std::size_t>(static_cast<std::size_t>(data.num_classes), 0));
    for (std::size_t c = 0; c < shards.size(); ++c)
        for (auto i : shards[c].indices) ++counts[c][static_cast<std::size_t>(data.labels.at(i))];
    return counts;
}

TrainTest make_blobs(std::size_t n_per_class, int num_classes, std::size_t dim, double spread,
                     std::uint64_t seed) {
    if (n_per_class < 2 || num_classes < 1 || dim < 1 || !(spread > 0.0)) {
        throw ConfigError("make_blobs: need n_per_class >= 2, classes >= 1, dim >= 1, spread > 0");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    std::vector<std::vector<double>> centres(static_cast<std::size_t>(num_classes), std::vector<double>(dim));
    for (auto& c : centres) {
        double norm = 0.0;
        do {
            norm = 0.0;
            for (auto& v : c) {
                v = normal(rng);
                norm += v * v;
            }
        } while (norm == 0.0);
        norm = std::sqrt(norm);
        for (auto& v : c) v = v / norm / spread;
    }

    const std::size_t n_test = std::max<std::size_t>(1, n_per_class / 5);
    const std::size_t n_train = n_per_class - n_test;
    const auto classes = static_cast<std::size_t>(num_classes);

    TrainTest out;
    out.train.features = Tensor({n_train * classes, dim});
    out.test.features = Tensor({n_test * classes, dim});
    out.train.num_classes = out.test.num_classes = num_classes;
    std::size_t tr = 0, te = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t s = 0; s < n_per_class; ++s) {
            const bool to_train = s < n_train;
            LabeledDataset& dst = to_train ? out.train : out.test;
            std::size_t& row = to_train ? tr : te;
            for (std::size_t j = 0; j < dim; ++j) dst.features.at(row, j) = centres[c][j] + normal(rng);
            dst.labels.push_back(static_cast<int>(c));
            ++row;
        }
    }
    return out;
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_cell(const std::string& cell, std::size_t line, std::size_t col) {
    const std::string t = trim(cell);
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (t.empty() || end != t.c_str() + t.size() || errno == ERANGE || !std::isfinite(v)) {
        throw DataError("line " + std::to_string(line) + ", column " + std::to_string(col) +
                        ": non-numeric cell '" + t + "'");
    }
    return v;
}

}  // namespace

LabeledDataset load_csv(const std::string& path, int num_classes) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset file '" + path + "'");

    std::vector<double> values;
    std::vector<int> labels;
    std::size_t d = 0;
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = trim(raw);
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (line.back() == ',') cells.emplace_back();
        if (cells.size() < 2) {
            throw DataError("line " + std::to_string(line_no) + ": expected label and at least one feature");
        }
        if (d == 0) {
            d = cells.size() - 1;
        } else if (cells.size() - 1 != d) {
            throw DataError("line " + std::to_string(line_no) + ": ragged row with " +
                            std::to_string(cells.size() - 1) + " features, expected " + std::to_string(d));
        }
        const double label = parse_cell(cells[0], line_no, 1);
        if (label < 0 || label != std::floor(label) || label > 1e9) {
            throw DataError("line " + std::to_string(line_no) + ": label must be a non-negative integer");
        }
        if (num_classes > 0 && label >= num_classes) {
            throw DataError("line " + std::to_string(line_no) + ": label " + std::to_string(static_cast<long>(label)) +
                            " >= class count " + std::to_string(num_classes));
        }
        labels.push_back(static_cast<int>(label));
        for (std::size_t j = 1; j < cells.size(); ++j) values.push_back(parse_cell(cells[j], line_no, j + 1));
    }
    if (labels.empty()) throw DataError("dataset file '" + path + "' is empty");

    LabeledDataset data;
    data.features = Tensor({labels.size(), d}, std::move(values));
    data.num_classes = num_classes > 0 ? num_classes : *std::max_element(labels.begin(), labels.end()) + 1;
    data.labels = std::move(labels);
    return data;
}

}  // namespace fedbug
