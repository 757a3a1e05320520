#include "fedbug/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "fedbug/error.hpp"
#include "fedbug/parallel.hpp"
#include "fedbug/rng.hpp"

namespace fedbug {

std::string to_string(Algo algo) { return algo == Algo::kFedProx ? "fedprox" : "fedavg"; }

void FLConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& rule) {
        throw ConfigError("fl." + field + " " + rule);
    };
    if (rounds < 1) fail("rounds", "must be >= 1");
    if (local_epochs < 1) fail("local_epochs", "must be >= 1");
    if (batch_size < 1) fail("batch_size", "must be >= 1");
    if (!(eta_g > 0.0) || !std::isfinite(eta_g)) fail("eta_g", "must be > 0");
    if (!(eta_l > 0.0) || !std::isfinite(eta_l)) fail("eta_l", "must be > 0");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) fail("weight_decay", "must be >= 0");
    if (!(participation_rate > 0.0 && participation_rate <= 1.0)) {
        fail("participation_rate", "must lie in (0, 1]");
    }
    if (!(mu >= 0.0) || !std::isfinite(mu)) fail("mu", "must be >= 0");
    if (const auto* s = std::get_if<BottomUpGU>(&schedule); s && !(s->P >= 0.0 && s->P <= 1.0)) {
        fail("schedule.P", "must lie in [0, 1]");
    }
    if (const auto* s = std::get_if<TopDownGU>(&schedule); s && !(s->P >= 0.0 && s->P <= 1.0)) {
        fail("schedule.P", "must lie in [0, 1]");
    }
    if (const auto* s = std::get_if<FixLastK>(&schedule); s && s->k_fix < 1) {
        fail("schedule.k_fix", "must be >= 1");
    }
}

bool RoundMetrics::same_results(const RoundMetrics& o) const {
    return round == o.round && sampled_clients == o.sampled_clients &&
           test_accuracy == o.test_accuracy && test_loss == o.test_loss &&
           mean_train_loss == o.mean_train_loss && client_drift == o.client_drift;
}

std::vector<std::size_t> sample_clients(std::size_t n_clients, double rate, std::mt19937_64& rng) {
    if (n_clients < 1) throw ConfigError("sample_clients: need at least one client");
    if (!(rate > 0.0 && rate <= 1.0)) throw ConfigError("participation_rate must lie in (0, 1]");
    const auto want = static_cast<std::size_t>(std::llround(rate * static_cast<double>(n_clients)));
    const std::size_t count = std::clamp<std::size_t>(want, 1, n_clients);
    std::vector<std::size_t> ids(n_clients);
    std::iota(ids.begin(), ids.end(), 0);
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n_clients - 1);
        std::swap(ids[i], ids[pick(rng)]);
    }
    ids.resize(count);
    std::sort(ids.begin(), ids.end());
    return ids;
}

LocalResult local_train(const ModularModel& global, const LabeledDataset& data,
                        const ClientShard& shard, const FLConfig& cfg, std::mt19937_64& rng,
                        std::size_t round, std::optional<std::size_t> stop_after) {
    if (shard.indices.empty()) {
        throw DataError("round " + std::to_string(round) + ", client " +
                        std::to_string(shard.client_id) + ": empty shard");
    }
    const std::size_t M = global.num_modules();
    const std::size_t per_epoch = (shard.indices.size() + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t K = cfg.local_epochs * per_epoch;
    const bool prox = cfg.algo == Algo::kFedProx && cfg.mu > 0.0;

    ModularModel local = global;
    LocalResult result;
    result.ever_trainable.assign(M, false);
    std::vector<std::size_t> order = shard.indices;
    double loss_sum = 0.0;
    std::size_t k = 0;

    const std::size_t limit = stop_after ? std::min(*stop_after, K) : K;
    for (std::size_t epoch = 0; epoch < cfg.local_epochs && k < limit; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t b = 0; b < per_epoch && k < limit; ++b) {
            ++k;
            const TrainableMask mask = trainable_set(cfg.schedule, k, K, M);
            local.set_trainable_mask(mask);

            const std::size_t begin = b * cfg.batch_size;
            const std::size_t end = std::min(begin + cfg.batch_size, order.size());
            const auto [x, y] = data.gather(std::span(order).subspan(begin, end - begin));
            const ForwardTrace trace = local.forward_trace(x);
            const LossResult loss = softmax_cross_entropy(trace.output, y);
            if (!std::isfinite(loss.loss)) {
                throw NumericError("non-finite training loss at round " + std::to_string(round) +
                                   ", client " + std::to_string(shard.client_id) + ", iteration " +
                                   std::to_string(k));
            }
            loss_sum += loss.loss;
            ParamTree grads = local.backward(trace, loss.grad);

            for (std::size_t m = 0; m < M; ++m) {
                if (!mask[m]) continue;
                result.ever_trainable[m] = true;
                auto& layers = local.module(m).layers;
                for (std::size_t l = 0; l < layers.size(); ++l) {
                    auto& g = grads.modules[m][l];
                    if (prox) {
                        const auto& anchor = global.module(m).layers[l].params;
                        for (std::size_t p = 0; p < g.size(); ++p) {
                            auto gv = g[p].values();
                            auto cur = layers[l].params[p].values();
                            auto ref = anchor[p].values();
                            for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += cfg.mu * (cur[i] - ref[i]);
                        }
                    }
                    try {
                        sgd_step(layers[l].params, g, cfg.eta_l, cfg.weight_decay, false);
                    } catch (const NumericError& e) {
                        throw NumericError(std::string(e.what()) + " (round " + std::to_string(round) +
                                           ", client " + std::to_string(shard.client_id) +
                                           ", iteration " + std::to_string(k) + ")");
                    }
                }
            }
        }
    }
    result.iterations = k;
    result.mean_train_loss = k > 0 ? loss_sum / static_cast<double>(k) : 0.0;
    result.delta = delta(local, global);
    return result;
}

void aggregate(ModularModel& model, std::span<const ParamDelta> deltas, double eta_g) {
    if (deltas.empty()) throw ConfigError("aggregate: need at least one delta");
    apply_scaled_deltas(model, deltas, eta_g / static_cast<double>(deltas.size()));
}

Evaluation evaluate(const ModularModel& model, const LabeledDataset& test) {
    test.validate();
    constexpr std::size_t kChunk = 1024;
    const std::size_t n = test.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::size_t correct = 0;
    double loss = 0.0;
    for (std::size_t begin = 0; begin < n; begin += kChunk) {
        const std::size_t len = std::min(kChunk, n - begin);
        const auto [x, y] = test.gather(std::span(idx).subspan(begin, len));
        const Tensor logits = model.forward(x);
        const std::size_t classes = logits.dim(1);
        for (std::size_t r = 0; r < len; ++r) {
            const double* z = logits.data() + r * classes;
            const auto best = static_cast<std::size_t>(std::max_element(z, z + classes) - z);
            if (best == static_cast<std::size_t>(y[r])) ++correct;
        }
        loss += softmax_cross_entropy(logits, y).loss * static_cast<double>(len);
    }
    return {static_cast<double>(correct) / static_cast<double>(n), loss / static_cast<double>(n)};
}

double client_drift(std::span<const ParamDelta> deltas) {
    if (deltas.size() < 2) return 0.0;
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < deltas.size(); ++i) {
        for (std::size_t j = i + 1; j < deltas.size(); ++j) {
            sum += l2_distance(deltas[i], deltas[j]);
            ++pairs;
        }
    }
    return sum / static_cast<double>(pairs);
}

RunResult run(const FLConfig& cfg, std::span<const ModuleDesc> arch, const LabeledDataset& train,
              const LabeledDataset& test, const PartitionSpec& partition_spec,
              const RunOptions& options) {
    cfg.validate();
    train.validate();
    test.validate();

    RunResult result;
    result.final_model = init_model(arch, derive_seed(cfg.seed, {static_cast<std::uint64_t>(Stream::kModelInit)}));
    ModularModel& model = result.final_model;
    if (model.input_dim() != train.dim() || test.dim() != train.dim()) {
        throw ConfigError("model input width " + std::to_string(model.input_dim()) +
                          " does not match dataset dimension " + std::to_string(train.dim()));
    }
    if (model.output_dim() != static_cast<std::size_t>(train.num_classes)) {
        throw ConfigError("model output width " + std::to_string(model.output_dim()) +
                          " does not match class count " + std::to_string(train.num_classes));
    }
    if (const auto* s = std::get_if<FixLastK>(&cfg.schedule); s && s->k_fix >= model.num_modules()) {
        throw ConfigError("fl.schedule.k_fix must be < number of modules (" +
                          std::to_string(model.num_modules()) + ")");
    }

    const auto shards = partition(train, partition_spec);
    const std::size_t threads = std::max<std::size_t>(1, options.threads);

    for (std::size_t r = 1; r <= cfg.rounds; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        auto sampling = make_stream(cfg.seed, Stream::kSampling, r);
        RoundMetrics metrics;
        metrics.round = r;
        metrics.sampled_clients = sample_clients(shards.size(), cfg.participation_rate, sampling);

        const auto& sampled = metrics.sampled_clients;
        std::vector<LocalResult> local(sampled.size());
        parallel_for(sampled.size(), threads, [&](std::size_t i) {
            const std::size_t cid = sampled[i];
            auto rng = make_stream(cfg.seed, Stream::kClient, r, cid);
            local[i] = local_train(model, train, shards[cid], cfg, rng, r);
        });

        std::vector<ParamDelta> deltas;
        deltas.reserve(local.size());
        double train_loss = 0.0;
        for (auto& lr : local) {
#ifndef NDEBUG
            for (std::size_t m = 0; m < lr.ever_trainable.size(); ++m) {
                if (!lr.ever_trainable[m] && !lr.delta.module_is_zero(m)) {
                    throw NumericError("frozen module " + std::to_string(m) + " moved in round " +
                                       std::to_string(r));
                }
            }
#endif
            train_loss += lr.mean_train_loss;
            deltas.push_back(std::move(lr.delta));
        }
        metrics.mean_train_loss = train_loss / static_cast<double>(local.size());
        metrics.client_drift = client_drift(deltas);
        aggregate(model, deltas, cfg.eta_g);
        if (!model.parameters().all_finite()) {
            throw NumericError("non-finite global model after round " + std::to_string(r));
        }

        const Evaluation eval = evaluate(model, test);
        metrics.test_accuracy = eval.accuracy;
        metrics.test_loss = eval.loss;
        if (options.record_timing) {
            metrics.wall_time_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                       std::chrono::steady_clock::now() - t0)
                                       .count();
        }
        if (options.on_round) options.on_round(metrics);
        result.rounds.push_back(std::move(metrics));
    }
    return result;
}

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void write_metrics_csv(std::ostream& out, const FLConfig& cfg, std::span<const RoundMetrics> rounds) {
    out << "round,algo,schedule,P,seed,test_accuracy,test_loss,mean_train_loss,client_drift,wall_time_ms\n";
    const std::string algo = to_string(cfg.algo);
    const std::string kind = schedule_kind(cfg.schedule);
    const std::string param = fmt_double(schedule_parameter(cfg.schedule));
    for (const auto& m : rounds) {
        out << m.round << ',' << algo << ',' << kind << ',' << param << ',' << cfg.seed << ','
            << fmt_double(m.test_accuracy) << ',' << fmt_double(m.test_loss) << ','
            << fmt_double(m.mean_train_loss) << ',' << fmt_double(m.client_drift) << ','
            << m.wall_time_ms << '\n';
    }
}

}  // namespace fedbug
