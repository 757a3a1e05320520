// Acceptance gate: one PASS/FAIL line per criterion.
//
//   acceptance [--only N]... [--allow-fail N]...
//
// Exit status is non-zero when a criterion fails that was not listed with
// --allow-fail. Allowed failures still print FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fedbug/config.hpp"
#include "fedbug/engine.hpp"
#include "fedbug/experiment.hpp"
#include "fedbug/nn.hpp"
#include "fedbug/schedule.hpp"
#include "fedbug/theory.hpp"
#include "oracles.hpp"

using namespace fedbug;
namespace th = fedbug::theory;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- theory

const std::vector<th::TheoryRow>& figure2_rows() {
    static const std::vector<th::TheoryRow> rows = [] {
        th::TheoryConfig cfg;  // U[0,2]^3, lr 0.1, 50 local iterations, 80 rounds, 50 seeds
        return th::run_figure2(cfg, 1);
    }();
    return rows;
}

// Contraction ratios recomputed from the logged discrepancies.
std::map<std::tuple<std::string, std::size_t, std::size_t, std::size_t>, double> recomputed_ratios() {
    const th::TheoryConfig cfg;
    std::map<std::tuple<std::string, std::size_t, std::size_t, std::size_t>, double> out;
    std::map<std::tuple<std::string, std::size_t, std::size_t>, double> prev;
    for (const auto& row : figure2_rows()) {
        const auto key = std::tuple{row.algo, row.frozen_steps, row.seed};
        double d_prev;
        if (row.log.round == 1) {
            const auto s = th::initial_state(cfg, row.seed);
            d_prev = std::abs(s.a - s.b);
        } else {
            d_prev = prev[key];
        }
        const double d = std::abs(row.log.state.a - row.log.state.b);
        if (d_prev > 1e-9) out[{row.algo, row.frozen_steps, row.seed, row.log.round}] = d / d_prev;
        prev[key] = d;
    }
    return out;
}

Outcome criterion1() {
    const auto t0 = std::chrono::steady_clock::now();
    figure2_rows();
    const double elapsed = seconds_since(t0);
    const auto ratios = recomputed_ratios();
    std::vector<double> bound, r;
    double worst_log_mismatch = 0.0;
    for (const auto& row : figure2_rows()) {
        if (row.algo != "fedavg") continue;
        auto it = ratios.find({row.algo, row.frozen_steps, row.seed, row.log.round});
        if (it == ratios.end()) continue;
        bound.push_back((1.0 + row.log.cos2_theta) / 2.0);
        r.push_back(it->second);
        if (row.log.r) worst_log_mismatch = std::max(worst_log_mismatch, std::abs(*row.log.r - it->second));
    }
    const double rho = oracle::pearson(bound, r);
    const bool ok = rho >= 0.9 && elapsed < 60.0 && worst_log_mismatch < 1e-12;
    return {ok, fmt("pearson=%.4f over %zu pairs (>= 0.9), simulation %.2fs (< 60s)", rho, r.size(), elapsed)};
}

Outcome criterion2() {
    // (frozen_steps, round) -> sum of per-seed mean client losses
    std::map<std::pair<std::size_t, std::size_t>, std::pair<double, int>> acc;
    for (const auto& row : figure2_rows()) {
        if (row.algo == "fedbabu") continue;
        const double loss = 0.5 * (std::pow(row.log.state.a * row.log.state.v - 1.0, 2) +
                                   std::pow(row.log.state.b * row.log.state.v - 1.0, 2));
        auto& a = acc[{row.frozen_steps, row.log.round}];
        a.first += loss;
        a.second += 1;
    }
    std::size_t checked = 0, violations = 0;
    double worst = -INFINITY;
    for (std::size_t f : {1, 5, 10}) {
        for (std::size_t round = 5; round <= 80; ++round) {
            const auto& bug = acc.at({f, round});
            const auto& avg = acc.at({0, round});
            if (bug.second != 50 || avg.second != 50) return {false, "missing seeds"};
            const double diff = bug.first / bug.second - avg.first / avg.second;
            worst = std::max(worst, diff);
            ++checked;
            if (diff > 0.0) ++violations;
        }
    }
    return {violations == 0,
            fmt("%zu (frozen_steps, round) comparisons, %zu violations, max(FedBug - FedAvg) = %.3g", checked,
                violations, worst)};
}

Outcome criterion3() {
    const auto ratios = recomputed_ratios();
    std::size_t both = 0, better = 0;
    for (const auto& [key, r] : ratios) {
        const auto& [algo, f, seed, round] = key;
        if (algo != "fedbug") continue;
        auto avg = ratios.find({"fedavg", 0, seed, round});
        if (avg == ratios.end()) continue;
        ++both;
        if (r < avg->second) ++better;
    }
    const double frac = both ? static_cast<double>(better) / both : 0.0;
    return {frac >= 0.9, fmt("FedBug r < FedAvg r in %.4f of %zu pairs (>= 0.9)", frac, both)};
}

Outcome criterion4() {
    const auto ratios = recomputed_ratios();
    std::size_t converged = 0;
    double worst = 0.0;
    for (const auto& row : figure2_rows()) {
        if (row.algo != "fedbabu" || !row.log.local_converged) continue;
        auto it = ratios.find({row.algo, row.frozen_steps, row.seed, row.log.round});
        if (it == ratios.end()) continue;
        ++converged;
        worst = std::max(worst, std::abs(it->second - 0.5));
    }
    // Independent check: frozen-v local training run to convergence by hand.
    std::mt19937_64 rng(404);
    std::uniform_real_distribution<double> u(0.1, 2.0);
    std::size_t own = 0;
    double own_worst = 0.0;
    th::TheoryConfig cfg;
    cfg.local_iters = 5000;
    for (int i = 0; i < 1000; ++i) {
        const double a0 = u(rng), b0 = u(rng), v = u(rng), eta = 0.1;
        if (std::abs(1.0 - 2.0 * eta * v * v) >= 1.0) continue;
        const double d0 = std::abs(a0 - b0);
        if (d0 <= 1e-9) continue;
        double a = a0, b = b0;
        for (int k = 0; k < 5000; ++k) {
            a -= eta * 2.0 * v * (a * v - 1.0);
            b -= eta * 2.0 * v * (b * v - 1.0);
        }
        if (std::abs(a * v - 1.0) >= 1e-10 || std::abs(b * v - 1.0) >= 1e-10) continue;
        ++own;
        const double r = std::abs((a + a0) / 2.0 - (b0 + b) / 2.0) / d0;
        own_worst = std::max(own_worst, std::abs(r - 0.5));
        const auto [next, log] = th::fedbabu_round({a0, b0, v}, cfg);
        own_worst = std::max(own_worst, std::abs(*log.r - 0.5));
    }
    const bool ok = converged > 0 && own > 0 && worst <= 1e-6 && own_worst <= 1e-6;
    return {ok, fmt("protocol: %zu converged rounds, max |r-0.5| = %.2e; direct: %zu states, max |r-0.5| = %.2e "
                    "(<= 1e-6)",
                    converged, worst, own, own_worst)};
}

Outcome criterion5() {
    std::mt19937_64 rng(55);
    std::uniform_real_distribution<double> u(0.0, 2.0), lr(0.001, 0.5);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const th::TheoryState s{u(rng), u(rng), u(rng)};
        const double eta = lr(rng);
        const auto c1 = th::frozen_step_c1(s, eta);
        const auto c2 = th::frozen_step_c2(s, eta);
        const double lhs = std::abs(c1.a - c2.b);
        const double rhs = std::abs(s.a - s.b) * std::abs(1.0 - 2.0 * eta * s.v * s.v);
        worst = std::max(worst, std::abs(lhs - rhs));
    }
    return {worst <= 1e-12, fmt("1000 random states, max |lhs - rhs| = %.2e (<= 1e-12)", worst)};
}

Outcome criterion6() {
    std::mt19937_64 rng(66);
    std::uniform_real_distribution<double> u(0.05, 2.0);
    double worst_fit = 0.0, worst_cons = 0.0, worst_ode = 0.0;
    for (int i = 0; i < 100; ++i) {
        const double a0 = u(rng), v0 = u(rng);
        const auto [a, v] = th::analytic_minimizer(a0, v0);
        worst_fit = std::max(worst_fit, std::abs(a * v - 1.0));
        worst_cons = std::max(worst_cons, std::abs((a * a - v * v) - (a0 * a0 - v0 * v0)));
        const auto [oa, ov] = oracle::gradient_flow_limit(a0, v0, 1e-5, 1e-10);
        worst_ode = std::max({worst_ode, std::abs(a - oa), std::abs(v - ov)});
    }
    const bool ok = worst_fit <= 1e-12 && worst_cons <= 1e-12 && worst_ode <= 1e-6;
    return {ok, fmt("|av-1| <= %.1e, conservation <= %.1e (<= 1e-12); ODE oracle gap %.2e (<= 1e-6)", worst_fit,
                    worst_cons, worst_ode)};
}

// ---------------------------------------------------------------- gradients

Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng) {
    Tensor t(std::move(shape), 0.0);
    std::normal_distribution<double> n(0.0, 1.0);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = n(rng);
    return t;
}

double fd_max_error(Tensor& x, const Tensor& analytic, const std::function<double()>& f) {
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + h;
        const double up = f();
        x[i] = saved - h;
        const double down = f();
        x[i] = saved;
        worst = std::max(worst, oracle::relative_error(analytic[i], (up - down) / (2.0 * h)));
    }
    return worst;
}

bool near_kink(const Tensor& t) {
    for (double v : t.values()) {
        if (std::abs(v) < 1e-3) return true;
    }
    return false;
}

Outcome criterion7() {
    std::mt19937_64 rng(77);
    std::uniform_int_distribution<std::size_t> dim(1, 6);
    double worst = 0.0;
    std::map<std::string, int> kinds;
    for (int c = 0; c < 100; ++c) {
        const int kind = c % 5;
        if (kind == 0) {
            const std::size_t in = dim(rng), out = dim(rng), rows = dim(rng);
            Layer l = Layer::dense(in, out, rng() % 2 == 0);
            for (auto& p : l.params) p = random_tensor(p.shape(), rng);
            Tensor x = random_tensor({rows, in}, rng);
            const Tensor w = random_tensor({rows, out}, rng);
            auto f = [&] {
                const Tensor y = forward(l, x);
                double s = 0;
                for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
                return s;
            };
            const LayerGrads g = backward(l, x, w);
            worst = std::max(worst, fd_max_error(x, g.input, f));
            for (std::size_t p = 0; p < l.params.size(); ++p) worst = std::max(worst, fd_max_error(l.params[p], g.params[p], f));
            ++kinds["dense"];
        } else if (kind == 1) {
            Tensor x({1}, 0.0);
            do x = random_tensor({dim(rng), dim(rng)}, rng);
            while (near_kink(x));
            const Tensor w = random_tensor(x.shape(), rng);
            auto f = [&] {
                const Tensor y = forward(Layer::relu(), x);
                double s = 0;
                for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
                return s;
            };
            worst = std::max(worst, fd_max_error(x, backward(Layer::relu(), x, w).input, f));
            ++kinds["relu"];
        } else if (kind == 2) {
            const std::size_t rows = dim(rng), classes = dim(rng) + 1;
            Tensor z = random_tensor({rows, classes}, rng);
            std::vector<int> y(rows);
            for (auto& v : y) v = static_cast<int>(rng() % classes);
            auto f = [&] {
                // Oracle loss, independent of the library's implementation.
                double s = 0;
                for (std::size_t r = 0; r < rows; ++r) {
                    std::vector<double> row(z.data() + r * classes, z.data() + (r + 1) * classes);
                    s -= oracle::log_softmax_at(row, static_cast<std::size_t>(y[r]));
                }
                return s / static_cast<double>(rows);
            };
            worst = std::max(worst, fd_max_error(z, softmax_cross_entropy(z, y).grad, f));
            ++kinds["cross_entropy"];
        } else if (kind == 3) {
            const std::vector<std::size_t> shape{dim(rng), dim(rng)};
            Tensor p = random_tensor(shape, rng);
            const Tensor t = random_tensor(shape, rng);
            auto f = [&] {
                double s = 0;
                for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - t[i]) * (p[i] - t[i]);
                return s / static_cast<double>(shape[0]);
            };
            worst = std::max(worst, fd_max_error(p, squared_error(p, t).grad, f));
            ++kinds["squared_error"];
        } else {
            const std::size_t d0 = dim(rng) + 1, d1 = dim(rng) + 1, classes = dim(rng) + 1, rows = dim(rng);
            const std::vector<ModuleDesc> arch{{"a", {LayerDesc::dense(d0, d1), LayerDesc::relu()}},
                                               {"b", {LayerDesc::dense(d1, classes)}}};
            ModularModel m = init_model(arch, rng());
            Tensor x({1}, 0.0);
            do {
                for (std::size_t i = 0; i < m.num_modules(); ++i) {
                    for (auto& l : m.module(i).layers) {
                        for (auto& p : l.params) p = random_tensor(p.shape(), rng);
                    }
                }
                x = random_tensor({rows, d0}, rng);
            } while (near_kink(m.forward_trace(x).inputs[0][1]));
            std::vector<int> y(rows);
            for (auto& v : y) v = static_cast<int>(rng() % classes);
            auto f = [&] { return softmax_cross_entropy(m.forward(x), y).loss; };
            const ForwardTrace tr = m.forward_trace(x);
            const ParamTree g = m.backward(tr, softmax_cross_entropy(tr.output, y).grad, true);
            for (std::size_t i = 0; i < m.num_modules(); ++i) {
                for (std::size_t l = 0; l < m.module(i).layers.size(); ++l) {
                    auto& ps = m.module(i).layers[l].params;
                    for (std::size_t p = 0; p < ps.size(); ++p) worst = std::max(worst, fd_max_error(ps[p], g.modules[i][l][p], f));
                }
            }
            ++kinds["model"];
        }
    }
    std::string k;
    for (const auto& [name, n] : kinds) k += name + "=" + std::to_string(n) + " ";
    return {worst <= 1e-5, fmt("100 cases (%s), max relative error %.2e (<= 1e-5)", k.c_str(), worst)};
}

// ---------------------------------------------------------------- schedule

Outcome criterion8() {
    for (std::size_t k = 1; k <= 100; ++k) {
        const std::size_t expected = k < 11 ? 1 : k < 21 ? 2 : k < 31 ? 3 : 4;
        if (unfreeze_count(k, 100, 4, 0.4) != expected) return {false, fmt("cadence broken at k=%zu", k)};
    }
    std::size_t checks = 0;
    for (std::size_t M = 1; M <= 8; ++M) {
        for (std::size_t K = 1; K <= 200; ++K) {
            for (std::size_t t = 0; t <= 10; ++t) {
                const double P = static_cast<double>(t) / 10.0;
                const std::size_t full_from = (t * K + 9) / 10;  // ceil(P K)
                std::size_t prev = 0;
                for (std::size_t k = 1; k <= K; ++k) {
                    const std::size_t m = unfreeze_count(k, K, M, P);
                    ++checks;
                    if (m != oracle::unfreeze_count_tenths(k, K, M, t)) {
                        return {false, fmt("oracle mismatch M=%zu K=%zu P=%.1f k=%zu", M, K, P, k)};
                    }
                    if (t == 0 && m != M) return {false, "P=0 is not vanilla"};
                    if (k >= full_from && m != M) return {false, fmt("not full at k=%zu >= ceil(PK)", k)};
                    if (m < prev) return {false, "not monotone"};
                    prev = m;
                }
            }
        }
    }
    return {true, fmt("cadence k=11,21,31 exact; %zu grid points match the integer oracle", checks)};
}

// ---------------------------------------------------------------- engine

const ExperimentConfig& desk() {
    static const ExperimentConfig cfg = parse_config_file(FEDBUG_SOURCE_DIR "/configs/desk.json");
    return cfg;
}

const TrainTest& desk_data() {
    static const TrainTest data = load_data(desk());
    return data;
}

bool all_zero_bits(const ParamTree& t, std::size_t module) {
    for (const auto& layer : t.modules[module]) {
        for (const auto& p : layer) {
            for (double v : p.values()) {
                if (v != 0.0 || std::signbit(v)) return false;
            }
        }
    }
    return true;
}

Outcome criterion9() {
    const auto& data = desk_data().train;
    const auto shards = partition(data, desk().partition);
    ModularModel global = init_model(desk().modules, 12);
    std::size_t checked = 0;

    FLConfig fix = desk().fl;
    fix.schedule = FixLastK{1};
    FLConfig gu = desk().fl;
    gu.schedule = BottomUpGU{1.0};
    for (std::size_t c = 0; c < shards.size(); ++c) {
        std::mt19937_64 rng(c);
        const LocalResult r = local_train(global, data, shards[c], fix, rng);
        if (!all_zero_bits(r.delta, 3)) return {false, fmt("FixLastK(1): client %zu moved the classifier", c)};
        if (all_zero_bits(r.delta, 0)) return {false, "FixLastK(1): first module never moved"};
        ++checked;

        // Stop halfway through a full-GU phase: modules 3 and 4 never thawed.
        const std::size_t K = gu.local_epochs * ((shards[c].indices.size() + gu.batch_size - 1) / gu.batch_size);
        std::mt19937_64 rng2(c);
        const LocalResult h = local_train(global, data, shards[c], gu, rng2, 0, K / 2);
        if (!all_zero_bits(h.delta, 2) || !all_zero_bits(h.delta, 3)) {
            return {false, fmt("BottomUpGU mid-stage: client %zu moved a frozen module", c)};
        }
        if (all_zero_bits(h.delta, 0)) return {false, "BottomUpGU mid-stage: module 1 never moved"};
        ++checked;
    }
    return {true, fmt("%zu local phases: every never-trainable module has an all-zero-bit delta", checked)};
}

std::string csv_of(const FLConfig& cfg, std::size_t threads) {
    RunOptions opts;
    opts.threads = threads;
    opts.record_timing = false;
    const auto& d = desk_data();
    const auto result = run(cfg, desk().modules, d.train, d.test, desk().partition, opts);
    std::ostringstream out;
    write_metrics_csv(out, cfg, result.rounds);
    return out.str();
}

// CSV body without the algo/schedule/P label columns.
std::string results_only(const std::string& csv) {
    std::istringstream in(csv);
    std::string line, out;
    std::getline(in, line);
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cells.push_back(c);
        cells.erase(cells.begin() + 1, cells.begin() + 4);
        for (const auto& x : cells) out += x + ",";
        out += "\n";
    }
    return out;
}

Outcome criterion10() {
    const FLConfig base = desk().fl;
    FLConfig gu0 = base;
    gu0.schedule = BottomUpGU{0.0};
    FLConfig prox0 = base;
    prox0.algo = Algo::kFedProx;
    prox0.mu = 0.0;
    const std::string a = results_only(csv_of(base, 1));
    const bool gu_ok = a == results_only(csv_of(gu0, 1));
    const bool prox_ok = a == results_only(csv_of(prox0, 1));
    return {gu_ok && prox_ok, fmt("FedBug(P=0) == FedAvg: %s; FedProx(mu=0) == FedAvg: %s (%zu rounds, bitwise)",
                                  gu_ok ? "yes" : "no", prox_ok ? "yes" : "no", base.rounds)};
}

struct DeskStats {
    double final_accuracy = 0.0;
    double drift = 0.0;
};

DeskStats desk_run(const UnfreezeSchedule& schedule, std::uint64_t seed) {
    ExperimentConfig cfg = desk();
    cfg.fl.schedule = schedule;
    cfg.fl.seed = seed;
    cfg.partition.seed = seed;
    RunOptions opts;
    opts.record_timing = false;
    const auto& d = desk_data();
    const auto result = run(cfg.fl, cfg.modules, d.train, d.test, cfg.partition, opts);
    DeskStats s;
    s.final_accuracy = result.rounds.back().test_accuracy;
    std::size_t n = 0;
    for (const auto& m : result.rounds) {
        if (m.round >= 10 && m.round <= 100) {
            s.drift += m.client_drift;
            ++n;
        }
    }
    s.drift /= static_cast<double>(n);
    return s;
}

Outcome criterion11() {
    const auto t0 = std::chrono::steady_clock::now();
    double acc_avg = 0, acc_bug = 0, drift_avg = 0, drift_bug = 0;
    for (std::uint64_t seed : {1, 2, 3, 4}) {
        const DeskStats a = desk_run(Vanilla{}, seed);
        const DeskStats b = desk_run(BottomUpGU{0.2}, seed);
        acc_avg += a.final_accuracy / 4;
        acc_bug += b.final_accuracy / 4;
        drift_avg += a.drift / 4;
        drift_bug += b.drift / 4;
    }
    const bool ok = acc_bug >= acc_avg && drift_bug <= drift_avg;
    return {ok, fmt("accuracy FedBug(0.2) %.4f vs FedAvg %.4f; drift (rounds 10-100) %.4f vs %.4f; %.1fs", acc_bug,
                    acc_avg, drift_bug, drift_avg, seconds_since(t0))};
}

Outcome criterion12() {
    const FLConfig cfg = desk().fl;
    const std::string one = csv_of(cfg, 1);
    const std::string again = csv_of(cfg, 1);
    const std::string four = csv_of(cfg, 4);
    const bool ok = one == again && one == four;
    return {ok, fmt("metrics CSV (%zu bytes) identical across two runs and 1 vs 4 threads: %s", one.size(),
                    ok ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only, allowed;
    for (int i = 1; i < argc; ++i) {
        if (!std::strcmp(argv[i], "--only") && i + 1 < argc) {
            only.insert(std::atoi(argv[++i]));
        } else if (!std::strcmp(argv[i], "--allow-fail") && i + 1 < argc) {
            allowed.insert(std::atoi(argv[++i]));
        } else {
            std::fprintf(stderr, "usage: %s [--only N]... [--allow-fail N]...\n", argv[0]);
            return 2;
        }
    }

    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"theory: bound vs contraction ratio correlation", criterion1},
        {"theory: FedBug training loss below FedAvg", criterion2},
        {"theory: FedBug contracts faster than FedAvg", criterion3},
        {"theory: FedBABU ratio is one half", criterion4},
        {"theory: one-frozen-step identity", criterion5},
        {"theory: analytic minimizer", criterion6},
        {"gradients match finite differences", criterion7},
        {"unfreeze schedule table", criterion8},
        {"freeze contract", criterion9},
        {"engine equivalences", criterion10},
        {"desk-scale direction check", criterion11},
        {"determinism", criterion12},
    };

    int unexpected = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i + 1);
        if (!only.empty() && !only.count(id)) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const bool tolerated = !o.pass && allowed.count(id);
        std::printf("%s %2d  %-48s %s%s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str(),
                    tolerated ? "  [allowed]" : "");
        std::fflush(stdout);
        if (!o.pass && !tolerated) ++unexpected;
    }
    return unexpected == 0 ? 0 : 1;
}
