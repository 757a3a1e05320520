#include "fedbug/theory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <random>

#include <nlohmann/json.hpp>

#include "fedbug/error.hpp"
#include "fedbug/parallel.hpp"
#include "fedbug/rng.hpp"

namespace fedbug::theory {

namespace {

constexpr double kDivergence = 1e8;

TheoryState checked(TheoryState s) {
    if (!(std::abs(s.a) <= kDivergence && std::abs(s.b) <= kDivergence && std::abs(s.v) <= kDivergence)) {
        throw NumericError("theory simulation diverged (a=" + std::to_string(s.a) +
                           ", b=" + std::to_string(s.b) + ", v=" + std::to_string(s.v) + ")");
    }
    return s;
}

double cos2_of_update(double w, double v, double eta) {
    const double e = w * v - 1.0;
    const double dw = -eta * 2.0 * v * e;
    const double dv = -eta * 2.0 * w * e;
    const double norm2 = dw * dw + dv * dv;
    return norm2 > 0.0 ? dv * dv / norm2 : 0.0;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    if (n < 2) return 0.0;
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxx > 0.0 && syy > 0.0 ? sxy / std::sqrt(sxx * syy) : 0.0;
}

}  // namespace

void TheoryConfig::validate() const {
    if (!(eta_local > 0.0)) throw ConfigError("theory: eta_local must be > 0");
    if (rounds < 1) throw ConfigError("theory: rounds must be >= 1");
    if (!(init_low < init_high)) throw ConfigError("theory: init_low must be < init_high");
    if (n_seeds < 1) throw ConfigError("theory: n_seeds must be >= 1");
    if (!(ratio_threshold >= 0.0)) throw ConfigError("theory: ratio_threshold must be >= 0");
}

TheoryState local_grad_step_c1(TheoryState s, double eta) {
    const double e = s.a * s.v - 1.0;
    const double a = s.a - eta * 2.0 * s.v * e;
    const double v = s.v - eta * 2.0 * s.a * e;
    return checked({a, s.b, v});
}

TheoryState local_grad_step_c2(TheoryState s, double eta) {
    const double e = s.b * s.v - 1.0;
    const double b = s.b - eta * 2.0 * s.v * e;
    const double v = s.v - eta * 2.0 * s.b * e;
    return checked({s.a, b, v});
}

TheoryState frozen_step_c1(TheoryState s, double eta) {
    s.a -= eta * 2.0 * s.v * (s.a * s.v - 1.0);
    return checked(s);
}

TheoryState frozen_step_c2(TheoryState s, double eta) {
    s.b -= eta * 2.0 * s.v * (s.b * s.v - 1.0);
    return checked(s);
}

std::pair<double, double> analytic_minimizer(double a0, double v0) {
    if (!(a0 > 0.0 && v0 > 0.0) || !std::isfinite(a0) || !std::isfinite(v0)) {
        throw DomainError("analytic_minimizer requires a0 > 0 and v0 > 0");
    }
    const double c = a0 * a0 - v0 * v0;
    const double root = std::sqrt(c * c + 4.0);
    // c + root loses precision for large negative c; use 4 / (root - c) there.
    const double sum = c >= 0.0 ? c + root : 4.0 / (root - c);
    const double a_inf = std::sqrt(sum / 2.0);
    return {a_inf, 1.0 / a_inf};
}

double discrepancy(const TheoryState& s) { return std::abs(s.a - s.b); }

std::optional<double> contraction_ratio(double d_prev, double d_next, double threshold) {
    if (!(d_prev > threshold)) return std::nullopt;
    return d_next / d_prev;
}

double estimate_cos2_theta(const TheoryState& s, double eta) {
    return 0.5 * (cos2_of_update(s.a, s.v, eta) + cos2_of_update(s.b, s.v, eta));
}

double theorem1_bound(double cos2_theta, double alpha_approx) {
    if (!(cos2_theta >= 0.0 && cos2_theta <= 1.0)) throw DomainError("cos2_theta must lie in [0, 1]");
    if (!(alpha_approx >= 0.0)) throw DomainError("alpha_approx must be >= 0");
    return (1.0 + cos2_theta * (1.0 + alpha_approx)) / 2.0;
}

double theorem2_bound(double cos2_theta, double alpha_approx, double eta, double v,
                      std::size_t frozen_steps) {
    if (!(cos2_theta >= 0.0 && cos2_theta <= 1.0)) throw DomainError("cos2_theta must lie in [0, 1]");
    if (!(alpha_approx >= 0.0)) throw DomainError("alpha_approx must be >= 0");
    if (!(eta > 0.0)) throw DomainError("eta must be > 0");
    const double factor = std::pow(std::abs(1.0 - 2.0 * eta * v * v), static_cast<double>(frozen_steps));
    return (1.0 + factor * cos2_theta * (1.0 + alpha_approx)) / 2.0;
}

std::pair<double, double> step_size_window(double beta1, double beta2, double m_contract) {
    if (!(beta1 > 0.0)) throw DomainError("beta1 must be > 0");
    if (!(beta2 > 0.0 && beta2 < 1.0)) throw DomainError("beta2 must lie in (0, 1)");
    if (!(m_contract > 1.0 - beta2 && m_contract < 1.0)) {
        throw DomainError("m must lie in (1 - beta2, 1)");
    }
    return {(1.0 - m_contract) / (beta1 * beta2), 1.0 / beta1};
}

std::pair<TheoryState, TheoryRoundLog> simulate_round(const TheoryState& s, const TheoryConfig& cfg,
                                                      std::size_t frozen_steps, std::size_t round) {
    const double eta = cfg.eta_local;
    const double d_prev = discrepancy(s);

    TheoryRoundLog log;
    log.round = round;
    log.cos2_theta = estimate_cos2_theta(s, eta);

    TheoryState c1 = s;
    TheoryState c2 = s;
    for (std::size_t k = 0; k < cfg.local_iters; ++k) {
        if (k < frozen_steps) {
            c1 = frozen_step_c1(c1, eta);
            c2 = frozen_step_c2(c2, eta);
        } else {
            c1 = local_grad_step_c1(c1, eta);
            c2 = local_grad_step_c2(c2, eta);
        }
    }

    // Client 1 never touches b and client 2 never touches a.
    const TheoryState next{(c1.a + s.a) / 2.0, (s.b + c2.b) / 2.0, (c1.v + c2.v) / 2.0};
    log.state = next;
    log.d = discrepancy(next);
    log.r = contraction_ratio(d_prev, log.d, cfg.ratio_threshold);
    log.bound_fedavg = theorem1_bound(log.cos2_theta, 0.0);
    const std::size_t effective = std::min(frozen_steps, cfg.local_iters);
    log.bound_fedbug = effective == 0 ? log.bound_fedavg
                                      : theorem2_bound(log.cos2_theta, 0.0, eta, s.v, effective);
    log.loss_c1 = std::pow(next.a * next.v - 1.0, 2);
    log.loss_c2 = std::pow(next.b * next.v - 1.0, 2);

    const double dist1 = c1.v != 0.0 ? std::abs(c1.a * c1.v - 1.0) / std::abs(c1.v) : INFINITY;
    const double dist2 = c2.v != 0.0 ? std::abs(c2.b * c2.v - 1.0) / std::abs(c2.v) : INFINITY;
    log.local_converged = std::max(dist1, dist2) <= cfg.convergence_tol * d_prev;
    return {next, log};
}

std::pair<TheoryState, TheoryRoundLog> fedavg_round(const TheoryState& s, const TheoryConfig& cfg,
                                                    std::size_t round) {
    return simulate_round(s, cfg, 0, round);
}

std::pair<TheoryState, TheoryRoundLog> fedbug_round(const TheoryState& s, const TheoryConfig& cfg,
                                                    std::size_t frozen_steps, std::size_t round) {
    return simulate_round(s, cfg, frozen_steps, round);
}

std::pair<TheoryState, TheoryRoundLog> fedbabu_round(const TheoryState& s, const TheoryConfig& cfg,
                                                     std::size_t round) {
    if (s.v == 0.0) throw ConfigError("fedbabu: v == 0 is degenerate, the first layer can never fit");
    return simulate_round(s, cfg, kAlwaysFrozen, round);
}

TheoryState initial_state(const TheoryConfig& cfg, std::size_t seed) {
    auto rng = make_stream(cfg.base_seed, Stream::kTheoryInit, seed);
    std::uniform_real_distribution<double> u(cfg.init_low, cfg.init_high);
    TheoryState s;
    s.a = u(rng);
    s.b = u(rng);
    s.v = u(rng);
    return s;
}

std::vector<TheoryRow> run_figure2(const TheoryConfig& cfg, std::size_t threads) {
    cfg.validate();
    std::vector<std::vector<TheoryRow>> per_seed(cfg.n_seeds);
    parallel_for(cfg.n_seeds, threads, [&](std::size_t seed) {
        const TheoryState init = initial_state(cfg, seed);
        auto& rows = per_seed[seed];
        auto trajectory = [&](const std::string& algo, std::size_t frozen) {
            TheoryState s = init;
            for (std::size_t r = 1; r <= cfg.rounds; ++r) {
                auto [next, log] = algo == "fedbabu" ? fedbabu_round(s, cfg, r)
                                                     : simulate_round(s, cfg, frozen, r);
                rows.push_back({seed, algo, frozen, log});
                s = next;
            }
        };
        trajectory("fedavg", 0);
        for (auto fs : cfg.frozen_steps) {
            if (fs > 0) trajectory("fedbug", fs);
        }
        if (cfg.include_fedbabu) trajectory("fedbabu", kAlwaysFrozen);
    });
    std::vector<TheoryRow> rows;
    for (auto& v : per_seed) rows.insert(rows.end(), v.begin(), v.end());
    return rows;
}

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void write_theory_csv(std::ostream& out, const std::vector<TheoryRow>& rows) {
    out << "seed,algo,frozen_steps,round,a,b,v,d,r,cos2_theta,bound_fedavg,bound_fedbug,loss_c1,loss_c2\n";
    for (const auto& row : rows) {
        const auto& l = row.log;
        out << row.seed << ',' << row.algo << ','
            << (row.frozen_steps == kAlwaysFrozen ? std::string("always") : std::to_string(row.frozen_steps))
            << ',' << l.round << ',' << num(l.state.a) << ',' << num(l.state.b) << ',' << num(l.state.v)
            << ',' << num(l.d) << ',' << (l.r ? num(*l.r) : std::string("nan")) << ','
            << num(l.cos2_theta) << ',' << num(l.bound_fedavg) << ',' << num(l.bound_fedbug) << ','
            << num(l.loss_c1) << ',' << num(l.loss_c2) << '\n';
    }
}

TheorySummary summarize(const std::vector<TheoryRow>& rows, std::size_t loss_from_round) {
    TheorySummary s;

    // (seed, round) -> FedAvg row
    std::map<std::pair<std::size_t, std::size_t>, const TheoryRoundLog*> fedavg;
    std::vector<double> bounds, ratios;
    std::size_t covered = 0;
    for (const auto& row : rows) {
        if (row.algo != "fedavg") continue;
        fedavg[{row.seed, row.log.round}] = &row.log;
        if (row.log.r) {
            bounds.push_back(row.log.bound_fedavg);
            ratios.push_back(*row.log.r);
            if (*row.log.r <= theorem1_bound(row.log.cos2_theta, 0.2)) ++covered;
        }
    }
    s.n_pairs = ratios.size();
    s.pearson_bound_vs_r = pearson(bounds, ratios);
    s.bound_coverage = s.n_pairs ? static_cast<double>(covered) / static_cast<double>(s.n_pairs) : 0.0;

    std::size_t better = 0;
    // (frozen_steps, round) -> (sum of mean losses, count); frozen 0 is FedAvg.
    std::map<std::pair<std::size_t, std::size_t>, std::pair<double, std::size_t>> losses;
    for (const auto& row : rows) {
        const double loss = 0.5 * (row.log.loss_c1 + row.log.loss_c2);
        if (row.algo == "fedavg" || row.algo == "fedbug") {
            auto& acc = losses[{row.frozen_steps, row.log.round}];
            acc.first += loss;
            ++acc.second;
        }
        if (row.algo == "fedbug" && row.log.r) {
            auto it = fedavg.find({row.seed, row.log.round});
            if (it != fedavg.end() && it->second->r) {
                ++s.n_compared;
                if (*row.log.r < *it->second->r) ++better;
            }
        }
        if (row.algo == "fedbabu" && row.log.r && row.log.local_converged) {
            ++s.fedbabu_converged_rounds;
            s.fedbabu_max_deviation = std::max(s.fedbabu_max_deviation, std::abs(*row.log.r - 0.5));
        }
    }
    s.fedbug_lt_fedavg_fraction =
        s.n_compared ? static_cast<double>(better) / static_cast<double>(s.n_compared) : 0.0;

    s.loss_ordering_ok = true;
    for (const auto& [key, acc] : losses) {
        const auto [frozen, round] = key;
        if (frozen == 0 || round < loss_from_round) continue;
        const auto base = losses.find({0, round});
        if (base == losses.end()) continue;
        const double mean_bug = acc.first / static_cast<double>(acc.second);
        const double mean_avg = base->second.first / static_cast<double>(base->second.second);
        if (mean_bug > mean_avg) {
            s.loss_ordering_ok = false;
            s.loss_violation_rounds.push_back(round);
        }
    }

    // FedAvg discrepancy monotonicity per seed.
    std::map<std::size_t, bool> monotone;
    std::map<std::size_t, double> last_d;
    for (const auto& row : rows) {
        if (row.algo != "fedavg") continue;
        auto [it, inserted] = monotone.try_emplace(row.seed, true);
        if (!inserted && row.log.d > last_d[row.seed]) it->second = false;
        last_d[row.seed] = row.log.d;
    }
    std::size_t mono = 0;
    for (const auto& [seed, ok] : monotone) mono += ok ? 1 : 0;
    s.fedavg_monotone_fraction = monotone.empty() ? 0.0 : static_cast<double>(mono) / static_cast<double>(monotone.size());

    s.pass_correlation = s.pearson_bound_vs_r >= 0.9;
    s.pass_ratio_ordering = s.fedbug_lt_fedavg_fraction >= 0.9;
    s.pass_bound_coverage = s.bound_coverage >= 0.95;
    s.pass_fedbabu = s.fedbabu_converged_rounds > 0 && s.fedbabu_max_deviation <= 1e-6;
    return s;
}

std::string summary_json(const TheorySummary& s, const TheoryConfig& cfg) {
    nlohmann::json j;
    j["config"] = {{"eta_local", cfg.eta_local},   {"local_iters", cfg.local_iters},
                   {"rounds", cfg.rounds},         {"init_low", cfg.init_low},
                   {"init_high", cfg.init_high},   {"n_seeds", cfg.n_seeds},
                   {"frozen_steps", cfg.frozen_steps}, {"include_fedbabu", cfg.include_fedbabu}};
    j["correlation"] = {{"pearson_bound_vs_r", s.pearson_bound_vs_r}, {"n_pairs", s.n_pairs},
                        {"pass", s.pass_correlation}};
    j["ratio_ordering"] = {{"fedbug_lt_fedavg_fraction", s.fedbug_lt_fedavg_fraction},
                           {"n_compared", s.n_compared},
                           {"pass", s.pass_ratio_ordering}};
    j["loss_ordering"] = {{"from_round", 5},
                          {"violation_rounds", s.loss_violation_rounds},
                          {"pass", s.loss_ordering_ok}};
    j["bound_coverage"] = {{"alpha_approx", 0.2}, {"fraction", s.bound_coverage},
                           {"pass", s.pass_bound_coverage}};
    j["fedbabu"] = {{"converged_rounds", s.fedbabu_converged_rounds},
                    {"max_abs_deviation_from_half", s.fedbabu_max_deviation},
                    {"pass", s.pass_fedbabu}};
    j["fedavg_monotone_fraction"] = s.fedavg_monotone_fraction;
    return j.dump(2);
}

}  // namespace fedbug::theory
