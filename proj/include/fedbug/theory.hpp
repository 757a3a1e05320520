#pragma once

// Two-client orthogonal regression with a two-layer scalar linear network.
//
// Client 1 holds x = [1, 0], y = 1 and client 2 holds x = [0, 1], y = 1, so with
// f(x) = x [a, b]^T v the local losses are (a v - 1)^2 and (b v - 1)^2. Client 1
// never moves b and client 2 never moves a. Gradients keep the factor 2 of the
// squared loss: da = -eta * 2 v (a v - 1), dv = -eta * 2 a (a v - 1).

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace fedbug::theory {

struct TheoryState {
    double a = 0.0;
    double b = 0.0;
    double v = 0.0;
};

/// frozen_steps value meaning "v frozen for the whole local phase".
inline constexpr std::size_t kAlwaysFrozen = std::numeric_limits<std::size_t>::max();

struct TheoryConfig {
    double eta_local = 0.1;
    std::size_t local_iters = 50;
    std::size_t rounds = 80;
    double init_low = 0.0;
    double init_high = 2.0;
    std::size_t n_seeds = 50;
    std::uint64_t base_seed = 0;
    /// FedBug variants run next to FedAvg by run_figure2.
    std::vector<std::size_t> frozen_steps{1, 5, 10};
    bool include_fedbabu = true;
    /// Ratios are undefined when the previous discrepancy is at or below this.
    double ratio_threshold = 1e-9;
    /// A round counts as locally converged when each client ends within
    /// tol * d_prev of its local solution set (measured along its first-layer axis).
    double convergence_tol = 1e-10;

    void validate() const;
};

/// Quantities for one server round i -> i+1. `state`, `d` and the losses
/// describe the server model after aggregation; `r`, `cos2_theta` and the
/// bounds describe the transition itself.
struct TheoryRoundLog {
    std::size_t round = 0;
    TheoryState state;
    double d = 0.0;
    std::optional<double> r;
    double cos2_theta = 0.0;
    double bound_fedavg = 0.0;
    double bound_fedbug = 0.0;
    double loss_c1 = 0.0;
    double loss_c2 = 0.0;
    bool local_converged = false;
};

struct BoundParams {
    double alpha_approx = 0.0;
    double beta1 = 1.0;
    double beta2 = 0.5;
    double m_contract = 0.75;
};

// Single local SGD steps. c1 moves (a, v), c2 moves (b, v); the frozen
// variants keep v fixed. Throw NumericError once |a|, |b| or |v| exceeds 1e8.
TheoryState local_grad_step_c1(TheoryState s, double eta);
TheoryState local_grad_step_c2(TheoryState s, double eta);
TheoryState frozen_step_c1(TheoryState s, double eta);
TheoryState frozen_step_c2(TheoryState s, double eta);

/// Gradient-flow limit of client 1's local training from (a0, v0): the point
/// on a^2 - v^2 = a0^2 - v0^2 with a v = 1. Requires a0, v0 > 0.
std::pair<double, double> analytic_minimizer(double a0, double v0);

double discrepancy(const TheoryState& s);
std::optional<double> contraction_ratio(double d_prev, double d_next, double threshold = 1e-9);

/// Mean over the two clients of cos^2 of the angle between the first local
/// update (full gradient, v unfrozen) and the v axis; 0 for a zero update.
double estimate_cos2_theta(const TheoryState& s, double eta);

/// (1 + cos2 * (1 + alpha)) / 2.
double theorem1_bound(double cos2_theta, double alpha_approx);

/// (1 + |1 - 2 eta v^2|^s * cos2 * (1 + alpha)) / 2 for s frozen first-layer
/// steps; s = 1 is the single-frozen-step form.
double theorem2_bound(double cos2_theta, double alpha_approx, double eta, double v,
                      std::size_t frozen_steps = 1);

/// ((1 - m) / (beta1 * beta2), 1 / beta1): step sizes for which the
/// FedBug contraction bound with factor m applies.
std::pair<double, double> step_size_window(double beta1, double beta2, double m_contract);

/// One round with `frozen_steps` leading local steps at fixed v (0 = FedAvg,
/// kAlwaysFrozen or >= local_iters = v frozen throughout).
std::pair<TheoryState, TheoryRoundLog> simulate_round(const TheoryState& s, const TheoryConfig& cfg,
                                                      std::size_t frozen_steps, std::size_t round = 1);

std::pair<TheoryState, TheoryRoundLog> fedavg_round(const TheoryState& s, const TheoryConfig& cfg,
                                                    std::size_t round = 1);
std::pair<TheoryState, TheoryRoundLog> fedbug_round(const TheoryState& s, const TheoryConfig& cfg,
                                                    std::size_t frozen_steps, std::size_t round = 1);
/// Throws ConfigError when v == 0 (the first layer can never fit).
std::pair<TheoryState, TheoryRoundLog> fedbabu_round(const TheoryState& s, const TheoryConfig& cfg,
                                                     std::size_t round = 1);

struct TheoryRow {
    std::size_t seed = 0;
    std::string algo;           // fedavg | fedbug | fedbabu
    std::size_t frozen_steps = 0;
    TheoryRoundLog log;
};

/// Initial state of `seed`: (a, b, v) ~ U[init_low, init_high)^3 drawn in that order.
TheoryState initial_state(const TheoryConfig& cfg, std::size_t seed);

/// Every seed runs FedAvg, FedBug for each configured frozen_steps value and
/// optionally FedBABU from the same initial state. Rows are ordered by seed,
/// then algorithm, then round.
std::vector<TheoryRow> run_figure2(const TheoryConfig& cfg, std::size_t threads = 1);

void write_theory_csv(std::ostream& out, const std::vector<TheoryRow>& rows);

struct TheorySummary {
    double pearson_bound_vs_r = 0.0;
    std::size_t n_pairs = 0;
    double fedbug_lt_fedavg_fraction = 0.0;
    std::size_t n_compared = 0;
    bool loss_ordering_ok = false;
    std::vector<std::size_t> loss_violation_rounds;
    double bound_coverage = 0.0;  // fraction of FedAvg r <= theorem1_bound(cos2, 0.2)
    double fedbabu_max_deviation = 0.0;
    std::size_t fedbabu_converged_rounds = 0;
    double fedavg_monotone_fraction = 0.0;  // seeds with non-increasing d

    bool pass_correlation = false;
    bool pass_ratio_ordering = false;
    bool pass_bound_coverage = false;
    bool pass_fedbabu = false;
};

/// Aggregate statistics over run_figure2 output. The loss ordering compares
/// seed-mean losses from round `loss_from_round` on.
TheorySummary summarize(const std::vector<TheoryRow>& rows, std::size_t loss_from_round = 5);

std::string summary_json(const TheorySummary& summary, const TheoryConfig& cfg);

}  // namespace fedbug::theory
