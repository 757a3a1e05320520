#pragma once

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

namespace fedbug {

/// Bottom-up gradual unfreezing: the first `P * K` local iterations thaw one
/// module per period from the input side, the rest train everything.
struct BottomUpGU {
    double P = 0.0;
};

/// Mirror image of BottomUpGU: thaws from the output side.
struct TopDownGU {
    double P = 0.0;
};

/// The last `k_fix` modules stay frozen for the entire local phase
/// (`k_fix = 1` is the fixed-classifier baseline).
struct FixLastK {
    std::size_t k_fix = 1;
};

struct Vanilla {};

using UnfreezeSchedule = std::variant<Vanilla, BottomUpGU, TopDownGU, FixLastK>;

/// `trainable[i]` is true when module i (zero-based, input first) is updated.
using TrainableMask = std::vector<bool>;

/// Number of thawed modules at 1-based local iteration k:
/// min(M, ceil(k*M / (P*K))), and M when P == 0.
std::size_t unfreeze_count(std::size_t k, std::size_t K, std::size_t M, double P);

TrainableMask trainable_set(const UnfreezeSchedule& schedule, std::size_t k, std::size_t K,
                            std::size_t M);

/// Config name of the schedule: "vanilla", "fedbug", "topdown" or "fixlast".
std::string schedule_kind(const UnfreezeSchedule& schedule);

/// P for the GU schedules, k_fix for FixLastK, 0 for Vanilla.
double schedule_parameter(const UnfreezeSchedule& schedule);

/// Builds a schedule from its config name and parameter; validates ranges.
UnfreezeSchedule make_schedule(const std::string& kind, double parameter);

}  // namespace fedbug
