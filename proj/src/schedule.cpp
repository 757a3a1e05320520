#include "fedbug/schedule.hpp"

#include <algorithm>
#include <cmath>

#include "fedbug/error.hpp"

namespace fedbug {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void check_fraction(double P) {
    if (!(P >= 0.0 && P <= 1.0)) {
        throw ConfigError("schedule.P must lie in [0, 1], got " + std::to_string(P));
    }
}

}  // namespace

std::size_t unfreeze_count(std::size_t k, std::size_t K, std::size_t M, double P) {
    if (M == 0 || K == 0 || k == 0 || k > K) {
        throw ConfigError("unfreeze_count requires 1 <= k <= K and M >= 1");
    }
    check_fraction(P);
    if (P == 0.0) return M;
    const double ratio = static_cast<double>(k) * static_cast<double>(M) /
                         (P * static_cast<double>(K));
    // Decimal fractions such as 0.1 are not exact in binary; a ratio that is an
    // integer up to rounding must not be pushed to the next period by ceil().
    const double nearest = std::round(ratio);
    const double snapped =
        std::abs(ratio - nearest) <= 1e-9 * std::max(1.0, nearest) ? nearest : std::ceil(ratio);
    if (snapped >= static_cast<double>(M)) return M;
    return std::max<std::size_t>(1, static_cast<std::size_t>(snapped));
}

TrainableMask trainable_set(const UnfreezeSchedule& schedule, std::size_t k, std::size_t K,
                            std::size_t M) {
    TrainableMask mask(M, false);
    std::visit(Overloaded{
                   [&](const Vanilla&) { std::fill(mask.begin(), mask.end(), true); },
                   [&](const BottomUpGU& s) {
                       const std::size_t m = unfreeze_count(k, K, M, s.P);
                       std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(m), true);
                   },
                   [&](const TopDownGU& s) {
                       const std::size_t m = unfreeze_count(k, K, M, s.P);
                       std::fill(mask.end() - static_cast<std::ptrdiff_t>(m), mask.end(), true);
                   },
                   [&](const FixLastK& s) {
                       if (s.k_fix < 1 || s.k_fix >= M) {
                           throw ConfigError("fixlast: k_fix must lie in [1, M-1] = [1, " +
                                             std::to_string(M == 0 ? 0 : M - 1) + "], got " +
                                             std::to_string(s.k_fix));
                       }
                       std::fill(mask.begin(), mask.end() - static_cast<std::ptrdiff_t>(s.k_fix), true);
                   },
               },
               schedule);
    return mask;
}

std::string schedule_kind(const UnfreezeSchedule& schedule) {
    return std::visit(Overloaded{
                          [](const Vanilla&) { return std::string("vanilla"); },
                          [](const BottomUpGU&) { return std::string("fedbug"); },
                          [](const TopDownGU&) { return std::string("topdown"); },
                          [](const FixLastK&) { return std::string("fixlast"); },
                      },
                      schedule);
}

double schedule_parameter(const UnfreezeSchedule& schedule) {
    return std::visit(Overloaded{
                          [](const Vanilla&) { return 0.0; },
                          [](const BottomUpGU& s) { return s.P; },
                          [](const TopDownGU& s) { return s.P; },
                          [](const FixLastK& s) { return static_cast<double>(s.k_fix); },
                      },
                      schedule);
}

UnfreezeSchedule make_schedule(const std::string& kind, double parameter) {
    if (kind == "vanilla") return Vanilla{};
    if (kind == "fedbug") {
        check_fraction(parameter);
        return BottomUpGU{parameter};
    }
    if (kind == "topdown") {
        check_fraction(parameter);
        return TopDownGU{parameter};
    }
    if (kind == "fixlast") {
        if (!(parameter >= 1.0) || parameter != std::floor(parameter)) {
            throw ConfigError("schedule.k_fix must be an integer >= 1");
        }
        return FixLastK{static_cast<std::size_t>(parameter)};
    }
    throw ConfigError("schedule.kind must be one of fedbug, topdown, fixlast, vanilla; got '" +
                      kind + "'");
}

}  // namespace fedbug
