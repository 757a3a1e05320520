#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace fedbug {

struct GradCheckCase {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t n_entries = 0;
};

struct GradCheckReport {
    std::vector<GradCheckCase> cases;
    double max_rel_error = 0.0;
};

/// Compares analytic gradients of every layer kind, both losses and a small
/// multi-module model against central differences on `n_cases` random
/// problems. Relative error is |g - n| / max(|g|, |n|, 1e-4).
GradCheckReport run_gradcheck(std::size_t n_cases = 100, std::uint64_t seed = 0, double step = 1e-5);

}  // namespace fedbug
