#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace adaptfed {

struct GradCheckReport {
    bool passed = false;
    double max_rel = 0.0;               // worst relative error over every suite
    std::vector<std::string> lines;     // one human-readable line per check
};

/// Finite-difference verification of every gradient path: model parameters,
/// full and low-rank generator pullbacks (phi and z), and the novel-client
/// embedding path. Five sub-seeds per suite, all on d=4 / 2-block instances;
/// passes when every relative error stays below 1e-4.
GradCheckReport run_gradcheck(std::uint64_t seed);

}  // namespace adaptfed
