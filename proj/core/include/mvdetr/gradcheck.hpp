#pragma once

#include <string>
#include <vector>

#include "mvdetr/loss.hpp"
#include "mvdetr/model.hpp"

namespace mvdetr {

struct GradCheckModule {
    std::string name;
    int checked = 0;
    double max_rel_err = 0;
};

struct GradCheckReport {
    std::vector<GradCheckModule> modules;  // geometry / visual / connector / decoder
    double max_rel_err = 0;
    int checked = 0;

    bool passed(double tol = 1e-4) const { return max_rel_err < tol; }
};

// Compares analytic gradients of the full set-prediction loss against
// 64-bit central finite differences on a reduced-width model. The
// bipartite assignment is frozen so the FD probes differentiate a fixed
// objective. A deterministic subset of elements is probed per tensor.
GradCheckReport run_gradcheck(std::uint64_t seed, int elements_per_tensor = 3, double h = 1e-4);

}  // namespace mvdetr
