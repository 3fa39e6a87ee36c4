#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmx/grad_check.hpp"

namespace cmx {

struct GradCheckReport {
    std::string name;
    GradCheckResult result;
};

// The standard gradient audits: the margin contrastive loss on a random
// embedding batch, the code matching loss through the softmin pipeline, and
// the full embed-to-total-loss pipeline differentiated parameter by
// parameter. The pipeline check replays quantization frozen at the base
// point, which is exactly the surrogate the straight-through backward pass
// differentiates.
std::vector<GradCheckReport> standard_grad_checks(std::uint64_t seed, double step);

}  // namespace cmx
