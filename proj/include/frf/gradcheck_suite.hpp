// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace frf {

/// One finite-difference check in double precision on tiny shapes.
struct GradCase {
    std::string name;
    bool composite = false; // whole modules use the looser tolerance
    std::function<double(std::uint64_t seed)> run; // returns max_rel_error
    double tolerance() const { return composite ? 1e-3 : 1e-4; }
};

/// Every differentiable op plus the full decoder variants, the volume
/// builder, the encoder, the fine U-Net, compositing and the loss.
const std::vector<GradCase> &gradcheck_suite();

struct GradResult {
    std::string name;
    double max_rel_error = 0;
    double tolerance = 0;
    bool pass = false;
};

/// Runs cases whose name equals `only` (all when empty).
std::vector<GradResult> run_gradcheck_suite(const std::string &only = "", std::uint64_t seed = 1);

} // namespace frf
