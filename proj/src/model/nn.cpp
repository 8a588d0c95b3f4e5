// Copyright Contributors to the frustum-field project
// SPDX-License-Identifier: Apache-2.0

#include "frf/nn.hpp"

namespace frf {

Activation parse_activation(const std::string &s) {
    if (s == "silu") return Activation::silu;
    if (s == "relu") return Activation::relu;
    throw ValidationError("unknown activation '" + s + "' (expected silu or relu)");
}

std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "silu"; }

} // namespace frf
