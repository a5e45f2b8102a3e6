#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mbcr/gradcheck.hpp"

namespace mbcr {

struct NamedCheck {
    std::string name;
    GradcheckResult result;
};

/// Finite-difference checks over every differentiable primitive (w.r.t. each
/// argument), one DBCRN block, and the mini-profile T/L/F models w.r.t. their
/// input. Points are drawn from `seed`.
std::vector<NamedCheck> run_gradcheck_suite(std::uint64_t seed, double h = 1e-5);

}  // namespace mbcr
