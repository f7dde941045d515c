#pragma once

#include <string>
#include <vector>

#include "d2d/nn/grad_check.hpp"

namespace d2d {

struct GradSuiteEntry {
  std::string op;
  nn::GradCheckReport report;
};

// Central-difference gradient checks for every differentiable building
// block, each at toy dimensions with its inputs registered as parameters so
// their gradients are checked too. Deterministic in seed.
std::vector<GradSuiteEntry> run_grad_suite(uint64_t seed = 1);

}  // namespace d2d
