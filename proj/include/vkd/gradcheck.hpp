#pragma once

// Finite-difference verification of every op family's backward rule and of
// the full training objective on a small batch. Used by the unit tests, the
// acceptance suite, and the `gradcheck` CLI command.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "vkd/model.hpp"

namespace vkd {

inline constexpr double kGradCheckTol = 1e-4;
inline constexpr double kGradCheckStep = 1e-5;

struct GradCheckResult {
  std::string family;
  double max_rel_err = 0.0;
  int trials = 0;
};

// Randomized central-difference trials per op family.
std::vector<GradCheckResult> gradient_suite(std::uint64_t seed, int trials_per_family);

// Full distillation objective (dropout on, one MC draw each) on a 4-sample
// batch at small dims, checked over every model parameter coordinate.
GradCheckResult full_objective_gradcheck(std::uint64_t seed);

// Fills every parameter with scaled Gaussian noise; zero-initialized final
// layers make gradients at a fresh model degenerate, tests want them generic.
void randomize_parameters(VkdModel& m, std::uint64_t seed, double scale = 0.4);

// Runs everything, prints one worst-case line per family; returns 0 iff all
// checks pass the tolerance.
int run_gradcheck(std::ostream& out);

}  // namespace vkd
