#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dcl/arch.hpp"

namespace dcl {

struct GradCheckEntry {
  std::string name;  // parameter name, or "input"
  std::size_t count = 0;
  double max_rel_error = 0;
  bool pass = true;
};

struct GradCheckReport {
  std::string arch;
  std::vector<GradCheckEntry> entries;
  double seconds = 0;

  bool passed() const;
  double max_error() const;
};

struct GradCheckOptions {
  std::size_t batch = 4;
  double step = 1e-5;
  double tolerance = 1e-4;
  // Biases start at zero, which puts a DCL projection exactly on its ReLU kink
  // whenever a branch response is all zero. Small random biases move the check
  // point off that kink.
  double bias_scale = 0.1;
};

// |a - n| / max(1, |a|, |n|) with n the central difference. Runs in double
// precision in train mode; every loss evaluation replays the same rng stream,
// so dropout masks and the sampled DCL pair are fixed by the seed.
double relative_error(double analytic, double numeric);
GradCheckReport grad_check(const NetworkSpec& spec, std::uint64_t seed, const GradCheckOptions& options = {});

// Architectures of the default `gradcheck` suite.
std::vector<std::string> default_gradcheck_suite();

}  // namespace dcl
