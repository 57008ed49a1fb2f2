#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace dcl {

enum class DclStrategy { Deterministic, Stochastic };

// Shape of one collaborative block: T branches of M[t] filters each, fused
// into K2 output channels.
struct DclConfig {
  std::vector<std::size_t> branch_filters;  // M[t], one entry per branch
  std::size_t fused_channels = 0;           // K2
  DclStrategy strategy = DclStrategy::Deterministic;
  // Shared by every branch. kernel == 0 means the branch spans the whole input
  // (the fully-connected form).
  std::size_t kernel = 0, stride = 1, pad = 0;

  std::size_t branches() const noexcept { return branch_filters.size(); }
  std::size_t filter_sum() const noexcept;
  bool fully_connected() const noexcept { return kernel == 0; }

  // 10^-T for the full T-way fusion.
  double epsilon() const;

  // Sum of branch filters is at most half the fused width.
  bool within_budget() const noexcept { return 2 * filter_sum() <= fused_channels; }

  // Throws InvalidConfig on structural violations (T < 2, M[t] == 0,
  // stochastic with T < 3, K2 == 0). The budget rule is not enforced here.
  void validate() const;
};

// Decimal 10^-order as the nearest double, e.g. 0.01 for order 2.
double fusion_epsilon(std::size_t order);

const char* to_string(DclStrategy s);
DclStrategy strategy_from_string(const std::string& s);

}  // namespace dcl
