#include "dcl/dcl_config.hpp"

#include <numeric>
#include <string>

#include "dcl/errors.hpp"

namespace dcl {

std::size_t DclConfig::filter_sum() const noexcept {
  return std::accumulate(branch_filters.begin(), branch_filters.end(), std::size_t{0});
}

double DclConfig::epsilon() const { return fusion_epsilon(branches()); }

void DclConfig::validate() const {
  if (branches() < 2) throw InvalidConfig("DCL block needs at least 2 branches");
  for (std::size_t m : branch_filters)
    if (m == 0) throw InvalidConfig("every DCL branch needs at least one filter");
  if (fused_channels == 0) throw InvalidConfig("DCL fused width K2 must be >= 1");
  if (strategy == DclStrategy::Stochastic && branches() < 3)
    throw InvalidConfig("stochastic DCL training needs T >= 3 (with T = 2 the pair is the whole set)");
  if (stride == 0) throw InvalidConfig("DCL stride must be >= 1");
}

double fusion_epsilon(std::size_t order) { return std::stod("1e-" + std::to_string(order)); }

const char* to_string(DclStrategy s) { return s == DclStrategy::Stochastic ? "stochastic" : "deterministic"; }

DclStrategy strategy_from_string(const std::string& s) {
  if (s == "stochastic" || s == "S") return DclStrategy::Stochastic;
  if (s == "deterministic" || s == "D") return DclStrategy::Deterministic;
  throw InvalidConfig("unknown DCL strategy '" + s + "'");
}

}  // namespace dcl
