#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "dcl/arch.hpp"

namespace dcl {

// Weight parameters and multiply-accumulates (1 MAC = 1 FLOP). Biases are
// counted separately and stay out of the headline numbers.
struct Cost {
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  std::uint64_t bias = 0;
};

// Original layer: params u^2 K1 K2, flops u^2 W2 H2 K1 K2, bias K2.
Cost layer_cost(std::uint64_t u, std::uint64_t K1, std::uint64_t K2, std::uint64_t W2, std::uint64_t H2);
// DCL block with branch filter counts M:
//   params u^2 K1 sum(M) + K2 sum(M), flops u^2 W2 H2 K1 sum(M) + W2 H2 K2 sum(M),
//   bias sum(M) + T K2.
Cost dcl_cost(std::uint64_t u, std::uint64_t K1, std::uint64_t K2, const std::vector<std::size_t>& M, std::uint64_t W2,
              std::uint64_t H2);
// u^2 K1 sum(M) + K2 sum(M) <= u^2 K1 K2.
bool dcl_inequality(std::uint64_t u, std::uint64_t K1, std::uint64_t K2, const std::vector<std::size_t>& M);

// Kernel-area form used for layers whose kernel is not square (a
// fully-connected layer over an H x W input has area H W); u^2 is replaced by
// `area` throughout.
Cost layer_cost_area(std::uint64_t area, std::uint64_t K1, std::uint64_t K2, std::uint64_t positions);
Cost dcl_cost_area(std::uint64_t area, std::uint64_t K1, std::uint64_t K2, const std::vector<std::size_t>& M,
                   std::uint64_t positions);

struct CostReport {
  std::string layer;
  std::uint64_t params_original = 0, params_dcl = 0;
  std::uint64_t flops_original = 0, flops_dcl = 0;
  std::uint64_t bias_original = 0, bias_dcl = 0;
  double savings_fraction = 0;  // 1 - params_dcl / params_original
  bool inequality_holds = true;
  bool replaced = false;
};

struct NetworkCostReport {
  std::vector<CostReport> layers;  // parametric layers only
  CostReport total;
  std::vector<std::string> warnings;  // replacements over the sum(M) <= K2/2 budget
};

struct Replacement {
  std::string layer;
  DclConfig config;
};

// `fc6=DCL2@1024`, several separated by ';'. K2 defaults to the replaced
// layer's filter count; the branches reuse its kernel, stride and padding.
std::vector<Replacement> parse_plan(std::string_view plan, const NetworkSpec& spec);

// Weight cost of layer i as built (Conv / FC / DCL; zero otherwise).
Cost spec_layer_cost(const NetworkSpec& spec, std::size_t i);
// Sum over the network; equals a constructed Network's weight_count() and
// bias_count().
Cost spec_cost(const NetworkSpec& spec);

// UnknownLayer when the plan names a missing or non-parametric layer.
NetworkCostReport compare_network(const NetworkSpec& spec, const std::vector<Replacement>& plan);

void print_report(std::ostream& os, const NetworkCostReport& r);
inline constexpr const char* kCostHeader = "layer,params_orig,params_dcl,flops_orig,flops_dcl,savings,inequality";
void write_cost_csv(std::ostream& os, const NetworkCostReport& r);

}  // namespace dcl
