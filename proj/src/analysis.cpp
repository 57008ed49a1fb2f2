#include "dcl/analysis.hpp"

#include <cstdio>
#include <numeric>
#include <ostream>

#include "dcl/kernels.hpp"

namespace dcl {

namespace {

std::uint64_t mul(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r;
  if (__builtin_mul_overflow(a, b, &r)) throw Overflow("cost arithmetic overflows 64 bits");
  return r;
}

std::uint64_t add(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r;
  if (__builtin_add_overflow(a, b, &r)) throw Overflow("cost arithmetic overflows 64 bits");
  return r;
}

std::uint64_t sum_of(const std::vector<std::size_t>& M) {
  std::uint64_t s = 0;
  for (auto m : M) s = add(s, m);
  return s;
}

void require_positive(std::initializer_list<std::uint64_t> v) {
  for (auto x : v)
    if (x == 0) throw PreconditionViolated("cost inputs must be positive");
}

struct Geometry {
  std::uint64_t area, K1, K2, positions;
};

Geometry geometry_of(const NetworkSpec& spec, std::size_t i) {
  const LayerSpec& l = spec.layers[i];
  const Shape& in = spec.shapes[i];
  const Shape& out = spec.shapes[i + 1];
  switch (l.kind) {
    case LayerKind::Conv: return {l.kernel * l.kernel, in[0], l.filters, out[1] * out[2]};
    case LayerKind::FullyConnected: return {in[1] * in[2], in[0], l.filters, 1};
    case LayerKind::DclBlock: {
      const DclConfig& d = *l.dcl;
      const std::uint64_t area = d.fully_connected() ? in[1] * in[2] : d.kernel * d.kernel;
      return {area, in[0], d.fused_channels, out[1] * out[2]};
    }
    default: return {0, 0, 0, 0};
  }
}

}  // namespace

Cost layer_cost_area(std::uint64_t area, std::uint64_t K1, std::uint64_t K2, std::uint64_t positions) {
  require_positive({area, K1, K2, positions});
  const std::uint64_t p = mul(mul(area, K1), K2);
  return {p, mul(p, positions), K2};
}

Cost dcl_cost_area(std::uint64_t area, std::uint64_t K1, std::uint64_t K2, const std::vector<std::size_t>& M,
                   std::uint64_t positions) {
  require_positive({area, K1, K2, positions});
  if (M.empty()) throw PreconditionViolated("DCL cost needs at least one branch");
  const std::uint64_t S = sum_of(M);
  const std::uint64_t p = add(mul(mul(area, K1), S), mul(K2, S));
  return {p, mul(p, positions), add(S, mul(M.size(), K2))};
}

Cost layer_cost(std::uint64_t u, std::uint64_t K1, std::uint64_t K2, std::uint64_t W2, std::uint64_t H2) {
  require_positive({u, W2, H2});
  return layer_cost_area(mul(u, u), K1, K2, mul(W2, H2));
}

Cost dcl_cost(std::uint64_t u, std::uint64_t K1, std::uint64_t K2, const std::vector<std::size_t>& M, std::uint64_t W2,
              std::uint64_t H2) {
  require_positive({u, W2, H2});
  return dcl_cost_area(mul(u, u), K1, K2, M, mul(W2, H2));
}

bool dcl_inequality(std::uint64_t u, std::uint64_t K1, std::uint64_t K2, const std::vector<std::size_t>& M) {
  const std::uint64_t S = sum_of(M), a = mul(mul(u, u), K1);
  return add(mul(a, S), mul(K2, S)) <= mul(a, K2);
}

Cost spec_layer_cost(const NetworkSpec& spec, std::size_t i) {
  const LayerSpec& l = spec.layers.at(i);
  if (!l.has_params()) return {};
  const Geometry g = geometry_of(spec, i);
  if (l.kind == LayerKind::DclBlock) return dcl_cost_area(g.area, g.K1, g.K2, l.dcl->branch_filters, g.positions);
  return layer_cost_area(g.area, g.K1, g.K2, g.positions);
}

Cost spec_cost(const NetworkSpec& spec) {
  Cost total;
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const Cost c = spec_layer_cost(spec, i);
    total.params = add(total.params, c.params);
    total.flops = add(total.flops, c.flops);
    total.bias = add(total.bias, c.bias);
  }
  return total;
}

std::vector<Replacement> parse_plan(std::string_view plan, const NetworkSpec& spec) {
  std::vector<Replacement> out;
  std::size_t start = 0;
  while (start <= plan.size()) {
    const std::size_t semi = plan.find(';', start);
    std::string_view item = plan.substr(start, semi == std::string_view::npos ? std::string_view::npos : semi - start);
    start = semi == std::string_view::npos ? plan.size() + 1 : semi + 1;
    if (item.empty()) continue;
    const std::size_t eq = item.find('=');
    if (eq == std::string_view::npos) throw ParseError(out.size() + 1, "plan entry needs <layer>=DCL...");
    const std::string name(item.substr(0, eq));
    const std::size_t idx = spec.index_of(name);
    const LayerSpec& target = spec.layers[idx];
    if (target.kind != LayerKind::Conv && target.kind != LayerKind::FullyConnected)
      throw UnknownLayer("layer '" + name + "' is not a convolutional or fully-connected layer");
    LayerSpec l = parse_layer(item.substr(eq + 1), true, target.filters);
    if (l.kind != LayerKind::DclBlock) throw ParseError(out.size() + 1, "replacement must be a DCL token");
    DclConfig cfg = *l.dcl;
    if (cfg.fused_channels != target.filters)
      throw InvalidConfig("replacement for " + name + " must keep " + std::to_string(target.filters) + " channels");
    if (target.kind == LayerKind::Conv && cfg.fully_connected()) {
      cfg.kernel = target.kernel;
      cfg.stride = target.stride;
      cfg.pad = target.pad;
    }
    out.push_back({name, cfg});
  }
  return out;
}

NetworkCostReport compare_network(const NetworkSpec& spec, const std::vector<Replacement>& plan) {
  NetworkCostReport r;
  r.total.layer = "total";
  for (const auto& rep : plan) {
    const std::size_t idx = spec.index_of(rep.layer);
    if (!spec.layers[idx].has_params()) throw UnknownLayer("layer '" + rep.layer + "' has no parameters");
  }
  for (std::size_t i = 0; i < spec.size(); ++i) {
    if (!spec.layers[i].has_params()) continue;
    CostReport c;
    c.layer = spec.names[i];
    const Cost orig = spec_layer_cost(spec, i);
    Cost dcl = orig;
    for (const auto& rep : plan) {
      if (rep.layer != c.layer) continue;
      const Geometry g = geometry_of(spec, i);
      dcl = dcl_cost_area(g.area, g.K1, g.K2, rep.config.branch_filters, g.positions);
      c.replaced = true;
      c.inequality_holds = add(mul(mul(g.area, g.K1), rep.config.filter_sum()), mul(g.K2, rep.config.filter_sum())) <=
                           mul(mul(g.area, g.K1), g.K2);
      if (!rep.config.within_budget())
        r.warnings.push_back(c.layer + ": sum of branch filters " + std::to_string(rep.config.filter_sum()) +
                             " exceeds K2/2 = " + std::to_string(rep.config.fused_channels / 2.0));
    }
    c.params_original = orig.params;
    c.flops_original = orig.flops;
    c.bias_original = orig.bias;
    c.params_dcl = dcl.params;
    c.flops_dcl = dcl.flops;
    c.bias_dcl = dcl.bias;
    c.savings_fraction = 1.0 - static_cast<double>(c.params_dcl) / static_cast<double>(c.params_original);
    r.total.params_original = add(r.total.params_original, c.params_original);
    r.total.params_dcl = add(r.total.params_dcl, c.params_dcl);
    r.total.flops_original = add(r.total.flops_original, c.flops_original);
    r.total.flops_dcl = add(r.total.flops_dcl, c.flops_dcl);
    r.total.bias_original = add(r.total.bias_original, c.bias_original);
    r.total.bias_dcl = add(r.total.bias_dcl, c.bias_dcl);
    r.total.inequality_holds = r.total.inequality_holds && c.inequality_holds;
    r.total.replaced = r.total.replaced || c.replaced;
    r.layers.push_back(c);
  }
  r.total.savings_fraction =
      r.total.params_original ? 1.0 - static_cast<double>(r.total.params_dcl) / static_cast<double>(r.total.params_original)
                              : 0.0;
  return r;
}

void print_report(std::ostream& os, const NetworkCostReport& r) {
  char buf[256];
  os << "Weights exclude biases (listed separately); FLOPs are multiply-accumulates.\n";
  std::snprintf(buf, sizeof buf, "%-8s %14s %14s %16s %16s %10s %10s %9s %4s\n", "layer", "params_orig", "params_dcl",
                "flops_orig", "flops_dcl", "bias_orig", "bias_dcl", "savings", "ineq");
  os << buf;
  auto line = [&](const CostReport& c) {
    std::snprintf(buf, sizeof buf, "%-8s %14llu %14llu %16llu %16llu %10llu %10llu %8.3f%% %4s\n", c.layer.c_str(),
                  static_cast<unsigned long long>(c.params_original), static_cast<unsigned long long>(c.params_dcl),
                  static_cast<unsigned long long>(c.flops_original), static_cast<unsigned long long>(c.flops_dcl),
                  static_cast<unsigned long long>(c.bias_original), static_cast<unsigned long long>(c.bias_dcl),
                  100.0 * c.savings_fraction, c.inequality_holds ? "yes" : "no");
    os << buf;
  };
  for (const auto& c : r.layers) line(c);
  line(r.total);
  std::snprintf(buf, sizeof buf, "total params %.2fM -> %.2fM (%.3f%% fewer)\n", r.total.params_original / 1e6,
                r.total.params_dcl / 1e6, 100.0 * r.total.savings_fraction);
  os << buf;
  for (const auto& w : r.warnings) os << "warning: " << w << '\n';
}

void write_cost_csv(std::ostream& os, const NetworkCostReport& r) {
  os << kCostHeader << '\n';
  char buf[64];
  auto line = [&](const CostReport& c) {
    std::snprintf(buf, sizeof buf, "%.9g", c.savings_fraction);
    os << c.layer << ',' << c.params_original << ',' << c.params_dcl << ',' << c.flops_original << ',' << c.flops_dcl
       << ',' << buf << ',' << (c.inequality_holds ? "true" : "false") << '\n';
  };
  for (const auto& c : r.layers) line(c);
  line(r.total);
}

}  // namespace dcl
