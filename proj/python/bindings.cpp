#include <sstream>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dcl/analysis.hpp"
#include "dcl/cli.hpp"
#include "dcl/datagen.hpp"
#include "dcl/dcl_block.hpp"
#include "dcl/errors.hpp"
#include "dcl/gradcheck.hpp"

namespace py = pybind11;
using namespace dcl;

namespace {

py::dict cost_dict(const Cost& c) {
  py::dict d;
  d["params"] = c.params;
  d["flops"] = c.flops;
  d["bias"] = c.bias;
  return d;
}

py::dict report_dict(const CostReport& r) {
  py::dict d;
  d["layer"] = r.layer;
  d["params_original"] = r.params_original;
  d["params_dcl"] = r.params_dcl;
  d["flops_original"] = r.flops_original;
  d["flops_dcl"] = r.flops_dcl;
  d["savings_fraction"] = r.savings_fraction;
  d["inequality_holds"] = r.inequality_holds;
  d["replaced"] = r.replaced;
  return d;
}

NetworkSpec spec_for(const std::string& arch, std::size_t classes) {
  for (const auto& n : arch_preset_names())
    if (n == arch) {
      auto p = arch_preset(arch, classes);
      return parse_arch(p.arch, p.input_shape, classes);
    }
  throw UnknownLayer("unknown architecture preset '" + arch + "'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Collaborative-layer networks: cost analysis, fusion and the dcl command";
  py::register_exception<Error>(m, "DclError");

  m.def("fuse", [](const std::vector<std::vector<double>>& v, double eps) {
    return fuse<double>(std::span<const std::vector<double>>(v), eps);
  }, py::arg("v"), py::arg("epsilon"));
  m.def("fuse_backward", [](const std::vector<std::vector<double>>& v, double eps, const std::vector<double>& dz) {
    return fuse_backward<double>(std::span<const std::vector<double>>(v), eps, std::span<const double>(dz));
  }, py::arg("v"), py::arg("epsilon"), py::arg("dz"));
  m.def("fusion_epsilon", &fusion_epsilon, py::arg("order"));

  m.def("layer_cost", [](std::uint64_t u, std::uint64_t k1, std::uint64_t k2, std::uint64_t w2, std::uint64_t h2) {
    return cost_dict(layer_cost(u, k1, k2, w2, h2));
  }, py::arg("u"), py::arg("k1"), py::arg("k2"), py::arg("w2") = 1, py::arg("h2") = 1);
  m.def("dcl_cost", [](std::uint64_t u, std::uint64_t k1, std::uint64_t k2, const std::vector<std::size_t>& M,
                       std::uint64_t w2, std::uint64_t h2) { return cost_dict(dcl_cost(u, k1, k2, M, w2, h2)); },
        py::arg("u"), py::arg("k1"), py::arg("k2"), py::arg("m"), py::arg("w2") = 1, py::arg("h2") = 1);
  m.def("dcl_inequality", &dcl_inequality, py::arg("u"), py::arg("k1"), py::arg("k2"), py::arg("m"));
  m.def("analyze", [](const std::string& arch, const std::string& plan, std::size_t classes) {
    const auto spec = spec_for(arch, classes);
    const auto r = compare_network(spec, parse_plan(plan, spec));
    py::dict d;
    py::list layers;
    for (const auto& l : r.layers) layers.append(report_dict(l));
    d["layers"] = layers;
    d["total"] = report_dict(r.total);
    d["warnings"] = r.warnings;
    return d;
  }, py::arg("arch"), py::arg("plan") = "", py::arg("classes") = 1000);

  m.def("arch_presets", &arch_preset_names);
  m.def("arch_string", [](const std::string& name) { return arch_preset(name).arch; }, py::arg("name"));
  m.def("dataset_presets", &dataset_preset_names);
  m.def("dataset_config", [](const std::string& id) { return to_json(dataset_preset(id)).dump(); }, py::arg("id"));

  m.def("gradcheck", [](const std::string& arch, std::uint64_t seed) {
    auto p = arch_preset(arch);
    const auto r = grad_check(parse_arch(p.arch, p.input_shape, p.num_classes), seed);
    py::dict d;
    d["passed"] = r.passed();
    d["max_error"] = r.max_error();
    d["seconds"] = r.seconds;
    return d;
  }, py::arg("arch"), py::arg("seed") = 1);

  // Runs the dcl command in-process; returns (exit code, stdout, stderr).
  m.def("run", [](std::vector<std::string> args) {
    args.insert(args.begin(), "dcl");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    int code;
    {
      py::gil_scoped_release release;
      code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
  }, py::arg("args"));
}
