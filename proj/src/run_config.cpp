#include "dcl/run_config.hpp"

#include <fstream>

namespace dcl {

using nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw SchemaError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; }))
      throw SchemaError(where + ": unknown key '" + it.key() + "'");
}

std::string string_at(const json& j, const char* key) {
  if (!j[key].is_string()) throw SchemaError(std::string(key) + ": expected a string");
  return j[key].get<std::string>();
}

std::size_t count_at(const json& j, const char* key, const std::string& where) {
  if (!j[key].is_number_integer() || j[key].get<std::int64_t>() < 0)
    throw SchemaError(where + "." + key + ": expected a non-negative integer");
  return j[key].get<std::size_t>();
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
  check_keys(j, {"arch", "dcl", "dataset", "train", "out_dir", "data_dir", "mnist_dir", "limit", "oracle"}, "config");
  RunConfig rc;
  if (j.contains("arch")) rc.arch = string_at(j, "arch");
  if (j.contains("dcl")) {
    const json& d = j["dcl"];
    check_keys(d, {"branch_filters", "fused_channels", "strategy"}, "dcl");
    try {
      if (d.contains("branch_filters")) rc.dcl.branch_filters = d["branch_filters"].get<std::vector<std::size_t>>();
      if (d.contains("fused_channels")) rc.dcl.fused_channels = d["fused_channels"].get<std::size_t>();
      if (d.contains("strategy")) rc.dcl.strategy = strategy_from_string(d["strategy"].get<std::string>());
    } catch (const json::exception& e) {
      throw SchemaError(std::string("dcl: ") + e.what());
    } catch (const InvalidConfig& e) {
      throw SchemaError(std::string("dcl: ") + e.what());
    }
  }
  if (!j.contains("dataset")) throw SchemaError("config: 'dataset' is required");
  if (j["dataset"].is_string()) {
    rc.dataset = dataset_preset(j["dataset"].get<std::string>());
    rc.dataset_is_preset = true;
  } else {
    rc.dataset = dataset_config_from_json(j["dataset"]);
  }
  if (j.contains("train")) rc.train = train_config_from_json(j["train"]);
  if (j.contains("out_dir")) rc.out_dir = string_at(j, "out_dir");
  if (j.contains("data_dir")) rc.data_dir = string_at(j, "data_dir");
  if (j.contains("mnist_dir")) rc.mnist_dir = string_at(j, "mnist_dir");
  if (j.contains("limit")) {
    const json& l = j["limit"];
    check_keys(l, {"train", "test"}, "limit");
    if (l.contains("train")) rc.limit_train = count_at(l, "train", "limit");
    if (l.contains("test")) rc.limit_test = count_at(l, "test", "limit");
  }
  if (j.contains("oracle")) {
    if (!j["oracle"].is_boolean()) throw SchemaError("oracle: expected true or false");
    rc.oracle = j["oracle"].get<bool>();
  }
  if (rc.data_dir.empty() && rc.mnist_dir.empty())
    throw SchemaError("config: one of 'data_dir' or 'mnist_dir' is required");
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

NetworkSpec build_spec(const RunConfig& rc, const Shape& input, std::size_t num_classes) {
  std::string arch = rc.arch;
  for (const auto& name : arch_preset_names())
    if (name == rc.arch) arch = arch_preset(name, num_classes).arch;
  NetworkSpec spec = parse_arch(arch, input, num_classes);
  const bool any = rc.dcl.branch_filters || rc.dcl.fused_channels || rc.dcl.strategy;
  if (!any) return spec;
  bool found = false;
  for (auto& l : spec.layers) {
    if (l.kind != LayerKind::DclBlock) continue;
    found = true;
    if (rc.dcl.branch_filters) l.dcl->branch_filters = *rc.dcl.branch_filters;
    if (rc.dcl.fused_channels) l.dcl->fused_channels = *rc.dcl.fused_channels;
    if (rc.dcl.strategy) {
      l.dcl->strategy = *rc.dcl.strategy;
      l.show_strategy = true;
    }
    try {
      l.dcl->validate();
    } catch (const InvalidConfig& e) {
      throw SchemaError(std::string("dcl: ") + e.what());
    }
  }
  if (!found) throw SchemaError("dcl: overrides given but the architecture has no DCL block");
  chain_shapes(spec);
  return spec;
}

}  // namespace dcl
