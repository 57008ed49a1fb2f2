#include "dcl/cli.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "dcl/analysis.hpp"
#include "dcl/checkpoint.hpp"
#include "dcl/datagen.hpp"
#include "dcl/gradcheck.hpp"
#include "dcl/parallel.hpp"
#include "dcl/run_config.hpp"
#include "dcl/train.hpp"

namespace dcl {

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Shape parse_shape(const std::string& s) {
  std::vector<std::size_t> dims;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    try {
      dims.push_back(std::stoul(part));
    } catch (const std::exception&) {
      throw SchemaError("bad shape '" + s + "', expected e.g. 1x28x28");
    }
  }
  if (dims.size() != 3) throw SchemaError("bad shape '" + s + "', expected CxHxW");
  return Shape(dims);
}

bool is_arch_preset(const std::string& name) {
  for (const auto& n : arch_preset_names())
    if (n == name) return true;
  return false;
}

// Architecture from a preset name or a literal string. Without an explicit
// input shape a literal string is tried against the common inputs in turn.
NetworkSpec resolve_arch(const std::string& arch, const std::string& input, std::size_t classes,
                         std::ostream& out) {
  if (is_arch_preset(arch)) {
    ArchPreset p = arch_preset(arch, classes ? classes : 100);
    if (!input.empty()) p.input_shape = parse_shape(input);
    if (classes && arch == "alexnet") p.num_classes = classes;
    return parse_arch(p.arch, p.input_shape, p.num_classes);
  }
  if (!input.empty()) return parse_arch(arch, parse_shape(input), classes ? classes : 10);
  const std::pair<Shape, std::size_t> candidates[] = {
      {Shape{3, 227, 227}, 1000}, {Shape{1, 28, 28}, 100}, {Shape{3, 32, 32}, 10}, {Shape{1, 16, 16}, 10}};
  for (const auto& [shape, n] : candidates) {
    try {
      NetworkSpec s = parse_arch(arch, shape, classes ? classes : n);
      out << "input " << shape.str() << ", " << s.num_classes << " classes\n";
      return s;
    } catch (const ShapeChainError&) {
    }
  }
  throw ShapeChainError("architecture does not chain on any default input; pass --input CxHxW");
}

std::string histogram_summary(const std::vector<int>& labels, std::size_t classes) {
  std::vector<std::size_t> counts(classes);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  const auto [mn, mx] = std::minmax_element(counts.begin(), counts.end());
  const double mean = static_cast<double>(labels.size()) / static_cast<double>(classes);
  double var = 0;
  for (auto c : counts) var += (static_cast<double>(c) - mean) * (static_cast<double>(c) - mean);
  std::ostringstream os;
  os << "class counts min " << *mn << " max " << *mx << " mean " << fmt("%.1f", mean) << " sd "
     << fmt("%.2f", std::sqrt(var / static_cast<double>(classes)));
  return os.str();
}

Dataset to_dataset(const SynthesisResult& r, const DatasetConfig& cfg) {
  Dataset d;
  d.id = cfg.id;
  d.images = Tensor<float>(Shape{std::max<std::size_t>(1, r.size()), 1, kOutputSide, kOutputSide});
  for (std::size_t i = 0; i < r.pixels.size(); ++i) d.images[i] = static_cast<float>(r.pixels[i]) / 255.0f;
  d.labels = r.number_labels;
  d.digit_labels = r.digit_labels;
  d.num_classes = cfg.num_classes();
  return d;
}

// ---- gen-data ---------------------------------------------------------------

struct GenArgs {
  std::string preset, config, mnist_dir, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> train_count, test_count;
};

int cmd_gen_data(const GenArgs& a, std::ostream& out) {
  DatasetConfig cfg;
  if (!a.preset.empty() == !a.config.empty()) throw SchemaError("give exactly one of --preset or --config");
  if (!a.preset.empty()) {
    cfg = dataset_preset(a.preset);
  } else {
    std::ifstream in(a.config);
    if (!in) throw IoError("cannot open " + a.config);
    try {
      cfg = dataset_config_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(a.config + ": " + e.what());
    }
  }
  if (a.seed) cfg.seed = *a.seed;
  if (a.train_count) cfg.train_count = *a.train_count;
  if (a.test_count) cfg.test_count = *a.test_count;
  cfg.validate();
  const DigitSource train_src = load_mnist_split(a.mnist_dir, true);
  const DigitSource test_src = load_mnist_split(a.mnist_dir, false);
  const std::filesystem::path root(a.out);
  std::filesystem::create_directories(root);
  for (int split = 0; split < 2; ++split) {
    const std::string name = split ? "test" : "train";
    const SynthesisResult r =
        synthesize(cfg, split ? test_src : train_src, split, split ? cfg.test_count : cfg.train_count);
    write_split(root / name, cfg.id, r);
    out << name << ": " << r.size() << " composites, " << cfg.num_classes() << " classes, "
        << histogram_summary(r.number_labels, cfg.num_classes()) << ", regenerated " << r.regenerated << '\n';
  }
  std::ofstream(root / "config.json") << to_json(cfg).dump(2) << '\n';
  out << "wrote " << (root / "train").string() << " and " << (root / "test").string() << '\n';
  return kExitOk;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::size_t repeats = 1;
  bool deterministic = false;
};

std::pair<Dataset, Dataset> load_run_data(const RunConfig& rc) {
  Dataset tr, te;
  if (!rc.data_dir.empty()) {
    const bool named = std::filesystem::exists(rc.data_dir / "train" / (rc.dataset.id + "-images.idx"));
    tr = load_dataset(rc.data_dir, "train", named ? rc.dataset.id : "");
    te = load_dataset(rc.data_dir, "test", named ? rc.dataset.id : "");
  } else {
    DatasetConfig cfg = rc.dataset;
    if (rc.limit_train) cfg.train_count = std::min(cfg.train_count, rc.limit_train);
    if (rc.limit_test) cfg.test_count = std::min(cfg.test_count, rc.limit_test);
    tr = to_dataset(synthesize(cfg, load_mnist_split(rc.mnist_dir, true), 0, cfg.train_count), cfg);
    te = to_dataset(synthesize(cfg, load_mnist_split(rc.mnist_dir, false), 1, cfg.test_count), cfg);
  }
  if (rc.limit_train) tr = tr.head(rc.limit_train);
  if (rc.limit_test) te = te.head(rc.limit_test);
  return {std::move(tr), std::move(te)};
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig rc = load_run_config(a.config);
  if (a.deterministic) rc.train.deterministic = true;
  if (a.repeats == 0) throw SchemaError("--repeats must be >= 1");
  auto [tr, te] = load_run_data(rc);
  const NetworkSpec spec = build_spec(rc, tr.images.shape().without_batch(), tr.num_classes);
  {
    const Network<float> probe(rc.oracle ? with_classes(spec, 10) : spec, 0);
    out << (rc.oracle ? "oracle sub-classifier: " : "model: ") << render_arch(probe.spec())
        << " weights " << probe.weight_count() << " biases " << probe.bias_count() << '\n';
  }
  out << "data: " << tr.size() << " train / " << te.size() << " test, " << tr.num_classes << " classes\n";

  std::vector<double> finals;
  for (std::size_t r = 1; r <= a.repeats; ++r) {
    TrainConfig cfg = rc.train;
    cfg.seed = rc.train.seed + (r - 1);
    const std::filesystem::path dir = a.repeats == 1 ? rc.out_dir : rc.out_dir / ("run" + std::to_string(r));
    std::filesystem::create_directories(dir);
    if (rc.oracle) {
      if (tr.digit_labels.empty() || te.digit_labels.empty())
        throw MissingDigitLabels("the oracle classifier needs per-digit labels");
      const NetworkSpec sub_spec = with_classes(spec, 10);
      std::vector<Network<float>> nets;
      for (std::size_t k = 0; k < tr.digit_labels.size(); ++k) {
        TrainConfig sub = cfg;
        sub.seed = substream_seed(cfg.seed, 20, k);
        const Dataset view_te = te.digit_view(k);
        TrainResult res = train(sub_spec, sub, tr.digit_view(k), &view_te);
        write_metrics_csv(dir / ("metrics-digit" + std::to_string(k + 1) + ".csv"), res.history);
        nets.push_back(std::move(res.net));
      }
      OracleResult o = oracle_evaluate(std::move(nets), te);
      Checkpoint ck;
      nlohmann::json meta = network_metadata(o.nets.front());
      meta["oracle"] = true;
      meta["digits"] = o.nets.size();
      meta["dataset"] = tr.id;
      meta["train"] = to_json(cfg);
      for (std::size_t k = 0; k < o.nets.size(); ++k) append_network(ck, o.nets[k], "digit" + std::to_string(k + 1) + "/");
      ck.metadata = meta.dump();
      write_checkpoint(dir / "model.dclc", ck);
      out << "run " << r << ": oracle composite test error " << fmt("%.4f", o.error_rate) << " (digits";
      for (double d : o.digit_error_rates) out << ' ' << fmt("%.4f", d);
      out << ")\n";
      finals.push_back(o.error_rate);
      continue;
    }
    TrainOptions opt;
    opt.checkpoint_dir = dir;
    opt.checkpoint_prefix = "model";
    opt.metadata = {{"dataset", tr.id}};
    opt.on_record = [&](const MetricsRecord& m) {
      if (m.split == "test")
        out << "run " << r << " epoch " << m.epoch << " lr " << m.lr << " test loss " << fmt("%.4f", m.loss)
            << " error " << fmt("%.4f", m.error_rate) << '\n';
    };
    TrainResult res = train(spec, cfg, tr, &te, opt);
    write_metrics_csv(dir / "metrics.csv", res.history);
    std::filesystem::copy_file(res.checkpoints.back(), dir / "model.dclc",
                               std::filesystem::copy_options::overwrite_existing);
    const double final_error = res.history.back().error_rate;
    out << "run " << r << ": final test error " << fmt("%.4f", final_error) << '\n';
    finals.push_back(final_error);
  }
  double mean = 0, var = 0;
  for (double f : finals) mean += f;
  mean /= static_cast<double>(finals.size());
  for (double f : finals) var += (f - mean) * (f - mean);
  const double sd = finals.size() > 1 ? std::sqrt(var / static_cast<double>(finals.size() - 1)) : 0.0;
  out << "summary: runs " << finals.size() << " mean test error " << fmt("%.4f", mean) << " sd " << fmt("%.4f", sd)
      << '\n';
  return kExitOk;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, data, split = "test";
  bool oracle = false;
};

void check_fit(const NetworkSpec& spec, const Dataset& d, std::size_t classes) {
  if (!(d.images.shape().without_batch() == spec.input_shape))
    throw DimMismatch("checkpoint expects input " + spec.input_shape.str() + ", data has " +
                      d.images.shape().without_batch().str());
  if (classes != spec.num_classes)
    throw DimMismatch("checkpoint has " + std::to_string(spec.num_classes) + " classes, data has " +
                      std::to_string(classes));
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Checkpoint ck = read_checkpoint(a.checkpoint);
  const nlohmann::json meta = ck.meta();
  const Dataset data = load_dataset(a.data, a.split);
  const bool oracle_ckpt = meta.value("oracle", false);
  if (oracle_ckpt || a.oracle) {
    OracleResult o;
    if (oracle_ckpt) {
      std::vector<Network<float>> nets;
      for (std::size_t k = 0; k < meta.at("digits").get<std::size_t>(); ++k)
        nets.push_back(network_from_checkpoint(ck, "digit" + std::to_string(k + 1) + "/"));
      for (const auto& n : nets) check_fit(n.spec(), data, 10);
      if (data.digit_labels.size() != nets.size())
        throw DimMismatch("checkpoint has " + std::to_string(nets.size()) + " digit classifiers, data has " +
                          std::to_string(data.digit_labels.size()) + " digits");
      o = oracle_evaluate(std::move(nets), data);
    } else {
      const Network<float> base = network_from_checkpoint(ck);
      check_fit(base.spec(), data, data.num_classes);
      const TrainConfig cfg = meta.contains("train") ? train_config_from_json(meta["train"]) : TrainConfig{};
      out << "training " << data.digit_labels.size() << " per-digit classifiers on " << a.data << "/train\n";
      o = oracle_train_eval(base.spec(), cfg, load_dataset(a.data, "train"), data);
    }
    out << "oracle error_rate " << fmt("%.6f", o.error_rate) << " digit_error_rates";
    double sum = 0;
    for (double d : o.digit_error_rates) {
      out << ' ' << fmt("%.6f", d);
      sum += d;
    }
    out << " union_bound " << fmt("%.6f", sum) << " n " << data.size() << '\n';
    return kExitOk;
  }
  const Network<float> net = network_from_checkpoint(ck);
  check_fit(net.spec(), data, data.num_classes);
  const MetricsRecord m = evaluate(net, data);
  out << "error_rate " << fmt("%.6f", m.error_rate) << " loss " << fmt("%.6f", m.loss) << " n " << data.size() << '\n';
  return kExitOk;
}

// ---- gradcheck ----------------------------------------------------------------

struct GradArgs {
  std::string arch, input;
  std::uint64_t seed = 1;
  std::size_t classes = 0;
};

int cmd_gradcheck(const GradArgs& a, std::ostream& out) {
  std::vector<std::pair<std::string, NetworkSpec>> suite;
  if (a.arch.empty()) {
    for (const auto& name : default_gradcheck_suite()) suite.emplace_back(name, resolve_arch(name, "", 10, out));
  } else {
    const std::string input = a.input.empty() && !is_arch_preset(a.arch) ? "1x16x16" : a.input;
    suite.emplace_back(a.arch, resolve_arch(a.arch, input, a.classes ? a.classes : 10, out));
  }
  bool all = true;
  char buf[256];
  for (const auto& [name, spec] : suite) {
    const GradCheckReport r = grad_check(spec, a.seed);
    out << "== " << name << " (" << r.arch << ")\n";
    for (const auto& e : r.entries) {
      std::snprintf(buf, sizeof buf, "  %-28s %7zu  max_rel_err %.3e  %s\n", e.name.c_str(), e.count, e.max_rel_error,
                    e.pass ? "ok" : "FAIL");
      out << buf;
    }
    std::snprintf(buf, sizeof buf, "%s %s max_rel_err %.3e in %.2fs\n", r.passed() ? "PASS" : "FAIL", name.c_str(),
                  r.max_error(), r.seconds);
    out << buf;
    all = all && r.passed();
  }
  return all ? kExitOk : kExitFailure;
}

// ---- analyze ------------------------------------------------------------------

struct AnalyzeArgs {
  std::string arch, plan, input, csv;
  std::size_t classes = 0;
};

int cmd_analyze(const AnalyzeArgs& a, std::ostream& out) {
  const NetworkSpec spec = resolve_arch(a.arch, a.input, a.classes, out);
  const NetworkCostReport r = compare_network(spec, parse_plan(a.plan, spec));
  if (a.csv == "-") {
    write_cost_csv(out, r);
    return kExitOk;
  }
  print_report(out, r);
  if (!a.csv.empty()) {
    std::ofstream f(a.csv);
    if (!f) throw IoError("cannot write " + a.csv);
    write_cost_csv(f, r);
  }
  return kExitOk;
}

// ---- inspect-responses --------------------------------------------------------

struct InspectArgs {
  std::string checkpoint, data, filters, split = "test", out;
};

int cmd_inspect(const InspectArgs& a, std::ostream& out) {
  const Checkpoint ck = read_checkpoint(a.checkpoint);
  const Network<float> net = network_from_checkpoint(ck);
  const Dataset data = load_dataset(a.data, a.split);
  check_fit(net.spec(), data, data.num_classes);
  std::vector<std::size_t> filters;
  std::stringstream ss(a.filters);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      filters.push_back(std::stoul(part));
    } catch (const std::exception&) {
      throw SchemaError("--filters expects comma-separated indices");
    }
  }
  if (filters.empty()) throw SchemaError("--filters expects at least one index");
  const auto rows = response_stats(net, data, filters);
  if (a.out.empty()) {
    write_response_csv(out, rows);
  } else {
    std::ofstream f(a.out);
    if (!f) throw IoError("cannot write " + a.out);
    write_response_csv(f, rows);
  }
  return kExitOk;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UnknownPreset*>(&e)) return kExitUnknownPreset;
  if (dynamic_cast<const Divergence*>(&e)) return kExitDivergence;
  if (dynamic_cast<const BadMagic*>(&e) || dynamic_cast<const TruncatedFile*>(&e) || dynamic_cast<const IoError*>(&e))
    return kExitBadInput;
  if (dynamic_cast<const SchemaError*>(&e) || dynamic_cast<const InvalidConfig*>(&e) ||
      dynamic_cast<const ParseError*>(&e) || dynamic_cast<const UnknownLayer*>(&e))
    return kExitSchema;
  if (dynamic_cast<const DimMismatch*>(&e) || dynamic_cast<const ShapeChainError*>(&e) ||
      dynamic_cast<const ShapeMismatch*>(&e) || dynamic_cast<const MissingDigitLabels*>(&e))
    return kExitMismatch;
  return kExitFailure;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Deep collaborative learning: data generation, training, evaluation and analysis", "dcl"};
  app.require_subcommand(1);
  bool deterministic = false;
  std::size_t threads = 0;
  app.add_flag("--deterministic", deterministic, "Fixed-order reductions and seeded everything");
  app.add_option("--threads", threads, "Worker threads (default: DCL_THREADS or all cores)");

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Synthesize a multi-digit dataset from MNIST IDX files");
  g->add_option("--preset", gen.preset, "II-01..II-05 or III-01..III-10");
  g->add_option("--config", gen.config, "DatasetConfig JSON file");
  g->add_option("--mnist-dir", gen.mnist_dir, "Directory with MNIST IDX files (.gz allowed)")->required();
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.seed, "Override the dataset seed");
  g->add_option("--train-count", gen.train_count, "Override the number of training composites");
  g->add_option("--test-count", gen.test_count, "Override the number of test composites");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model described by a run config");
  t->add_option("--config", tr.config, "RunConfig JSON file")->required();
  t->add_option("--repeats", tr.repeats, "Independent runs with seeds seed, seed+1, ...");
  t->add_flag("--deterministic", tr.deterministic, "Force deterministic training");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a generated dataset");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  e->add_option("--data", ev.data, "Dataset directory (with train/ and test/)")->required();
  e->add_option("--split", ev.split, "train or test")->check(CLI::IsMember({"train", "test"}));
  e->add_flag("--oracle", ev.oracle, "Run the per-digit oracle classifier");

  GradArgs gr;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  gc->add_option("--arch", gr.arch, "Preset name or architecture string (default: built-in suite)");
  gc->add_option("--seed", gr.seed, "Seed for weights, data and masks");
  gc->add_option("--input", gr.input, "Input shape CxHxW for a literal architecture");
  gc->add_option("--classes", gr.classes, "Number of classes");

  AnalyzeArgs an;
  auto* a = app.add_subcommand("analyze", "Parameter and FLOP accounting for DCL replacements");
  a->add_option("--arch", an.arch, "Preset name or architecture string")->required();
  a->add_option("--plan", an.plan, "Replacements, e.g. fc6=DCL2@1024 (';'-separated)");
  a->add_option("--input", an.input, "Input shape CxHxW");
  a->add_option("--classes", an.classes, "Number of classes");
  a->add_option("--csv", an.csv, "Also write the CSV report here ('-': CSV to stdout only)");

  InspectArgs in;
  auto* ir = app.add_subcommand("inspect-responses", "Grouped mean responses of a two-branch DCL block");
  ir->add_option("--checkpoint", in.checkpoint, "Checkpoint file")->required();
  ir->add_option("--data", in.data, "Dataset directory")->required();
  ir->add_option("--filters", in.filters, "Fused filter indices, e.g. 0,1")->required();
  ir->add_option("--split", in.split, "train or test")->check(CLI::IsMember({"train", "test"}));
  ir->add_option("--out", in.out, "CSV path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitSchema;
  }

  try {
    if (threads) set_worker_threads(threads);
    if (deterministic) set_deterministic(true);
    if (*g) return cmd_gen_data(gen, out);
    if (*t) return cmd_train(tr, out);
    if (*e) return cmd_eval(ev, out);
    if (*gc) return cmd_gradcheck(gr, out);
    if (*a) return cmd_analyze(an, out);
    if (*ir) return cmd_inspect(in, out);
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return exit_code_for(ex);
  }
  return kExitFailure;
}

}  // namespace dcl
