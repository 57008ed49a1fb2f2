#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include <unistd.h>

#include "dcl/analysis.hpp"
#include "dcl/checkpoint.hpp"
#include "dcl/cli.hpp"
#include "dcl/run_config.hpp"

using namespace dcl;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("dcl_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct CliResult {
  int code;
  std::string out, err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "dcl");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

Checkpoint random_checkpoint(Rng& rng) {
  Checkpoint c;
  const std::size_t n = uniform_index(rng, 5);
  for (std::size_t t = 0; t < n; ++t) {
    std::vector<std::size_t> dims(1 + uniform_index(rng, 4));
    for (auto& d : dims) d = 1 + uniform_index(rng, 5);
    Tensor<float> x{Shape(dims)};
    for (auto& v : x.vec()) v = static_cast<float>(normal01(rng));
    c.tensors.emplace_back("t" + std::to_string(t) + "/w", std::move(x));
  }
  c.metadata = json{{"k", uniform_index(rng, 1000)}, {"s", "x"}}.dump();
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Checkpoint, RoundTripsByteIdentical) {
  Rng rng = make_rng(77);
  for (int t = 0; t < 120; ++t) {
    const auto c = random_checkpoint(rng);
    const auto bytes = serialize_checkpoint(c);
    const auto back = parse_checkpoint(bytes);
    ASSERT_EQ(back.tensors.size(), c.tensors.size());
    for (std::size_t i = 0; i < c.tensors.size(); ++i) {
      EXPECT_EQ(back.tensors[i].first, c.tensors[i].first);
      EXPECT_EQ(back.tensors[i].second.shape(), c.tensors[i].second.shape());
      EXPECT_EQ(back.tensors[i].second.vec(), c.tensors[i].second.vec());
    }
    ASSERT_EQ(serialize_checkpoint(back), bytes);
  }
}

TEST(Checkpoint, LayoutAndErrors) {
  Checkpoint c;
  c.tensors.emplace_back("a", Tensor<float>::from(Shape{2}, {1.0f, -2.0f}));
  c.metadata = "{\"z\":1,\"a\":2}";
  auto bytes = serialize_checkpoint(c);
  ASSERT_GE(bytes.size(), 12u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "DCLC");
  EXPECT_EQ(bytes[4], 1);
  // metadata stays verbatim, key order included
  EXPECT_EQ(parse_checkpoint(bytes).metadata, c.metadata);

  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(parse_checkpoint(bad), BadMagic);
  auto ver = bytes;
  ver[4] = 2;
  EXPECT_THROW(parse_checkpoint(ver), BadMagic);
  for (std::size_t cut : {std::size_t{3}, std::size_t{11}, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<std::uint8_t> t(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_THROW(parse_checkpoint(t), TruncatedFile) << cut;
  }
  c.tensors.emplace_back("a", Tensor<float>(Shape{1}));
  EXPECT_THROW(parse_checkpoint(serialize_checkpoint(c)), SchemaError);
}

TEST(Checkpoint, NetworkRestoresEvalBitExactly) {
  auto p = arch_preset("dcl-a3s-tiny");
  const auto spec = parse_arch(p.arch, p.input_shape, p.num_classes);
  auto shifted = spec;
  shifted.input_shift = 0.125;
  shifted.input_scale = 3.5;
  Network<float> net(shifted, 9);
  auto dir = temp_dir("ckpt");
  write_checkpoint(dir / "m.dclc", make_checkpoint(net));
  const auto back = network_from_checkpoint(read_checkpoint(dir / "m.dclc"));
  EXPECT_EQ(render_arch(back.spec()), render_arch(spec));
  EXPECT_EQ(back.spec().input_shift, 0.125);
  EXPECT_EQ(back.spec().input_scale, 3.5);
  Rng rng = make_rng(1), r1(0), r2(0);
  Tensor<float> x(Shape{3, 1, 16, 16});
  for (auto& v : x.vec()) v = static_cast<float>(uniform01(rng));
  const std::vector<int> y{1, 2, 3};
  const auto a = net.forward(x, y, Mode::Eval, r1), b = back.forward(x, y, Mode::Eval, r2);
  EXPECT_EQ(a.logits.vec(), b.logits.vec());
  EXPECT_EQ(a.loss, b.loss);
  fs::remove_all(dir);
}

TEST(Checkpoint, PrefixedNetworks) {
  auto p = arch_preset("lenet-tiny");
  Network<float> n1(parse_arch(p.arch, p.input_shape, 10), 1), n2(parse_arch(p.arch, p.input_shape, 10), 2);
  Checkpoint c = make_checkpoint(n1, network_metadata(n1));
  c.tensors.clear();
  append_network(c, n1, "digit1/");
  append_network(c, n2, "digit2/");
  const auto b2 = network_from_checkpoint(c, "digit2/");
  for (std::size_t i = 0; i < n2.params().size(); ++i) EXPECT_EQ(b2.params()[i].value.vec(), n2.params()[i].value.vec());
  EXPECT_THROW(network_from_checkpoint(c, "digit3/"), Error);
}

TEST(RunConfig, StrictKeys) {
  json j = {{"arch", "dcl-a2"}, {"dataset", "II-01"}, {"train", {{"batch_size", 32}}}, {"limit", {{"train", 100}}}, {"mnist_dir", "digits"}};
  const auto rc = run_config_from_json(j);
  EXPECT_EQ(rc.arch, "dcl-a2");
  EXPECT_TRUE(rc.dataset_is_preset);
  EXPECT_EQ(rc.train.batch_size, 32u);
  EXPECT_EQ(rc.limit_train, 100u);
  auto extra = j;
  extra["epochs"] = 3;
  EXPECT_THROW(run_config_from_json(extra), SchemaError);
  auto bad = j;
  bad["dataset"] = "IV-9";
  EXPECT_THROW(run_config_from_json(bad), UnknownPreset);
  auto no_data = j;
  no_data.erase("dataset");
  EXPECT_THROW(run_config_from_json(no_data), SchemaError);
  auto no_source = j;
  no_source.erase("mnist_dir");
  EXPECT_THROW(run_config_from_json(no_source), SchemaError);
  auto ov = j;
  ov["dcl"] = {{"branch_filters", {10, 10}}, {"fused_channels", 40}};
  const auto spec = build_spec(run_config_from_json(ov), Shape{1, 28, 28}, 100);
  EXPECT_NE(render_arch(spec).find("DCL2@10/40"), std::string::npos) << render_arch(spec);
}

TEST(Cli, UsageAndSchemaErrors) {
  EXPECT_EQ(cli({"--help"}).code, 0);
  EXPECT_EQ(cli({"frobnicate"}).code, kExitSchema);
  EXPECT_EQ(cli({"analyze"}).code, kExitSchema);
}

TEST(Cli, UnknownPresetExitCode) {
  auto dir = temp_dir("cli_preset");
  const auto r = cli({"gen-data", "--preset", "IV-9", "--mnist-dir", DCL_MNIST_DIR, "--out", dir.string()});
  EXPECT_EQ(r.code, kExitUnknownPreset);
  EXPECT_FALSE(r.err.empty());
  fs::remove_all(dir);
}

TEST(Cli, AnalyzeAlexnet) {
  const auto r = cli({"analyze", "--arch", "alexnet", "--plan", "fc6=DCL2@1024"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("16.81"), std::string::npos);
  EXPECT_NE(r.out.find("37748736"), std::string::npos);
  const auto c = cli({"analyze", "--arch", "alexnet", "--plan", "fc6=DCL2@1024", "--csv", "-"});
  EXPECT_EQ(c.out.rfind(kCostHeader, 0), 0u);
  EXPECT_EQ(cli({"analyze", "--arch", "alexnet", "--plan", "fc99=DCL2@4"}).code, kExitSchema);
}

TEST(Cli, GradcheckSingleArch) {
  const auto r = cli({"gradcheck", "--arch", "dcl-a2-tiny"});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_NE(r.out.find("PASS dcl-a2-tiny"), std::string::npos);
}

TEST(Cli, GenTrainEvalInspect) {
  auto dir = temp_dir("cli_flow");
  auto r = cli({"gen-data", "--preset", "II-01", "--mnist-dir", DCL_MNIST_DIR, "--out", (dir / "data").string(),
                "--train-count", "300", "--test-count", "100"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "data" / "train" / "II-01-images.idx"));
  EXPECT_TRUE(fs::exists(dir / "data" / "config.json"));

  // regeneration is byte-identical
  r = cli({"gen-data", "--preset", "II-01", "--mnist-dir", DCL_MNIST_DIR, "--out", (dir / "again").string(),
           "--train-count", "300", "--test-count", "100"});
  ASSERT_EQ(r.code, 0);
  for (const char* f : {"train/II-01-images.idx", "test/II-01-labels.idx", "test/II-01-digit2-labels.idx"})
    EXPECT_EQ(read_file_bytes(dir / "data" / f), read_file_bytes(dir / "again" / f)) << f;

  json cfg = {{"arch", "dcl-a2"},
              {"dataset", "II-01"},
              {"data_dir", (dir / "data").string()},
              {"out_dir", (dir / "run").string()},
              {"train", {{"batch_size", 32}, {"schedule", {{{"epochs", 2}, {"lr", 0.01}}}}}}};
  std::ofstream(dir / "run.json") << cfg.dump();
  r = cli({"train", "--config", (dir / "run.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_TRUE(fs::exists(dir / "run" / "model.dclc"));
  const auto rows = read_metrics_csv(dir / "run" / "metrics.csv");
  ASSERT_EQ(rows.size(), 4u);

  r = cli({"eval", "--checkpoint", (dir / "run" / "model.dclc").string(), "--data", (dir / "data").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ostringstream expect;
  expect.precision(6);
  expect << std::fixed << rows.back().error_rate;
  EXPECT_NE(r.out.find("error_rate " + expect.str()), std::string::npos) << r.out;

  r = cli({"inspect-responses", "--checkpoint", (dir / "run" / "model.dclc").string(), "--data",
           (dir / "data").string(), "--filters", "0,5", "--out", (dir / "resp.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = slurp(dir / "resp.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 2 * 120);

  // a corrupted checkpoint is rejected with the bad-input code
  auto bytes = read_file_bytes(dir / "run" / "model.dclc");
  bytes[1] = 'X';
  write_file_bytes(dir / "bad.dclc", bytes);
  EXPECT_EQ(cli({"eval", "--checkpoint", (dir / "bad.dclc").string(), "--data", (dir / "data").string()}).code,
            kExitBadInput);

  // a checkpoint for 28x28 input against 16x16 data cannot fit
  auto p = arch_preset("lenet-tiny");
  Network<float> tiny(parse_arch(p.arch, p.input_shape, 100), 1);
  write_checkpoint(dir / "tiny.dclc", make_checkpoint(tiny));
  EXPECT_EQ(cli({"eval", "--checkpoint", (dir / "tiny.dclc").string(), "--data", (dir / "data").string()}).code,
            kExitMismatch);
  fs::remove_all(dir);
}

TEST(Cli, DivergenceExitCode) {
  auto dir = temp_dir("cli_div");
  json cfg = {{"arch", "lenet"},
              {"dataset", "II-01"},
              {"mnist_dir", DCL_MNIST_DIR},
              {"limit", {{"train", 128}, {"test", 32}}},
              {"out_dir", (dir / "run").string()},
              {"train", {{"batch_size", 16}, {"schedule", {{{"epochs", 3}, {"lr", 50.0}}}}}}};
  std::ofstream(dir / "run.json") << cfg.dump();
  const auto r = cli({"train", "--config", (dir / "run.json").string()});
  EXPECT_EQ(r.code, kExitDivergence) << r.err;
  fs::remove_all(dir);
}
