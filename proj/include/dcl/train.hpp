#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

#include "dcl/datagen.hpp"
#include "dcl/network.hpp"

namespace dcl {

struct ScheduleStage {
  std::size_t epochs = 1;
  double lr = 1e-3;
};

struct TrainConfig {
  std::size_t batch_size = 64;
  std::vector<ScheduleStage> schedule{{20, 1e-3}, {5, 1e-4}};
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 1;
  bool deterministic = false;
  // Shift and scale the input to zero mean, unit variance using training-set
  // pixel statistics; stored with the network.
  bool standardize_input = true;

  std::size_t total_epochs() const;
  // InvalidConfig unless batch_size >= 1, every stage has >= 1 epoch and the
  // learning rates strictly decrease across stages.
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
// Strict: unknown keys raise SchemaError.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct MetricsRecord {
  std::size_t epoch = 0;
  std::string split;  // "train" or "test"
  double loss = 0;
  double error_rate = 0;
  double lr = 0;
  std::int64_t wall_ms = 0;
};

inline constexpr const char* kMetricsHeader = "epoch,split,loss,error_rate,lr,wall_ms";
std::string to_csv_row(const MetricsRecord& r);
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path);

// Momentum SGD with L2 weight decay:
//   v <- momentum * v - lr * (g + weight_decay * w);  w <- w + v
// Parameters flagged inactive for a step are left untouched, velocity included.
template <typename T>
class Sgd {
 public:
  Sgd(const std::vector<Param<T>>& params, double momentum, double weight_decay);
  void step(std::vector<Param<T>>& params, const std::vector<Tensor<T>>& grads, const std::vector<bool>& active,
            double lr);
  const std::vector<Tensor<T>>& velocity() const noexcept { return velocity_; }

 private:
  double momentum_, weight_decay_;
  std::vector<Tensor<T>> velocity_;
};

struct TrainOptions {
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
  std::string checkpoint_prefix = "model";
  nlohmann::json metadata;  // extra checkpoint metadata
  std::function<void(const MetricsRecord&)> on_record;
};

struct TrainResult {
  Network<float> net;
  std::vector<MetricsRecord> history;
  std::vector<std::filesystem::path> checkpoints;
};

// Train rows carry the running train-mode loss and error of the epoch; test
// rows an eval-mode pass over `test` (skipped when test is null). Aborts with
// Divergence when a batch loss is non-finite or exceeds 10 ln(classes); the
// parameters from the start of that epoch are saved as <prefix>-last-good.dclc.
TrainResult train(const NetworkSpec& spec, const TrainConfig& cfg, const Dataset& train_set, const Dataset* test_set,
                  const TrainOptions& options = {});

MetricsRecord evaluate(const Network<float>& net, const Dataset& data, std::size_t batch_size = 256);
std::vector<int> predict_labels(const Network<float>& net, const Dataset& data, std::size_t batch_size = 256);

// One 10-class copy of `base` per digit position; a composite counts as
// correct only if every position is.
struct OracleResult {
  double error_rate = 0;
  std::vector<double> digit_error_rates;
  std::vector<Network<float>> nets;
};
OracleResult oracle_train_eval(const NetworkSpec& base, const TrainConfig& cfg, const Dataset& train_set,
                               const Dataset& test_set);
// Composite error of already trained per-digit networks.
OracleResult oracle_evaluate(std::vector<Network<float>> nets, const Dataset& data);
// `base` re-targeted to `classes` outputs.
NetworkSpec with_classes(const NetworkSpec& base, std::size_t classes);

// Mean responses of the first DCL block (T = 2) for fused filter k: z grouped
// by the number label, v1 by the tens digit and v2 by the unit digit. Values
// are averaged over spatial positions first.
struct ResponseRow {
  std::size_t filter = 0;
  std::string signal;    // z, v1, v2
  std::string group_by;  // number, tens, units
  int group = 0;
  std::size_t count = 0;
  double mean = 0;
};
inline constexpr const char* kResponseHeader = "filter,signal,group_by,group,count,mean";
std::vector<ResponseRow> response_stats(const Network<float>& net, const Dataset& data,
                                        const std::vector<std::size_t>& filters, std::size_t batch_size = 256);
void write_response_csv(std::ostream& os, const std::vector<ResponseRow>& rows);

}  // namespace dcl
