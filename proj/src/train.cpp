#include "dcl/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "dcl/checkpoint.hpp"
#include "dcl/dcl_block.hpp"
#include "dcl/parallel.hpp"

namespace dcl {

using nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw SchemaError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; }))
      throw SchemaError(where + ": unknown key '" + it.key() + "'");
}

template <typename U>
U get_as(const json& j, const std::string& where) {
  try {
    if constexpr (std::is_same_v<U, bool>) {
      if (!j.is_boolean()) throw SchemaError(where + ": expected true or false");
    } else if constexpr (std::is_unsigned_v<U>) {
      if (!j.is_number_integer() || j.get<std::int64_t>() < 0) throw SchemaError(where + ": expected a non-negative integer");
    } else {
      if (!j.is_number()) throw SchemaError(where + ": expected a number");
    }
    return j.get<U>();
  } catch (const json::exception& e) {
    throw SchemaError(where + ": " + e.what());
  }
}

// Copies samples idx[begin, end) into a batch tensor and label vector.
void gather(const Dataset& d, const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end, Tensor<float>& x,
            std::vector<int>& y) {
  const std::size_t per = d.images.size() / d.size(), n = end - begin;
  Shape s = d.images.shape();
  x = Tensor<float>(Shape{n, s[1], s[2], s[3]});
  y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t src = idx[begin + i];
    std::copy_n(d.images.data() + src * per, per, x.data() + i * per);
    y[i] = d.labels[src];
  }
}

std::size_t count_errors(const Tensor<float>& logits, std::span<const int> labels) {
  const std::size_t N = logits.dim(0), C = logits.dim(1);
  std::size_t wrong = 0;
  for (std::size_t n = 0; n < N; ++n) {
    const float* row = logits.data() + n * C;
    const std::size_t arg = static_cast<std::size_t>(std::max_element(row, row + C) - row);
    wrong += static_cast<int>(arg) != labels[n];
  }
  return wrong;
}

void check_compatible(const NetworkSpec& spec, const Dataset& d, const char* what) {
  if (d.size() == 0) throw ShapeChainError(std::string(what) + " set is empty");
  if (!(d.images.shape().without_batch() == spec.input_shape))
    throw ShapeChainError(std::string(what) + " images are " + d.images.shape().without_batch().str() +
                          " but the network expects " + spec.input_shape.str());
  for (int y : d.labels)
    if (y < 0 || static_cast<std::size_t>(y) >= spec.num_classes)
      throw ShapeChainError(std::string(what) + " label " + std::to_string(y) + " exceeds the network's " +
                            std::to_string(spec.num_classes) + " classes");
}

// Mean and standard deviation over every pixel of the set.
std::pair<double, double> pixel_stats(const Dataset& d) {
  double sum = 0, sq = 0;
  for (float v : d.images.vec()) {
    sum += v;
    sq += static_cast<double>(v) * v;
  }
  const double n = static_cast<double>(d.images.size()), mean = sum / n;
  return {mean, std::sqrt(std::max(0.0, sq / n - mean * mean))};
}

}  // namespace

std::size_t TrainConfig::total_epochs() const {
  std::size_t n = 0;
  for (const auto& s : schedule) n += s.epochs;
  return n;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw InvalidConfig("batch_size must be >= 1");
  if (schedule.empty()) throw InvalidConfig("schedule needs at least one stage");
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    if (schedule[i].epochs == 0) throw InvalidConfig("every schedule stage needs >= 1 epoch");
    if (!(schedule[i].lr >= 0)) throw InvalidConfig("learning rates must be >= 0");
    if (i > 0 && !(schedule[i].lr < schedule[i - 1].lr))
      throw InvalidConfig("learning rates must strictly decrease across schedule stages");
  }
  if (!(momentum >= 0 && momentum < 1)) throw InvalidConfig("momentum must be in [0, 1)");
  if (!(weight_decay >= 0)) throw InvalidConfig("weight_decay must be >= 0");
}

json to_json(const TrainConfig& c) {
  json sched = json::array();
  for (const auto& s : c.schedule) sched.push_back({{"epochs", s.epochs}, {"lr", s.lr}});
  return {{"batch_size", c.batch_size}, {"schedule", sched},       {"momentum", c.momentum},
          {"weight_decay", c.weight_decay}, {"seed", c.seed}, {"deterministic", c.deterministic},
          {"standardize_input", c.standardize_input}};
}

TrainConfig train_config_from_json(const json& j) {
  check_keys(j, {"batch_size", "schedule", "momentum", "weight_decay", "seed", "deterministic", "standardize_input"},
             "train");
  TrainConfig c;
  if (j.contains("batch_size")) c.batch_size = get_as<std::size_t>(j["batch_size"], "train.batch_size");
  if (j.contains("schedule")) {
    if (!j["schedule"].is_array()) throw SchemaError("train.schedule: expected an array");
    c.schedule.clear();
    for (std::size_t i = 0; i < j["schedule"].size(); ++i) {
      const json& s = j["schedule"][i];
      const std::string where = "train.schedule[" + std::to_string(i) + "]";
      check_keys(s, {"epochs", "lr"}, where);
      if (!s.contains("epochs") || !s.contains("lr")) throw SchemaError(where + ": needs epochs and lr");
      c.schedule.push_back({get_as<std::size_t>(s["epochs"], where + ".epochs"), get_as<double>(s["lr"], where + ".lr")});
    }
  }
  if (j.contains("momentum")) c.momentum = get_as<double>(j["momentum"], "train.momentum");
  if (j.contains("weight_decay")) c.weight_decay = get_as<double>(j["weight_decay"], "train.weight_decay");
  if (j.contains("seed")) c.seed = get_as<std::uint64_t>(j["seed"], "train.seed");
  if (j.contains("deterministic")) c.deterministic = get_as<bool>(j["deterministic"], "train.deterministic");
  if (j.contains("standardize_input"))
    c.standardize_input = get_as<bool>(j["standardize_input"], "train.standardize_input");
  try {
    c.validate();
  } catch (const InvalidConfig& e) {
    throw SchemaError(std::string("train: ") + e.what());
  }
  return c;
}

std::string to_csv_row(const MetricsRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%s,%.9g,%.6f,%.9g,%lld", r.epoch, r.split.c_str(), r.loss, r.error_rate, r.lr,
                static_cast<long long>(r.wall_ms));
  return buf;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << kMetricsHeader << '\n';
  for (const auto& r : records) out << to_csv_row(r) << '\n';
}

std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != kMetricsHeader) throw SchemaError(path.string() + ": unexpected metrics header");
  std::vector<MetricsRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[6];
    for (auto& s : f) std::getline(ss, s, ',');
    out.push_back({std::stoul(f[0]), f[1], std::stod(f[2]), std::stod(f[3]), std::stod(f[4]), std::stoll(f[5])});
  }
  return out;
}

template <typename T>
Sgd<T>::Sgd(const std::vector<Param<T>>& params, double momentum, double weight_decay)
    : momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& p : params) velocity_.emplace_back(p.value.shape());
}

template <typename T>
void Sgd<T>::step(std::vector<Param<T>>& params, const std::vector<Tensor<T>>& grads, const std::vector<bool>& active,
                  double lr) {
  if (params.size() != velocity_.size() || grads.size() != params.size() || active.size() != params.size())
    throw ShapeMismatch("optimizer state does not match the parameter list");
  const T mu = static_cast<T>(momentum_), wd = static_cast<T>(weight_decay_), eta = static_cast<T>(lr);
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!active[p]) continue;
    T* w = params[p].value.data();
    T* v = velocity_[p].data();
    const T* g = grads[p].data();
    if (grads[p].size() != params[p].value.size()) throw ShapeMismatch("gradient shape differs for " + params[p].name);
    for (std::size_t i = 0; i < params[p].value.size(); ++i) {
      v[i] = mu * v[i] - eta * (g[i] + wd * w[i]);
      w[i] += v[i];
    }
  }
}

template class Sgd<float>;
template class Sgd<double>;

MetricsRecord evaluate(const Network<float>& net, const Dataset& data, std::size_t batch_size) {
  check_compatible(net.spec(), data, "evaluation");
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  double loss = 0;
  std::size_t wrong = 0;
  Rng unused(0);
  Tensor<float> x;
  std::vector<int> y;
  for (std::size_t b = 0; b < data.size(); b += batch_size) {
    const std::size_t e = std::min(data.size(), b + batch_size);
    gather(data, idx, b, e, x, y);
    auto r = net.forward(x, y, Mode::Eval, unused);
    loss += static_cast<double>(r.loss) * static_cast<double>(e - b);
    wrong += count_errors(r.logits, y);
  }
  MetricsRecord m;
  m.split = "test";
  m.loss = loss / static_cast<double>(data.size());
  m.error_rate = static_cast<double>(wrong) / static_cast<double>(data.size());
  m.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
  return m;
}

std::vector<int> predict_labels(const Network<float>& net, const Dataset& data, std::size_t batch_size) {
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<int> out;
  Tensor<float> x;
  std::vector<int> y;
  for (std::size_t b = 0; b < data.size(); b += batch_size) {
    const std::size_t e = std::min(data.size(), b + batch_size);
    gather(data, idx, b, e, x, y);
    const Tensor<float> logits = net.predict(x);
    const std::size_t C = logits.dim(1);
    for (std::size_t n = 0; n < e - b; ++n) {
      const float* row = logits.data() + n * C;
      out.push_back(static_cast<int>(std::max_element(row, row + C) - row));
    }
  }
  return out;
}

TrainResult train(const NetworkSpec& spec, const TrainConfig& cfg, const Dataset& train_set, const Dataset* test_set,
                  const TrainOptions& options) {
  cfg.validate();
  check_compatible(spec, train_set, "training");
  if (test_set) check_compatible(spec, *test_set, "test");
  const bool was_deterministic = deterministic();
  set_deterministic(was_deterministic || cfg.deterministic);

  NetworkSpec net_spec = spec;
  if (cfg.standardize_input) {
    const auto [mean, sd] = pixel_stats(train_set);
    net_spec.input_shift = mean;
    net_spec.input_scale = sd > 0 ? 1.0 / sd : 1.0;
  }
  TrainResult result{Network<float>(std::move(net_spec), cfg.seed), {}, {}};
  Network<float>& net = result.net;
  Sgd<float> sgd(net.params(), cfg.momentum, cfg.weight_decay);
  const double limit = 10.0 * std::log(static_cast<double>(spec.num_classes));
  const std::size_t N = train_set.size();

  auto save = [&](const Network<float>& n, const std::string& suffix, std::size_t epoch) {
    if (options.checkpoint_dir.empty()) return std::filesystem::path();
    std::filesystem::create_directories(options.checkpoint_dir);
    json meta = network_metadata(n);
    meta["epoch"] = epoch;
    meta["train"] = to_json(cfg);
    if (options.metadata.is_object())
      for (auto it = options.metadata.begin(); it != options.metadata.end(); ++it) meta[it.key()] = it.value();
    const auto path = options.checkpoint_dir / (options.checkpoint_prefix + suffix + ".dclc");
    write_checkpoint(path, make_checkpoint(n, meta));
    return path;
  };
  auto emit = [&](const MetricsRecord& r) {
    result.history.push_back(r);
    if (options.on_record) options.on_record(r);
  };

  std::size_t epoch = 0;
  for (std::size_t stage = 0; stage < cfg.schedule.size(); ++stage) {
    const double lr = cfg.schedule[stage].lr;
    for (std::size_t e = 0; e < cfg.schedule[stage].epochs; ++e) {
      ++epoch;
      const auto start = std::chrono::steady_clock::now();
      const Network<float> last_good = net;
      std::vector<std::size_t> order(N);
      std::iota(order.begin(), order.end(), 0);
      Rng shuffle = make_rng(cfg.seed, 10, epoch);
      for (std::size_t i = N; i > 1; --i) std::swap(order[i - 1], order[uniform_index(shuffle, i)]);
      Rng rng = make_rng(cfg.seed, 11, epoch);

      double loss_sum = 0;
      std::size_t wrong = 0;
      Tensor<float> x;
      std::vector<int> y;
      for (std::size_t b = 0; b < N; b += cfg.batch_size) {
        const std::size_t end = std::min(N, b + cfg.batch_size);
        gather(train_set, order, b, end, x, y);
        ForwardResult<float> fwd;
        bool bad = false;
        try {
          fwd = net.forward(x, y, Mode::Train, rng);
          bad = !std::isfinite(fwd.loss) || fwd.loss > limit;
        } catch (const NonFinite&) {
          bad = true;
        }
        if (bad) {
          const auto path = save(last_good, "-last-good", epoch - 1);
          set_deterministic(was_deterministic);
          throw Divergence("training diverged in epoch " + std::to_string(epoch) + " (batch loss " +
                           std::to_string(fwd.loss) + ", limit " + std::to_string(limit) + ")" +
                           (path.empty() ? "" : "; last good parameters in " + path.string()));
        }
        const Gradients<float> g = net.backward(fwd.cache);
        sgd.step(net.mutable_params(), g.params, g.active, lr);
        loss_sum += static_cast<double>(fwd.loss) * static_cast<double>(end - b);
        wrong += count_errors(fwd.logits, y);
      }
      const auto now = std::chrono::steady_clock::now();
      MetricsRecord tr{epoch, "train", loss_sum / static_cast<double>(N),
                       static_cast<double>(wrong) / static_cast<double>(N), lr,
                       std::chrono::duration_cast<std::chrono::milliseconds>(now - start).count()};
      emit(tr);
      if (test_set) {
        MetricsRecord te = evaluate(net, *test_set);
        te.epoch = epoch;
        te.lr = lr;
        emit(te);
      }
    }
    const auto path = save(net, "-stage" + std::to_string(stage + 1), epoch);
    if (!path.empty()) result.checkpoints.push_back(path);
  }
  set_deterministic(was_deterministic);
  return result;
}

NetworkSpec with_classes(const NetworkSpec& base, std::size_t classes) {
  return parse_arch(render_arch(base), base.input_shape, classes);
}

OracleResult oracle_evaluate(std::vector<Network<float>> nets, const Dataset& data) {
  if (data.digit_labels.size() != nets.size())
    throw MissingDigitLabels("dataset provides " + std::to_string(data.digit_labels.size()) +
                             " digit label sets, oracle has " + std::to_string(nets.size()) + " sub-classifiers");
  OracleResult r;
  std::vector<bool> correct(data.size(), true);
  for (std::size_t k = 0; k < nets.size(); ++k) {
    const Dataset view = data.digit_view(k);
    const auto pred = predict_labels(nets[k], view);
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
      if (pred[i] != view.labels[i]) {
        ++wrong;
        correct[i] = false;
      }
    r.digit_error_rates.push_back(static_cast<double>(wrong) / static_cast<double>(data.size()));
  }
  r.error_rate = static_cast<double>(std::count(correct.begin(), correct.end(), false)) / static_cast<double>(data.size());
  r.nets = std::move(nets);
  return r;
}

OracleResult oracle_train_eval(const NetworkSpec& base, const TrainConfig& cfg, const Dataset& train_set,
                               const Dataset& test_set) {
  if (train_set.digit_labels.empty() || test_set.digit_labels.empty())
    throw MissingDigitLabels("the oracle classifier needs per-digit labels");
  const NetworkSpec spec = with_classes(base, 10);
  std::vector<Network<float>> nets;
  for (std::size_t k = 0; k < train_set.digit_labels.size(); ++k) {
    TrainConfig sub = cfg;
    sub.seed = substream_seed(cfg.seed, 20, k);
    nets.push_back(train(spec, sub, train_set.digit_view(k), nullptr).net);
  }
  return oracle_evaluate(std::move(nets), test_set);
}

std::vector<ResponseRow> response_stats(const Network<float>& net, const Dataset& data,
                                        const std::vector<std::size_t>& filters, std::size_t batch_size) {
  const NetworkSpec& spec = net.spec();
  std::size_t layer = spec.size();
  for (std::size_t i = 0; i < spec.size(); ++i)
    if (spec.layers[i].kind == LayerKind::DclBlock) {
      layer = i;
      break;
    }
  if (layer == spec.size()) throw NoDclBlock("network has no DCL block");
  const DclConfig& cfg = *spec.layers[layer].dcl;
  if (cfg.branches() != 2) throw PreconditionViolated("response statistics need a two-branch DCL block");
  if (data.digit_labels.size() < 2) throw MissingDigitLabels("response statistics need per-digit labels");
  const std::size_t K2 = cfg.fused_channels;
  for (std::size_t k : filters)
    if (k >= K2) throw ShapeMismatch("filter " + std::to_string(k) + " out of range (K2 = " + std::to_string(K2) + ")");
  check_compatible(spec, data, "response");

  const std::size_t D = data.digit_labels.size(), groups = data.num_classes;
  const auto& tens = data.digit_labels[D - 2];
  const auto& units = data.digit_labels[D - 1];
  struct Acc {
    std::vector<double> sum;
    std::vector<std::size_t> count;
  };
  // [filter][signal]
  std::vector<std::array<Acc, 3>> acc(filters.size());
  for (auto& a : acc) {
    a[0] = {std::vector<double>(groups), std::vector<std::size_t>(groups)};
    a[1] = {std::vector<double>(10), std::vector<std::size_t>(10)};
    a[2] = {std::vector<double>(10), std::vector<std::size_t>(10)};
  }

  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng unused(0);
  Tensor<float> x;
  std::vector<int> y;
  for (std::size_t b = 0; b < data.size(); b += batch_size) {
    const std::size_t e = std::min(data.size(), b + batch_size), n = e - b;
    gather(data, idx, b, e, x, y);
    const auto r = net.forward(x, y, Mode::Eval, unused);
    const Tensor<float>& z = r.cache.activations[layer + 1];  // n x K2 x H x W
    const std::size_t P = z.size() / (n * K2);
    const Tensor<float>& v1 = DclLayer<float>::cached_projection(r.cache.layers[layer], 0);  // K2 x n*P
    const Tensor<float>& v2 = DclLayer<float>::cached_projection(r.cache.layers[layer], 1);
    for (std::size_t f = 0; f < filters.size(); ++f) {
      const std::size_t k = filters[f];
      for (std::size_t s = 0; s < n; ++s) {
        double mz = 0, m1 = 0, m2 = 0;
        for (std::size_t p = 0; p < P; ++p) {
          mz += z[(s * K2 + k) * P + p];
          m1 += v1[k * n * P + s * P + p];
          m2 += v2[k * n * P + s * P + p];
        }
        const std::size_t i = b + s;
        acc[f][0].sum[static_cast<std::size_t>(data.labels[i])] += mz / static_cast<double>(P);
        ++acc[f][0].count[static_cast<std::size_t>(data.labels[i])];
        acc[f][1].sum[static_cast<std::size_t>(tens[i])] += m1 / static_cast<double>(P);
        ++acc[f][1].count[static_cast<std::size_t>(tens[i])];
        acc[f][2].sum[static_cast<std::size_t>(units[i])] += m2 / static_cast<double>(P);
        ++acc[f][2].count[static_cast<std::size_t>(units[i])];
      }
    }
  }

  std::vector<ResponseRow> rows;
  const char* signal[3] = {"z", "v1", "v2"};
  const char* group_by[3] = {"number", "tens", "units"};
  for (std::size_t f = 0; f < filters.size(); ++f)
    for (std::size_t s = 0; s < 3; ++s)
      for (std::size_t g = 0; g < acc[f][s].sum.size(); ++g) {
        const std::size_t c = acc[f][s].count[g];
        rows.push_back({filters[f], signal[s], group_by[s], static_cast<int>(g), c,
                        c ? acc[f][s].sum[g] / static_cast<double>(c) : 0.0});
      }
  return rows;
}

void write_response_csv(std::ostream& os, const std::vector<ResponseRow>& rows) {
  os << kResponseHeader << '\n';
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.9g", r.mean);
    os << r.filter << ',' << r.signal << ',' << r.group_by << ',' << r.group << ',' << r.count << ',' << buf << '\n';
  }
}

}  // namespace dcl
