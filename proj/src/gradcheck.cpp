#include "dcl/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "dcl/network.hpp"

namespace dcl {

bool GradCheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const GradCheckEntry& e) { return e.pass; });
}

double GradCheckReport::max_error() const {
  double m = 0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

GradCheckReport grad_check(const NetworkSpec& spec, std::uint64_t seed, const GradCheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  Network<double> net(spec, seed);
  const std::size_t N = options.batch;
  Rng data_rng = make_rng(seed, 2);
  for (auto& p : net.mutable_params())
    if (p.is_bias)
      for (auto& v : p.value.vec()) v = uniform(data_rng, -options.bias_scale, options.bias_scale);
  Tensor<double> x(spec.input_shape.with_batch(N));
  for (auto& v : x.vec()) v = uniform01(data_rng);
  std::vector<int> labels(N);
  for (auto& y : labels) y = static_cast<int>(uniform_index(data_rng, spec.num_classes));

  auto loss_at = [&](const Tensor<double>& input) {
    Rng rng = make_rng(seed, 3);
    return net.forward(input, labels, Mode::Train, rng).loss;
  };

  Rng rng = make_rng(seed, 3);
  auto fwd = net.forward(x, labels, Mode::Train, rng);
  const Gradients<double> g = net.backward(fwd.cache);

  GradCheckReport report;
  report.arch = render_arch(spec);
  const double h = options.step;
  const std::size_t count = net.params().size();
  for (std::size_t p = 0; p < count; ++p) {
    GradCheckEntry e;
    e.name = net.params()[p].name;
    e.count = net.params()[p].value.size();
    // Parameters outside the sampled pair have no gradient; their numeric
    // derivative must then be zero as well.
    const bool active = g.active[p];
    for (std::size_t i = 0; i < e.count; ++i) {
      double& w = net.mutable_params()[p].value[i];
      const double saved = w;
      w = saved + h;
      const double up = loss_at(x);
      w = saved - h;
      const double down = loss_at(x);
      w = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = active ? g.params[p][i] : 0.0;
      e.max_rel_error = std::max(e.max_rel_error, relative_error(analytic, numeric));
    }
    e.pass = e.max_rel_error < options.tolerance;
    report.entries.push_back(std::move(e));
  }
  GradCheckEntry in{"input", x.size(), 0, true};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = loss_at(x);
    x[i] = saved - h;
    const double down = loss_at(x);
    x[i] = saved;
    in.max_rel_error = std::max(in.max_rel_error, relative_error(g.input[i], (up - down) / (2 * h)));
  }
  in.pass = in.max_rel_error < options.tolerance;
  report.entries.push_back(std::move(in));
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::vector<std::string> default_gradcheck_suite() {
  return {"lenet-tiny", "dcl-a2-tiny", "dcl-a3d-tiny", "dcl-a3s-tiny", "dcl-b2-tiny"};
}

}  // namespace dcl
