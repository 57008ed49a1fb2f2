#include "dcl/arch.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <sstream>

#include "dcl/kernels.hpp"

namespace dcl {

const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "Conv";
    case LayerKind::MaxPool: return "MaxPool";
    case LayerKind::FullyConnected: return "FullyConnected";
    case LayerKind::ReLU: return "ReLU";
    case LayerKind::Dropout: return "Dropout";
    case LayerKind::DclBlock: return "DclBlock";
    case LayerKind::SoftmaxLoss: return "SoftmaxLoss";
  }
  return "?";
}

std::size_t NetworkSpec::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return i;
  throw UnknownLayer("no layer named '" + std::string(name) + "'");
}

namespace {

class Cursor {
 public:
  Cursor(std::string_view s, std::size_t token) : s_(s), token_(token) {}

  bool done() const { return pos_ == s_.size(); }
  bool peek(char c) const { return pos_ < s_.size() && s_[pos_] == c; }
  bool peek_digit() const { return pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_])); }

  bool eat(std::string_view lit) {
    if (s_.substr(pos_, lit.size()) != lit) return false;
    pos_ += lit.size();
    return true;
  }
  void expect(char c) {
    if (!eat(std::string_view(&c, 1))) fail(std::string("expected '") + c + "'");
  }

  std::size_t number() {
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(s_.data() + pos_, s_.data() + s_.size(), v);
    if (ec != std::errc()) fail("expected a number");
    pos_ = static_cast<std::size_t>(p - s_.data());
    return v;
  }

  double decimal() {
    std::size_t start = pos_;
    while (pos_ < s_.size() && (std::isdigit(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '.')) ++pos_;
    double v = 0;
    auto [p, ec] = std::from_chars(s_.data() + start, s_.data() + pos_, v);
    if (ec != std::errc() || p != s_.data() + pos_) fail("expected a decimal");
    return v;
  }

  [[noreturn]] void fail(const std::string& why) const {
    throw ParseError(token_, "'" + std::string(s_) + "': " + why);
  }

 private:
  std::string_view s_;
  std::size_t token_;
  std::size_t pos_ = 0;
};

// Parses the "(S<s>P<p>)" groups after a conv kernel; repeated groups allowed.
void parse_conv_options(Cursor& c, LayerSpec& l) {
  while (c.eat("(")) {
    bool any = false;
    if (c.eat("S")) {
      l.stride = c.number();
      l.show_stride = any = true;
    }
    if (c.eat("P")) {
      l.pad = c.number();
      l.show_pad = any = true;
    }
    if (!any) c.fail("empty option group");
    c.expect(')');
  }
}

LayerSpec parse_token(std::string_view tok, std::size_t index, bool last, std::size_t num_classes) {
  Cursor c(tok, index);
  LayerSpec l;
  if (c.eat("DCL")) {
    l.kind = LayerKind::DclBlock;
    DclConfig cfg;
    const std::size_t t = c.number();
    if (c.eat("S")) {
      cfg.strategy = DclStrategy::Stochastic;
      l.show_strategy = true;
    } else if (c.eat("D")) {
      l.show_strategy = true;
    }
    if (c.eat("(")) {
      if (!c.eat("K")) c.fail("DCL option group must start with K<kernel>");
      cfg.kernel = c.number();
      if (c.eat("S")) {
        cfg.stride = c.number();
        l.show_stride = true;
      }
      if (c.eat("P")) {
        cfg.pad = c.number();
        l.show_pad = true;
      }
      c.expect(')');
    }
    c.expect('@');
    cfg.branch_filters.push_back(c.number());
    while (c.eat(",")) cfg.branch_filters.push_back(c.number());
    if (cfg.branch_filters.size() == 1)
      cfg.branch_filters.assign(t, cfg.branch_filters.front());
    else if (cfg.branch_filters.size() != t)
      c.fail("expected 1 or " + std::to_string(t) + " branch filter counts");
    if (c.eat("/")) {
      cfg.fused_channels = c.number();
    } else if (last) {
      cfg.fused_channels = num_classes;
      l.show_fused = false;
    } else {
      c.fail("a DCL block that is not the output layer needs /<K2>");
    }
    try {
      cfg.validate();
    } catch (const InvalidConfig& e) {
      c.fail(e.what());
    }
    l.filters = cfg.fused_channels;
    l.dcl = cfg;
  } else if (c.eat("MP")) {
    l.kind = LayerKind::MaxPool;
    l.kernel = c.number();
    l.stride = l.kernel;
    if (c.eat("S")) {
      l.stride = c.number();
      l.show_stride = true;
    } else if (c.eat("(")) {
      if (!c.eat("S")) c.fail("expected S<stride>");
      l.stride = c.number();
      l.show_stride = l.paren_stride = true;
      c.expect(')');
    }
  } else if (c.eat("FC")) {
    l.kind = LayerKind::FullyConnected;
    l.filters = c.number();
    l.relu = !last;
  } else if (c.eat("OUT")) {
    l.kind = LayerKind::FullyConnected;
    l.filters = num_classes;
    l.is_out = true;
  } else if (c.eat("C")) {
    l.kind = LayerKind::Conv;
    l.kernel = c.number();
    parse_conv_options(c, l);
    c.expect('@');
    l.filters = c.number();
    l.relu = !last;
  } else if (c.eat("D")) {
    l.kind = LayerKind::Dropout;
    if (!c.peek_digit()) c.fail("expected a drop ratio");
    l.drop_ratio = c.decimal();
    if (!(l.drop_ratio >= 0.0 && l.drop_ratio < 1.0)) c.fail("drop ratio must lie in [0, 1)");
  } else {
    c.fail("unknown token");
  }
  if (!c.done()) c.fail("trailing characters");
  if ((l.kind == LayerKind::Conv || l.kind == LayerKind::MaxPool) && (l.kernel == 0 || l.stride == 0))
    c.fail("kernel and stride must be >= 1");
  if ((l.kind == LayerKind::Conv || l.kind == LayerKind::FullyConnected) && l.filters == 0)
    c.fail("filter count must be >= 1");
  return l;
}

std::string format_ratio(double r) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, r);
  return std::string(buf, p);
}

}  // namespace

void chain_shapes(NetworkSpec& spec) {
  spec.shapes.clear();
  spec.names.clear();
  spec.warnings.clear();
  if (spec.input_shape.rank() != 3) throw ShapeChainError("input shape must be CHW, got " + spec.input_shape.str());
  Shape cur = spec.input_shape;
  std::size_t param_index = 0, pool = 0, drop = 0, relu = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    LayerSpec& l = spec.layers[i];
    spec.shapes.push_back(cur);
    std::string name;
    const std::size_t C = cur[0], H = cur[1], W = cur[2];
    try {
      switch (l.kind) {
        case LayerKind::Conv: {
          name = "conv" + std::to_string(++param_index);
          auto g = ConvGeometry::make(C, H, W, l.kernel, l.kernel, l.stride, l.pad);
          cur = Shape{l.filters, g.out_h, g.out_w};
          break;
        }
        case LayerKind::FullyConnected:
          name = "fc" + std::to_string(++param_index);
          cur = Shape{l.filters, 1, 1};
          break;
        case LayerKind::DclBlock: {
          name = "dcl" + std::to_string(++param_index);
          const DclConfig& d = *l.dcl;
          d.validate();
          if (d.fully_connected()) {
            cur = Shape{d.fused_channels, 1, 1};
          } else {
            auto g = ConvGeometry::make(C, H, W, d.kernel, d.kernel, d.stride, d.pad);
            cur = Shape{d.fused_channels, g.out_h, g.out_w};
          }
          if (!d.within_budget())
            spec.warnings.push_back(name + ": sum of branch filters " + std::to_string(d.filter_sum()) +
                                    " exceeds K2/2 = " + std::to_string(d.fused_channels / 2.0));
          break;
        }
        case LayerKind::MaxPool: {
          name = "pool" + std::to_string(++pool);
          auto g = PoolGeometry::make(H, W, l.kernel, l.stride);
          cur = Shape{C, g.out_h, g.out_w};
          break;
        }
        case LayerKind::Dropout: name = "drop" + std::to_string(++drop); break;
        case LayerKind::ReLU: name = "relu" + std::to_string(++relu); break;
        case LayerKind::SoftmaxLoss:
          name = "loss";
          if (i + 1 != spec.layers.size()) throw ShapeChainError("softmax loss must be the last layer");
          if (!(cur == Shape{spec.num_classes, 1, 1}))
            throw ShapeChainError("classifier output " + cur.str() + " does not match " +
                                  std::to_string(spec.num_classes) + " classes");
          break;
      }
    } catch (const ShapeChainError& e) {
      throw ShapeChainError("layer " + std::to_string(i + 1) + " (" + render_layer(l) + "): " + e.what());
    } catch (const Error& e) {
      throw ShapeChainError("layer " + std::to_string(i + 1) + " (" + render_layer(l) + "): " + e.what());
    }
    spec.names.push_back(std::move(name));
  }
  spec.shapes.push_back(cur);
  std::size_t losses = 0;
  for (const auto& l : spec.layers) losses += l.kind == LayerKind::SoftmaxLoss;
  if (losses != 1 || spec.layers.back().kind != LayerKind::SoftmaxLoss)
    throw ShapeChainError("network must end in exactly one softmax loss");
}

LayerSpec parse_layer(std::string_view token, bool last, std::size_t num_classes) {
  return parse_token(token, 1, last, num_classes);
}

NetworkSpec parse_arch(std::string_view text, const Shape& input_shape, std::size_t num_classes) {
  if (num_classes == 0) throw ParseError(0, "num_classes must be >= 1");
  std::vector<std::string_view> tokens;
  std::size_t start = 0;
  while (true) {
    std::size_t dash = text.find('-', start);
    tokens.push_back(text.substr(start, dash == std::string_view::npos ? dash : dash - start));
    if (dash == std::string_view::npos) break;
    start = dash + 1;
  }
  NetworkSpec spec;
  spec.input_shape = input_shape;
  spec.num_classes = num_classes;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].empty()) throw ParseError(i + 1, "empty token");
    spec.layers.push_back(parse_token(tokens[i], i + 1, i + 1 == tokens.size(), num_classes));
  }
  LayerSpec loss;
  loss.kind = LayerKind::SoftmaxLoss;
  spec.layers.push_back(loss);
  chain_shapes(spec);
  return spec;
}

std::string render_layer(const LayerSpec& l) {
  std::ostringstream os;
  switch (l.kind) {
    case LayerKind::Conv:
      os << 'C' << l.kernel;
      if (l.show_stride || l.show_pad || l.stride != 1 || l.pad != 0) {
        os << '(';
        if (l.show_stride || l.stride != 1) os << 'S' << l.stride;
        if (l.show_pad || l.pad != 0) os << 'P' << l.pad;
        os << ')';
      }
      os << '@' << l.filters;
      break;
    case LayerKind::MaxPool:
      os << "MP" << l.kernel;
      if (l.paren_stride)
        os << "(S" << l.stride << ')';
      else if (l.show_stride || l.stride != l.kernel)
        os << 'S' << l.stride;
      break;
    case LayerKind::FullyConnected:
      if (l.is_out)
        os << "OUT";
      else
        os << "FC" << l.filters;
      break;
    case LayerKind::Dropout: os << 'D' << format_ratio(l.drop_ratio); break;
    case LayerKind::ReLU: os << "ReLU"; break;
    case LayerKind::SoftmaxLoss: os << "LOSS"; break;
    case LayerKind::DclBlock: {
      const DclConfig& d = *l.dcl;
      os << "DCL" << d.branches();
      if (d.strategy == DclStrategy::Stochastic)
        os << 'S';
      else if (l.show_strategy)
        os << 'D';
      if (!d.fully_connected()) {
        os << "(K" << d.kernel;
        if (l.show_stride || d.stride != 1) os << 'S' << d.stride;
        if (l.show_pad || d.pad != 0) os << 'P' << d.pad;
        os << ')';
      }
      os << '@';
      bool equal = true;
      for (std::size_t m : d.branch_filters) equal = equal && m == d.branch_filters.front();
      if (equal) {
        os << d.branch_filters.front();
      } else {
        for (std::size_t t = 0; t < d.branches(); ++t) os << (t ? "," : "") << d.branch_filters[t];
      }
      if (l.show_fused) os << '/' << d.fused_channels;
      break;
    }
  }
  return os.str();
}

std::string render_arch(const NetworkSpec& spec) {
  std::string out;
  for (const auto& l : spec.layers) {
    if (l.kind == LayerKind::SoftmaxLoss) continue;
    if (!out.empty()) out += '-';
    out += render_layer(l);
  }
  return out;
}

ArchPreset arch_preset(std::string_view name, std::size_t num_classes) {
  const std::string head = "C5@20-MP2S2-C5@50-MP2S2-";
  const std::string tiny = "C5@4-MP2S2-C5@8-MP2S2-";
  const std::string b_branch = std::to_string(std::max<std::size_t>(1, num_classes / 5));
  const Shape mnist{1, 28, 28}, small{1, 16, 16};
  if (name == "lenet") return {head + "FC500-D0.5-OUT", mnist, num_classes};
  if (name == "dcl-a2") return {head + "DCL2@100/500-D0.5-OUT", mnist, num_classes};
  if (name == "dcl-a3d") return {head + "DCL3D@100/500-D0.5-OUT", mnist, num_classes};
  if (name == "dcl-a3s") return {head + "DCL3S@100/500-D0.5-OUT", mnist, num_classes};
  if (name == "dcl-b2") return {head + "FC500-D0.5-DCL2@" + b_branch, mnist, num_classes};
  if (name == "dcl-b3d") return {head + "FC500-D0.5-DCL3D@" + b_branch, mnist, num_classes};
  if (name == "dcl-b3s") return {head + "FC500-D0.5-DCL3S@" + b_branch, mnist, num_classes};
  if (name == "lenet-tiny") return {tiny + "FC16-D0.5-OUT", small, 10};
  if (name == "dcl-a2-tiny") return {tiny + "DCL2@4/16-D0.5-OUT", small, 10};
  if (name == "dcl-a3d-tiny") return {tiny + "DCL3D@4/16-D0.5-OUT", small, 10};
  if (name == "dcl-a3s-tiny") return {tiny + "DCL3S@4/16-D0.5-OUT", small, 10};
  if (name == "dcl-b2-tiny") return {tiny + "FC16-D0.5-DCL2@2", small, 10};
  if (name == "lenet-cifar")
    return {"C5(P2)@32-MP3(S2)-C5(P2)@64-MP3(S2)-C5(P2)@128-MP3(S2)-FC512-D0.5-OUT", Shape{3, 32, 32},
            num_classes};
  if (name == "alexnet")
    return {"C11(S4)@96-MP3(S2)-C5(S1P2)@256-MP3(S2)-C3(S1P1)@384-C3(S1P1)@384-C3(S1P1)@256-MP3(S2)-"
            "FC4096-D0.5-FC4096-D0.5-FC1000",
            Shape{3, 227, 227}, 1000};
  throw UnknownLayer("unknown architecture preset '" + std::string(name) + "'");
}

std::vector<std::string> arch_preset_names() {
  return {"lenet",        "dcl-a2",       "dcl-a3d",      "dcl-a3s",      "dcl-b2",      "dcl-b3d",
          "dcl-b3s",      "lenet-tiny",   "dcl-a2-tiny",  "dcl-a3d-tiny", "dcl-a3s-tiny", "dcl-b2-tiny",
          "lenet-cifar",  "alexnet"};
}

}  // namespace dcl
