#include "dcl/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <set>

#include "dcl/idx.hpp"

namespace dcl {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

template <typename U>
void put(std::vector<std::uint8_t>& out, U v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(U));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  template <typename U>
  U get(const char* what) {
    U v;
    std::memcpy(&v, take(sizeof(U), what), sizeof(U));
    return v;
  }
  const std::uint8_t* take(std::size_t n, const char* what) {
    if (b_.size() - pos_ < n) throw TruncatedFile(std::string("checkpoint truncated in ") + what);
    const std::uint8_t* p = b_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace

nlohmann::json Checkpoint::meta() const {
  try {
    return nlohmann::json::parse(metadata);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c) {
  std::vector<std::uint8_t> out{'D', 'C', 'L', 'C'};
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.tensors.size()));
  std::set<std::string> names;
  for (const auto& [name, t] : c.tensors) {
    if (!names.insert(name).second) throw SchemaError("duplicate tensor name '" + name + "'");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape().dims()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.data());
    out.insert(out.end(), p, p + t.size() * sizeof(float));
  }
  put<std::uint64_t>(out, c.metadata.size());
  out.insert(out.end(), c.metadata.begin(), c.metadata.end());
  return out;
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (bytes.size() < 4) throw TruncatedFile("checkpoint shorter than its magic");
  if (std::memcmp(r.take(4, "magic"), "DCLC", 4) != 0) throw BadMagic("not a checkpoint (magic is not DCLC)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) throw BadMagic("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>("tensor count");
  Checkpoint c;
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint32_t>("name length");
    std::string name(reinterpret_cast<const char*>(r.take(len, "name")), len);
    if (!names.insert(name).second) throw SchemaError("duplicate tensor name '" + name + "'");
    const auto rank = r.get<std::uint32_t>("rank");
    std::vector<std::size_t> dims;
    for (std::uint32_t d = 0; d < rank; ++d) dims.push_back(r.get<std::uint32_t>("dims"));
    if (dims.empty()) throw SchemaError("tensor '" + name + "' has rank 0");
    Shape shape(dims);
    std::vector<float> data(shape.numel());
    std::memcpy(data.data(), r.take(data.size() * sizeof(float), "tensor data"), data.size() * sizeof(float));
    c.tensors.emplace_back(std::move(name), Tensor<float>(std::move(shape), std::move(data)));
  }
  const auto mlen = r.get<std::uint64_t>("metadata length");
  if (mlen > bytes.size()) throw TruncatedFile("checkpoint truncated in metadata");
  c.metadata.assign(reinterpret_cast<const char*>(r.take(mlen, "metadata")), mlen);
  if (!r.done()) throw SchemaError("trailing bytes after checkpoint metadata");
  return c;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  write_file_bytes(path, serialize_checkpoint(c));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file_bytes(path)); }

nlohmann::json network_metadata(const Network<float>& net) {
  const auto& s = net.spec();
  return {{"arch", render_arch(s)},
          {"input_shape", s.input_shape.dims()},
          {"num_classes", s.num_classes},
          {"seed", net.seed()},
          {"init", "glorot_uniform, zero bias"},
          {"input_shift", s.input_shift},
          {"input_scale", s.input_scale}};
}

void append_network(Checkpoint& c, const Network<float>& net, const std::string& prefix) {
  for (const auto& p : net.params()) c.tensors.emplace_back(prefix + p.name, p.value);
}

Checkpoint make_checkpoint(const Network<float>& net, nlohmann::json metadata) {
  Checkpoint c;
  append_network(c, net, "");
  if (metadata.is_null()) metadata = network_metadata(net);
  c.metadata = metadata.dump();
  return c;
}

Network<float> network_from_checkpoint(const Checkpoint& c, const std::string& prefix, const nlohmann::json& arch_meta) {
  const nlohmann::json m = arch_meta.is_null() ? c.meta() : arch_meta;
  NetworkSpec spec;
  std::uint64_t seed = 0;
  try {
    spec = parse_arch(m.at("arch").get<std::string>(), Shape(m.at("input_shape").get<std::vector<std::size_t>>()),
                      m.at("num_classes").get<std::size_t>());
    if (m.contains("seed")) seed = m["seed"].get<std::uint64_t>();
    if (m.contains("input_shift")) spec.input_shift = m["input_shift"].get<double>();
    if (m.contains("input_scale")) spec.input_scale = m["input_scale"].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("checkpoint metadata lacks the architecture: ") + e.what());
  }
  Network<float> net(std::move(spec), seed);
  auto& params = net.mutable_params();
  for (auto& p : params) {
    const std::string key = prefix + p.name;
    auto it = std::find_if(c.tensors.begin(), c.tensors.end(), [&](const auto& e) { return e.first == key; });
    if (it == c.tensors.end()) throw SchemaError("checkpoint has no tensor '" + key + "'");
    if (!(it->second.shape() == p.value.shape()))
      throw ShapeMismatch("tensor '" + key + "' has shape " + it->second.shape().str() + ", network expects " +
                          p.value.shape().str());
    p.value = it->second;
  }
  return net;
}

}  // namespace dcl
