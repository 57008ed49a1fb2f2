#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dcl/network.hpp"

namespace dcl {

// Layout (little-endian):
//   "DCLC" | u32 version (= 1) | u32 tensor_count
//   per tensor: u32 name_len | name | u32 rank | u32 dims[rank] | f32 data
//   u64 metadata_len | metadata JSON bytes
// Metadata is kept verbatim so parse/serialize round-trips byte for byte.
struct Checkpoint {
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
  std::string metadata = "{}";

  nlohmann::json meta() const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c);
// BadMagic (magic/version), TruncatedFile, SchemaError (duplicate names).
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Metadata written for a network: arch, input_shape, num_classes, seed, init.
nlohmann::json network_metadata(const Network<float>& net);

// Parameters of `net`, names optionally prefixed (e.g. "digit1/").
Checkpoint make_checkpoint(const Network<float>& net, nlohmann::json metadata = nullptr);
void append_network(Checkpoint& c, const Network<float>& net, const std::string& prefix);

// Rebuilds a network from metadata (arch, input_shape, num_classes) and
// loads the tensors stored under `prefix`.
Network<float> network_from_checkpoint(const Checkpoint& c, const std::string& prefix = "",
                                       const nlohmann::json& arch_meta = nullptr);

}  // namespace dcl
