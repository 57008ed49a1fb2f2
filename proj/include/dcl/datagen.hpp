#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "dcl/idx.hpp"
#include "dcl/rng.hpp"

namespace dcl {

// Placement of one digit. Centers and jitter are fractions of the canvas;
// the digit's ink box is centred on center + jitter before scaling/rotation.
struct DigitSlot {
  std::array<double, 2> center{0.5, 0.5};
  std::array<double, 2> scale{1.0, 1.0};
  std::array<double, 2> rotation_deg{0.0, 0.0};
  double flip_prob = 0.0;
  double jitter = 0.0;

  void validate() const;
};

struct DatasetConfig {
  std::string id = "custom";
  std::vector<DigitSlot> slots;
  std::size_t canvas = 112;
  double noise_std = 0.0;  // in pixel-intensity units on [0, 1]
  std::uint64_t seed = 0;
  std::size_t train_count = 60000, test_count = 10000;

  std::size_t digits() const noexcept { return slots.size(); }
  std::size_t num_classes() const;
  void validate() const;
};

// Noise is confined to the ink box dilated by this many canvas pixels, so it
// can grow the crop by at most this margin.
inline constexpr std::size_t kNoiseMargin = 2;
inline constexpr std::size_t kOutputSide = 28;

nlohmann::json to_json(const DatasetConfig& c);
// Strict: unknown keys raise SchemaError.
DatasetConfig dataset_config_from_json(const nlohmann::json& j);

// II-01..II-05 (two digits) and III-01..III-10 (three digits). Difficulty
// knobs grow monotonically with the id inside each family. UnknownPreset
// otherwise.
DatasetConfig dataset_preset(const std::string& id);
std::vector<std::string> dataset_preset_names();

struct LabeledImage {
  std::vector<float> pixels;  // 28 x 28 in [0, 1]
  int number_label = 0;
  std::vector<int> digit_labels;
  std::vector<std::size_t> sources;  // source-split index of each digit
  std::size_t attempts = 1;          // > 1 when an empty composite was redrawn
};

// Places the given digits (one per slot) on the canvas, composites by
// per-pixel max, adds noise, crops to the ink box and rescales to 28 x 28.
// Returns an empty vector when no pixel exceeds 0.1 (EmptyInk).
std::vector<float> compose(const DatasetConfig& cfg, const std::vector<std::span<const std::uint8_t>>& digits,
                           std::size_t rows, std::size_t cols, Rng& rng);

// Sample `index` of a split: every draw comes from substream (seed, split,
// index), redrawn on a fresh substream after an empty composite.
LabeledImage synthesize_one(const DatasetConfig& cfg, const DigitSource& source, int split, std::size_t index);

struct SynthesisResult {
  std::vector<std::uint8_t> pixels;  // count x 28 x 28
  std::vector<int> number_labels;
  std::vector<std::vector<int>> digit_labels;  // [digit position][sample]
  std::vector<std::vector<int>> sources;       // [digit position][sample]
  std::size_t regenerated = 0;

  std::size_t size() const noexcept { return number_labels.size(); }
};

// split: 0 = train, 1 = test.
SynthesisResult synthesize(const DatasetConfig& cfg, const DigitSource& source, int split, std::size_t count);

// On-disk layout under <dir>/<train|test>/:
//   <id>-images.idx  <id>-labels.idx  <id>-digit<k>-labels.idx (k = 1..D)
//   <id>-sources.idx (int32 D x N source-digit indices, for provenance)
// plus <dir>/config.json.
void write_split(const std::filesystem::path& dir, const std::string& id, const SynthesisResult& r);

struct Dataset {
  std::string id;
  Tensor<float> images;  // N x 1 x 28 x 28
  std::vector<int> labels;
  std::vector<std::vector<int>> digit_labels;  // may be empty
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  // Copy restricted to the first n samples.
  Dataset head(std::size_t n) const;
  // Same images, labels replaced by digit position k (10 classes).
  Dataset digit_view(std::size_t k) const;
};

// Reads <dir>/<split>/<id>-*.idx; with an empty id the single image file
// present is used.
Dataset load_dataset(const std::filesystem::path& dir, const std::string& split, const std::string& id = "");

}  // namespace dcl
