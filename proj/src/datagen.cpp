#include "dcl/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

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

std::array<double, 2> pair_from(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw SchemaError(where + ": expected a [number, number] pair");
  return {j[0].get<double>(), j[1].get<double>()};
}

double number_from(const json& j, const std::string& where) {
  if (!j.is_number()) throw SchemaError(where + ": expected a number");
  return j.get<double>();
}

std::uint64_t unsigned_from(const json& j, const std::string& where) {
  if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<std::int64_t>() >= 0))
    throw SchemaError(where + ": expected a non-negative integer");
  return j.get<std::uint64_t>();
}

float bilinear(const float* img, std::size_t h, std::size_t w, double y, double x) {
  const double fy = std::floor(y), fx = std::floor(x);
  const long y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
  const double ay = y - fy, ax = x - fx;
  auto at = [&](long r, long c) -> double {
    if (r < 0 || c < 0 || r >= static_cast<long>(h) || c >= static_cast<long>(w)) return 0.0;
    return img[r * static_cast<long>(w) + c];
  };
  return static_cast<float>((1 - ay) * ((1 - ax) * at(y0, x0) + ax * at(y0, x0 + 1)) +
                            ay * ((1 - ax) * at(y0 + 1, x0) + ax * at(y0 + 1, x0 + 1)));
}

struct Box {
  long r0 = 0, r1 = -1, c0 = 0, c1 = -1;  // inclusive
  bool empty() const { return r1 < r0; }
};

template <typename V>
Box ink_box(const V* img, std::size_t h, std::size_t w) {
  Box b{static_cast<long>(h), -1, static_cast<long>(w), -1};
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      if (img[r * w + c] > 0) {
        b.r0 = std::min(b.r0, static_cast<long>(r));
        b.r1 = std::max(b.r1, static_cast<long>(r));
        b.c0 = std::min(b.c0, static_cast<long>(c));
        b.c1 = std::max(b.c1, static_cast<long>(c));
      }
  return b;
}

}  // namespace

void DigitSlot::validate() const {
  if (scale[0] > scale[1] || scale[0] <= 0) throw SchemaError("slot scale must satisfy 0 < min <= max");
  if (rotation_deg[0] > rotation_deg[1]) throw SchemaError("slot rotation_deg must satisfy min <= max");
  if (flip_prob < 0 || flip_prob > 1) throw SchemaError("slot flip_prob must be in [0, 1]");
  if (jitter < 0 || jitter > 1) throw SchemaError("slot jitter must be in [0, 1]");
  for (double c : center)
    if (c < 0 || c > 1) throw SchemaError("slot center must be in [0, 1]");
}

std::size_t DatasetConfig::num_classes() const {
  std::size_t n = 1;
  for (std::size_t i = 0; i < digits(); ++i) n *= 10;
  return n;
}

void DatasetConfig::validate() const {
  if (slots.size() < 2 || slots.size() > 3) throw SchemaError("dataset needs 2 or 3 digit slots");
  for (const auto& s : slots) s.validate();
  if (canvas < 28) throw SchemaError("canvas must be at least 28 pixels");
  if (noise_std < 0) throw SchemaError("noise_std must be >= 0");
}

json to_json(const DatasetConfig& c) {
  json slots = json::array();
  for (const auto& s : c.slots)
    slots.push_back({{"center", s.center},
                     {"scale", s.scale},
                     {"rotation_deg", s.rotation_deg},
                     {"flip_prob", s.flip_prob},
                     {"jitter", s.jitter}});
  return {{"id", c.id},         {"slots", slots}, {"canvas", c.canvas},
          {"noise_std", c.noise_std}, {"seed", c.seed}, {"counts", {c.train_count, c.test_count}}};
}

DatasetConfig dataset_config_from_json(const json& j) {
  check_keys(j, {"id", "slots", "canvas", "noise_std", "seed", "counts"}, "dataset");
  DatasetConfig c;
  if (j.contains("id")) {
    if (!j["id"].is_string()) throw SchemaError("dataset.id: expected a string");
    c.id = j["id"].get<std::string>();
  }
  if (!j.contains("slots") || !j["slots"].is_array()) throw SchemaError("dataset.slots: required array");
  for (std::size_t i = 0; i < j["slots"].size(); ++i) {
    const json& s = j["slots"][i];
    const std::string where = "dataset.slots[" + std::to_string(i) + "]";
    check_keys(s, {"center", "scale", "rotation_deg", "flip_prob", "jitter"}, where);
    DigitSlot slot;
    if (s.contains("center")) slot.center = pair_from(s["center"], where + ".center");
    if (s.contains("scale")) slot.scale = pair_from(s["scale"], where + ".scale");
    if (s.contains("rotation_deg")) slot.rotation_deg = pair_from(s["rotation_deg"], where + ".rotation_deg");
    if (s.contains("flip_prob")) slot.flip_prob = number_from(s["flip_prob"], where + ".flip_prob");
    if (s.contains("jitter")) slot.jitter = number_from(s["jitter"], where + ".jitter");
    c.slots.push_back(slot);
  }
  if (j.contains("canvas")) c.canvas = unsigned_from(j["canvas"], "dataset.canvas");
  if (j.contains("noise_std")) c.noise_std = number_from(j["noise_std"], "dataset.noise_std");
  if (j.contains("seed")) c.seed = unsigned_from(j["seed"], "dataset.seed");
  if (j.contains("counts")) {
    const json& n = j["counts"];
    if (!n.is_array() || n.size() != 2) throw SchemaError("dataset.counts: expected [train, test]");
    c.train_count = unsigned_from(n[0], "dataset.counts[0]");
    c.test_count = unsigned_from(n[1], "dataset.counts[1]");
  }
  c.validate();
  return c;
}

DatasetConfig dataset_preset(const std::string& id) {
  std::size_t digits = 0, level = 0, levels = 0;
  auto parse_level = [&](const std::string& rest) {
    if (rest.size() != 2 || !std::isdigit(static_cast<unsigned char>(rest[0])) ||
        !std::isdigit(static_cast<unsigned char>(rest[1])))
      return false;
    level = static_cast<std::size_t>(std::stoi(rest));
    return level >= 1 && level <= levels;
  };
  bool ok = false;
  if (id.rfind("II-", 0) == 0) {
    digits = 2;
    levels = 5;
    ok = parse_level(id.substr(3));
  } else if (id.rfind("III-", 0) == 0) {
    digits = 3;
    levels = 10;
    ok = parse_level(id.substr(4));
  }
  if (!ok) throw UnknownPreset("unknown dataset preset '" + id + "' (expected II-01..II-05 or III-01..III-10)");

  // Difficulty in [0, 1]; level 1 is the identity layout.
  const double d = static_cast<double>(level - 1) / static_cast<double>(levels - 1);
  DatasetConfig c;
  c.id = id;
  c.canvas = 112;
  c.seed = 20170707;
  c.noise_std = 0.2 * d;
  const double spacing = (28.0 - 12.0 * d) / static_cast<double>(c.canvas);
  for (std::size_t i = 0; i < digits; ++i) {
    DigitSlot s;
    const double offset = static_cast<double>(i) - static_cast<double>(digits - 1) / 2.0;
    s.center = {0.5 + offset * spacing, 0.5 + (i % 2 ? 0.05 : -0.05) * d};
    s.scale = {1.0 - 0.25 * d, 1.0 + 0.1 * d};
    s.rotation_deg = {-15.0 * d, 15.0 * d};
    s.flip_prob = 0.5 * d;
    s.jitter = 0.03 * d;
    c.slots.push_back(s);
  }
  return c;
}

std::vector<std::string> dataset_preset_names() {
  std::vector<std::string> names;
  for (int i = 1; i <= 5; ++i) names.push_back("II-0" + std::to_string(i));
  for (int i = 1; i <= 10; ++i) names.push_back(std::string("III-") + (i < 10 ? "0" : "") + std::to_string(i));
  return names;
}

std::vector<float> compose(const DatasetConfig& cfg, const std::vector<std::span<const std::uint8_t>>& digits,
                           std::size_t rows, std::size_t cols, Rng& rng) {
  if (digits.size() != cfg.slots.size()) throw DimMismatch("one source digit per slot is required");
  const std::size_t S = cfg.canvas;
  std::vector<float> canvas(S * S, 0.0f);
  std::vector<float> src(rows * cols);
  for (std::size_t i = 0; i < digits.size(); ++i) {
    const DigitSlot& slot = cfg.slots[i];
    // Draw every knob unconditionally so the stream layout never depends on values.
    const double s = uniform(rng, slot.scale[0], slot.scale[1]);
    const double theta = uniform(rng, slot.rotation_deg[0], slot.rotation_deg[1]) * std::numbers::pi / 180.0;
    const bool flip = uniform01(rng) < slot.flip_prob;
    const double jx = uniform(rng, -slot.jitter, slot.jitter), jy = uniform(rng, -slot.jitter, slot.jitter);

    for (std::size_t p = 0; p < src.size(); ++p) src[p] = static_cast<float>(digits[i][p]) / 255.0f;
    const Box box = ink_box(digits[i].data(), rows, cols);
    if (box.empty()) continue;
    const double sy = 0.5 * static_cast<double>(box.r0 + box.r1), sx = 0.5 * static_cast<double>(box.c0 + box.c1);
    const double ty = (slot.center[1] + jy) * static_cast<double>(S) - 0.5;
    const double tx = (slot.center[0] + jx) * static_cast<double>(S) - 0.5;
    const double radius = s * 0.5 * std::hypot(static_cast<double>(rows), static_cast<double>(cols)) + 2.0;
    const long y_lo = std::max(0L, static_cast<long>(std::floor(ty - radius)));
    const long y_hi = std::min(static_cast<long>(S) - 1, static_cast<long>(std::ceil(ty + radius)));
    const long x_lo = std::max(0L, static_cast<long>(std::floor(tx - radius)));
    const long x_hi = std::min(static_cast<long>(S) - 1, static_cast<long>(std::ceil(tx + radius)));
    const double c = std::cos(theta), sn = std::sin(theta);
    for (long y = y_lo; y <= y_hi; ++y)
      for (long x = x_lo; x <= x_hi; ++x) {
        const double dx = static_cast<double>(x) - tx, dy = static_cast<double>(y) - ty;
        double u = (c * dx + sn * dy) / s;
        const double v = (-sn * dx + c * dy) / s;
        if (flip) u = -u;
        const float val = bilinear(src.data(), rows, cols, sy + v, sx + u);
        float& dst = canvas[static_cast<std::size_t>(y) * S + static_cast<std::size_t>(x)];
        dst = std::max(dst, val);
      }
  }

  Box box = ink_box(canvas.data(), S, S);
  if (box.empty()) return {};
  if (cfg.noise_std > 0) {
    const long m = static_cast<long>(kNoiseMargin), last = static_cast<long>(S) - 1;
    const Box nb{std::max(0L, box.r0 - m), std::min(last, box.r1 + m), std::max(0L, box.c0 - m),
                 std::min(last, box.c1 + m)};
    for (long y = nb.r0; y <= nb.r1; ++y)
      for (long x = nb.c0; x <= nb.c1; ++x) {
        float& p = canvas[static_cast<std::size_t>(y) * S + static_cast<std::size_t>(x)];
        p = static_cast<float>(std::clamp(static_cast<double>(p) + cfg.noise_std * normal01(rng), 0.0, 1.0));
      }
    box = ink_box(canvas.data(), S, S);
    if (box.empty()) return {};
  }

  const std::size_t bh = static_cast<std::size_t>(box.r1 - box.r0 + 1), bw = static_cast<std::size_t>(box.c1 - box.c0 + 1);
  std::vector<float> crop(bh * bw);
  for (std::size_t r = 0; r < bh; ++r)
    for (std::size_t q = 0; q < bw; ++q)
      crop[r * bw + q] = canvas[(static_cast<std::size_t>(box.r0) + r) * S + static_cast<std::size_t>(box.c0) + q];
  std::vector<float> out(kOutputSide * kOutputSide);
  const double kh = static_cast<double>(bh) / kOutputSide, kw = static_cast<double>(bw) / kOutputSide;
  float peak = 0;
  for (std::size_t r = 0; r < kOutputSide; ++r)
    for (std::size_t q = 0; q < kOutputSide; ++q) {
      const double y = std::clamp((static_cast<double>(r) + 0.5) * kh - 0.5, 0.0, static_cast<double>(bh - 1));
      const double x = std::clamp((static_cast<double>(q) + 0.5) * kw - 0.5, 0.0, static_cast<double>(bw - 1));
      const float v = std::clamp(bilinear(crop.data(), bh, bw, y, x), 0.0f, 1.0f);
      out[r * kOutputSide + q] = v;
      peak = std::max(peak, v);
    }
  if (peak <= 0.1f) return {};
  return out;
}

namespace {

// Source indices grouped by digit; every digit must be present.
std::vector<std::vector<std::size_t>> group_by_digit(const DigitSource& source) {
  if (source.size() == 0) throw IoError("digit source is empty");
  std::vector<std::vector<std::size_t>> g(10);
  for (std::size_t i = 0; i < source.size(); ++i) {
    const int d = source.labels[i];
    if (d < 0 || d > 9) throw SchemaError("digit source label " + std::to_string(d) + " outside 0..9");
    g[static_cast<std::size_t>(d)].push_back(i);
  }
  for (std::size_t d = 0; d < 10; ++d)
    if (g[d].empty()) throw IoError("digit source has no images of digit " + std::to_string(d));
  return g;
}

// Digits are drawn uniformly, then one source image of that digit.
LabeledImage synthesize_grouped(const DatasetConfig& cfg, const DigitSource& source,
                                const std::vector<std::vector<std::size_t>>& groups, int split, std::size_t index) {
  const std::size_t D = cfg.digits();
  for (std::size_t attempt = 0; attempt < 64; ++attempt) {
    Rng rng = make_rng(cfg.seed, (attempt << 1) | static_cast<std::uint64_t>(split & 1), index);
    LabeledImage li;
    std::vector<std::span<const std::uint8_t>> digits;
    for (std::size_t k = 0; k < D; ++k) {
      const int digit = static_cast<int>(uniform_index(rng, 10));
      const auto& pool = groups[static_cast<std::size_t>(digit)];
      const std::size_t src = pool[uniform_index(rng, pool.size())];
      li.sources.push_back(src);
      li.digit_labels.push_back(digit);
      li.number_label = li.number_label * 10 + digit;
      digits.push_back(source.image(src));
    }
    li.pixels = compose(cfg, digits, source.rows, source.cols, rng);
    li.attempts = attempt + 1;
    if (!li.pixels.empty()) return li;
  }
  throw Error("sample " + std::to_string(index) + ": 64 consecutive empty composites");
}

}  // namespace

LabeledImage synthesize_one(const DatasetConfig& cfg, const DigitSource& source, int split, std::size_t index) {
  return synthesize_grouped(cfg, source, group_by_digit(source), split, index);
}

SynthesisResult synthesize(const DatasetConfig& cfg, const DigitSource& source, int split, std::size_t count) {
  cfg.validate();
  const std::size_t D = cfg.digits(), P = kOutputSide * kOutputSide;
  SynthesisResult r;
  r.pixels.resize(count * P);
  r.number_labels.resize(count);
  r.digit_labels.assign(D, std::vector<int>(count));
  r.sources.assign(D, std::vector<int>(count));
  std::vector<std::uint8_t> redrawn(count, 0);
  const auto groups = group_by_digit(source);
  parallel_for(count, [&](std::size_t i) {
    const LabeledImage li = synthesize_grouped(cfg, source, groups, split, i);
    for (std::size_t p = 0; p < P; ++p)
      r.pixels[i * P + p] = static_cast<std::uint8_t>(std::lround(li.pixels[p] * 255.0f));
    r.number_labels[i] = li.number_label;
    for (std::size_t k = 0; k < D; ++k) {
      r.digit_labels[k][i] = li.digit_labels[k];
      r.sources[k][i] = static_cast<int>(li.sources[k]);
    }
    redrawn[i] = li.attempts > 1;
  });
  for (auto b : redrawn) r.regenerated += b;
  return r;
}

void write_split(const std::filesystem::path& dir, const std::string& id, const SynthesisResult& r) {
  std::filesystem::create_directories(dir);
  write_idx(dir / (id + "-images.idx"), make_image_idx(r.pixels, r.size(), kOutputSide, kOutputSide));
  write_idx(dir / (id + "-labels.idx"), make_label_idx(r.number_labels));
  for (std::size_t k = 0; k < r.digit_labels.size(); ++k)
    write_idx(dir / (id + "-digit" + std::to_string(k + 1) + "-labels.idx"), make_label_idx(r.digit_labels[k]));
  IdxArray src;
  src.type = kIdxInt32;
  src.dims = {static_cast<std::uint32_t>(r.sources.size()), static_cast<std::uint32_t>(r.size())};
  for (const auto& row : r.sources)
    for (int v : row)
      for (int shift : {24, 16, 8, 0}) src.data.push_back(static_cast<std::uint8_t>(static_cast<std::uint32_t>(v) >> shift));
  write_idx(dir / (id + "-sources.idx"), src);
}

Dataset Dataset::head(std::size_t n) const {
  n = std::min(n, size());
  Dataset d;
  d.id = id;
  d.num_classes = num_classes;
  const std::size_t P = images.size() / std::max<std::size_t>(1, size());
  std::vector<float> px(images.vec().begin(), images.vec().begin() + static_cast<std::ptrdiff_t>(n * P));
  d.images = Tensor<float>(Shape{n, images.dim(1), images.dim(2), images.dim(3)}, std::move(px));
  d.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n));
  for (const auto& dl : digit_labels) d.digit_labels.emplace_back(dl.begin(), dl.begin() + static_cast<std::ptrdiff_t>(n));
  return d;
}

Dataset Dataset::digit_view(std::size_t k) const {
  if (k >= digit_labels.size())
    throw MissingDigitLabels("dataset '" + id + "' has no labels for digit " + std::to_string(k + 1));
  Dataset d;
  d.id = id + "-digit" + std::to_string(k + 1);
  d.images = images;
  d.labels = digit_labels[k];
  d.num_classes = 10;
  return d;
}

Dataset load_dataset(const std::filesystem::path& dir, const std::string& split, const std::string& id) {
  const auto sub = dir / split;
  if (!std::filesystem::is_directory(sub)) throw IoError("missing data directory " + sub.string());
  std::string name = id;
  if (name.empty()) {
    std::vector<std::string> found;
    for (const auto& e : std::filesystem::directory_iterator(sub)) {
      const std::string f = e.path().filename().string();
      const std::string suffix = "-images.idx";
      if (f.size() > suffix.size() && f.compare(f.size() - suffix.size(), suffix.size(), suffix) == 0)
        found.push_back(f.substr(0, f.size() - suffix.size()));
    }
    if (found.size() != 1)
      throw IoError(sub.string() + ": expected exactly one *-images.idx, found " + std::to_string(found.size()));
    name = found.front();
  }
  Dataset d;
  d.id = name;
  const IdxArray img = read_idx(sub / (name + "-images.idx"));
  Tensor<float> px = idx_images(img);
  const std::size_t n = px.dim(0), h = px.dim(1), w = px.dim(2);
  d.images = std::move(px).reshaped(Shape{n, 1, h, w});
  d.labels = idx_labels(read_idx(sub / (name + "-labels.idx")));
  if (d.labels.size() != n)
    throw DimMismatch(std::to_string(n) + " images but " + std::to_string(d.labels.size()) + " labels");
  for (std::size_t k = 1;; ++k) {
    const auto p = sub / (name + "-digit" + std::to_string(k) + "-labels.idx");
    if (!std::filesystem::exists(p)) break;
    auto labels = idx_labels(read_idx(p));
    if (labels.size() != n) throw DimMismatch("digit label file " + p.string() + " has the wrong length");
    d.digit_labels.push_back(std::move(labels));
  }
  if (!d.digit_labels.empty()) {
    d.num_classes = 1;
    for (std::size_t k = 0; k < d.digit_labels.size(); ++k) d.num_classes *= 10;
  } else {
    d.num_classes = static_cast<std::size_t>(*std::max_element(d.labels.begin(), d.labels.end())) + 1;
  }
  return d;
}

}  // namespace dcl
