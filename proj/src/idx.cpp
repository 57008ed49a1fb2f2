#include "dcl/idx.hpp"

#include <zlib.h>

#include <fstream>
#include <limits>

namespace dcl {

namespace {

std::uint32_t read_be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<std::uint8_t> gunzip(std::span<const std::uint8_t> in, const std::string& what) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw IoError("zlib init failed");
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  std::vector<std::uint8_t> out;
  std::uint8_t buf[1 << 16];
  int rc;
  do {
    zs.next_out = buf;
    zs.avail_out = sizeof buf;
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw TruncatedFile(what + ": corrupt or truncated gzip stream");
    }
    out.insert(out.end(), buf, buf + (sizeof buf - zs.avail_out));
  } while (rc != Z_STREAM_END);
  inflateEnd(&zs);
  return out;
}

std::vector<std::uint8_t> gzip(std::span<const std::uint8_t> in) {
  z_stream zs{};
  if (deflateInit2(&zs, Z_BEST_COMPRESSION, Z_DEFLATED, 16 + MAX_WBITS, 8, Z_DEFAULT_STRATEGY) != Z_OK)
    throw IoError("zlib init failed");
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  std::vector<std::uint8_t> out(deflateBound(&zs, static_cast<uLong>(in.size())));
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  deflate(&zs, Z_FINISH);
  out.resize(zs.total_out);
  deflateEnd(&zs);
  return out;
}

}  // namespace

std::size_t idx_element_size(std::uint8_t type) {
  switch (type) {
    case 0x08:
    case 0x09: return 1;
    case 0x0B: return 2;
    case 0x0C:
    case 0x0D: return 4;
    case 0x0E: return 8;
    default: throw BadMagic("unknown IDX element type 0x" + std::to_string(type));
  }
}

std::size_t IdxArray::count() const {
  std::size_t n = 1;
  for (auto d : dims) {
    if (d != 0 && n > std::numeric_limits<std::size_t>::max() / d) throw Overflow("IDX element count overflows");
    n *= d;
  }
  return n;
}

IdxArray parse_idx(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw TruncatedFile("IDX header needs 4 bytes, got " + std::to_string(bytes.size()));
  if (bytes[0] != 0 || bytes[1] != 0) throw BadMagic("IDX magic must start with two zero bytes");
  IdxArray a;
  a.type = bytes[2];
  const std::size_t esize = idx_element_size(a.type);
  const std::size_t rank = bytes[3];
  if (rank == 0) throw BadMagic("IDX rank must be >= 1");
  if (bytes.size() < 4 + 4 * rank) throw TruncatedFile("IDX dimension header is truncated");
  for (std::size_t i = 0; i < rank; ++i) a.dims.push_back(read_be32(bytes.data() + 4 + 4 * i));
  const std::size_t need = a.count() * esize, have = bytes.size() - 4 - 4 * rank;
  if (have < need)
    throw TruncatedFile("IDX payload has " + std::to_string(have) + " bytes, expected " + std::to_string(need));
  if (have > need) throw DimMismatch("IDX payload has " + std::to_string(have - need) + " trailing bytes");
  a.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(4 + 4 * rank), bytes.end());
  return a;
}

std::vector<std::uint8_t> serialize_idx(const IdxArray& a) {
  if (a.dims.empty() || a.dims.size() > 255) throw DimMismatch("IDX rank must be in [1, 255]");
  if (a.data.size() != a.count() * idx_element_size(a.type)) throw DimMismatch("IDX data length does not match dims");
  std::vector<std::uint8_t> out{0, 0, a.type, static_cast<std::uint8_t>(a.dims.size())};
  for (auto d : a.dims) put_be32(out, d);
  out.insert(out.end(), a.data.begin(), a.data.end());
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

IdxArray read_idx(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) bytes = gunzip(bytes, path.string());
  return parse_idx(bytes);
}

void write_idx(const std::filesystem::path& path, const IdxArray& a) {
  auto bytes = serialize_idx(a);
  if (ends_with(path.string(), ".gz")) bytes = gzip(bytes);
  write_file_bytes(path, bytes);
}

IdxArray make_image_idx(std::span<const std::uint8_t> pixels, std::size_t n, std::size_t h, std::size_t w) {
  if (pixels.size() != n * h * w) throw DimMismatch("image buffer does not match n x h x w");
  IdxArray a;
  a.type = kIdxUbyte;
  a.dims = {static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(w)};
  a.data.assign(pixels.begin(), pixels.end());
  return a;
}

IdxArray make_label_idx(std::span<const int> labels) {
  bool small = true;
  for (int v : labels) {
    if (v < 0) throw DimMismatch("labels must be non-negative");
    small = small && v <= 255;
  }
  IdxArray a;
  a.type = small ? kIdxUbyte : kIdxInt32;
  a.dims = {static_cast<std::uint32_t>(labels.size())};
  for (int v : labels) {
    if (small) {
      a.data.push_back(static_cast<std::uint8_t>(v));
    } else {
      put_be32(a.data, static_cast<std::uint32_t>(v));
    }
  }
  return a;
}

Tensor<float> idx_images(const IdxArray& a) {
  if (a.type != kIdxUbyte || a.dims.size() != 3)
    throw BadMagic("expected ubyte rank-3 image IDX (magic 0x00000803)");
  Tensor<float> t(Shape{a.dims[0], a.dims[1], a.dims[2]});
  for (std::size_t i = 0; i < a.data.size(); ++i) t[i] = static_cast<float>(a.data[i]) / 255.0f;
  return t;
}

std::vector<int> idx_labels(const IdxArray& a) {
  if (a.dims.size() != 1 || (a.type != kIdxUbyte && a.type != kIdxInt32))
    throw BadMagic("expected rank-1 ubyte or int32 label IDX (magic 0x00000801 / 0x00000C01)");
  std::vector<int> out(a.dims[0]);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.type == kIdxUbyte ? a.data[i] : static_cast<int>(read_be32(a.data.data() + 4 * i));
  return out;
}

DigitSource load_mnist_split(const std::filesystem::path& dir, bool train) {
  const std::string prefix = train ? "train" : "t10k";
  auto find = [&](const std::string& kind) {
    for (const char* sep : {"-", "."})
      for (const char* ext : {"", ".gz"}) {
        auto p = dir / (prefix + "-" + kind + sep + (kind == "images" ? "idx3-ubyte" : "idx1-ubyte") + ext);
        if (std::filesystem::exists(p)) return p;
      }
    throw IoError("no " + prefix + " " + kind + " IDX file in " + dir.string());
  };
  const IdxArray images = read_idx(find("images"));
  const IdxArray labels = read_idx(find("labels"));
  if (images.type != kIdxUbyte || images.dims.size() != 3) throw BadMagic("MNIST images must have magic 0x00000803");
  if (labels.type != kIdxUbyte || labels.dims.size() != 1) throw BadMagic("MNIST labels must have magic 0x00000801");
  if (images.dims[0] != labels.dims[0])
    throw DimMismatch(std::to_string(images.dims[0]) + " images but " + std::to_string(labels.dims[0]) + " labels");
  DigitSource s;
  s.pixels = images.data;
  s.labels = idx_labels(labels);
  s.rows = images.dims[1];
  s.cols = images.dims[2];
  return s;
}

}  // namespace dcl
