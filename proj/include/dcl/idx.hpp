#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dcl/tensor.hpp"

namespace dcl {

// One IDX array: magic 0x0000TTRR (type TT, rank RR), big-endian u32 dims,
// then big-endian elements. `data` keeps the element bytes exactly as stored.
struct IdxArray {
  std::uint8_t type = 0x08;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;

  std::size_t count() const;
};

enum : std::uint8_t { kIdxUbyte = 0x08, kIdxInt32 = 0x0C };

std::size_t idx_element_size(std::uint8_t type);

// Throws BadMagic, TruncatedFile (short input) or DimMismatch (trailing bytes).
IdxArray parse_idx(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_idx(const IdxArray& a);

// Whole-file helpers; gzip input is detected by its header. Writing a path
// ending in .gz compresses. Missing files raise IoError.
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
IdxArray read_idx(const std::filesystem::path& path);
void write_idx(const std::filesystem::path& path, const IdxArray& a);

// Rank-3 ubyte images (N x H x W) and rank-1 labels (ubyte, or int32 when a
// label exceeds 255).
IdxArray make_image_idx(std::span<const std::uint8_t> pixels, std::size_t n, std::size_t h, std::size_t w);
IdxArray make_label_idx(std::span<const int> labels);
// Pixels scaled to [0, 1] as N x H x W.
Tensor<float> idx_images(const IdxArray& a);
std::vector<int> idx_labels(const IdxArray& a);

// Images and labels of one MNIST-style split, with counts checked against
// each other (DimMismatch).
struct DigitSource {
  std::vector<std::uint8_t> pixels;  // n x rows x cols
  std::vector<int> labels;
  std::size_t rows = 0, cols = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::span<const std::uint8_t> image(std::size_t i) const { return {pixels.data() + i * rows * cols, rows * cols}; }
};

// Looks for train-images-idx3-ubyte / t10k-images-idx3-ubyte (optionally with
// .gz, or a '.' in place of the last '-') in dir.
DigitSource load_mnist_split(const std::filesystem::path& dir, bool train);

}  // namespace dcl
