#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "attrlab/matrix.hpp"

namespace attrlab {

struct ImageDataset {
  std::vector<Matrix> images;  // pixels in [0,1]
  std::vector<int> labels;     // class index
};

struct SequenceDataset {
  std::vector<std::vector<int>> sequences;  // token ids in [0, vocab_size)
  std::vector<int> labels;                  // class index in [0, num_classes)
  std::vector<int> keyword_pos;             // planted keyword position per example
  int vocab_size = 0;
  int seq_len = 0;
  int num_classes = 0;
};

// IDX container (big-endian headers, u8 payload).
// Magic 0x00000803: 3-D image tensor. Magic 0x00000801: 1-D label vector.
std::vector<Matrix> parse_idx_images(std::span<const std::uint8_t> bytes);
std::vector<int> parse_idx_labels(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_idx_images(const std::vector<Matrix>& images);
std::vector<std::uint8_t> serialize_idx_labels(const std::vector<int>& labels);

// 2x2 mean pooling of a 28x28 image down to 14x14.
Matrix downsample_14(const Matrix& img);

// Deterministic keyword-classification sequences: ids 0..C-1 are class
// keywords, ids C..V-1 are fillers. Each example plants exactly one keyword
// at a random position, so single-token LOO has a known relevant position.
SequenceDataset gen_synthetic(std::uint64_t seed, int n, int vocab_size, int seq_len,
                              int num_classes);

// File helpers -------------------------------------------------------------

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

struct MnistPaths {
  std::string train_images, train_labels, test_images, test_labels;
};
MnistPaths mnist_paths(const std::string& dir);
bool mnist_present(const std::string& dir);

// Parses the four standard IDX files under `dir` and downsamples every image.
std::pair<ImageDataset, ImageDataset> load_mnist_14(const std::string& dir);

// Stand-in for MNIST when the real files are unavailable: rasterized digit
// glyphs with deterministic jitter and noise, written as ordinary IDX files
// under `dir` (standard filenames) so the exact same loader path applies.
void write_glyph_idx(const std::string& dir, int n_train, int n_test,
                     std::uint64_t seed);

// Binary dataset caches (length-prefixed; see docs/formats.md).
void write_image_cache(const std::string& path, const ImageDataset& ds);
ImageDataset read_image_cache(const std::string& path);
void write_sequence_cache(const std::string& path, const SequenceDataset& ds);
SequenceDataset read_sequence_cache(const std::string& path);

}  // namespace attrlab
