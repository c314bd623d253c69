#include "attrlab/dataio.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>

namespace attrlab {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;  // 2051: 3-D u8 tensor
constexpr std::uint32_t kLabelMagic = 0x00000801;  // 2049: 1-D u8 vector

std::uint32_t read_u32_be(std::span<const std::uint8_t> bytes, std::size_t offset) {
  if (offset + 4 > bytes.size()) {
    throw std::runtime_error("idx: truncated header, need 4 bytes at offset " +
                             std::to_string(offset) + ", have " +
                             std::to_string(bytes.size() - offset));
  }
  return (std::uint32_t(bytes[offset]) << 24) | (std::uint32_t(bytes[offset + 1]) << 16) |
         (std::uint32_t(bytes[offset + 2]) << 8) | std::uint32_t(bytes[offset + 3]);
}

void append_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(std::uint8_t(v >> 24));
  out.push_back(std::uint8_t(v >> 16));
  out.push_back(std::uint8_t(v >> 8));
  out.push_back(std::uint8_t(v));
}

void check_payload(std::span<const std::uint8_t> bytes, std::size_t header,
                   std::uint64_t expected) {
  if (expected > bytes.size() - header) {
    throw std::runtime_error("idx: truncated payload, expected " +
                             std::to_string(expected) + " bytes after offset " +
                             std::to_string(header) + ", got " +
                             std::to_string(bytes.size() - header));
  }
  if (expected < bytes.size() - header) {
    throw std::runtime_error("idx: trailing bytes, expected " + std::to_string(expected) +
                             " payload bytes after offset " + std::to_string(header) +
                             ", got " + std::to_string(bytes.size() - header));
  }
}

}  // namespace

std::vector<Matrix> parse_idx_images(std::span<const std::uint8_t> bytes) {
  const std::uint32_t magic = read_u32_be(bytes, 0);
  if (magic != kImageMagic) {
    throw std::runtime_error("idx: bad image magic at offset 0, expected 2051, got " +
                             std::to_string(magic));
  }
  const std::uint64_t n = read_u32_be(bytes, 4);
  const std::uint64_t rows = read_u32_be(bytes, 8);
  const std::uint64_t cols = read_u32_be(bytes, 12);
  if (rows == 0 || cols == 0 || rows > 4096 || cols > 4096) {
    throw std::runtime_error("idx: implausible image dims " + std::to_string(rows) + "x" +
                             std::to_string(cols) + " in header");
  }
  check_payload(bytes, 16, n * rows * cols);

  std::vector<Matrix> images;
  images.reserve(n);
  std::size_t offset = 16;
  for (std::uint64_t i = 0; i < n; ++i) {
    Matrix img(rows, cols);
    for (std::uint64_t r = 0; r < rows; ++r)
      for (std::uint64_t c = 0; c < cols; ++c) img(r, c) = bytes[offset++] / 255.0;
    images.push_back(std::move(img));
  }
  return images;
}

std::vector<int> parse_idx_labels(std::span<const std::uint8_t> bytes) {
  const std::uint32_t magic = read_u32_be(bytes, 0);
  if (magic != kLabelMagic) {
    throw std::runtime_error("idx: bad label magic at offset 0, expected 2049, got " +
                             std::to_string(magic));
  }
  const std::uint64_t n = read_u32_be(bytes, 4);
  check_payload(bytes, 8, n);
  std::vector<int> labels(n);
  for (std::uint64_t i = 0; i < n; ++i) labels[i] = bytes[8 + i];
  return labels;
}

std::vector<std::uint8_t> serialize_idx_images(const std::vector<Matrix>& images) {
  if (images.empty()) throw std::invalid_argument("idx: nothing to serialize");
  const auto rows = images.front().rows();
  const auto cols = images.front().cols();
  std::vector<std::uint8_t> out;
  out.reserve(16 + images.size() * rows * cols);
  append_u32_be(out, kImageMagic);
  append_u32_be(out, std::uint32_t(images.size()));
  append_u32_be(out, std::uint32_t(rows));
  append_u32_be(out, std::uint32_t(cols));
  for (const Matrix& img : images) {
    if (img.rows() != rows || img.cols() != cols) {
      throw std::invalid_argument("idx: ragged image stack");
    }
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) {
        const double v = img(r, c);
        if (v < 0.0 || v > 1.0) throw std::invalid_argument("idx: pixel out of [0,1]");
        out.push_back(std::uint8_t(std::lround(v * 255.0)));
      }
  }
  return out;
}

std::vector<std::uint8_t> serialize_idx_labels(const std::vector<int>& labels) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + labels.size());
  append_u32_be(out, kLabelMagic);
  append_u32_be(out, std::uint32_t(labels.size()));
  for (int l : labels) {
    if (l < 0 || l > 255) throw std::invalid_argument("idx: label out of u8 range");
    out.push_back(std::uint8_t(l));
  }
  return out;
}

Matrix downsample_14(const Matrix& img) {
  if (img.rows() != 28 || img.cols() != 28) {
    throw std::invalid_argument("downsample_14: expected 28x28, got " + shape_str(img));
  }
  Matrix out(14, 14);
  for (int r = 0; r < 14; ++r)
    for (int c = 0; c < 14; ++c) {
      out(r, c) = img.block<2, 2>(2 * r, 2 * c).mean();
    }
  return out;
}

SequenceDataset gen_synthetic(std::uint64_t seed, int n, int vocab_size, int seq_len,
                              int num_classes) {
  if (n <= 0) throw std::invalid_argument("gen_synthetic: n must be positive");
  if (num_classes < 2) throw std::invalid_argument("gen_synthetic: need >= 2 classes");
  if (vocab_size < num_classes + 2) {
    throw std::invalid_argument("gen_synthetic: vocab_size must be >= num_classes + 2");
  }
  if (seq_len < 4) throw std::invalid_argument("gen_synthetic: seq_len must be >= 4");

  SequenceDataset ds;
  ds.vocab_size = vocab_size;
  ds.seq_len = seq_len;
  ds.num_classes = num_classes;
  ds.sequences.reserve(n);
  ds.labels.reserve(n);
  ds.keyword_pos.reserve(n);

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pos_dist(0, seq_len - 1);
  std::uniform_int_distribution<int> filler_dist(num_classes, vocab_size - 1);

  for (int i = 0; i < n; ++i) {
    const int label = i % num_classes;  // balanced within +-1 by construction
    std::vector<int> seq(seq_len);
    for (int& t : seq) t = filler_dist(rng);
    const int pos = pos_dist(rng);
    seq[pos] = label;
    ds.sequences.push_back(std::move(seq));
    ds.labels.push_back(label);
    ds.keyword_pos.push_back(pos);
  }
  return ds;
}

// File helpers ---------------------------------------------------------------

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

MnistPaths mnist_paths(const std::string& dir) {
  return {dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte",
          dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte"};
}

bool mnist_present(const std::string& dir) {
  const MnistPaths p = mnist_paths(dir);
  namespace fs = std::filesystem;
  return fs::exists(p.train_images) && fs::exists(p.train_labels) &&
         fs::exists(p.test_images) && fs::exists(p.test_labels);
}

namespace {

ImageDataset load_split_14(const std::string& image_path, const std::string& label_path) {
  ImageDataset ds;
  std::vector<Matrix> raw = parse_idx_images(read_file(image_path));
  ds.labels = parse_idx_labels(read_file(label_path));
  if (raw.size() != ds.labels.size()) {
    throw std::runtime_error("mnist: image/label count mismatch: " +
                             std::to_string(raw.size()) + " vs " +
                             std::to_string(ds.labels.size()));
  }
  ds.images.reserve(raw.size());
  for (const Matrix& img : raw) ds.images.push_back(downsample_14(img));
  return ds;
}

}  // namespace

std::pair<ImageDataset, ImageDataset> load_mnist_14(const std::string& dir) {
  const MnistPaths p = mnist_paths(dir);
  return {load_split_14(p.train_images, p.train_labels),
          load_split_14(p.test_images, p.test_labels)};
}

// Glyph fallback --------------------------------------------------------------

namespace {

// 3x5 digit font, one string per row.
constexpr std::array<std::array<const char*, 5>, 10> kGlyphs = {{
    {"111", "101", "101", "101", "111"},  // 0
    {"010", "110", "010", "010", "111"},  // 1
    {"111", "001", "111", "100", "111"},  // 2
    {"111", "001", "111", "001", "111"},  // 3
    {"101", "101", "111", "001", "001"},  // 4
    {"111", "100", "111", "001", "111"},  // 5
    {"111", "100", "111", "101", "111"},  // 6
    {"111", "001", "010", "010", "010"},  // 7
    {"111", "101", "111", "101", "111"},  // 8
    {"111", "101", "111", "001", "111"},  // 9
}};

Matrix render_glyph(int digit, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> dx_dist(3, 13);   // glyph is 12 wide
  std::uniform_int_distribution<int> dy_dist(2, 6);    // glyph is 20 tall
  std::uniform_real_distribution<double> intensity(0.6, 1.0);
  std::uniform_real_distribution<double> noise(0.0, 0.18);

  const int dx = dx_dist(rng);
  const int dy = dy_dist(rng);
  const double level = intensity(rng);

  Matrix img = Matrix::Zero(28, 28);
  for (int gr = 0; gr < 5; ++gr)
    for (int gc = 0; gc < 3; ++gc) {
      if (kGlyphs[digit][gr][gc] != '1') continue;
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) img(dy + 4 * gr + r, dx + 4 * gc + c) = level;
    }
  for (Eigen::Index i = 0; i < img.size(); ++i) {
    img.data()[i] = std::min(1.0, img.data()[i] + noise(rng));
  }
  return img;
}

void write_glyph_split(const std::string& image_path, const std::string& label_path,
                       int n, std::mt19937_64& rng) {
  std::vector<Matrix> images;
  std::vector<int> labels;
  images.reserve(n);
  labels.reserve(n);
  for (int i = 0; i < n; ++i) {
    const int digit = i % 10;
    images.push_back(render_glyph(digit, rng));
    labels.push_back(digit);
  }
  write_file(image_path, serialize_idx_images(images));
  write_file(label_path, serialize_idx_labels(labels));
}

}  // namespace

void write_glyph_idx(const std::string& dir, int n_train, int n_test,
                     std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  const MnistPaths p = mnist_paths(dir);
  std::mt19937_64 rng(seed);
  write_glyph_split(p.train_images, p.train_labels, n_train, rng);
  write_glyph_split(p.test_images, p.test_labels, n_test, rng);
}

// Binary caches ---------------------------------------------------------------

namespace {

constexpr std::uint32_t kImageCacheMagic = 0x414C4943;  // "ALIC"
constexpr std::uint32_t kSeqCacheMagic = 0x414C5343;    // "ALSC"
constexpr std::uint32_t kCacheVersion = 1;

struct Writer {
  std::vector<std::uint8_t> buf;
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(std::uint8_t(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(std::uint8_t(v >> (8 * i)));
  }
  void f64(double v) {
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    std::memcpy(&bits, &v, sizeof(bits));
    u64(bits);
  }
};

struct Reader {
  std::span<const std::uint8_t> buf;
  std::size_t pos = 0;
  std::uint32_t u32() {
    if (pos + 4 > buf.size()) throw std::runtime_error("cache: truncated at u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(buf[pos++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    if (pos + 8 > buf.size()) throw std::runtime_error("cache: truncated at u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(buf[pos++]) << (8 * i);
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }
};

}  // namespace

void write_image_cache(const std::string& path, const ImageDataset& ds) {
  if (ds.images.size() != ds.labels.size()) {
    throw std::invalid_argument("image cache: image/label count mismatch");
  }
  Writer w;
  w.u32(kImageCacheMagic);
  w.u32(kCacheVersion);
  w.u64(ds.images.size());
  const auto rows = ds.images.empty() ? 0 : ds.images.front().rows();
  const auto cols = ds.images.empty() ? 0 : ds.images.front().cols();
  w.u32(std::uint32_t(rows));
  w.u32(std::uint32_t(cols));
  for (const Matrix& img : ds.images) {
    for (Eigen::Index i = 0; i < img.size(); ++i) w.f64(img.data()[i]);
  }
  for (int l : ds.labels) w.u32(std::uint32_t(l));
  write_file(path, w.buf);
}

ImageDataset read_image_cache(const std::string& path) {
  const auto bytes = read_file(path);
  Reader r{bytes};
  if (r.u32() != kImageCacheMagic) throw std::runtime_error("cache: bad image magic");
  if (r.u32() != kCacheVersion) throw std::runtime_error("cache: unsupported version");
  const std::uint64_t n = r.u64();
  const std::uint32_t rows = r.u32();
  const std::uint32_t cols = r.u32();
  ImageDataset ds;
  ds.images.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    Matrix img(rows, cols);
    for (Eigen::Index j = 0; j < img.size(); ++j) img.data()[j] = r.f64();
    ds.images.push_back(std::move(img));
  }
  ds.labels.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) ds.labels.push_back(int(r.u32()));
  return ds;
}

void write_sequence_cache(const std::string& path, const SequenceDataset& ds) {
  Writer w;
  w.u32(kSeqCacheMagic);
  w.u32(kCacheVersion);
  w.u64(ds.sequences.size());
  w.u32(std::uint32_t(ds.vocab_size));
  w.u32(std::uint32_t(ds.seq_len));
  w.u32(std::uint32_t(ds.num_classes));
  for (const auto& seq : ds.sequences) {
    for (int t : seq) w.u32(std::uint32_t(t));
  }
  for (int l : ds.labels) w.u32(std::uint32_t(l));
  for (int p : ds.keyword_pos) w.u32(std::uint32_t(p));
  write_file(path, w.buf);
}

SequenceDataset read_sequence_cache(const std::string& path) {
  const auto bytes = read_file(path);
  Reader r{bytes};
  if (r.u32() != kSeqCacheMagic) throw std::runtime_error("cache: bad sequence magic");
  if (r.u32() != kCacheVersion) throw std::runtime_error("cache: unsupported version");
  const std::uint64_t n = r.u64();
  SequenceDataset ds;
  ds.vocab_size = int(r.u32());
  ds.seq_len = int(r.u32());
  ds.num_classes = int(r.u32());
  ds.sequences.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    std::vector<int> seq(ds.seq_len);
    for (int& t : seq) t = int(r.u32());
    ds.sequences.push_back(std::move(seq));
  }
  ds.labels.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) ds.labels.push_back(int(r.u32()));
  ds.keyword_pos.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) ds.keyword_pos.push_back(int(r.u32()));
  return ds;
}

}  // namespace attrlab
