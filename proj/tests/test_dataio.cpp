#include "attrlab/dataio.hpp"

#include <cstdio>
#include <filesystem>
#include <random>
#include <stdexcept>

#include "doctest.h"

using attrlab::Matrix;

namespace {

// Builds IDX bytes by hand, independent of the serializer under test.
std::vector<std::uint8_t> idx_header(std::uint32_t magic,
                                     const std::vector<std::uint32_t>& dims) {
  std::vector<std::uint8_t> out;
  auto be = [&out](std::uint32_t v) {
    out.push_back(std::uint8_t(v >> 24));
    out.push_back(std::uint8_t(v >> 16));
    out.push_back(std::uint8_t(v >> 8));
    out.push_back(std::uint8_t(v));
  };
  be(magic);
  for (std::uint32_t d : dims) be(d);
  return out;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("attrlab_test_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("parse_idx decodes a two-image stack") {
  auto bytes = idx_header(2051, {2, 28, 28});
  bytes.resize(bytes.size() + 2 * 28 * 28, 0);
  bytes[16] = 255;                 // image 0, pixel (0,0)
  bytes[16 + 28 * 28 + 29] = 51;   // image 1, pixel (1,1)

  auto images = attrlab::parse_idx_images(bytes);
  REQUIRE(images.size() == 2);
  CHECK(images[0].rows() == 28);
  CHECK(images[0](0, 0) == doctest::Approx(1.0));
  CHECK(images[1](1, 1) == doctest::Approx(51.0 / 255.0));
  CHECK(images[1](0, 0) == 0.0);
}

TEST_CASE("parse_idx decodes labels") {
  auto bytes = idx_header(2049, {3});
  bytes.insert(bytes.end(), {7, 2, 1});
  CHECK(attrlab::parse_idx_labels(bytes) == std::vector<int>{7, 2, 1});
}

TEST_CASE("parse_idx rejects bad magic and truncation") {
  auto labels = idx_header(2049, {3});
  labels.insert(labels.end(), {7, 2, 1});
  CHECK_THROWS_WITH_AS(attrlab::parse_idx_images(labels),
                       doctest::Contains("bad image magic"), std::runtime_error);

  auto truncated = idx_header(2051, {1, 28, 28});
  truncated.resize(truncated.size() + 28 * 28 - 1, 0);  // one byte short
  CHECK_THROWS_WITH_AS(attrlab::parse_idx_images(truncated),
                       doctest::Contains("expected 784"), std::runtime_error);

  auto overflow = idx_header(2051, {1, 70000, 70000});
  CHECK_THROWS_AS(attrlab::parse_idx_images(overflow), std::runtime_error);
}

TEST_CASE("idx serialize/parse round-trips bit-exactly") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> byte_dist(0, 255);
  std::vector<Matrix> images;
  for (int i = 0; i < 3; ++i) {
    Matrix img(28, 28);
    for (Eigen::Index j = 0; j < img.size(); ++j) img.data()[j] = byte_dist(rng) / 255.0;
    images.push_back(img);
  }
  auto bytes = attrlab::serialize_idx_images(images);
  auto round = attrlab::parse_idx_images(bytes);
  REQUIRE(round.size() == images.size());
  for (std::size_t i = 0; i < images.size(); ++i) CHECK(round[i] == images[i]);
  CHECK(attrlab::serialize_idx_images(round) == bytes);

  std::vector<int> labels{0, 9, 4, 4, 1};
  CHECK(attrlab::parse_idx_labels(attrlab::serialize_idx_labels(labels)) == labels);
}

TEST_CASE("downsample_14 block means") {
  CHECK(attrlab::downsample_14(Matrix::Constant(28, 28, 0.7))
            .isApprox(Matrix::Constant(14, 14, 0.7)));

  Matrix checker(28, 28);
  for (int r = 0; r < 28; ++r)
    for (int c = 0; c < 28; ++c) checker(r, c) = (r + c) % 2;
  CHECK(attrlab::downsample_14(checker).isApproxToConstant(0.5));

  Matrix img = Matrix::Zero(28, 28);
  img(0, 1) = 1.0;
  img(1, 1) = 1.0;  // block [[0,1],[0,1]] -> mean 0.5
  CHECK(attrlab::downsample_14(img)(0, 0) == doctest::Approx(0.5));

  CHECK_THROWS_AS(attrlab::downsample_14(Matrix::Zero(14, 14)), std::invalid_argument);
}

TEST_CASE("downsample_14 preserves the global mean") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  Matrix img(28, 28);
  for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = dist(rng);
  CHECK(attrlab::downsample_14(img).mean() == doctest::Approx(img.mean()).epsilon(1e-12));
}

TEST_CASE("gen_synthetic determinism and structure") {
  auto a = attrlab::gen_synthetic(42, 101, 12, 8, 4);
  auto b = attrlab::gen_synthetic(42, 101, 12, 8, 4);
  CHECK(a.sequences == b.sequences);
  CHECK(a.labels == b.labels);
  CHECK(a.keyword_pos == b.keyword_pos);

  auto c = attrlab::gen_synthetic(43, 101, 12, 8, 4);
  CHECK(a.sequences != c.sequences);

  std::vector<int> counts(4, 0);
  for (std::size_t i = 0; i < a.sequences.size(); ++i) {
    const auto& seq = a.sequences[i];
    REQUIRE(int(seq.size()) == 8);
    for (int t : seq) CHECK(t < 12);
    CHECK(seq[a.keyword_pos[i]] == a.labels[i]);
    // keyword ids never appear as fillers
    for (int p = 0; p < 8; ++p) {
      if (p != a.keyword_pos[i]) CHECK(seq[p] >= 4);
    }
    counts[a.labels[i]]++;
  }
  const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
  CHECK(*hi - *lo <= 1);
}

TEST_CASE("gen_synthetic rejects bad parameters") {
  CHECK_THROWS_AS(attrlab::gen_synthetic(0, 10, 5, 8, 4), std::invalid_argument);
  CHECK_THROWS_AS(attrlab::gen_synthetic(0, 10, 12, 3, 4), std::invalid_argument);
  CHECK_THROWS_AS(attrlab::gen_synthetic(0, 0, 12, 8, 4), std::invalid_argument);
}

TEST_CASE("dataset caches round-trip") {
  TempDir tmp;
  attrlab::ImageDataset img_ds;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  for (int i = 0; i < 4; ++i) {
    Matrix m(14, 14);
    for (Eigen::Index j = 0; j < m.size(); ++j) m.data()[j] = dist(rng);
    img_ds.images.push_back(m);
    img_ds.labels.push_back(i % 3);
  }
  const std::string img_path = (tmp.path / "img.cache").string();
  attrlab::write_image_cache(img_path, img_ds);
  auto img_back = attrlab::read_image_cache(img_path);
  REQUIRE(img_back.images.size() == 4);
  for (int i = 0; i < 4; ++i) CHECK(img_back.images[i] == img_ds.images[i]);
  CHECK(img_back.labels == img_ds.labels);

  auto seq_ds = attrlab::gen_synthetic(9, 33, 12, 8, 4);
  const std::string seq_path = (tmp.path / "seq.cache").string();
  attrlab::write_sequence_cache(seq_path, seq_ds);
  auto seq_back = attrlab::read_sequence_cache(seq_path);
  CHECK(seq_back.sequences == seq_ds.sequences);
  CHECK(seq_back.labels == seq_ds.labels);
  CHECK(seq_back.keyword_pos == seq_ds.keyword_pos);
  CHECK(seq_back.vocab_size == 12);
}

TEST_CASE("glyph fallback writes loadable IDX files") {
  TempDir tmp;
  const std::string dir = tmp.path.string();
  CHECK_FALSE(attrlab::mnist_present(dir));
  attrlab::write_glyph_idx(dir, 50, 20, 1);
  CHECK(attrlab::mnist_present(dir));

  auto [train, test] = attrlab::load_mnist_14(dir);
  REQUIRE(train.images.size() == 50);
  REQUIRE(test.images.size() == 20);
  CHECK(train.images.front().rows() == 14);
  for (const Matrix& img : train.images) {
    CHECK(img.minCoeff() >= 0.0);
    CHECK(img.maxCoeff() <= 1.0);
  }
  // labels cycle through the ten digits
  CHECK(train.labels[0] == 0);
  CHECK(train.labels[11] == 1);
}
