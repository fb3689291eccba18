#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "test_support.hpp"
#include "vcvae/dataset.hpp"
#include "vcvae/error.hpp"
#include "vcvae/linalg.hpp"

using namespace vcvae;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "vcvae_test_datasets";
  fs::create_directories(dir);
  return dir / name;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// Two 2x2 images laid out by hand: magic, count, rows, cols (big-endian), pixels.
const std::vector<std::uint8_t> kFixture = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2,
                                            0, 255, 51, 102, 204, 153, 0, 255};

FormatError::Reason load_failure(const fs::path& images,
                                 const std::optional<fs::path>& labels = std::nullopt) {
  try {
    load_idx(images, labels);
  } catch (const FormatError& e) {
    return e.reason();
  }
  FAIL("expected FormatError");
  return FormatError::Reason::kOther;
}

}  // namespace

TEST_CASE("load_idx on a hand-built fixture") {
  const fs::path p = scratch("fixture-images");
  write_bytes(p, kFixture);
  const Dataset ds = load_idx(p);
  CHECK(ds.examples.shape() == Shape{2, 4});
  const double expected[] = {0.0, 1.0, 0.2, 0.4, 0.8, 0.6, 0.0, 1.0};
  for (std::size_t i = 0; i < 8; ++i) CHECK(ds.examples[i] == doctest::Approx(expected[i]).epsilon(1e-15));
  CHECK(ds.examples[0] == 0.0);
  CHECK(ds.examples[1] == 1.0);
  CHECK(ds.image_rows == 2);
  CHECK(ds.normalization.invert(ds.examples[2]) == doctest::Approx(51.0));
}

TEST_CASE("load_idx errors are distinct") {
  SUBCASE("truncated payload") {
    auto bytes = kFixture;
    bytes.pop_back();
    write_bytes(scratch("truncated"), bytes);
    CHECK(load_failure(scratch("truncated")) == FormatError::Reason::kTruncated);
  }
  SUBCASE("truncated header") {
    write_bytes(scratch("short-header"), {0, 0, 8, 3, 0, 0});
    CHECK(load_failure(scratch("short-header")) == FormatError::Reason::kTruncated);
  }
  SUBCASE("wrong magic") {
    auto bytes = kFixture;
    bytes[3] = 0x01;
    write_bytes(scratch("bad-magic"), bytes);
    CHECK(load_failure(scratch("bad-magic")) == FormatError::Reason::kBadMagic);
  }
  SUBCASE("trailing bytes") {
    auto bytes = kFixture;
    bytes.push_back(7);
    write_bytes(scratch("trailing"), bytes);
    CHECK(load_failure(scratch("trailing")) == FormatError::Reason::kDimensionMismatch);
  }
  SUBCASE("label count mismatch") {
    write_bytes(scratch("fixture-images"), kFixture);
    write_bytes(scratch("three-labels"), {0, 0, 8, 1, 0, 0, 0, 3, 1, 2, 3});
    CHECK(load_failure(scratch("fixture-images"), scratch("three-labels")) ==
          FormatError::Reason::kDimensionMismatch);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_idx(scratch("does-not-exist")), IoError); }
}

TEST_CASE("IDX writer round trip") {
  Rng rng(1);
  IdxImages img{5, 3, 4, {}};
  for (std::size_t i = 0; i < 60; ++i) img.pixels.push_back(static_cast<std::uint8_t>(rng.uniform_index(256)));
  std::vector<std::uint8_t> labels{0, 1, 2, 3, 9};
  write_idx_images(scratch("rt-images"), img);
  write_idx_labels(scratch("rt-labels"), labels);
  const Dataset ds = load_idx(scratch("rt-images"), scratch("rt-labels"));
  CHECK(ds.labels == labels);
  for (std::size_t i = 0; i < 60; ++i) {
    CHECK(std::lround(ds.normalization.invert(ds.examples[i])) == img.pixels[i]);
  }
}

TEST_CASE("bundled MNIST subset") {
  const fs::path dir = VCVAE_DATA_DIR;
  const Dataset ds = load_idx(dir / "mnist5k-images-idx3-ubyte", dir / "mnist5k-labels-idx1-ubyte");
  CHECK(ds.examples.shape() == Shape{5000, 784});
  CHECK(ds.labels.size() == 5000);
  double lo = 1.0, hi = 0.0;
  for (double v : ds.examples.values()) lo = std::min(lo, v), hi = std::max(hi, v);
  CHECK(lo == 0.0);
  CHECK(hi == 1.0);
}

TEST_CASE("make_synthetic") {
  SyntheticSpec spec;
  spec.latent_dim = 2;
  spec.data_dim = 5;
  spec.noise_std = 1e-6;
  spec.n_samples = 10000;
  spec.seed = 3;
  Rng rng(4);
  const Dataset ds = make_synthetic(spec, rng);
  CHECK(ds.size() == 10000);

  Rng mix_rng = Rng(spec.seed).derive("mixing");
  const Tensor a = random_mixing(5, 2, mix_rng);
  const Tensor expected = matmul_nt(a, a);
  Tensor cov({5, 5});
  for (std::size_t i = 0; i < 10000; ++i)
    for (std::size_t p = 0; p < 5; ++p)
      for (std::size_t q = 0; q < 5; ++q) cov(p, q) += ds.examples(i, p) * ds.examples(i, q) / 10000.0;
  CHECK(max_abs_diff(cov, expected) <= 0.05 * max_abs(expected));

  Rng again(4);
  CHECK(make_synthetic(spec, again).examples == ds.examples);

  spec.noise_std = 0.0;
  CHECK_THROWS_AS(make_synthetic(spec, rng), InvalidArgument);
}

TEST_CASE("split") {
  Dataset ds;
  ds.examples = Tensor({11, 1});
  for (std::size_t i = 0; i < 11; ++i) ds.examples[i] = static_cast<double>(i);
  const auto [train, test] = split(ds, 0.7, 42);
  CHECK(train.size() == 7);
  CHECK(test.size() == 4);
  std::set<double> seen;
  for (double v : train.examples.values()) seen.insert(v);
  for (double v : test.examples.values()) seen.insert(v);
  CHECK(seen.size() == 11);

  const auto [train2, test2] = split(ds, 0.7, 42);
  CHECK(train2.examples == train.examples);
  CHECK(test2.examples == test.examples);
  CHECK_FALSE(split(ds, 0.7, 43).first.examples == train.examples);

  CHECK_THROWS_AS(split(ds, 0.0, 1), InvalidArgument);
  CHECK_THROWS_AS(split(ds, 1.0, 1), InvalidArgument);
}
