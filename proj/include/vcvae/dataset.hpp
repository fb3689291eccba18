#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vcvae/rng.hpp"
#include "vcvae/tensor.hpp"

namespace vcvae {

// normalized = (raw - offset) * scale
struct Normalization {
  double scale = 1.0;
  double offset = 0.0;

  double apply(double raw) const { return (raw - offset) * scale; }
  double invert(double normalized) const { return normalized / scale + offset; }
};

struct Dataset {
  Tensor examples;  // [N x d]
  std::string name;
  Normalization normalization;
  std::vector<std::uint8_t> labels;  // empty when unlabeled
  std::size_t image_rows = 0;        // 0 for non-image data
  std::size_t image_cols = 0;

  std::size_t size() const { return examples.rows(); }
  std::size_t dim() const { return examples.cols(); }
};

// Raw unsigned-byte IDX image stack [N x rows x cols] and optional labels.
struct IdxImages {
  std::size_t count = 0, rows = 0, cols = 0;
  std::vector<std::uint8_t> pixels;
};

// Reads IDX images (magic 0x00000803) and optional labels (0x00000801);
// pixels are scaled by 1/255 and flattened row-major to [N x rows*cols].
Dataset load_idx(const std::filesystem::path& images,
                 const std::optional<std::filesystem::path>& labels = std::nullopt);

void write_idx_images(const std::filesystem::path& path, const IdxImages& images);
void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels);

struct SyntheticSpec {
  std::size_t latent_dim = 2;
  std::size_t data_dim = 8;
  Tensor mixing;  // [data_dim x latent_dim]; drawn from seed when empty
  double noise_std = 0.1;
  std::size_t n_samples = 1000;
  std::uint64_t seed = 0;
};

// Entries ~ N(0, 1 / latent_dim).
Tensor random_mixing(std::size_t data_dim, std::size_t latent_dim, Rng& rng);

// x = A z + eps with z ~ N(0, I), eps ~ N(0, noise_std^2 I). Not normalized.
Dataset make_synthetic(const SyntheticSpec& spec, Rng& rng);

// Deterministic shuffled split into floor(f N) training and N - floor(f N)
// test rows.
std::pair<Dataset, Dataset> split(const Dataset& ds, double train_fraction, std::uint64_t seed);

// First n rows (all when n >= size()).
Dataset take(const Dataset& ds, std::size_t n);

}  // namespace vcvae
