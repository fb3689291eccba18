#include "vcvae/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>

#include "vcvae/error.hpp"
#include "vcvae/linalg.hpp"

namespace vcvae {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset,
                        const std::filesystem::path& path) {
  if (offset + 4 > bytes.size()) {
    throw FormatError(FormatError::Reason::kTruncated,
                      "'" + path.string() + "' is truncated inside the IDX header");
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b, 4);
}

void check_magic(std::uint32_t magic, std::uint32_t expected, const std::filesystem::path& path) {
  if (magic != expected) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "bad IDX magic 0x%08x (expected 0x%08x) in ", magic, expected);
    throw FormatError(FormatError::Reason::kBadMagic, buf + path.string());
  }
}

void check_payload(std::size_t have, std::size_t need, const std::filesystem::path& path) {
  if (have < need) {
    throw FormatError(FormatError::Reason::kTruncated,
                      "'" + path.string() + "' is truncated: " + std::to_string(have) +
                          " payload bytes, header promises " + std::to_string(need));
  }
  if (have > need) {
    throw FormatError(FormatError::Reason::kDimensionMismatch,
                      "'" + path.string() + "' has " + std::to_string(have - need) +
                          " bytes beyond the declared dimensions");
  }
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images,
                 const std::optional<std::filesystem::path>& labels) {
  const auto bytes = read_file(images);
  check_magic(read_be32(bytes, 0, images), kImageMagic, images);
  const std::size_t n = read_be32(bytes, 4, images);
  const std::size_t rows = read_be32(bytes, 8, images);
  const std::size_t cols = read_be32(bytes, 12, images);
  if (n == 0 || rows == 0 || cols == 0) {
    throw FormatError(FormatError::Reason::kDimensionMismatch,
                      "'" + images.string() + "' declares an empty dimension");
  }
  const std::size_t d = rows * cols;
  check_payload(bytes.size() - 16, n * d, images);

  Dataset ds;
  ds.name = images.filename().string();
  ds.normalization = Normalization{1.0 / 255.0, 0.0};
  ds.image_rows = rows;
  ds.image_cols = cols;
  ds.examples = Tensor({n, d});
  for (std::size_t i = 0; i < n * d; ++i) {
    ds.examples[i] = ds.normalization.apply(static_cast<double>(bytes[16 + i]));
  }

  if (labels) {
    const auto lb = read_file(*labels);
    check_magic(read_be32(lb, 0, *labels), kLabelMagic, *labels);
    const std::size_t ln = read_be32(lb, 4, *labels);
    if (ln != n) {
      throw FormatError(FormatError::Reason::kDimensionMismatch,
                        "label count " + std::to_string(ln) + " differs from image count " +
                            std::to_string(n));
    }
    check_payload(lb.size() - 8, ln, *labels);
    ds.labels.assign(lb.begin() + 8, lb.end());
  }
  return ds;
}

void write_idx_images(const std::filesystem::path& path, const IdxImages& images) {
  if (images.pixels.size() != images.count * images.rows * images.cols) {
    throw DimensionError("write_idx_images: pixel count does not match dimensions");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  put_be32(out, kImageMagic);
  put_be32(out, static_cast<std::uint32_t>(images.count));
  put_be32(out, static_cast<std::uint32_t>(images.rows));
  put_be32(out, static_cast<std::uint32_t>(images.cols));
  out.write(reinterpret_cast<const char*>(images.pixels.data()),
            static_cast<std::streamsize>(images.pixels.size()));
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  put_be32(out, kLabelMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size()));
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

Tensor random_mixing(std::size_t data_dim, std::size_t latent_dim, Rng& rng) {
  Tensor a = sample_standard_normal(rng, {data_dim, latent_dim});
  const double s = 1.0 / std::sqrt(static_cast<double>(latent_dim));
  for (auto& v : a.values()) v *= s;
  return a;
}

Dataset make_synthetic(const SyntheticSpec& spec, Rng& rng) {
  if (!(spec.noise_std > 0.0)) throw InvalidArgument("synthetic noise_std must be positive");
  if (spec.n_samples == 0 || spec.latent_dim == 0 || spec.data_dim == 0) {
    throw InvalidArgument("synthetic dimensions must be positive");
  }
  Tensor mixing = spec.mixing;
  if (mixing.empty()) {
    Rng mix_rng = Rng(spec.seed).derive("mixing");
    mixing = random_mixing(spec.data_dim, spec.latent_dim, mix_rng);
  }
  if (mixing.shape() != Shape{spec.data_dim, spec.latent_dim}) {
    throw DimensionError("synthetic mixing matrix " + shape_string(mixing.shape()) +
                         " does not match data_dim x latent_dim");
  }
  const Tensor z = sample_standard_normal(rng, {spec.n_samples, spec.latent_dim});
  Tensor x = matmul_nt(z, mixing);
  for (auto& v : x.values()) v += spec.noise_std * rng.normal();
  Dataset ds;
  ds.examples = std::move(x);
  ds.name = "synthetic";
  return ds;
}

std::pair<Dataset, Dataset> split(const Dataset& ds, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw InvalidArgument("train fraction must lie strictly between 0 and 1");
  }
  const std::size_t n = ds.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng(seed).derive("split");
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
  const auto n_train =
      static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n)));

  auto part = [&](std::size_t begin, std::size_t end, const char* suffix) {
    Dataset out;
    std::span<const std::size_t> idx(order.data() + begin, end - begin);
    out.examples = ds.examples.gather_rows(idx);
    out.name = ds.name + suffix;
    out.normalization = ds.normalization;
    out.image_rows = ds.image_rows;
    out.image_cols = ds.image_cols;
    if (!ds.labels.empty()) {
      for (std::size_t i : idx) out.labels.push_back(ds.labels[i]);
    }
    return out;
  };
  return {part(0, n_train, "/train"), part(n_train, n, "/test")};
}

Dataset take(const Dataset& ds, std::size_t n) {
  Dataset out = ds;
  if (n >= ds.size()) return out;
  out.examples = ds.examples.slice_rows(0, n);
  if (!ds.labels.empty()) out.labels.resize(n);
  return out;
}

}  // namespace vcvae
