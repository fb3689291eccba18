#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vcvae/gmm.hpp"
#include "vcvae/model.hpp"
#include "vcvae/rng.hpp"
#include "vcvae/tensor.hpp"

namespace vcvae {

enum class LatentSource { kPrior, kGmm };

std::string latent_source_name(LatentSource s);
LatentSource parse_latent_source(const std::string& name);

// log((1/n) sum exp(t)), stable for any spread of t.
double log_mean_exp(std::span<const double> t);

struct IwaeReport {
  double mean = 0.0;        // nats per datum
  double std_error = 0.0;   // of the mean, over data
  std::size_t n_test = 0;
  std::size_t k_importance = 0;
  LatentSource latent_source = LatentSource::kPrior;
  std::vector<double> per_datum;
};

// Importance-weighted bound with q(z|x) as proposal and either N(0, I) or the
// mixture as p(z). Datum i draws its k samples from rng.derive(i).
IwaeReport iwae_bound(const VaeParams& params, const Tensor& x, std::size_t k,
                      LatentSource source, const GmmApprox* gmm, const Rng& rng);

// log p(x|z) + log p(z) - log q(z|x) at one draw per datum, using the same
// streams as iwae_bound. Equals iwae_bound with k = 1.
std::vector<double> single_sample_elbo(const VaeParams& params, const Tensor& x,
                                       LatentSource source, const GmmApprox* gmm,
                                       const Rng& rng);

// Decoder output plus the predicted per-pixel variance.
struct UncertaintyMap {
  Tensor mean;      // [n x d]
  Tensor variance;  // [n x d]
};

// Decodes the posterior mean of each row (no sampling).
UncertaintyMap reconstruct(const VaeParams& params, const Tensor& x);

struct Generated {
  Tensor z;  // [n x L]
  UncertaintyMap images;
};

Generated generate(const VaeParams& params, const GmmApprox* gmm, Rng& rng, std::size_t n,
                   LatentSource source);

// Unbiased MMD^2 with k(x, y) = sum_h exp(-|x - y|^2 / (2 h^2)).
double mmd_proxy(const Tensor& a, const Tensor& b, std::span<const double> bandwidths);

// Median pairwise distance of the pooled samples (at most the first 1000 rows
// of each) times {0.5, 1, 2}.
std::vector<double> median_heuristic_bandwidths(const Tensor& a, const Tensor& b);

struct PermutationTest {
  double statistic = 0.0;
  double null_mean = 0.0;
  double null_std = 0.0;
  // (statistic - null_mean) / null_std
  double z_score() const { return (statistic - null_mean) / null_std; }
};

PermutationTest mmd_permutation_test(const Tensor& a, const Tensor& b,
                                     std::span<const double> bandwidths, std::size_t n_perm,
                                     Rng& rng);

double pearson_correlation(std::span<const double> a, std::span<const double> b);

// Writes n images of rows x cols (one per row of `images`) as a single 8-bit
// PGM grid, mapping [lo, hi] to [0, 255] with clamping.
void write_pgm_grid(const std::filesystem::path& path, const Tensor& images, std::size_t rows,
                    std::size_t cols, std::size_t grid_cols, double lo, double hi);

struct MapScale {
  double lo = 0.0;
  double hi = 0.0;
};

// Min-max normalised variance grid; the scale used is returned.
MapScale write_variance_grid(const std::filesystem::path& path, const Tensor& variance,
                             std::size_t rows, std::size_t cols, std::size_t grid_cols);

}  // namespace vcvae
