#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "vcvae/container.hpp"
#include "vcvae/model.hpp"
#include "vcvae/rng.hpp"
#include "vcvae/tensor.hpp"

namespace vcvae {

// Posterior parameters of every datum; the aggregate posterior is the uniform
// mixture of the corresponding diagonal Gaussians.
struct LatentCloud {
  Tensor mean;     // [N x L]
  Tensor log_var;  // [N x L]

  std::size_t rows() const { return mean.rows(); }
  std::size_t latent_dim() const { return mean.cols(); }
};

LatentCloud build_latent_cloud(const VaeParams& params, const Tensor& data);

// One reparameterized draw per datum.
Tensor sample_cloud(const LatentCloud& cloud, Rng& rng);

// Full-covariance Gaussian mixture.
struct GmmApprox {
  Tensor weights;      // [M]
  Tensor means;        // [M x L]
  Tensor covariances;  // [M x L x L]

  std::size_t components() const { return weights.size(); }
  std::size_t latent_dim() const { return means.cols(); }
  Tensor covariance(std::size_t m) const;
  // Throws InvalidArgument unless weights sum to 1 within 1e-12, are
  // nonnegative, shapes agree, and every covariance has a Cholesky factor.
  void validate() const;
};

// Single unit component at the origin: the standard normal prior.
GmmApprox standard_normal_gmm(std::size_t latent_dim);

struct GmmFitOptions {
  std::size_t components = 32;
  std::size_t max_iters = 200;
  double tol = 1e-6;  // per-point log-likelihood improvement
  std::size_t max_reinitializations = 3;
};

struct GmmFit {
  GmmApprox gmm;
  // Mean per-point log-likelihood before each M-step, then once more for the
  // final parameters.
  std::vector<double> log_likelihood;
  std::size_t iterations = 0;
  std::size_t reinitializations = 0;
  // Indices into log_likelihood whose preceding M-step added jitter or
  // re-seeded a component. EM's ascent guarantee does not cover those steps.
  std::vector<std::size_t> adjusted_steps;
  bool converged = false;
};

// EM on a fixed sample set, k-means++ seeded.
GmmFit fit_gmm_samples(const Tensor& samples, const GmmFitOptions& opts, Rng& rng);
// EM from a given starting mixture. rng is used only to re-seed components
// that lose all their points.
GmmFit fit_gmm_from(const Tensor& samples, GmmApprox init, const GmmFitOptions& opts, Rng& rng);
// EM on one posterior draw per datum.
GmmFit fit_gmm(const LatentCloud& cloud, const GmmFitOptions& opts, Rng& rng);

Tensor gmm_sample(const GmmApprox& gmm, Rng& rng, std::size_t n);
// log q(z) for each row of z. Zero-weight components are skipped.
Tensor gmm_log_density(const GmmApprox& gmm, const Tensor& z);

// log N(z; 0, I). Shares the arithmetic of gmm_log_density so that a unit
// single-component mixture reproduces it exactly.
double standard_normal_log_density(std::span<const double> z);

struct KlGap {
  double mean = 0.0;
  double std = 0.0;
  std::vector<double> runs;
};

// Monte Carlo KL(gmm || N(0, I)): per run, the mean of log q - log p over
// n_samples draws from the mixture.
KlGap kl_gap_estimate(const GmmApprox& gmm, const Rng& rng, std::size_t n_samples,
                      std::size_t n_runs);

// Container I/O (section "gmm").
Container gmm_container(const GmmApprox& gmm);
GmmApprox gmm_from_container(const Container& c);
void save_gmm(const std::filesystem::path& path, const GmmApprox& gmm);
GmmApprox load_gmm(const std::filesystem::path& path);

}  // namespace vcvae
