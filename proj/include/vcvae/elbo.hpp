#pragma once

#include <cstddef>
#include <vector>

#include "vcvae/model.hpp"
#include "vcvae/rng.hpp"
#include "vcvae/tensor.hpp"

namespace vcvae {

inline constexpr double kLog2Pi = 1.8378770664093454836;

// Batch means in nats. total == recon_log_likelihood - kl_to_prior.
struct ElboBreakdown {
  double total = 0.0;
  double recon_log_likelihood = 0.0;
  double kl_to_prior = 0.0;
};

// Gradient of the ELBO (the quantity being maximised) with respect to every
// tensor of VaeParams::parameters(), in that order.
struct ElboGradient {
  ElboBreakdown value;
  std::vector<Tensor> grads;
};

// Per-row log N(x; mean, sigma^2 I).
Tensor gaussian_log_likelihood_global(const Tensor& x, const Tensor& mean, double sigma);
// Per-row log N(x; mean, diag(variance)).
Tensor gaussian_log_likelihood_perpixel(const Tensor& x, const Tensor& mean,
                                        const Tensor& variance);
// Per-row KL(N(mean, diag(exp(log_var))) || N(0, I)).
Tensor kl_diag_gaussian_to_standard(const GaussianPosterior& post);

// Reparameterisation noise for a batch: [n_mc x batch x latent].
Tensor draw_noise(const VaeParams& params, std::size_t batch, Rng& rng, std::size_t n_mc);

// Global-variance ELBO (sigma = exp(log_sigma)).
ElboBreakdown elbo_global(const VaeParams& params, const Tensor& x, Rng& rng,
                          std::size_t n_mc);
ElboBreakdown elbo_global(const VaeParams& params, const Tensor& x, const Tensor& noise);
ElboGradient elbo_global_gradient(const VaeParams& params, const Tensor& x,
                                  const Tensor& noise);

// Per-pixel ELBO with variance = var_head(z) + variance_floor.
ElboBreakdown elbo_flexible(const VaeParams& params, const Tensor& x, Rng& rng,
                            std::size_t n_mc, double variance_floor);
ElboBreakdown elbo_flexible(const VaeParams& params, const Tensor& x, const Tensor& noise,
                            double variance_floor);
ElboGradient elbo_flexible_gradient(const VaeParams& params, const Tensor& x,
                                    const Tensor& noise, double variance_floor);

// sigma* with sigma*^2 equal to the mean squared reconstruction error per
// dimension under the given (or freshly drawn) noise.
double closed_form_sigma(const VaeParams& params, const Tensor& x, Rng& rng,
                         std::size_t n_mc);
double closed_form_sigma(const VaeParams& params, const Tensor& x, const Tensor& noise);

}  // namespace vcvae
