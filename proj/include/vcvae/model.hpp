#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "vcvae/mlp.hpp"
#include "vcvae/rng.hpp"
#include "vcvae/tensor.hpp"

namespace vcvae {

struct Architecture {
  std::size_t data_dim = 784;
  std::size_t latent_dim = 16;
  std::vector<std::size_t> hidden{256, 256};
  Activation hidden_activation = Activation::kTanh;
  // Hidden widths of the per-pixel variance head (reads z directly).
  std::vector<std::size_t> var_hidden{256};

  std::string describe() const;
};

// Trainable model state. The encoder emits [mean | log_var]; the decoder emits
// the reconstruction mean; log_sigma is log of the global noise deviation.
// When var_head is present the per-pixel variance is var_head(z) + variance_floor.
struct VaeParams {
  Architecture arch;
  Mlp encoder;
  Mlp decoder;
  Tensor log_sigma = Tensor::scalar(0.0);
  std::optional<Mlp> var_head;
  double variance_floor = 0.0;

  std::size_t latent_dim() const { return arch.latent_dim; }
  std::size_t data_dim() const { return arch.data_dim; }
  double sigma() const;
  double sigma_squared() const;
  void set_sigma_squared(double s2);

  // Order: encoder, decoder, log_sigma, var_head (if present).
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::vector<std::string> parameter_names() const;
};

// sigma starts at 1 (log_sigma = 0).
VaeParams init_vae(const Architecture& arch, Rng& rng);

// Adds a freshly initialised variance head with the given floor.
void attach_variance_head(VaeParams& params, double variance_floor, Rng& rng);

struct GaussianPosterior {
  Tensor mean;     // [batch x latent]
  Tensor log_var;  // [batch x latent]
};

struct DecodedDistribution {
  Tensor mean;      // [rows x d]
  Tensor variance;  // [rows x d]
};

GaussianPosterior encode(const VaeParams& params, const Tensor& x);

// Returns [n_samples x batch x latent] with z = mean + exp(log_var / 2) * eps.
Tensor reparameterize(const GaussianPosterior& post, Rng& rng, std::size_t n_samples);
// Same with caller-supplied eps of shape [n_samples x batch x latent].
Tensor reparameterize(const GaussianPosterior& post, const Tensor& eps);

struct PosteriorGradient {
  Tensor mean;     // [batch x latent]
  Tensor log_var;  // [batch x latent]
};

// Pulls dL/dz ([n_samples x batch x latent] or its row-flattened form) back
// to the posterior parameters through z = mean + exp(log_var / 2) * eps.
PosteriorGradient reparameterize_backward(const GaussianPosterior& post, const Tensor& eps,
                                          const Tensor& z_grad);

// z may be [rows x latent] or [n x batch x latent]; outputs have one row per
// latent row.
DecodedDistribution decode_global(const VaeParams& params, const Tensor& z);
DecodedDistribution decode_flexible(const VaeParams& params, const Tensor& z,
                                    double variance_floor);
// decode_flexible with params.variance_floor when the head is active,
// decode_global otherwise.
DecodedDistribution decode(const VaeParams& params, const Tensor& z);

// Flattens [n x batch x latent] to [(n * batch) x latent].
Tensor as_rows(const Tensor& z);

}  // namespace vcvae
