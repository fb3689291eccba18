#include "vcvae/model.hpp"

#include <algorithm>
#include <cmath>
#include <utility>
#include <sstream>

#include "vcvae/error.hpp"

namespace vcvae {

std::string Architecture::describe() const {
  std::ostringstream os;
  os << "data_dim=" << data_dim << ";latent_dim=" << latent_dim << ";hidden=";
  for (std::size_t i = 0; i < hidden.size(); ++i) os << (i ? "," : "") << hidden[i];
  os << ";activation=" << activation_name(hidden_activation) << ";var_hidden=";
  for (std::size_t i = 0; i < var_hidden.size(); ++i) os << (i ? "," : "") << var_hidden[i];
  return os.str();
}

double VaeParams::sigma() const { return std::exp(log_sigma[0]); }
double VaeParams::sigma_squared() const { return std::exp(2.0 * log_sigma[0]); }
void VaeParams::set_sigma_squared(double s2) {
  if (!(s2 > 0.0)) throw InvalidArgument("sigma^2 must be positive");
  log_sigma[0] = 0.5 * std::log(s2);
}

std::vector<Tensor*> VaeParams::parameters() {
  std::vector<Tensor*> out = encoder.parameters();
  for (Tensor* t : decoder.parameters()) out.push_back(t);
  out.push_back(&log_sigma);
  if (var_head) {
    for (Tensor* t : var_head->parameters()) out.push_back(t);
  }
  return out;
}

std::vector<const Tensor*> VaeParams::parameters() const {
  std::vector<const Tensor*> out = encoder.parameters();
  for (const Tensor* t : decoder.parameters()) out.push_back(t);
  out.push_back(&log_sigma);
  if (var_head) {
    for (const Tensor* t : std::as_const(*var_head).parameters()) out.push_back(t);
  }
  return out;
}

std::vector<std::string> VaeParams::parameter_names() const {
  std::vector<std::string> names;
  auto add_net = [&](const std::string& prefix, const Mlp& net) {
    for (std::size_t i = 0; i < net.layers().size(); ++i) {
      names.push_back(prefix + "." + std::to_string(i) + ".weight");
      names.push_back(prefix + "." + std::to_string(i) + ".bias");
    }
  };
  add_net("encoder", encoder);
  add_net("decoder", decoder);
  names.emplace_back("log_sigma");
  if (var_head) add_net("var_head", *var_head);
  return names;
}

namespace {

std::vector<std::size_t> chain(std::size_t in, const std::vector<std::size_t>& hidden,
                               std::size_t out) {
  std::vector<std::size_t> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

}  // namespace

VaeParams init_vae(const Architecture& arch, Rng& rng) {
  if (arch.data_dim == 0 || arch.latent_dim == 0) {
    throw InvalidArgument("data_dim and latent_dim must be positive");
  }
  VaeParams p;
  p.arch = arch;
  Rng enc_rng = rng.derive("encoder");
  Rng dec_rng = rng.derive("decoder");
  p.encoder = Mlp::initialize(chain(arch.data_dim, arch.hidden, 2 * arch.latent_dim),
                              arch.hidden_activation, Activation::kIdentity, enc_rng);
  p.decoder = Mlp::initialize(chain(arch.latent_dim, arch.hidden, arch.data_dim),
                              arch.hidden_activation, Activation::kIdentity, dec_rng);
  p.log_sigma = Tensor::scalar(0.0);
  return p;
}

void attach_variance_head(VaeParams& params, double variance_floor, Rng& rng) {
  if (!(variance_floor > 0.0)) throw InvalidArgument("variance floor must be positive");
  Rng head_rng = rng.derive("var_head");
  params.var_head = Mlp::initialize(
      chain(params.arch.latent_dim, params.arch.var_hidden, params.arch.data_dim),
      params.arch.hidden_activation, Activation::kSoftplus, head_rng);
  params.variance_floor = variance_floor;
}

GaussianPosterior encode(const VaeParams& params, const Tensor& x) {
  if (x.rank() != 2 || x.cols() != params.data_dim()) {
    throw DimensionError("encode: input " + shape_string(x.shape()) +
                         " does not have width " + std::to_string(params.data_dim()));
  }
  const Tensor out = predict(params.encoder, x);
  const std::size_t l = params.latent_dim();
  GaussianPosterior post{Tensor({x.rows(), l}), Tensor({x.rows(), l})};
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = out.row(r);
    std::copy_n(row.begin(), l, post.mean.row(r).begin());
    std::copy_n(row.begin() + l, l, post.log_var.row(r).begin());
  }
  return post;
}

Tensor reparameterize(const GaussianPosterior& post, Rng& rng, std::size_t n_samples) {
  if (n_samples == 0) throw InvalidArgument("reparameterize: n_samples must be >= 1");
  const Tensor eps =
      sample_standard_normal(rng, {n_samples, post.mean.rows(), post.mean.cols()});
  return reparameterize(post, eps);
}

Tensor reparameterize(const GaussianPosterior& post, const Tensor& eps) {
  const std::size_t b = post.mean.rows(), l = post.mean.cols();
  if (eps.rank() != 3 || eps.shape()[1] != b || eps.shape()[2] != l) {
    throw DimensionError("reparameterize: noise " + shape_string(eps.shape()) +
                         " does not match posterior " + shape_string(post.mean.shape()));
  }
  Tensor z(eps.shape());
  const std::size_t n = eps.shape()[0];
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < b * l; ++i) {
      const std::size_t k = s * b * l + i;
      z[k] = post.mean[i] + std::exp(0.5 * post.log_var[i]) * eps[k];
    }
  }
  return z;
}

PosteriorGradient reparameterize_backward(const GaussianPosterior& post, const Tensor& eps,
                                          const Tensor& z_grad) {
  const std::size_t b = post.mean.rows(), l = post.mean.cols();
  if (eps.rank() != 3 || eps.shape()[1] != b || eps.shape()[2] != l ||
      z_grad.size() != eps.size()) {
    throw DimensionError("reparameterize_backward: noise " + shape_string(eps.shape()) +
                         " and gradient " + shape_string(z_grad.shape()) +
                         " do not match posterior " + shape_string(post.mean.shape()));
  }
  const std::size_t n = eps.shape()[0];
  PosteriorGradient g{Tensor({b, l}), Tensor({b, l})};
  for (std::size_t i = 0; i < b * l; ++i) {
    const double half_sd = 0.5 * std::exp(0.5 * post.log_var[i]);
    double dm = 0.0, dlv = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      const double dz = z_grad[s * b * l + i];
      dm += dz;
      dlv += dz * eps[s * b * l + i] * half_sd;
    }
    g.mean[i] = dm;
    g.log_var[i] = dlv;
  }
  return g;
}

Tensor as_rows(const Tensor& z) {
  if (z.rank() == 2) return z;
  if (z.rank() == 3) return z.reshaped({z.shape()[0] * z.shape()[1], z.shape()[2]});
  throw DimensionError("latent batch must be rank 2 or 3, got " + shape_string(z.shape()));
}

DecodedDistribution decode_global(const VaeParams& params, const Tensor& z) {
  const Tensor rows = as_rows(z);
  DecodedDistribution out;
  out.mean = predict(params.decoder, rows);
  out.variance = Tensor(out.mean.shape(), params.sigma_squared());
  return out;
}

DecodedDistribution decode_flexible(const VaeParams& params, const Tensor& z,
                                    double variance_floor) {
  if (!params.var_head) {
    throw ConfigError("decode_flexible requires a per-pixel variance head");
  }
  if (!(variance_floor > 0.0)) throw InvalidArgument("variance floor must be positive");
  const Tensor rows = as_rows(z);
  DecodedDistribution out;
  out.mean = predict(params.decoder, rows);
  out.variance = predict(*params.var_head, rows);
  for (auto& v : out.variance.values()) v += variance_floor;
  return out;
}

DecodedDistribution decode(const VaeParams& params, const Tensor& z) {
  return params.var_head ? decode_flexible(params, z, params.variance_floor)
                         : decode_global(params, z);
}

}  // namespace vcvae
