#include "vcvae/elbo.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "vcvae/error.hpp"
#include "vcvae/mlp.hpp"
#include "vcvae/parallel.hpp"

namespace vcvae {

namespace {

// Rows per task when a batch is split for evaluation. Fixed so that results
// do not depend on the worker count.

double row_ll_global(std::span<const double> x, std::span<const double> mean,
                     double sigma) {
  double sse = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double r = mean[k] - x[k];
    sse += r * r;
  }
  const double d = static_cast<double>(x.size());
  return -0.5 * d * kLog2Pi - d * std::log(sigma) - sse / (2.0 * sigma * sigma);
}

double row_ll_perpixel(std::span<const double> x, std::span<const double> mean,
                       std::span<const double> var) {
  double acc = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double r = mean[k] - x[k];
    acc += r * r / (2.0 * var[k]) + 0.5 * std::log(var[k]);
  }
  return -0.5 * static_cast<double>(x.size()) * kLog2Pi - acc;
}

double row_kl(std::span<const double> mean, std::span<const double> log_var) {
  double acc = 0.0;
  for (std::size_t j = 0; j < mean.size(); ++j) {
    acc += std::exp(log_var[j]) + mean[j] * mean[j] - 1.0 - log_var[j];
  }
  return 0.5 * acc;
}

void require_pair(const Tensor& x, const Tensor& mean, const char* op) {
  if (x.rank() != 2 || x.shape() != mean.shape()) {
    throw DimensionError(std::string(op) + ": data " + shape_string(x.shape()) +
                         " and mean " + shape_string(mean.shape()) + " differ");
  }
}

enum class Mode { kGlobal, kPerPixel };

struct ChunkResult {
  double recon_sum = 0.0;
  double kl_sum = 0.0;
  double sq_resid_sum = 0.0;
  std::vector<Tensor> grads;
};

void validate_inputs(const VaeParams& params, const Tensor& x, const Tensor& noise) {
  if (x.rank() != 2 || x.cols() != params.data_dim()) {
    throw DimensionError("elbo: data " + shape_string(x.shape()) + " does not have width " +
                         std::to_string(params.data_dim()));
  }
  if (noise.rank() != 3 || noise.shape()[0] == 0 || noise.shape()[1] != x.rows() ||
      noise.shape()[2] != params.latent_dim()) {
    throw DimensionError("elbo: noise " + shape_string(noise.shape()) +
                         " does not match batch " + std::to_string(x.rows()) +
                         " and latent width " + std::to_string(params.latent_dim()));
  }
}

Tensor noise_rows(const Tensor& noise, std::size_t begin, std::size_t end) {
  const std::size_t s_count = noise.shape()[0], b = noise.shape()[1], l = noise.shape()[2];
  Tensor out({s_count, end - begin, l});
  for (std::size_t s = 0; s < s_count; ++s) {
    std::copy_n(noise.data() + (s * b + begin) * l, (end - begin) * l,
                out.data() + s * (end - begin) * l);
  }
  return out;
}

// Sums over the chunk of per-datum terms; gradients are of
// (1 / batch_total) * sum(recon - kl) over the chunk.
ChunkResult evaluate_chunk(const VaeParams& params, const Tensor& x, const Tensor& eps,
                           Mode mode, double floor, bool want_grad, double batch_total) {
  const std::size_t b = x.rows(), l = params.latent_dim(), d = params.data_dim();
  const std::size_t s_count = eps.shape()[0];
  const double inv_s = 1.0 / static_cast<double>(s_count);

  auto run = [want_grad](const Mlp& net, const Tensor& in) {
    if (want_grad) return forward(net, in);
    ForwardResult r;
    r.output = predict(net, in);
    return r;
  };
  ForwardResult enc = run(params.encoder, x);
  GaussianPosterior post{slice_cols(enc.output, 0, l), slice_cols(enc.output, l, 2 * l)};
  const Tensor z = as_rows(reparameterize(post, eps));
  ForwardResult dec = run(params.decoder, z);
  ForwardResult head;
  if (mode == Mode::kPerPixel) head = run(*params.var_head, z);

  const double sigma = params.sigma();
  ChunkResult out;
  Tensor dg, dvar;
  if (want_grad) {
    dg = Tensor(dec.output.shape());
    if (mode == Mode::kPerPixel) dvar = Tensor(dec.output.shape());
  }
  double sse_total = 0.0;
  std::vector<double> var_row(d);
  const double w = inv_s / batch_total;
  for (std::size_t s = 0; s < s_count; ++s) {
    for (std::size_t i = 0; i < b; ++i) {
      const std::size_t r = s * b + i;
      auto xr = x.row(i);
      auto gr = dec.output.row(r);
      double ll;
      if (mode == Mode::kGlobal) {
        ll = row_ll_global(xr, gr, sigma);
      } else {
        auto hr = head.output.row(r);
        for (std::size_t k = 0; k < d; ++k) var_row[k] = hr[k] + floor;
        ll = row_ll_perpixel(xr, gr, var_row);
      }
      out.recon_sum += ll * inv_s;
      for (std::size_t k = 0; k < d; ++k) {
        const double res = gr[k] - xr[k];
        sse_total += res * res;
      }
      if (want_grad) {
        auto dgr = dg.row(r);
        if (mode == Mode::kGlobal) {
          const double inv_var = 1.0 / (sigma * sigma);
          for (std::size_t k = 0; k < d; ++k) dgr[k] = -w * (gr[k] - xr[k]) * inv_var;
        } else {
          auto dvr = dvar.row(r);
          for (std::size_t k = 0; k < d; ++k) {
            const double res = gr[k] - xr[k];
            const double v = var_row[k];
            dgr[k] = -w * res / v;
            dvr[k] = w * (res * res / (2.0 * v * v) - 0.5 / v);
          }
        }
      }
    }
  }
  out.sq_resid_sum = sse_total;
  for (std::size_t i = 0; i < b; ++i) out.kl_sum += row_kl(post.mean.row(i), post.log_var.row(i));
  if (!want_grad) return out;

  BackwardResult dec_back = backward(params.decoder, dec.tape, dg);
  Tensor dz = std::move(dec_back.input_grad);
  BackwardResult head_back;
  if (mode == Mode::kPerPixel) {
    head_back = backward(*params.var_head, head.tape, dvar);
    axpy(1.0, head_back.input_grad, dz);
  }

  const double inv_b = 1.0 / batch_total;
  const PosteriorGradient pg = reparameterize_backward(post, eps, dz);
  Tensor denc({b, 2 * l});
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < l; ++j) {
      const double lv = post.log_var(i, j);
      denc(i, j) = pg.mean(i, j) - inv_b * post.mean(i, j);
      denc(i, l + j) = pg.log_var(i, j) - inv_b * 0.5 * (std::exp(lv) - 1.0);
    }
  }
  BackwardResult enc_back = backward(params.encoder, enc.tape, denc);

  for (auto& g : enc_back.param_grads) out.grads.push_back(std::move(g));
  for (auto& g : dec_back.param_grads) out.grads.push_back(std::move(g));
  double dlog_sigma = 0.0;
  if (mode == Mode::kGlobal) {
    dlog_sigma = inv_b * (-static_cast<double>(d) * static_cast<double>(b) +
                          inv_s * sse_total / (sigma * sigma));
  }
  out.grads.push_back(Tensor::scalar(dlog_sigma));
  if (params.var_head) {
    if (mode == Mode::kPerPixel) {
      for (auto& g : head_back.param_grads) out.grads.push_back(std::move(g));
    } else {
      for (const Tensor* t : std::as_const(*params.var_head).parameters()) {
        out.grads.emplace_back(t->shape());
      }
    }
  }
  return out;
}

ElboGradient evaluate(const VaeParams& params, const Tensor& x, const Tensor& noise,
                      Mode mode, double floor, bool want_grad,
                      double* mean_sq_resid = nullptr) {
  validate_inputs(params, x, noise);
  if (mode == Mode::kPerPixel) {
    if (!params.var_head) throw ConfigError("per-pixel ELBO requires a variance head");
    if (!(floor > 0.0)) throw InvalidArgument("variance floor must be positive");
  }
  const std::size_t n = x.rows();
  if (n == 0) throw InvalidArgument("elbo: empty batch");
  const std::size_t chunks = (n + kChunkRows - 1) / kChunkRows;
  std::vector<ChunkResult> parts(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t begin = c * kChunkRows, end = std::min(n, begin + kChunkRows);
    parts[c] = evaluate_chunk(params, x.slice_rows(begin, end), noise_rows(noise, begin, end),
                              mode, floor, want_grad, static_cast<double>(n));
  });

  ElboGradient result;
  double recon = 0.0, kl = 0.0, sq = 0.0;
  for (std::size_t c = 0; c < chunks; ++c) {
    recon += parts[c].recon_sum;
    kl += parts[c].kl_sum;
    sq += parts[c].sq_resid_sum;
    if (!want_grad) continue;
    if (c == 0) {
      result.grads = std::move(parts[0].grads);
    } else {
      for (std::size_t t = 0; t < result.grads.size(); ++t) {
        axpy(1.0, parts[c].grads[t], result.grads[t]);
      }
    }
  }
  const double nn = static_cast<double>(n);
  result.value.recon_log_likelihood = recon / nn;
  result.value.kl_to_prior = kl / nn;
  result.value.total = result.value.recon_log_likelihood - result.value.kl_to_prior;
  if (mean_sq_resid) {
    *mean_sq_resid = sq / (nn * static_cast<double>(noise.shape()[0]) *
                           static_cast<double>(params.data_dim()));
  }
  return result;
}

}  // namespace

Tensor gaussian_log_likelihood_global(const Tensor& x, const Tensor& mean, double sigma) {
  if (!(sigma > 0.0)) throw InvalidArgument("gaussian likelihood: sigma must be positive");
  require_pair(x, mean, "gaussian_log_likelihood_global");
  Tensor out({x.rows()});
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = row_ll_global(x.row(i), mean.row(i), sigma);
  return out;
}

Tensor gaussian_log_likelihood_perpixel(const Tensor& x, const Tensor& mean,
                                        const Tensor& variance) {
  require_pair(x, mean, "gaussian_log_likelihood_perpixel");
  require_pair(x, variance, "gaussian_log_likelihood_perpixel");
  for (double v : variance.values()) {
    if (!(v > 0.0)) throw InvalidArgument("gaussian likelihood: variances must be positive");
  }
  Tensor out({x.rows()});
  for (std::size_t i = 0; i < x.rows(); ++i) {
    out[i] = row_ll_perpixel(x.row(i), mean.row(i), variance.row(i));
  }
  return out;
}

Tensor kl_diag_gaussian_to_standard(const GaussianPosterior& post) {
  if (post.mean.shape() != post.log_var.shape() || post.mean.rank() != 2) {
    throw DimensionError("kl: mean " + shape_string(post.mean.shape()) + " and log_var " +
                         shape_string(post.log_var.shape()) + " differ");
  }
  Tensor out({post.mean.rows()});
  for (std::size_t i = 0; i < post.mean.rows(); ++i) {
    out[i] = row_kl(post.mean.row(i), post.log_var.row(i));
  }
  return out;
}

Tensor draw_noise(const VaeParams& params, std::size_t batch, Rng& rng, std::size_t n_mc) {
  if (n_mc == 0) throw InvalidArgument("n_mc must be >= 1");
  return sample_standard_normal(rng, {n_mc, batch, params.latent_dim()});
}

ElboBreakdown elbo_global(const VaeParams& params, const Tensor& x, Rng& rng,
                          std::size_t n_mc) {
  return elbo_global(params, x, draw_noise(params, x.rows(), rng, n_mc));
}

ElboBreakdown elbo_global(const VaeParams& params, const Tensor& x, const Tensor& noise) {
  return evaluate(params, x, noise, Mode::kGlobal, 0.0, false).value;
}

ElboGradient elbo_global_gradient(const VaeParams& params, const Tensor& x,
                                  const Tensor& noise) {
  return evaluate(params, x, noise, Mode::kGlobal, 0.0, true);
}

ElboBreakdown elbo_flexible(const VaeParams& params, const Tensor& x, Rng& rng,
                            std::size_t n_mc, double variance_floor) {
  return elbo_flexible(params, x, draw_noise(params, x.rows(), rng, n_mc), variance_floor);
}

ElboBreakdown elbo_flexible(const VaeParams& params, const Tensor& x, const Tensor& noise,
                            double variance_floor) {
  return evaluate(params, x, noise, Mode::kPerPixel, variance_floor, false).value;
}

ElboGradient elbo_flexible_gradient(const VaeParams& params, const Tensor& x,
                                    const Tensor& noise, double variance_floor) {
  return evaluate(params, x, noise, Mode::kPerPixel, variance_floor, true);
}

double closed_form_sigma(const VaeParams& params, const Tensor& x, Rng& rng,
                         std::size_t n_mc) {
  if (x.rows() == 0) throw InvalidArgument("closed_form_sigma: empty batch");
  return closed_form_sigma(params, x, draw_noise(params, x.rows(), rng, n_mc));
}

double closed_form_sigma(const VaeParams& params, const Tensor& x, const Tensor& noise) {
  if (x.rank() == 2 && x.rows() == 0) throw InvalidArgument("closed_form_sigma: empty batch");
  double msr = 0.0;
  evaluate(params, x, noise, Mode::kGlobal, 0.0, false, &msr);
  return std::sqrt(msr);
}

}  // namespace vcvae
