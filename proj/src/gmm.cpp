#include "vcvae/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "vcvae/elbo.hpp"
#include "vcvae/error.hpp"
#include "vcvae/linalg.hpp"
#include "vcvae/parallel.hpp"

namespace vcvae {

LatentCloud build_latent_cloud(const VaeParams& params, const Tensor& data) {
  GaussianPosterior post = encode(params, data);
  if (!post.mean.all_finite() || !post.log_var.all_finite()) {
    throw NumericError("latent cloud contains non-finite posterior parameters");
  }
  return {std::move(post.mean), std::move(post.log_var)};
}

Tensor sample_cloud(const LatentCloud& cloud, Rng& rng) {
  return as_rows(reparameterize(GaussianPosterior{cloud.mean, cloud.log_var}, rng, 1));
}

Tensor GmmApprox::covariance(std::size_t m) const {
  const std::size_t l = latent_dim();
  Tensor out({l, l});
  std::copy_n(covariances.data() + m * l * l, l * l, out.data());
  return out;
}

void GmmApprox::validate() const {
  const std::size_t m = components(), l = latent_dim();
  if (m == 0) throw InvalidArgument("GMM has no components");
  if (weights.rank() != 1 || means.rank() != 2 || means.rows() != m ||
      covariances.shape() != Shape{m, l, l}) {
    throw InvalidArgument("GMM shapes disagree: weights " + shape_string(weights.shape()) +
                          ", means " + shape_string(means.shape()) + ", covariances " +
                          shape_string(covariances.shape()));
  }
  double total = 0.0;
  for (double w : weights.values()) {
    if (!(w >= 0.0)) throw InvalidArgument("GMM weight is negative or NaN");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw InvalidArgument("GMM weights sum to " + exact_number(total) + ", not 1");
  }
  for (std::size_t k = 0; k < m; ++k) cholesky(covariance(k));
}

GmmApprox standard_normal_gmm(std::size_t latent_dim) {
  GmmApprox g;
  g.weights = Tensor({1}, 1.0);
  g.means = Tensor({1, latent_dim});
  g.covariances = identity(latent_dim).reshaped({1, latent_dim, latent_dim});
  return g;
}

namespace {

double log_normal_from_whitened(std::size_t d, double log_det, double maha) {
  return -0.5 * (static_cast<double>(d) * kLog2Pi + log_det + maha);
}

double log_sum_exp(std::span<const double> t) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : t) hi = std::max(hi, v);
  if (hi == -std::numeric_limits<double>::infinity()) return hi;
  double s = 0.0;
  for (double v : t) s += std::exp(v - hi);
  return hi + std::log(s);
}

struct Prepared {
  std::vector<double> log_weight;
  std::vector<Tensor> lower;
  std::vector<double> log_det;
};

Prepared prepare(const GmmApprox& g) {
  Prepared p;
  for (std::size_t m = 0; m < g.components(); ++m) {
    p.log_weight.push_back(std::log(g.weights[m]));
    p.lower.push_back(cholesky(g.covariance(m)));
    p.log_det.push_back(cholesky_log_det(p.lower.back()));
  }
  return p;
}

// Per-component log(w_m N(z; mu_m, Sigma_m)); -inf for zero weights.
void component_terms(const GmmApprox& g, const Prepared& p, std::span<const double> z,
                     std::vector<double>& work, std::span<double> out) {
  const std::size_t l = g.latent_dim();
  for (std::size_t m = 0; m < g.components(); ++m) {
    if (g.weights[m] == 0.0) {
      out[m] = -std::numeric_limits<double>::infinity();
      continue;
    }
    work.resize(l);
    for (std::size_t j = 0; j < l; ++j) work[j] = z[j] - g.means(m, j);
    solve_lower_inplace(p.lower[m], work);
    double maha = 0.0;
    for (double v : work) maha += v * v;
    out[m] = p.log_weight[m] + log_normal_from_whitened(l, p.log_det[m], maha);
  }
}

void check_latent(const GmmApprox& g, const Tensor& z) {
  if (z.rank() != 2 || z.cols() != g.latent_dim()) {
    throw DimensionError("latent batch " + shape_string(z.shape()) +
                         " does not match GMM latent_dim " + std::to_string(g.latent_dim()));
  }
}

Tensor biased_covariance(const Tensor& x, std::span<const double> mean) {
  const std::size_t n = x.rows(), l = x.cols();
  Tensor cov({l, l});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < l; ++a) {
      const double da = x(i, a) - mean[a];
      for (std::size_t b = 0; b <= a; ++b) cov(a, b) += da * (x(i, b) - mean[b]);
    }
  }
  for (std::size_t a = 0; a < l; ++a) {
    for (std::size_t b = 0; b <= a; ++b) {
      cov(a, b) /= static_cast<double>(n);
      cov(b, a) = cov(a, b);
    }
  }
  return cov;
}

void add_jitter(Tensor& cov, double amount) {
  for (std::size_t a = 0; a < cov.rows(); ++a) cov(a, a) += amount;
}

bool has_cholesky(const Tensor& cov) {
  try {
    cholesky(cov);
    return true;
  } catch (const DecompositionError&) {
    return false;
  }
}

// Cholesky succeeds and no squared pivot is below 1e-10 of the largest
// variance. Nearly singular components make the likelihood meaningless.
bool well_conditioned(const Tensor& cov) {
  try {
    const Tensor lower = cholesky(cov);
    double top = 0.0, low = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < cov.rows(); ++a) {
      top = std::max(top, cov(a, a));
      low = std::min(low, lower(a, a) * lower(a, a));
    }
    return low > 1e-10 * top;
  } catch (const DecompositionError&) {
    return false;
  }
}

// Makes cov factorizable with the smallest of 1e-6, 1e-5, ... diagonal jitter.
void make_spd(Tensor& cov) {
  if (has_cholesky(cov)) return;
  double jitter = 1e-6;
  for (int attempt = 0; attempt < 8; ++attempt, jitter *= 10.0) {
    Tensor trial = cov;
    add_jitter(trial, jitter);
    if (has_cholesky(trial)) {
      cov = std::move(trial);
      return;
    }
  }
  throw DecompositionError("covariance is not positive definite even with jitter", 0);
}

std::vector<std::size_t> kmeans_plus_plus(const Tensor& x, std::size_t m, Rng& rng) {
  const std::size_t n = x.rows(), l = x.cols();
  std::vector<std::size_t> centers{rng.uniform_index(n)};
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  while (centers.size() < m) {
    const std::size_t c = centers.back();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < l; ++j) {
        const double diff = x(i, j) - x(c, j);
        s += diff * diff;
      }
      d2[i] = std::min(d2[i], s);
      total += d2[i];
    }
    std::size_t pick = n - 1;
    if (total > 0.0) {
      const double u = rng.uniform() * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (u < acc) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.uniform_index(n);
    }
    centers.push_back(pick);
  }
  return centers;
}

void set_covariance(GmmApprox& g, std::size_t m, const Tensor& cov) {
  const std::size_t l = g.latent_dim();
  std::copy_n(cov.data(), l * l, g.covariances.data() + m * l * l);
}

// E-step: responsibilities into resp and the mean per-point log-likelihood.
double expectation(const GmmApprox& g, const Tensor& x, Tensor& resp) {
  const Prepared p = prepare(g);
  const std::size_t n = x.rows();
  std::vector<double> chunk_ll(chunk_count(n), 0.0);
  parallel_for(chunk_ll.size(), [&](std::size_t c) {
    std::vector<double> work;
    const std::size_t begin = c * kChunkRows, end = std::min(n, begin + kChunkRows);
    double s = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
      auto r = resp.row(i);
      component_terms(g, p, x.row(i), work, r);
      const double lse = log_sum_exp(r);
      for (auto& v : r) v = std::exp(v - lse);
      s += lse;
    }
    chunk_ll[c] = s;
  });
  double total = 0.0;
  for (double v : chunk_ll) total += v;
  return total / static_cast<double>(n);
}

}  // namespace

double standard_normal_log_density(std::span<const double> z) {
  double maha = 0.0;
  for (double v : z) maha += v * v;
  return log_normal_from_whitened(z.size(), 0.0, maha);
}

namespace {

void check_samples(const Tensor& x, std::size_t mcount) {
  if (x.rank() != 2) throw DimensionError("GMM samples must be a matrix");
  if (mcount < 1) throw InvalidArgument("GMM needs at least one component");
  if (x.rows() < mcount) {
    throw InvalidArgument("GMM with " + std::to_string(mcount) + " components needs at least " +
                          std::to_string(mcount) + " samples, got " + std::to_string(x.rows()));
  }
  if (!x.all_finite()) throw NumericError("GMM samples contain non-finite values");
}

Tensor spd_sample_covariance(const Tensor& x) {
  const std::size_t n = x.rows(), l = x.cols();
  std::vector<double> mean(l, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < l; ++j) mean[j] += x(i, j);
  for (auto& v : mean) v /= static_cast<double>(n);
  Tensor cov = biased_covariance(x, mean);
  make_spd(cov);
  return cov;
}

}  // namespace

GmmFit fit_gmm_samples(const Tensor& x, const GmmFitOptions& opts, Rng& rng) {
  check_samples(x, opts.components);
  const std::size_t l = x.cols(), mcount = opts.components;
  const Tensor global_cov = spd_sample_covariance(x);
  GmmApprox g;
  g.weights = Tensor({mcount}, 1.0 / static_cast<double>(mcount));
  g.means = Tensor({mcount, l});
  g.covariances = Tensor({mcount, l, l});
  const auto centers = kmeans_plus_plus(x, mcount, rng);
  for (std::size_t m = 0; m < mcount; ++m) {
    for (std::size_t j = 0; j < l; ++j) g.means(m, j) = x(centers[m], j);
    set_covariance(g, m, global_cov);
  }
  return fit_gmm_from(x, std::move(g), opts, rng);
}

GmmFit fit_gmm_from(const Tensor& x, GmmApprox init, const GmmFitOptions& opts, Rng& rng) {
  check_samples(x, init.components());
  if (init.latent_dim() != x.cols()) {
    throw DimensionError("initial GMM latent_dim " + std::to_string(init.latent_dim()) +
                         " does not match samples " + shape_string(x.shape()));
  }
  init.validate();
  const std::size_t n = x.rows(), l = x.cols(), mcount = init.components();
  const Tensor global_cov = spd_sample_covariance(x);

  GmmFit fit;
  fit.gmm = std::move(init);
  GmmApprox& g = fit.gmm;

  Tensor resp({n, mcount});
  double previous = 0.0;
  for (std::size_t it = 0;; ++it) {
    const double ll = expectation(g, x, resp);
    fit.log_likelihood.push_back(ll);
    if (!std::isfinite(ll)) throw NumericError("GMM log-likelihood became non-finite");
    if (it > 0 && ll - previous < opts.tol) {
      fit.converged = true;
      break;
    }
    if (it == opts.max_iters) break;
    previous = ll;

    std::vector<double> nk(mcount, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t m = 0; m < mcount; ++m) nk[m] += resp(i, m);
    std::vector<char> degenerate(mcount, 0), jittered(mcount, 0);
    parallel_for(mcount, [&](std::size_t m) {
      if (!(nk[m] > 1e-10 * static_cast<double>(n))) {
        degenerate[m] = 1;
        return;
      }
      std::vector<double> mu(l, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const double r = resp(i, m);
        for (std::size_t j = 0; j < l; ++j) mu[j] += r * x(i, j);
      }
      for (auto& v : mu) v /= nk[m];
      Tensor cov({l, l});
      std::vector<double> diff(l);
      for (std::size_t i = 0; i < n; ++i) {
        const double r = resp(i, m);
        if (r == 0.0) continue;
        for (std::size_t j = 0; j < l; ++j) diff[j] = x(i, j) - mu[j];
        for (std::size_t a = 0; a < l; ++a) {
          const double ra = r * diff[a];
          for (std::size_t b = 0; b <= a; ++b) cov(a, b) += ra * diff[b];
        }
      }
      for (std::size_t a = 0; a < l; ++a) {
        for (std::size_t b = 0; b <= a; ++b) {
          cov(a, b) /= nk[m];
          cov(b, a) = cov(a, b);
        }
      }
      if (!well_conditioned(cov)) {
        add_jitter(cov, 1e-6);
        jittered[m] = 1;
        if (!has_cholesky(cov)) {
          degenerate[m] = 1;
          return;
        }
      }
      for (std::size_t j = 0; j < l; ++j) g.means(m, j) = mu[j];
      set_covariance(g, m, cov);
    });

    for (std::size_t m = 0; m < mcount; ++m) {
      if (!degenerate[m]) continue;
      if (++fit.reinitializations > opts.max_reinitializations) {
        throw NumericError("GMM component " + std::to_string(m) + " collapsed after " +
                           std::to_string(opts.max_reinitializations) + " re-initializations");
      }
      const std::size_t pick = rng.uniform_index(n);
      for (std::size_t j = 0; j < l; ++j) g.means(m, j) = x(pick, j);
      set_covariance(g, m, global_cov);
      nk[m] = static_cast<double>(n) / static_cast<double>(mcount);
    }
    for (std::size_t m = 0; m < mcount; ++m) {
      if (degenerate[m] || jittered[m]) {
        fit.adjusted_steps.push_back(it + 1);
        break;
      }
    }
    double total = 0.0;
    for (double v : nk) total += v;
    for (std::size_t m = 0; m < mcount; ++m) g.weights[m] = nk[m] / total;
    ++fit.iterations;
  }
  return fit;
}

GmmFit fit_gmm(const LatentCloud& cloud, const GmmFitOptions& opts, Rng& rng) {
  Rng draw = rng.derive("cloud-draw");
  Rng em = rng.derive("em");
  return fit_gmm_samples(sample_cloud(cloud, draw), opts, em);
}

Tensor gmm_sample(const GmmApprox& g, Rng& rng, std::size_t n) {
  const std::size_t l = g.latent_dim(), mcount = g.components();
  std::vector<Tensor> lower;
  for (std::size_t m = 0; m < mcount; ++m) lower.push_back(cholesky(g.covariance(m)));
  std::vector<double> cum(mcount);
  std::partial_sum(g.weights.values().begin(), g.weights.values().end(), cum.begin());
  Tensor out({n, l});
  std::vector<double> eps(l);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform() * cum.back();
    std::size_t m = 0;
    while (m + 1 < mcount && (u >= cum[m] || g.weights[m] == 0.0)) ++m;
    for (auto& e : eps) e = rng.normal();
    for (std::size_t a = 0; a < l; ++a) {
      double s = g.means(m, a);
      for (std::size_t b = 0; b <= a; ++b) s += lower[m](a, b) * eps[b];
      out(i, a) = s;
    }
  }
  return out;
}

Tensor gmm_log_density(const GmmApprox& g, const Tensor& z) {
  check_latent(g, z);
  const Prepared p = prepare(g);
  const std::size_t n = z.rows();
  Tensor out({n});
  parallel_for(chunk_count(n), [&](std::size_t c) {
    std::vector<double> work, terms(g.components());
    const std::size_t begin = c * kChunkRows, end = std::min(n, begin + kChunkRows);
    for (std::size_t i = begin; i < end; ++i) {
      component_terms(g, p, z.row(i), work, terms);
      out[i] = log_sum_exp(terms);
    }
  });
  return out;
}

KlGap kl_gap_estimate(const GmmApprox& g, const Rng& rng, std::size_t n_samples,
                      std::size_t n_runs) {
  if (n_samples < 1) throw InvalidArgument("kl_gap_estimate needs n_samples >= 1");
  if (n_runs < 2) throw InvalidArgument("kl_gap_estimate needs n_runs >= 2");
  KlGap out;
  for (std::size_t r = 0; r < n_runs; ++r) {
    Rng run = rng.derive(r);
    const Tensor z = gmm_sample(g, run, n_samples);
    const Tensor lq = gmm_log_density(g, z);
    double s = 0.0;
    for (std::size_t i = 0; i < n_samples; ++i) s += lq[i] - standard_normal_log_density(z.row(i));
    out.runs.push_back(s / static_cast<double>(n_samples));
  }
  out.mean = std::accumulate(out.runs.begin(), out.runs.end(), 0.0) / static_cast<double>(n_runs);
  double ss = 0.0;
  for (double v : out.runs) ss += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(ss / static_cast<double>(n_runs - 1));
  return out;
}

Container gmm_container(const GmmApprox& g) {
  g.validate();
  Container c;
  c.set("format", "vcvae-gmm");
  c.set("section", "gmm");
  c.set("components", std::to_string(g.components()));
  c.set("latent_dim", std::to_string(g.latent_dim()));
  c.add_array("weights", g.weights);
  c.add_array("means", g.means);
  c.add_array("covariances", g.covariances);
  return c;
}

GmmApprox gmm_from_container(const Container& c) {
  if (c.require("section") != "gmm") {
    throw FormatError(FormatError::Reason::kOther, "container is not a GMM (section '" +
                                                       c.require("section") + "')");
  }
  GmmApprox g{c.require_array("weights"), c.require_array("means"),
              c.require_array("covariances")};
  try {
    g.validate();
  } catch (const Error& e) {
    throw FormatError(FormatError::Reason::kDimensionMismatch,
                      std::string("stored GMM is invalid: ") + e.what());
  }
  return g;
}

void save_gmm(const std::filesystem::path& path, const GmmApprox& g) {
  write_container(path, gmm_container(g));
}

GmmApprox load_gmm(const std::filesystem::path& path) {
  return gmm_from_container(read_container(path));
}

}  // namespace vcvae
