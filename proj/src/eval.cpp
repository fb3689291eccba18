#include "vcvae/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "vcvae/elbo.hpp"
#include "vcvae/error.hpp"
#include "vcvae/linalg.hpp"
#include "vcvae/parallel.hpp"

namespace vcvae {

std::string latent_source_name(LatentSource s) { return s == LatentSource::kPrior ? "prior" : "gmm"; }

LatentSource parse_latent_source(const std::string& name) {
  if (name == "prior") return LatentSource::kPrior;
  if (name == "gmm") return LatentSource::kGmm;
  throw ConfigError("latent source must be 'prior' or 'gmm', got '" + name + "'");
}

double log_mean_exp(std::span<const double> t) {
  if (t.empty()) throw InvalidArgument("log_mean_exp of an empty set");
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : t) hi = std::max(hi, v);
  if (!std::isfinite(hi)) return hi;
  double s = 0.0;
  for (double v : t) s += std::exp(v - hi);
  return hi + std::log(s / static_cast<double>(t.size()));
}

namespace {

void check_source(LatentSource source, const GmmApprox* gmm, const VaeParams& params) {
  if (source != LatentSource::kGmm) return;
  if (gmm == nullptr) throw ConfigError("latent source 'gmm' needs a fitted GMM");
  if (gmm->latent_dim() != params.latent_dim()) {
    throw DimensionError("GMM latent_dim " + std::to_string(gmm->latent_dim()) +
                         " does not match the model's " + std::to_string(params.latent_dim()));
  }
}

Tensor log_likelihood_rows(const VaeParams& params, const Tensor& x, const Tensor& z) {
  const DecodedDistribution dec = decode(params, z);
  return params.var_head ? gaussian_log_likelihood_perpixel(x, dec.mean, dec.variance)
                         : gaussian_log_likelihood_global(x, dec.mean, params.sigma());
}

// Importance log-weights [n x k].
Tensor log_weights(const VaeParams& params, const Tensor& x, std::size_t k,
                   LatentSource source, const GmmApprox* gmm, const Rng& rng) {
  if (k < 1) throw InvalidArgument("k_importance must be >= 1");
  if (x.rank() != 2 || x.cols() != params.data_dim()) {
    throw DimensionError("test data " + shape_string(x.shape()) + " does not match data_dim " +
                         std::to_string(params.data_dim()));
  }
  check_source(source, gmm, params);
  const std::size_t n = x.rows(), l = params.latent_dim(), d = x.cols();
  Tensor out({n, k});
  parallel_for(chunk_count(n), [&](std::size_t c) {
    const std::size_t begin = c * kChunkRows, end = std::min(n, begin + kChunkRows);
    const std::size_t b = end - begin;
    const Tensor xc = x.slice_rows(begin, end);
    const GaussianPosterior post = encode(params, xc);
    Tensor z({b * k, l}), xr({b * k, d}), log_q({b * k});
    for (std::size_t i = 0; i < b; ++i) {
      Rng datum = rng.derive(static_cast<std::uint64_t>(begin + i));
      const Tensor eps = sample_standard_normal(datum, {k, l});
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t r = i * k + j;
        double lq = 0.0;
        for (std::size_t a = 0; a < l; ++a) {
          const double lv = post.log_var(i, a), e = eps(j, a);
          z(r, a) = post.mean(i, a) + std::exp(0.5 * lv) * e;
          lq += -0.5 * (kLog2Pi + lv + e * e);
        }
        log_q[r] = lq;
        std::copy_n(xc.row(i).data(), d, xr.row(r).data());
      }
    }
    const Tensor ll = log_likelihood_rows(params, xr, z);
    Tensor lp({b * k});
    if (source == LatentSource::kGmm) {
      lp = gmm_log_density(*gmm, z);
    } else {
      for (std::size_t r = 0; r < b * k; ++r) lp[r] = standard_normal_log_density(z.row(r));
    }
    for (std::size_t r = 0; r < b * k; ++r) out(begin + r / k, r % k) = ll[r] + lp[r] - log_q[r];
  });
  return out;
}

}  // namespace

IwaeReport iwae_bound(const VaeParams& params, const Tensor& x, std::size_t k,
                      LatentSource source, const GmmApprox* gmm, const Rng& rng) {
  if (x.rows() == 0) throw InvalidArgument("IWAE needs at least one test datum");
  const Tensor w = log_weights(params, x, k, source, gmm, rng);
  IwaeReport rep;
  rep.n_test = x.rows();
  rep.k_importance = k;
  rep.latent_source = source;
  for (std::size_t i = 0; i < x.rows(); ++i) rep.per_datum.push_back(log_mean_exp(w.row(i)));
  for (double v : rep.per_datum) {
    if (!std::isfinite(v)) throw NumericError("IWAE bound is not finite");
  }
  const double n = static_cast<double>(rep.n_test);
  rep.mean = std::accumulate(rep.per_datum.begin(), rep.per_datum.end(), 0.0) / n;
  if (rep.n_test > 1) {
    double ss = 0.0;
    for (double v : rep.per_datum) ss += (v - rep.mean) * (v - rep.mean);
    rep.std_error = std::sqrt(ss / (n - 1.0) / n);
  }
  return rep;
}

std::vector<double> single_sample_elbo(const VaeParams& params, const Tensor& x,
                                       LatentSource source, const GmmApprox* gmm,
                                       const Rng& rng) {
  const Tensor w = log_weights(params, x, 1, source, gmm, rng);
  return {w.values().begin(), w.values().end()};
}

UncertaintyMap reconstruct(const VaeParams& params, const Tensor& x) {
  const GaussianPosterior post = encode(params, x);
  DecodedDistribution dec = decode(params, post.mean);
  return {std::move(dec.mean), std::move(dec.variance)};
}

Generated generate(const VaeParams& params, const GmmApprox* gmm, Rng& rng, std::size_t n,
                   LatentSource source) {
  check_source(source, gmm, params);
  Generated g;
  g.z = source == LatentSource::kGmm ? gmm_sample(*gmm, rng, n)
                                     : sample_standard_normal(rng, {n, params.latent_dim()});
  if (n == 0) {
    g.images = {Tensor({0, params.data_dim()}), Tensor({0, params.data_dim()})};
    return g;
  }
  DecodedDistribution dec = decode(params, g.z);
  g.images = {std::move(dec.mean), std::move(dec.variance)};
  return g;
}

namespace {

void check_pair(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
    throw DimensionError("sample sets " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ in width");
  }
  if (a.rows() < 2 || b.rows() < 2) throw InvalidArgument("MMD needs at least 2 samples per set");
}

// Kernel matrix of the stacked rows [a; b].
Tensor pooled_kernel(const Tensor& a, const Tensor& b, std::span<const double> bandwidths) {
  if (bandwidths.empty()) throw InvalidArgument("MMD needs at least one bandwidth");
  for (double h : bandwidths) {
    if (!(h > 0.0)) throw InvalidArgument("MMD bandwidths must be > 0");
  }
  const std::size_t na = a.rows(), n = na + b.rows(), d = a.cols();
  Tensor x({n, d});
  std::copy_n(a.data(), a.size(), x.data());
  std::copy_n(b.data(), b.size(), x.data() + a.size());
  Tensor k = matmul_nt(x, x);
  std::vector<double> sq(n);
  for (std::size_t i = 0; i < n; ++i) sq[i] = k(i, i);
  std::vector<double> inv;
  for (double h : bandwidths) inv.push_back(1.0 / (2.0 * h * h));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double d2 = std::max(0.0, sq[i] + sq[j] - 2.0 * k(i, j));
      double s = 0.0;
      for (double c : inv) s += std::exp(-d2 * c);
      k(i, j) = s;
    }
  }
  return k;
}

double mmd_from_kernel(const Tensor& k, std::span<const std::uint8_t> in_a, std::size_t na) {
  const std::size_t n = k.rows(), nb = n - na;
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double v = k(i, j);
      if (in_a[i] && in_a[j]) saa += v;
      else if (!in_a[i] && !in_a[j]) sbb += v;
      else sab += v;
    }
  }
  const double fa = static_cast<double>(na), fb = static_cast<double>(nb);
  // sab counts each cross pair twice.
  return saa / (fa * (fa - 1.0)) + sbb / (fb * (fb - 1.0)) - sab / (fa * fb);
}

}  // namespace

double mmd_proxy(const Tensor& a, const Tensor& b, std::span<const double> bandwidths) {
  check_pair(a, b);
  const Tensor k = pooled_kernel(a, b, bandwidths);
  std::vector<std::uint8_t> in_a(a.rows() + b.rows(), 0);
  std::fill_n(in_a.begin(), a.rows(), 1);
  return mmd_from_kernel(k, in_a, a.rows());
}

std::vector<double> median_heuristic_bandwidths(const Tensor& a, const Tensor& b) {
  check_pair(a, b);
  const std::size_t na = std::min<std::size_t>(a.rows(), 1000);
  const std::size_t nb = std::min<std::size_t>(b.rows(), 1000);
  const std::size_t n = na + nb, d = a.cols();
  Tensor x({n, d});
  std::copy_n(a.data(), na * d, x.data());
  std::copy_n(b.data(), nb * d, x.data() + na * d);
  const Tensor g = matmul_nt(x, x);
  std::vector<double> dist;
  dist.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j)
      dist.push_back(std::sqrt(std::max(0.0, g(i, i) + g(j, j) - 2.0 * g(i, j))));
  auto mid = dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2);
  std::nth_element(dist.begin(), mid, dist.end());
  const double median = *mid;
  if (!(median > 0.0)) throw InvalidArgument("median pairwise distance is zero");
  return {0.5 * median, median, 2.0 * median};
}

PermutationTest mmd_permutation_test(const Tensor& a, const Tensor& b,
                                     std::span<const double> bandwidths, std::size_t n_perm,
                                     Rng& rng) {
  check_pair(a, b);
  if (n_perm < 2) throw InvalidArgument("permutation test needs n_perm >= 2");
  const Tensor k = pooled_kernel(a, b, bandwidths);
  const std::size_t n = k.rows(), na = a.rows();
  std::vector<std::uint8_t> in_a(n, 0);
  std::fill_n(in_a.begin(), na, 1);
  PermutationTest out;
  out.statistic = mmd_from_kernel(k, in_a, na);
  std::vector<double> null(n_perm);
  for (auto& v : null) {
    for (std::size_t i = n; i > 1; --i) std::swap(in_a[i - 1], in_a[rng.uniform_index(i)]);
    v = mmd_from_kernel(k, in_a, na);
  }
  out.null_mean = std::accumulate(null.begin(), null.end(), 0.0) / static_cast<double>(n_perm);
  double ss = 0.0;
  for (double v : null) ss += (v - out.null_mean) * (v - out.null_mean);
  out.null_std = std::sqrt(ss / static_cast<double>(n_perm - 1));
  return out;
}

double pearson_correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("correlation inputs differ in length");
  if (a.size() < 2) throw InvalidArgument("correlation needs at least 2 values");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw NumericError("correlation of a constant sequence");
  return sab / std::sqrt(saa * sbb);
}

void write_pgm_grid(const std::filesystem::path& path, const Tensor& images, std::size_t rows,
                    std::size_t cols, std::size_t grid_cols, double lo, double hi) {
  if (images.rank() != 2 || images.cols() != rows * cols) {
    throw DimensionError("images " + shape_string(images.shape()) + " are not " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  }
  if (images.rows() == 0) throw InvalidArgument("no images to write");
  if (grid_cols == 0) throw InvalidArgument("grid_cols must be >= 1");
  if (!(hi > lo)) throw InvalidArgument("PGM range must have hi > lo");
  const std::size_t n = images.rows();
  const std::size_t gc = std::min(grid_cols, n), gr = (n + gc - 1) / gc;
  const std::size_t width = gc * cols, height = gr * rows;
  std::vector<unsigned char> pixels(width * height, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t oy = (i / gc) * rows, ox = (i % gc) * cols;
    for (std::size_t y = 0; y < rows; ++y) {
      for (std::size_t x = 0; x < cols; ++x) {
        const double t = std::clamp((images(i, y * cols + x) - lo) / (hi - lo), 0.0, 1.0);
        pixels[(oy + y) * width + ox + x] = static_cast<unsigned char>(std::lround(255.0 * t));
      }
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

MapScale write_variance_grid(const std::filesystem::path& path, const Tensor& variance,
                             std::size_t rows, std::size_t cols, std::size_t grid_cols) {
  if (variance.empty()) throw InvalidArgument("no variance maps to write");
  const auto [lo, hi] = std::minmax_element(variance.values().begin(), variance.values().end());
  MapScale s{*lo, *hi};
  write_pgm_grid(path, variance, rows, cols, grid_cols, s.lo, s.hi > s.lo ? s.hi : s.lo + 1.0);
  return s;
}

}  // namespace vcvae
