#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "doctest.h"
#include "test_support.hpp"
#include "vae_fixtures.hpp"
#include "vcvae/error.hpp"
#include "vcvae/eval.hpp"
#include "vcvae/parallel.hpp"

using namespace vcvae;
using namespace vcvae::testing;

namespace {

// Linear model x = z W + b + noise with orthogonal rows of W, so the exact
// posterior is diagonal and the encoder can represent it. Every importance
// weight then equals log p(x).
struct LinearCase {
  VaeParams params;
  std::vector<double> marginal_var;  // per dimension
  std::vector<double> bias;
};

LinearCase exact_linear_model() {
  const double sigma2 = 0.25;
  const std::vector<double> w_diag{2.0, 0.5};
  LinearCase c;
  Architecture arch = small_arch(4, 2, {}, {3});
  arch.hidden_activation = Activation::kIdentity;
  Rng rng(0);
  c.params = init_vae(arch, rng);
  c.params.set_sigma_squared(sigma2);
  c.bias = {0.3, -0.2, 0.1, 0.4};
  auto& dec = c.params.decoder.layers()[0];
  dec.weight = Tensor({2, 4});
  dec.weight(0, 0) = w_diag[0];
  dec.weight(1, 1) = w_diag[1];
  for (std::size_t k = 0; k < 4; ++k) dec.bias[k] = c.bias[k];
  auto& enc = c.params.encoder.layers()[0];
  enc.weight = Tensor({4, 4});
  enc.bias = Tensor({4});
  for (std::size_t a = 0; a < 2; ++a) {
    const double var = 1.0 / (1.0 + w_diag[a] * w_diag[a] / sigma2);
    const double gain = var * w_diag[a] / sigma2;
    enc.weight(a, a) = gain;
    enc.bias[a] = -gain * c.bias[a];
    enc.bias[2 + a] = std::log(var);
  }
  c.marginal_var = {w_diag[0] * w_diag[0] + sigma2, w_diag[1] * w_diag[1] + sigma2, sigma2, sigma2};
  return c;
}

Tensor gaussian_rows(Rng& rng, std::size_t n, std::size_t d, double shift) {
  Tensor t({n, d});
  for (auto& v : t.values()) v = shift + rng.normal();
  return t;
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "vcvae_test_eval";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("log mean exp") {
  const std::vector<double> a{0.0, -700.0};
  CHECK(log_mean_exp(a) == doctest::Approx(std::log((1.0 + std::exp(-700.0)) / 2.0)).epsilon(1e-14));
  const std::vector<double> b{1000.0, 300.0};
  CHECK(log_mean_exp(b) == doctest::Approx(1000.0 - std::log(2.0)).epsilon(1e-14));
  const std::vector<double> c{-1000.0, -1700.0, -1350.0};
  CHECK(std::isfinite(log_mean_exp(c)));
  CHECK(log_mean_exp(c) == doctest::Approx(-1000.0 - std::log(3.0)).epsilon(1e-14));
  const std::vector<double> d{0.3, -1.2, 2.5};
  CHECK(log_mean_exp(d) ==
        doctest::Approx(std::log((std::exp(0.3) + std::exp(-1.2) + std::exp(2.5)) / 3.0)).epsilon(1e-14));
  const std::vector<double> one{-3.25};
  CHECK(log_mean_exp(one) == -3.25);
}

TEST_CASE("exact posterior makes IWAE equal log p(x)") {
  const LinearCase lc = exact_linear_model();
  Rng rng(1);
  const Tensor x = random_tensor(rng, {30, 4}, 1.5);
  for (std::size_t k : {1, 5, 20}) {
    const IwaeReport rep = iwae_bound(lc.params, x, k, LatentSource::kPrior, nullptr, Rng(2));
    REQUIRE(rep.per_datum.size() == 30);
    for (std::size_t i = 0; i < 30; ++i) {
      double logp = 0.0;
      for (std::size_t j = 0; j < 4; ++j) logp += normal_log_pdf(x(i, j), lc.bias[j], lc.marginal_var[j]);
      CHECK(rep.per_datum[i] == doctest::Approx(logp).epsilon(1e-10));
    }
  }
}

TEST_CASE("IWAE with one sample is the single-sample ELBO") {
  Rng rng(3);
  const VaeParams p = random_vae(rng, small_arch(6, 3), true);
  const Tensor x = random_tensor(rng, {70, 6});
  const IwaeReport rep = iwae_bound(p, x, 1, LatentSource::kPrior, nullptr, Rng(4));
  const std::vector<double> elbo = single_sample_elbo(p, x, LatentSource::kPrior, nullptr, Rng(4));
  REQUIRE(elbo.size() == 70);
  for (std::size_t i = 0; i < 70; ++i) CHECK(rep.per_datum[i] == elbo[i]);

  // Independent evaluation of log p(x|z) + log p(z) - log q(z|x).
  const GaussianPosterior post = encode(p, x);
  for (std::size_t i = 0; i < 70; i += 7) {
    Rng datum = Rng(4).derive(static_cast<std::uint64_t>(i));
    Tensor z({1, 3});
    double lq = 0.0, lp = 0.0;
    for (std::size_t a = 0; a < 3; ++a) {
      const double e = datum.normal();
      const double var = std::exp(post.log_var(i, a));
      z(0, a) = post.mean(i, a) + std::sqrt(var) * e;
      lq += normal_log_pdf(z(0, a), post.mean(i, a), var);
      lp += normal_log_pdf(z(0, a), 0.0, 1.0);
    }
    const DecodedDistribution dec = decode(p, z);
    double ll = 0.0;
    for (std::size_t j = 0; j < 6; ++j) ll += normal_log_pdf(x(i, j), dec.mean(0, j), dec.variance(0, j));
    CHECK(elbo[i] == doctest::Approx(ll + lp - lq).epsilon(1e-10));
  }
}

TEST_CASE("more importance samples tighten the bound") {
  Rng rng(5);
  const VaeParams p = random_vae(rng, small_arch(6, 2));
  const Tensor x = random_tensor(rng, {100, 6});
  std::vector<double> diff;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const double k20 = iwae_bound(p, x, 20, LatentSource::kPrior, nullptr, Rng(100 + s)).mean;
    const double k1 = iwae_bound(p, x, 1, LatentSource::kPrior, nullptr, Rng(200 + s)).mean;
    diff.push_back(k20 - k1);
  }
  double m = 0.0, ss = 0.0;
  for (double v : diff) m += v / 10.0;
  for (double v : diff) ss += (v - m) * (v - m);
  const double sd = std::sqrt(ss / 9.0);
  CHECK(m > -3.0 * sd / std::sqrt(10.0));
  CHECK(m > 0.0);
}

TEST_CASE("unit mixture as latent source equals the prior bitwise") {
  Rng rng(6);
  const VaeParams p = random_vae(rng, small_arch(5, 4), true);
  const Tensor x = random_tensor(rng, {90, 5});
  const GmmApprox unit = standard_normal_gmm(4);
  const IwaeReport prior = iwae_bound(p, x, 20, LatentSource::kPrior, nullptr, Rng(7));
  const IwaeReport mix = iwae_bound(p, x, 20, LatentSource::kGmm, &unit, Rng(7));
  CHECK(prior.per_datum == mix.per_datum);
  CHECK(prior.mean == mix.mean);
  CHECK(mix.latent_source == LatentSource::kGmm);
}

TEST_CASE("IWAE is thread count invariant") {
  Rng rng(8);
  const VaeParams p = random_vae(rng, small_arch(5, 2), true);
  const Tensor x = random_tensor(rng, {200, 5});
  set_thread_count(1);
  const IwaeReport a = iwae_bound(p, x, 7, LatentSource::kPrior, nullptr, Rng(9));
  set_thread_count(4);
  const IwaeReport b = iwae_bound(p, x, 7, LatentSource::kPrior, nullptr, Rng(9));
  set_thread_count(1);
  CHECK(a.per_datum == b.per_datum);
}

TEST_CASE("IWAE stays finite when log weights spread over hundreds of nats") {
  Rng rng(10);
  VaeParams p = random_vae(rng, small_arch(6, 2));
  p.set_sigma_squared(1e-4);
  // Wide posteriors: samples land at very different reconstruction errors.
  p.encoder.layers().back().bias[2] = 3.0;
  p.encoder.layers().back().bias[3] = 3.0;
  const Tensor x = random_tensor(rng, {10, 6});
  const IwaeReport rep = iwae_bound(p, x, 20, LatentSource::kPrior, nullptr, Rng(11));
  const std::vector<double> elbo = single_sample_elbo(p, x, LatentSource::kPrior, nullptr, Rng(11));
  double lo = 0.0, hi = -1e300;
  for (double v : elbo) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  MESSAGE("single-sample log weights span " << hi - lo << " nats");
  CHECK(hi - lo > 700.0);
  for (double v : rep.per_datum) CHECK(std::isfinite(v));
}

TEST_CASE("IWAE argument checks") {
  Rng rng(12);
  const VaeParams p = random_vae(rng, small_arch(5, 2));
  const Tensor x = random_tensor(rng, {4, 5});
  CHECK_THROWS_AS(iwae_bound(p, x, 3, LatentSource::kGmm, nullptr, Rng(0)), ConfigError);
  CHECK_THROWS_AS(iwae_bound(p, x, 0, LatentSource::kPrior, nullptr, Rng(0)), InvalidArgument);
  const GmmApprox wrong = standard_normal_gmm(3);
  CHECK_THROWS_AS(iwae_bound(p, x, 3, LatentSource::kGmm, &wrong, Rng(0)), DimensionError);
  CHECK_THROWS_AS(iwae_bound(p, Tensor({4, 6}), 3, LatentSource::kPrior, nullptr, Rng(0)),
                  DimensionError);
  CHECK(parse_latent_source("gmm") == LatentSource::kGmm);
  CHECK_THROWS_AS(parse_latent_source("flow"), ConfigError);
}

TEST_CASE("reconstruction uses the posterior mean") {
  Rng rng(13);
  const VaeParams p = random_vae(rng, small_arch(6, 3), true);
  const Tensor x = random_tensor(rng, {8, 6});
  const UncertaintyMap a = reconstruct(p, x);
  const UncertaintyMap b = reconstruct(p, x);
  CHECK(a.mean.shape() == Shape{8, 6});
  CHECK(a.variance.shape() == Shape{8, 6});
  CHECK(a.mean == b.mean);
  CHECK(a.variance == b.variance);
  const DecodedDistribution direct = decode(p, encode(p, x).mean);
  CHECK(a.mean == direct.mean);
  for (double v : a.variance.values()) CHECK(v >= p.variance_floor);
}

TEST_CASE("generation") {
  Rng rng(14);
  const VaeParams p = random_vae(rng, small_arch(6, 2), true);
  Rng g0(1);
  const Generated none = generate(p, nullptr, g0, 0, LatentSource::kPrior);
  CHECK(none.z.rows() == 0);
  CHECK(none.images.mean.rows() == 0);

  Rng a(2), b(2);
  const Generated ga = generate(p, nullptr, a, 50, LatentSource::kPrior);
  const Generated gb = generate(p, nullptr, b, 50, LatentSource::kPrior);
  CHECK(ga.images.mean == gb.images.mean);
  for (double v : ga.images.variance.values()) CHECK(v >= p.variance_floor);

  GmmApprox g = standard_normal_gmm(2);
  g.means(0, 0) = 5.0;
  Rng c(3);
  const Generated gg = generate(p, &g, c, 200, LatentSource::kGmm);
  double m = 0.0;
  for (std::size_t i = 0; i < 200; ++i) m += gg.z(i, 0) / 200.0;
  CHECK(m == doctest::Approx(5.0).epsilon(0.05));
  Rng d(4);
  CHECK_THROWS_AS(generate(p, nullptr, d, 5, LatentSource::kGmm), ConfigError);
}

TEST_CASE("MMD of a sample set with itself is not positive") {
  Rng rng(15);
  const Tensor a = random_tensor(rng, {200, 4});
  const std::vector<double> bw{0.5, 1.0, 2.0};
  CHECK(mmd_proxy(a, a, bw) <= 1e-12);
  CHECK_THROWS_AS(mmd_proxy(a.slice_rows(0, 1), a, bw), InvalidArgument);
  CHECK_THROWS_AS(mmd_proxy(a, Tensor({5, 3}), bw), DimensionError);
}

TEST_CASE("MMD against a direct double sum") {
  Rng rng(16);
  const Tensor a = random_tensor(rng, {12, 3});
  const Tensor b = gaussian_rows(rng, 9, 3, 0.7);
  const std::vector<double> bw{0.8, 1.7};
  auto k = [&](std::span<const double> x, std::span<const double> y) {
    double d2 = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) d2 += (x[j] - y[j]) * (x[j] - y[j]);
    double s = 0.0;
    for (double h : bw) s += std::exp(-d2 / (2.0 * h * h));
    return s;
  };
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 12; ++j)
      if (i != j) saa += k(a.row(i), a.row(j));
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t j = 0; j < 9; ++j)
      if (i != j) sbb += k(b.row(i), b.row(j));
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 9; ++j) sab += k(a.row(i), b.row(j));
  const double expect = saa / (12.0 * 11.0) + sbb / (9.0 * 8.0) - 2.0 * sab / (12.0 * 9.0);
  CHECK(mmd_proxy(a, b, bw) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("MMD permutation test: same distribution") {
  Rng rng(17);
  const Tensor a = gaussian_rows(rng, 2000, 4, 0.0);
  const Tensor b = gaussian_rows(rng, 2000, 4, 0.0);
  const auto bw = median_heuristic_bandwidths(a, b);
  Rng perm(18);
  const PermutationTest t = mmd_permutation_test(a, b, bw, 30, perm);
  MESSAGE("same: stat " << t.statistic << ", null " << t.null_mean << " +- " << t.null_std);
  CHECK(std::abs(t.z_score()) < 3.0);
}

TEST_CASE("MMD permutation test: shifted distribution") {
  Rng rng(19);
  const Tensor a = gaussian_rows(rng, 2000, 4, 0.0);
  const Tensor b = gaussian_rows(rng, 2000, 4, 2.0);
  const auto bw = median_heuristic_bandwidths(a, b);
  Rng perm(20);
  const PermutationTest t = mmd_permutation_test(a, b, bw, 30, perm);
  CHECK(t.statistic > 0.0);
  CHECK(t.z_score() > 5.0);
}

TEST_CASE("median heuristic bandwidths") {
  const Tensor a = Tensor::from_rows({{0.0}, {1.0}});
  const Tensor b = Tensor::from_rows({{3.0}, {6.0}});
  // Pairwise distances 1, 3, 6, 2, 5, 3: upper median 3.
  const auto bw = median_heuristic_bandwidths(a, b);
  REQUIRE(bw.size() == 3);
  CHECK(bw[0] == doctest::Approx(1.5));
  CHECK(bw[1] == doctest::Approx(3.0));
  CHECK(bw[2] == doctest::Approx(6.0));
  CHECK_THROWS_AS(median_heuristic_bandwidths(Tensor({2, 1}), Tensor({2, 1})), InvalidArgument);
}

TEST_CASE("pearson correlation") {
  const std::vector<double> x{1, 2, 3, 4, 5};
  const std::vector<double> up{2, 4, 6, 8, 10}, down{5, 4, 3, 2, 1}, mixed{2, 1, 4, 3, 5};
  CHECK(pearson_correlation(x, up) == doctest::Approx(1.0));
  CHECK(pearson_correlation(x, down) == doctest::Approx(-1.0));
  CHECK(pearson_correlation(x, mixed) == doctest::Approx(0.8));
  const std::vector<double> flat{1, 1, 1, 1, 1};
  CHECK_THROWS_AS(pearson_correlation(x, flat), NumericError);
}

TEST_CASE("PGM grid output") {
  const Tensor imgs = Tensor::from_rows({{0.0, 1.0, 0.5, 2.0}, {-1.0, 0.25, 0.75, 1.0}});
  const auto path = scratch("grid.pgm");
  write_pgm_grid(path, imgs, 2, 2, 2, 0.0, 1.0);
  std::ifstream in(path, std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string header = "P5\n4 2\n255\n";
  REQUIRE(bytes.size() == header.size() + 8);
  CHECK(bytes.substr(0, header.size()) == header);
  const auto px = [&](std::size_t i) { return static_cast<unsigned char>(bytes[header.size() + i]); };
  // Row 0: image 0 top row, then image 1 top row.
  CHECK(px(0) == 0);
  CHECK(px(1) == 255);
  CHECK(px(2) == 0);
  CHECK(px(3) == 64);
  CHECK(px(4) == 128);
  CHECK(px(5) == 255);
  CHECK(px(6) == 191);
  CHECK(px(7) == 255);

  const MapScale s = write_variance_grid(scratch("var.pgm"), imgs, 2, 2, 1);
  CHECK(s.lo == -1.0);
  CHECK(s.hi == 2.0);
  CHECK_THROWS_AS(write_pgm_grid(path, imgs, 3, 2, 1, 0.0, 1.0), DimensionError);
}
