#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "test_support.hpp"
#include "vae_fixtures.hpp"
#include "vcvae/error.hpp"
#include "vcvae/gmm.hpp"
#include "vcvae/linalg.hpp"
#include "vcvae/parallel.hpp"

using namespace vcvae;
using namespace vcvae::testing;

namespace {

// Two-dimensional mixture evaluated straight from the density formula.
double naive_density_2d(const GmmApprox& g, double z0, double z1) {
  double total = 0.0;
  for (std::size_t m = 0; m < g.components(); ++m) {
    const Tensor c = g.covariance(m);
    const double det = c(0, 0) * c(1, 1) - c(0, 1) * c(1, 0);
    const double a = z0 - g.means(m, 0), b = z1 - g.means(m, 1);
    const double q = (c(1, 1) * a * a - 2.0 * c(0, 1) * a * b + c(0, 0) * b * b) / det;
    total += g.weights[m] * std::exp(-0.5 * q) / (2.0 * M_PI * std::sqrt(det));
  }
  return total;
}

GmmApprox two_component_2d() {
  GmmApprox g;
  g.weights = Tensor({2}, {0.3, 0.7});
  g.means = Tensor::from_rows({{-1.0, 0.5}, {1.5, -0.5}});
  g.covariances = Tensor({2, 2, 2}, {0.5, 0.2, 0.2, 0.8, 0.3, -0.1, -0.1, 0.4});
  return g;
}

Tensor clusters(Rng& rng, std::size_t n, const std::vector<std::vector<double>>& centers,
                double spread) {
  const std::size_t l = centers[0].size();
  Tensor x({n, l});
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = centers[i % centers.size()];
    for (std::size_t j = 0; j < l; ++j) x(i, j) = c[j] + spread * rng.normal();
  }
  return x;
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "vcvae_test_aggpost";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("latent cloud mirrors encode") {
  Rng rng(1);
  const VaeParams p = random_vae(rng, small_arch(6, 3));
  const Tensor x = random_tensor(rng, {5, 6});
  const LatentCloud cloud = build_latent_cloud(p, x);
  CHECK(cloud.rows() == 5);
  CHECK(cloud.latent_dim() == 3);
  const auto one = build_latent_cloud(p, x.slice_rows(2, 3));
  const auto post = encode(p, x.slice_rows(2, 3));
  CHECK(one.mean == post.mean);
  CHECK(one.log_var == post.log_var);
  const LatentCloud again = build_latent_cloud(p, x);
  CHECK(again.mean == cloud.mean);
  CHECK(again.log_var == cloud.log_var);
}

TEST_CASE("one component EM lands on the sample moments") {
  Rng rng(2);
  const Tensor x = random_tensor(rng, {300, 3});
  GmmFitOptions opts;
  opts.components = 1;
  Rng em(9);
  const GmmFit fit = fit_gmm_samples(x, opts, em);
  CHECK(fit.converged);
  for (std::size_t j = 0; j < 3; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < 300; ++i) mean += x(i, j);
    mean /= 300.0;
    CHECK(fit.gmm.means(0, j) == doctest::Approx(mean).epsilon(1e-12));
    for (std::size_t k = 0; k < 3; ++k) {
      double mk = 0.0, c = 0.0;
      for (std::size_t i = 0; i < 300; ++i) mk += x(i, k);
      mk /= 300.0;
      for (std::size_t i = 0; i < 300; ++i) c += (x(i, j) - mean) * (x(i, k) - mk);
      CHECK(fit.gmm.covariance(0)(j, k) == doctest::Approx(c / 300.0).epsilon(1e-10));
    }
  }
  CHECK(fit.gmm.weights[0] == 1.0);
}

TEST_CASE("EM separates two well separated clusters") {
  Rng rng(3);
  const Tensor x = clusters(rng, 2000, {{-4.0, 1.0}, {4.0, -1.0}}, 0.5);
  GmmFitOptions opts;
  opts.components = 2;
  Rng em(4);
  const GmmFit fit = fit_gmm_samples(x, opts, em);
  const std::size_t left = fit.gmm.means(0, 0) < 0 ? 0 : 1;
  CHECK(std::abs(fit.gmm.means(left, 0) + 4.0) < 0.1);
  CHECK(std::abs(fit.gmm.means(left, 1) - 1.0) < 0.1);
  CHECK(std::abs(fit.gmm.means(1 - left, 0) - 4.0) < 0.1);
  CHECK(std::abs(fit.gmm.means(1 - left, 1) + 1.0) < 0.1);
  CHECK(std::abs(fit.gmm.weights[0] - 0.5) < 0.05);
  CHECK_NOTHROW(fit.gmm.validate());
}

TEST_CASE("EM log-likelihood never decreases") {
  Rng rng(5);
  const Tensor x = clusters(rng, 900, {{0.0, 0.0, 0.0}, {2.0, 1.0, 0.0}, {-1.0, 3.0, 1.0}}, 0.8);
  GmmFitOptions opts;
  opts.components = 5;
  opts.tol = 0.0;
  opts.max_iters = 60;
  Rng em(6);
  const GmmFit fit = fit_gmm_samples(x, opts, em);
  REQUIRE(fit.reinitializations == 0);
  REQUIRE(fit.log_likelihood.size() > 10);
  for (std::size_t i = 1; i < fit.log_likelihood.size(); ++i) {
    CHECK(fit.log_likelihood[i] >= fit.log_likelihood[i - 1] - 1e-9);
  }
}

TEST_CASE("EM is deterministic across seeds and thread counts") {
  Rng rng(7);
  const Tensor x = clusters(rng, 500, {{0.0, 0.0}, {3.0, 3.0}}, 1.0);
  GmmFitOptions opts;
  opts.components = 3;
  set_thread_count(1);
  Rng a(8);
  const GmmFit fa = fit_gmm_samples(x, opts, a);
  set_thread_count(4);
  Rng b(8);
  const GmmFit fb = fit_gmm_samples(x, opts, b);
  set_thread_count(1);
  CHECK(fa.gmm.means == fb.gmm.means);
  CHECK(fa.gmm.covariances == fb.gmm.covariances);
  CHECK(fa.gmm.weights == fb.gmm.weights);
  CHECK(fa.log_likelihood == fb.log_likelihood);
}

TEST_CASE("EM input validation") {
  Rng rng(1);
  GmmFitOptions opts;
  opts.components = 4;
  CHECK_THROWS_AS(fit_gmm_samples(random_tensor(rng, {3, 2}), opts, rng), InvalidArgument);
  opts.components = 0;
  CHECK_THROWS_AS(fit_gmm_samples(random_tensor(rng, {3, 2}), opts, rng), InvalidArgument);
}

TEST_CASE("singular covariances are rescued by jitter") {
  Tensor same({20, 2}, 1.5);
  GmmFitOptions opts;
  opts.components = 2;
  Rng rng(3);
  const GmmFit fit = fit_gmm_samples(same, opts, rng);
  CHECK(fit.reinitializations == 0);
  CHECK_NOTHROW(fit.gmm.validate());
}

TEST_CASE("empty components are re-seeded, then rejected") {
  Rng data_rng(4);
  const Tensor x = random_tensor(data_rng, {50, 2});
  GmmApprox init;
  init.weights = Tensor({2}, {0.5, 0.5});
  init.means = Tensor::from_rows({{0.0, 0.0}, {1e4, 1e4}});
  init.covariances = Tensor({2, 2, 2}, {1.0, 0.0, 0.0, 1.0, 1e-4, 0.0, 0.0, 1e-4});
  GmmFitOptions opts;
  opts.components = 2;
  Rng rng(5);
  const GmmFit fit = fit_gmm_from(x, init, opts, rng);
  CHECK(fit.reinitializations == 1);
  CHECK_NOTHROW(fit.gmm.validate());
  CHECK(std::abs(fit.gmm.means(1, 0)) < 10.0);

  opts.max_reinitializations = 0;
  Rng again(5);
  CHECK_THROWS_AS(fit_gmm_from(x, init, opts, again), NumericError);
}

TEST_CASE("fit on posterior draws") {
  Rng rng(10);
  LatentCloud cloud{random_tensor(rng, {200, 2}), Tensor({200, 2}, -4.0)};
  GmmFitOptions opts;
  opts.components = 2;
  Rng a(1), b(1);
  const GmmFit fa = fit_gmm(cloud, opts, a);
  const GmmFit fb = fit_gmm(cloud, opts, b);
  CHECK(fa.gmm.means == fb.gmm.means);
  Rng draw = Rng(1).derive("cloud-draw");
  const Tensor z = sample_cloud(cloud, draw);
  CHECK(z.shape() == Shape{200, 2});
  CHECK(max_abs_diff(z, cloud.mean) < 1.0);
}

TEST_CASE("sampling a unit mixture gives standard normal moments") {
  Rng rng(11);
  const Tensor z = gmm_sample(standard_normal_gmm(3), rng, 100000);
  for (std::size_t j = 0; j < 3; ++j) {
    double m = 0.0, v = 0.0;
    for (std::size_t i = 0; i < z.rows(); ++i) m += z(i, j);
    m /= z.rows();
    for (std::size_t i = 0; i < z.rows(); ++i) v += (z(i, j) - m) * (z(i, j) - m);
    v /= z.rows();
    CHECK(std::abs(m) < 0.02);
    CHECK(std::abs(v - 1.0) < 0.02);
  }
}

TEST_CASE("zero weight components are never sampled") {
  GmmApprox g;
  g.weights = Tensor({2}, {1.0, 0.0});
  g.means = Tensor::from_rows({{-100.0}, {100.0}});
  g.covariances = Tensor({2, 1, 1}, 1.0);
  Rng rng(12);
  const Tensor z = gmm_sample(g, rng, 5000);
  for (double v : z.values()) CHECK(v < 0.0);
  Rng a(13), b(13);
  CHECK(gmm_sample(g, a, 10) == gmm_sample(g, b, 10));
}

TEST_CASE("mixture log density") {
  const GmmApprox unit = standard_normal_gmm(2);
  CHECK(gmm_log_density(unit, Tensor({1, 2}))[0] ==
        doctest::Approx(-std::log(2 * M_PI)).epsilon(1e-14));
  CHECK(gmm_log_density(unit, Tensor({1, 2}))[0] == doctest::Approx(-1.83788).epsilon(1e-5));

  const GmmApprox g = two_component_2d();
  Rng rng(14);
  const Tensor z = random_tensor(rng, {50, 2});
  const Tensor lq = gmm_log_density(g, z);
  for (std::size_t i = 0; i < 50; ++i) {
    CHECK(lq[i] == doctest::Approx(std::log(naive_density_2d(g, z(i, 0), z(i, 1)))).epsilon(1e-10));
  }

  GmmApprox swapped;
  swapped.weights = Tensor({2}, {0.7, 0.3});
  swapped.means = Tensor::from_rows({{1.5, -0.5}, {-1.0, 0.5}});
  swapped.covariances = Tensor({2, 2, 2}, {0.3, -0.1, -0.1, 0.4, 0.5, 0.2, 0.2, 0.8});
  CHECK(max_abs_diff(gmm_log_density(swapped, z), lq) < 1e-12);

  CHECK_THROWS_AS(gmm_log_density(g, Tensor({2, 3})), DimensionError);
}

TEST_CASE("unit mixture reproduces the standard normal density exactly") {
  Rng rng(15);
  const Tensor z = random_tensor(rng, {40, 16});
  const Tensor lq = gmm_log_density(standard_normal_gmm(16), z);
  for (std::size_t i = 0; i < 40; ++i) CHECK(lq[i] == standard_normal_log_density(z.row(i)));
}

TEST_CASE("log density survives far tails") {
  const Tensor z = Tensor::from_rows({{40.0, -40.0}});
  const double lq = gmm_log_density(two_component_2d(), z)[0];
  CHECK(std::isfinite(lq));
  CHECK(lq < -1000.0);
}

TEST_CASE("KL gap of the prior to itself") {
  const KlGap kl = kl_gap_estimate(standard_normal_gmm(4), Rng(16), 10000, 10);
  CHECK(kl.runs.size() == 10);
  CHECK(std::abs(kl.mean) <= 3.0 * kl.std + 1e-15);
}

TEST_CASE("KL gap of a shifted unit Gaussian") {
  GmmApprox g = standard_normal_gmm(3);
  g.means(0, 0) = 1.0;
  const KlGap kl = kl_gap_estimate(g, Rng(17), 10000, 10);
  CHECK(std::abs(kl.mean - 0.5) < 3.0 * kl.std);
  CHECK(kl.mean > -3.0 * kl.std);
}

TEST_CASE("KL gap agrees with grid quadrature") {
  const GmmApprox g = two_component_2d();
  const double h = 0.02, lo = -9.0;
  const int steps = 900;
  double quad = 0.0;
  for (int i = 0; i < steps; ++i) {
    for (int j = 0; j < steps; ++j) {
      const double a = lo + (i + 0.5) * h, b = lo + (j + 0.5) * h;
      const double q = naive_density_2d(g, a, b);
      if (q <= 0.0) continue;
      const double p = std::exp(-0.5 * (a * a + b * b)) / (2.0 * M_PI);
      quad += q * std::log(q / p) * h * h;
    }
  }
  const KlGap kl = kl_gap_estimate(g, Rng(18), 10000, 10);
  MESSAGE("quadrature " << quad << ", monte carlo " << kl.mean << " +- " << kl.std);
  CHECK(std::abs(kl.mean - quad) < 0.01);
}

TEST_CASE("KL gap argument checks") {
  CHECK_THROWS_AS(kl_gap_estimate(standard_normal_gmm(2), Rng(0), 0, 2), InvalidArgument);
  CHECK_THROWS_AS(kl_gap_estimate(standard_normal_gmm(2), Rng(0), 10, 1), InvalidArgument);
}

TEST_CASE("GMM validation and container round trip") {
  const GmmApprox g = two_component_2d();
  CHECK_NOTHROW(g.validate());
  GmmApprox bad = g;
  bad.weights[0] = 0.31;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = g;
  bad.covariances[0] = -1.0;
  CHECK_THROWS_AS(bad.validate(), DecompositionError);

  const auto path = scratch("g.gmm");
  save_gmm(path, g);
  const GmmApprox r = load_gmm(path);
  CHECK(r.weights == g.weights);
  CHECK(r.means == g.means);
  CHECK(r.covariances == g.covariances);
  CHECK(read_container(path).require("section") == "gmm");

  Container model;
  model.set("section", "model");
  write_container(path, model);
  CHECK_THROWS_AS(load_gmm(path), FormatError);
}
