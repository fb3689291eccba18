#include <cmath>

#include "doctest.h"
#include "test_support.hpp"
#include "vcvae/error.hpp"
#include "vcvae/linalg.hpp"
#include "vcvae/rng.hpp"
#include "vcvae/tensor.hpp"

using namespace vcvae;
using vcvae::testing::naive_matmul;
using vcvae::testing::random_tensor;

TEST_CASE("tensor shape invariants") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.cols() == 3);
  CHECK(t.slice_rows(1, 2).shape() == Shape{1, 3});
  Tensor empty({0, 4});
  CHECK(empty.empty());
}

TEST_CASE("matmul") {
  SUBCASE("identity") {
    const Tensor b = Tensor::from_rows({{3, 4}, {5, 6}});
    CHECK(matmul(identity(2), b) == b);
    CHECK(matmul(b, identity(2)) == b);
  }
  SUBCASE("row times column") {
    const Tensor r = matmul(Tensor::from_rows({{1, 2}}), Tensor::from_rows({{3}, {4}}));
    CHECK(r.shape() == Shape{1, 1});
    CHECK(r[0] == 11.0);
  }
  SUBCASE("random 7x5 by 5x3 against triple loop") {
    Rng rng(7);
    const Tensor a = random_tensor(rng, {7, 5});
    const Tensor b = random_tensor(rng, {5, 3});
    CHECK(max_abs_diff(matmul(a, b), naive_matmul(a, b)) <= 1e-12);
    CHECK(max_abs_diff(matmul_tn(transpose(a), b), naive_matmul(a, b)) <= 1e-12);
    CHECK(max_abs_diff(matmul_nt(a, transpose(b)), naive_matmul(a, b)) <= 1e-12);
  }
  SUBCASE("identity is exact for random matrices") {
    Rng rng(8);
    const Tensor a = random_tensor(rng, {6, 6});
    CHECK(matmul(identity(6), a) == a);
    CHECK(matmul(a, identity(6)) == a);
  }
  SUBCASE("shape mismatch names both shapes") {
    try {
      matmul(Tensor({2, 3}), Tensor({2, 3}));
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      const std::string what = e.what();
      CHECK(what.find("[2x3]") != std::string::npos);
    }
  }
}

TEST_CASE("standard normal sampling") {
  Rng rng(2024);
  const Tensor t = sample_standard_normal(rng, {100000});
  double mean = 0.0;
  for (double v : t.values()) mean += v;
  mean /= static_cast<double>(t.size());
  double var = 0.0;
  for (double v : t.values()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(t.size() - 1);
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.02);

  Rng a(5), b(5), c(6);
  const Tensor ta = sample_standard_normal(a, {64});
  CHECK(ta == sample_standard_normal(b, {64}));
  CHECK_FALSE(ta == sample_standard_normal(c, {64}));
}

TEST_CASE("derived streams depend only on key and label") {
  Rng parent(11);
  Rng early = parent.derive("x");
  for (int i = 0; i < 10; ++i) parent.normal();
  Rng late = parent.derive("x");
  CHECK(early.next_u64() == late.next_u64());
  CHECK(parent.derive("x").next_u64() != parent.derive("y").next_u64());
  CHECK(parent.derive(std::uint64_t{1}).next_u64() != parent.derive(std::uint64_t{2}).next_u64());
}

TEST_CASE("cholesky") {
  SUBCASE("identity") { CHECK(cholesky(identity(3)) == identity(3)); }
  SUBCASE("hand-checkable 2x2") {
    const Tensor l = cholesky(Tensor::from_rows({{4, 2}, {2, 3}}));
    CHECK(l(0, 0) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(l(0, 1) == 0.0);
    CHECK(l(1, 0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(l(1, 1) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  }
  SUBCASE("random SPD round trip up to 32x32") {
    Rng rng(99);
    for (std::size_t n : {1u, 2u, 6u, 13u, 32u}) {
      const Tensor a = random_tensor(rng, {n, n});
      const Tensor spd = add(matmul_tn(a, a), identity(n));
      const Tensor l = cholesky(spd);
      const Tensor back = naive_matmul(l, transpose(l));
      CHECK(max_abs_diff(back, spd) <= 1e-10 * max_abs(spd));
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) CHECK(l(i, j) == 0.0);
    }
  }
  SUBCASE("non positive definite reports pivot") {
    try {
      cholesky(Tensor::from_rows({{1, 2}, {2, 1}}));
      FAIL("expected DecompositionError");
    } catch (const DecompositionError& e) {
      CHECK(e.pivot() == 1);
    }
  }
  SUBCASE("triangular solve and log det") {
    const Tensor l = cholesky(Tensor::from_rows({{4, 2}, {2, 3}}));
    std::vector<double> b{2.0, 1.0 + std::sqrt(2.0)};
    solve_lower_inplace(l, b);
    CHECK(b[0] == doctest::Approx(1.0));
    CHECK(b[1] == doctest::Approx(1.0));
    CHECK(cholesky_log_det(l) == doctest::Approx(std::log(8.0)));
  }
}
