#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "tagat/matrix.hpp"

using namespace tagat;

namespace {

Mat64 random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  Mat64 m(r, c);
  for (auto& v : m.data()) v = uni(rng);
  return m;
}

Mat64 random_spd(std::size_t n, std::uint64_t seed) {
  const Mat64 b = random_matrix(n, n, seed);
  Mat64 spd(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < n; ++k) acc += b(k, i) * b(k, j);
      spd(i, j) = acc;
    }
  return spd;
}

// Independent 3x3 inverse via the adjugate formula.
Mat64 invert3x3(const Mat64& a) {
  const double det = a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) -
                     a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0)) +
                     a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
  Mat64 inv(3, 3);
  inv(0, 0) = (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) / det;
  inv(0, 1) = (a(0, 2) * a(2, 1) - a(0, 1) * a(2, 2)) / det;
  inv(0, 2) = (a(0, 1) * a(1, 2) - a(0, 2) * a(1, 1)) / det;
  inv(1, 0) = (a(1, 2) * a(2, 0) - a(1, 0) * a(2, 2)) / det;
  inv(1, 1) = (a(0, 0) * a(2, 2) - a(0, 2) * a(2, 0)) / det;
  inv(1, 2) = (a(0, 2) * a(1, 0) - a(0, 0) * a(1, 2)) / det;
  inv(2, 0) = (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0)) / det;
  inv(2, 1) = (a(0, 1) * a(2, 0) - a(0, 0) * a(2, 1)) / det;
  inv(2, 2) = (a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0)) / det;
  return inv;
}

}  // namespace

TEST_CASE("pearson_corr_matrix hand oracles") {
  SUBCASE("perfectly collinear columns") {
    const auto ts = Mat64::from_rows({{1, 2}, {2, 4}, {3, 6}});
    const auto c = pearson_corr_matrix(ts);
    CHECK(c(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(c(0, 0) == 1.0);
    CHECK(c(1, 1) == 1.0);
  }
  SUBCASE("anti-collinear columns") {
    const auto ts = Mat64::from_rows({{1, 6}, {2, 4}, {3, 2}});
    const auto c = pearson_corr_matrix(ts);
    CHECK(c(0, 1) == doctest::Approx(-1.0).epsilon(1e-12));
  }
  SUBCASE("hand-computed 0.5") {
    // center both: dot = 1, norms sqrt(2)*sqrt(2)
    const auto ts = Mat64::from_rows({{1, 1}, {2, 3}, {3, 2}});
    const auto c = pearson_corr_matrix(ts);
    CHECK(c(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(c(1, 0) == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("constant column rejected") {
    const auto ts = Mat64::from_rows({{1, 5}, {2, 5}, {3, 5}});
    CHECK_THROWS_AS(pearson_corr_matrix(ts), ZeroVarianceColumn);
    try {
      pearson_corr_matrix(ts);
    } catch (const ZeroVarianceColumn& e) {
      CHECK(e.column == 1);
    }
  }
  SUBCASE("too few rows rejected") {
    const auto ts = Mat64::from_rows({{1, 2}, {2, 1}});
    CHECK_THROWS_AS(pearson_corr_matrix(ts), ShapeMismatch);
  }
}

TEST_CASE("pearson_corr_matrix structural properties") {
  const auto ts = random_matrix(40, 6, 11);
  const auto c = pearson_corr_matrix(ts);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(c(i, i) == 1.0);
    for (std::size_t j = 0; j < 6; ++j) {
      CHECK(c(i, j) == c(j, i));
      CHECK(c(i, j) >= -1.0);
      CHECK(c(i, j) <= 1.0);
    }
  }
}

TEST_CASE("pearson invariant to positive affine rescaling of a column") {
  const auto ts = random_matrix(30, 5, 22);
  auto scaled = ts;
  for (std::size_t t = 0; t < 30; ++t) scaled(t, 2) = 3.7 * scaled(t, 2) + 11.0;
  const auto a = pearson_corr_matrix(ts);
  const auto b = pearson_corr_matrix(scaled);
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-10));
}

TEST_CASE("covariance hand oracles") {
  SUBCASE("identical rows give the zero matrix") {
    const auto ts = Mat64::from_rows({{1, 2, 3}, {1, 2, 3}, {1, 2, 3}});
    const auto cov = covariance(ts);
    for (double v : cov.data()) CHECK(v == 0.0);
  }
  SUBCASE("single column variance") {
    const auto ts = Mat64::from_rows({{1.0}, {2.0}, {3.0}});
    const auto cov = covariance(ts);
    CHECK(cov(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("two collinear columns") {
    const auto ts = Mat64::from_rows({{1, 2}, {2, 4}, {3, 6}});
    const auto cov = covariance(ts);
    CHECK(cov(0, 1) == doctest::Approx(2.0).epsilon(1e-15));
  }
  SUBCASE("needs two rows") {
    const auto ts = Mat64::from_rows({{1, 2}});
    CHECK_THROWS_AS(covariance(ts), ShapeMismatch);
  }
}

TEST_CASE("precision_ridge hand oracles") {
  SUBCASE("identity plus ridge one") {
    Mat64 eye(3, 3);
    for (int i = 0; i < 3; ++i) eye(i, i) = 1.0;
    const auto prec = precision_ridge(eye, 1.0);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j)
        CHECK(prec(i, j) == doctest::Approx(i == j ? 0.5 : 0.0).epsilon(1e-14));
  }
  SUBCASE("diagonal") {
    auto d = Mat64::from_rows({{1, 0}, {0, 3}});
    const auto prec = precision_ridge(d, 1.0);
    CHECK(prec(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(prec(1, 1) == doctest::Approx(0.25).epsilon(1e-14));
  }
  SUBCASE("not positive definite") {
    auto d = Mat64::from_rows({{-2, 0}, {0, -2}});
    CHECK_THROWS_AS(precision_ridge(d, 0.5), FactorizationFailed);
  }
}

TEST_CASE("precision_ridge reconstructs identity for random SPD matrices") {
  for (std::size_t n : {5u, 16u, 64u}) {
    const auto cov = random_spd(n, 100 + n);
    const double ridge = 0.5;
    const auto prec = precision_ridge(cov, ridge);
    // brute-force multiply (cov + ridge I) * prec
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0;
        for (std::size_t k = 0; k < n; ++k)
          acc += (cov(i, k) + (i == k ? ridge : 0.0)) * prec(k, j);
        CHECK(acc == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-8));
      }
    // symmetry within 1e-10
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        CHECK(std::abs(prec(i, j) - prec(j, i)) < 1e-10);
  }
}

TEST_CASE("partial_corr hand oracles") {
  SUBCASE("diagonal precision means independence") {
    auto prec = Mat64::from_rows({{2.0, 0.0, 0.0}, {0.0, 5.0, 0.0}, {0.0, 0.0, 1.0}});
    const auto rho = partial_corr(prec);
    for (double v : rho.data()) CHECK(v == 0.0);
  }
  SUBCASE("2x2 value") {
    auto prec = Mat64::from_rows({{2.0, -1.0}, {-1.0, 2.0}});
    const auto rho = partial_corr(prec);
    CHECK(rho(0, 1) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(rho(0, 0) == 0.0);
  }
  SUBCASE("three-variable chain has zero non-adjacent partial correlation") {
    const auto cov = Mat64::from_rows({{1.0, 0.5, 0.25}, {0.5, 1.0, 0.5}, {0.25, 0.5, 1.0}});
    const auto prec = invert3x3(cov);
    const auto rho = partial_corr(prec);
    CHECK(std::abs(rho(0, 2)) < 1e-12);
    CHECK(rho(0, 1) > 0.0);
    CHECK(rho(1, 2) > 0.0);
  }
  SUBCASE("nonpositive diagonal rejected") {
    auto prec = Mat64::from_rows({{2.0, 0.0}, {0.0, 0.0}});
    CHECK_THROWS_AS(partial_corr(prec), NonpositiveDiagonal);
  }
}

TEST_CASE("precision_ridge agrees with adjugate inverse on a 3x3") {
  const auto cov = Mat64::from_rows({{2.0, 0.3, 0.1}, {0.3, 1.5, -0.2}, {0.1, -0.2, 1.0}});
  const double ridge = 0.25;
  auto shifted = cov;
  for (int i = 0; i < 3; ++i) shifted(i, i) += ridge;
  const auto oracle = invert3x3(shifted);
  const auto prec = precision_ridge(cov, ridge);
  for (std::size_t i = 0; i < 9; ++i)
    CHECK(prec.data()[i] == doctest::Approx(oracle.data()[i]).epsilon(1e-12));
}

TEST_CASE("activations") {
  SUBCASE("softmax symmetry and stability") {
    const std::vector<double> logits{0.0, 0.0};
    const auto sm = softmax(logits);
    CHECK(sm[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(sm[1] == doctest::Approx(0.5).epsilon(1e-15));

    const std::vector<double> big{1000.0, 1000.0, 999.0};
    const auto smb = softmax(big);
    double sum = 0;
    for (double v : smb) {
      CHECK(std::isfinite(v));
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
  SUBCASE("softmax invariant to constant logit shift") {
    const std::vector<double> a{0.3, -1.2, 2.5, 0.0};
    std::vector<double> b = a;
    for (double& v : b) v += 123.456;
    const auto sa = softmax(a);
    const auto sb = softmax(b);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(sa[i] - sb[i]) <= 1e-12);
  }
  SUBCASE("silu values") {
    CHECK(silu(0.0) == 0.0);
    CHECK(silu(1.0) == doctest::Approx(0.7310585786300049).epsilon(1e-12));
  }
  SUBCASE("sigmoid stays in (0,1) even for extreme inputs") {
    CHECK(sigmoid(800.0) > 0.0);
    CHECK(sigmoid(800.0) <= 1.0);
    CHECK(sigmoid(-800.0) >= 0.0);
    CHECK(sigmoid(-800.0) < 1.0);
    CHECK(sigmoid(0.0) == doctest::Approx(0.5));
  }
  SUBCASE("leaky_relu") {
    CHECK(leaky_relu(2.0, 0.2) == 2.0);
    CHECK(leaky_relu(-2.0, 0.2) == doctest::Approx(-0.4));
  }
}
