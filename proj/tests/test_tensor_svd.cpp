#include <cmath>
#include <random>

#include "doctest.h"
#include "prfl/errors.hpp"
#include "prfl/svd.hpp"
#include "prfl/tensor.hpp"

using namespace prfl;

namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                     double scale = 1.0) {
  Tensor m = Tensor::matrix(rows, cols);
  std::normal_distribution<double> dist(0.0, scale);
  for (double& v : m.data) v = dist(rng);
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.dims == b.dims);
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

// Max deviation of M^T M from the identity.
double orthonormality_error(const Tensor& m) {
  const Tensor gram = matmul_tn(m, m);
  double err = 0.0;
  for (std::size_t i = 0; i < gram.rows(); ++i)
    for (std::size_t j = 0; j < gram.cols(); ++j)
      err = std::max(err, std::abs(gram.at(i, j) - (i == j ? 1.0 : 0.0)));
  return err;
}

}  // namespace

TEST_CASE("matmul variants agree with naive triple loops") {
  std::mt19937_64 rng(7);
  const Tensor a = random_matrix(5, 3, rng);
  const Tensor b = random_matrix(3, 4, rng);
  const Tensor c = matmul(a, b);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 3; ++k) s += a.at(i, k) * b.at(k, j);
      CHECK(c.at(i, j) == doctest::Approx(s).epsilon(1e-12));
    }
  CHECK(max_abs_diff(matmul_nt(a, transpose(b)), c) < 1e-12);
  CHECK(max_abs_diff(matmul_tn(transpose(a), b), c) < 1e-12);
}

TEST_CASE("matmul rejects mismatched shapes") {
  const Tensor a = Tensor::matrix(2, 3);
  const Tensor b = Tensor::matrix(4, 5);
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("axpy, sub and norms") {
  Tensor a({2, 2}, {1, 2, 3, 4});
  const Tensor b({2, 2}, {1, 1, 1, 1});
  axpy_inplace(a, 2.0, b);
  CHECK(a.data == std::vector<double>{3, 4, 5, 6});
  const Tensor d = sub(a, b);
  CHECK(d.data == std::vector<double>{2, 3, 4, 5});
  CHECK(frobenius_norm(b) == doctest::Approx(2.0));
}

TEST_CASE("svd reconstructs and is orthonormal across shapes") {
  std::mt19937_64 rng(42);
  const std::pair<std::size_t, std::size_t> shapes[] = {
      {1, 1}, {3, 3}, {8, 3}, {3, 8}, {16, 16}, {32, 7}, {7, 32}, {64, 24}};
  for (const auto& [rows, cols] : shapes) {
    const Tensor m = random_matrix(rows, cols, rng);
    const SvdResult f = svd(m);
    const std::size_t k = std::min(rows, cols);
    REQUIRE(f.s.size() == k);
    for (std::size_t i = 0; i + 1 < k; ++i) CHECK(f.s[i] >= f.s[i + 1]);
    for (double s : f.s) CHECK(s >= 0.0);
    CHECK(orthonormality_error(f.u) < 1e-8);
    CHECK(orthonormality_error(transpose(f.vt)) < 1e-8);

    // U diag(s) Vt == M to 1e-10 relative.
    Tensor us = f.u;
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < k; ++j) us.at(i, j) *= f.s[j];
    const Tensor rec = matmul(us, f.vt);
    CHECK(max_abs_diff(rec, m) < 1e-10 * std::max(1.0, frobenius_norm(m)));
  }
}

TEST_CASE("svd handles rank-deficient and zero matrices") {
  std::mt19937_64 rng(3);
  // Rank-2 matrix built from outer products.
  const Tensor a = random_matrix(10, 2, rng);
  const Tensor b = random_matrix(2, 6, rng);
  const Tensor m = matmul(a, b);
  const SvdResult f = svd(m);
  CHECK(f.s[2] < 1e-10 * f.s[0]);
  CHECK(orthonormality_error(f.u) < 1e-8);  // null-space columns filled in
  CHECK(orthonormality_error(transpose(f.vt)) < 1e-8);

  const SvdResult z = svd(Tensor::matrix(4, 3));
  for (double s : z.s) CHECK(s == 0.0);
  CHECK(orthonormality_error(z.u) < 1e-8);
}

TEST_CASE("Eckart-Young: truncation residual equals tail singular energy") {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<std::size_t> rows_d(1, 64), cols_d(1, 24);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t rows = rows_d(rng), cols = cols_d(rng);
    const Tensor m = random_matrix(rows, cols, rng);
    const SvdResult f = svd(m);
    double total = 0.0;
    for (double s : f.s) total += s * s;
    for (std::size_t k = 0; k <= f.s.size(); ++k) {
      const Tensor rec = svd_reconstruct(f, k);
      const Tensor resid = sub(m, rec);
      const double r2 = frobenius_norm(resid) * frobenius_norm(resid);
      double tail = 0.0;
      for (std::size_t i = k; i < f.s.size(); ++i) tail += f.s[i] * f.s[i];
      CHECK(std::abs(r2 - tail) <= 1e-8 * std::max(1.0, total));
    }
  }
}
