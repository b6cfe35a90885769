#include "prfl/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "prfl/errors.hpp"

namespace prfl {

namespace {

// One-sided Jacobi for P >= Q: rotates column pairs of B until all columns
// are mutually orthogonal. Singular values are the final column norms.
SvdResult jacobi_tall(const Tensor& m) {
  const std::size_t p = m.rows(), q = m.cols();
  Tensor b = m;
  Tensor v = Tensor::identity(q);

  const double tol = 1e-15;
  const int max_sweeps = 64;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t i = 0; i + 1 < q; ++i) {
      for (std::size_t j = i + 1; j < q; ++j) {
        double aii = 0.0, ajj = 0.0, aij = 0.0;
        for (std::size_t r = 0; r < p; ++r) {
          const double bi = b.at(r, i), bj = b.at(r, j);
          aii += bi * bi;
          ajj += bj * bj;
          aij += bi * bj;
        }
        if (std::abs(aij) <= tol * std::sqrt(aii * ajj) || aij == 0.0) continue;
        rotated = true;
        const double zeta = (ajj - aii) / (2.0 * aij);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double cs = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = cs * t;
        for (std::size_t r = 0; r < p; ++r) {
          const double bi = b.at(r, i), bj = b.at(r, j);
          b.at(r, i) = cs * bi - sn * bj;
          b.at(r, j) = sn * bi + cs * bj;
        }
        for (std::size_t r = 0; r < q; ++r) {
          const double vi = v.at(r, i), vj = v.at(r, j);
          v.at(r, i) = cs * vi - sn * vj;
          v.at(r, j) = sn * vi + cs * vj;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> s(q, 0.0);
  for (std::size_t j = 0; j < q; ++j) {
    double nrm = 0.0;
    for (std::size_t r = 0; r < p; ++r) nrm += b.at(r, j) * b.at(r, j);
    s[j] = std::sqrt(nrm);
  }

  // Sort triples descending by singular value.
  std::vector<std::size_t> order(q);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t c) { return s[a] > s[c]; });

  SvdResult out;
  out.u = Tensor::matrix(p, q);
  out.vt = Tensor::matrix(q, q);
  out.s.resize(q);
  const double tiny = 1e-300;
  for (std::size_t jj = 0; jj < q; ++jj) {
    const std::size_t src = order[jj];
    out.s[jj] = s[src];
    if (s[src] > tiny) {
      for (std::size_t r = 0; r < p; ++r) out.u.at(r, jj) = b.at(r, src) / s[src];
    }
    for (std::size_t r = 0; r < q; ++r) out.vt.at(jj, r) = v.at(r, src);
  }

  // Fill null-space columns of U so U^T U = I even for rank-deficient input.
  for (std::size_t jj = 0; jj < q; ++jj) {
    if (out.s[jj] > tiny) continue;
    for (std::size_t basis = 0; basis < p; ++basis) {
      std::vector<double> cand(p, 0.0);
      cand[basis] = 1.0;
      for (std::size_t k = 0; k < q; ++k) {
        if (k == jj) continue;
        double dot = 0.0;
        for (std::size_t r = 0; r < p; ++r) dot += cand[r] * out.u.at(r, k);
        for (std::size_t r = 0; r < p; ++r) cand[r] -= dot * out.u.at(r, k);
      }
      double nrm = 0.0;
      for (double cv : cand) nrm += cv * cv;
      nrm = std::sqrt(nrm);
      if (nrm > 1e-6) {
        for (std::size_t r = 0; r < p; ++r) out.u.at(r, jj) = cand[r] / nrm;
        break;
      }
    }
  }
  return out;
}

}  // namespace

SvdResult svd(const Tensor& m) {
  if (m.ndim() != 2) throw ShapeError("svd expects a 2-D tensor, got " + dims_to_string(m.dims));
  require_finite(m, "svd input");
  if (m.rows() >= m.cols()) return jacobi_tall(m);
  // Wide case: factor the transpose and swap sides.
  SvdResult t = jacobi_tall(transpose(m));
  SvdResult out;
  out.s = std::move(t.s);
  out.u = transpose(t.vt);
  out.vt = transpose(t.u);
  return out;
}

Tensor svd_reconstruct(const SvdResult& f, std::size_t k) {
  const std::size_t p = f.u.rows(), q = f.vt.cols();
  k = std::min(k, f.s.size());
  Tensor m = Tensor::matrix(p, q);
  for (std::size_t t = 0; t < k; ++t) {
    const double sv = f.s[t];
    if (sv == 0.0) continue;
    for (std::size_t i = 0; i < p; ++i) {
      const double ui = f.u.at(i, t) * sv;
      if (ui == 0.0) continue;
      for (std::size_t j = 0; j < q; ++j) m.at(i, j) += ui * f.vt.at(t, j);
    }
  }
  return m;
}

}  // namespace prfl
