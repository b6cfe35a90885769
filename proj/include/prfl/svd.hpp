#ifndef PRFL_SVD_HPP
#define PRFL_SVD_HPP

#include <vector>

#include "prfl/tensor.hpp"

namespace prfl {

// M (P x Q) = U * diag(S) * Vt with U: P x m, S: m descending nonnegative,
// Vt: m x Q, m = min(P, Q). U^T U = I and Vt Vt^T = I.
struct SvdResult {
  Tensor u;
  std::vector<double> s;
  Tensor vt;
};

// One-sided Jacobi on the tall orientation; exact up to roundoff for the
// desk-scale matrices used here.
SvdResult svd(const Tensor& m);

// U * diag(S) * Vt restricted to the leading k triples.
Tensor svd_reconstruct(const SvdResult& f, std::size_t k);

}  // namespace prfl

#endif  // PRFL_SVD_HPP
