#include "prfl/tensor.hpp"

#include <cmath>
#include <sstream>

#include "prfl/errors.hpp"

namespace prfl {

Tensor::Tensor(std::vector<std::size_t> d, std::vector<double> v)
    : dims(std::move(d)), data(std::move(v)) {
  if (product(dims) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match dims " + dims_to_string(dims));
  }
}

Tensor Tensor::zeros(std::vector<std::size_t> d) {
  Tensor t;
  t.dims = std::move(d);
  t.data.assign(product(t.dims), 0.0);
  return t;
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols) {
  return zeros({rows, cols});
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t = zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::size_t product(const std::vector<std::size_t>& dims) {
  std::size_t p = 1;
  for (std::size_t d : dims) p *= d;
  return p;
}

std::string dims_to_string(const std::vector<std::size_t>& dims) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << ",";
    os << dims[i];
  }
  os << ")";
  return os.str();
}

namespace {
void check_2d(const Tensor& t, const char* name) {
  if (t.ndim() != 2) {
    throw ShapeError(std::string(name) + " must be 2-D, got " + dims_to_string(t.dims));
  }
}
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_2d(a, "matmul lhs");
  check_2d(b, "matmul rhs");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul dim mismatch " + dims_to_string(a.dims) + " x " +
                     dims_to_string(b.dims));
  }
  Tensor c = Tensor::matrix(a.rows(), b.cols());
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a.at(i, p);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) c.at(i, j) += av * b.at(p, j);
    }
  }
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check_2d(a, "matmul_nt lhs");
  check_2d(b, "matmul_nt rhs");
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt dim mismatch " + dims_to_string(a.dims) + " x " +
                     dims_to_string(b.dims) + "^T");
  }
  Tensor c = Tensor::matrix(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a.at(i, p) * b.at(j, p);
      c.at(i, j) = s;
    }
  }
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  check_2d(a, "matmul_tn lhs");
  check_2d(b, "matmul_tn rhs");
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn dim mismatch " + dims_to_string(a.dims) + "^T x " +
                     dims_to_string(b.dims));
  }
  Tensor c = Tensor::matrix(a.cols(), b.cols());
  for (std::size_t p = 0; p < a.rows(); ++p) {
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double av = a.at(p, i);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c.at(i, j) += av * b.at(p, j);
    }
  }
  return c;
}

Tensor transpose(const Tensor& m) {
  check_2d(m, "transpose");
  Tensor t = Tensor::matrix(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t.at(j, i) = m.at(i, j);
  return t;
}

void add_inplace(Tensor& a, const Tensor& b) {
  if (!a.same_dims(b)) {
    throw ShapeError("add dim mismatch " + dims_to_string(a.dims) + " vs " +
                     dims_to_string(b.dims));
  }
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

void axpy_inplace(Tensor& a, double alpha, const Tensor& b) {
  if (!a.same_dims(b)) {
    throw ShapeError("axpy dim mismatch " + dims_to_string(a.dims) + " vs " +
                     dims_to_string(b.dims));
  }
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += alpha * b.data[i];
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (!a.same_dims(b)) {
    throw ShapeError("sub dim mismatch " + dims_to_string(a.dims) + " vs " +
                     dims_to_string(b.dims));
  }
  Tensor c = a;
  for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] -= b.data[i];
  return c;
}

void scale_inplace(Tensor& a, double alpha) {
  for (double& v : a.data) v *= alpha;
}

double frobenius_norm(const Tensor& m) {
  double s = 0.0;
  for (double v : m.data) s += v * v;
  return std::sqrt(s);
}

void require_finite(const Tensor& t, const std::string& what) {
  if (!t.all_finite()) throw InputError(what + ": non-finite entries");
}

}  // namespace prfl
