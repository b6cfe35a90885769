#ifndef PRFL_TENSOR_HPP
#define PRFL_TENSOR_HPP

#include <cstddef>
#include <string>
#include <vector>

namespace prfl {

// Dense row-major tensor of 64-bit reals; the universal numeric carrier.
struct Tensor {
  std::vector<std::size_t> dims;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> d, std::vector<double> v);

  static Tensor zeros(std::vector<std::size_t> d);
  static Tensor matrix(std::size_t rows, std::size_t cols);
  static Tensor identity(std::size_t n);

  std::size_t size() const { return data.size(); }
  std::size_t ndim() const { return dims.size(); }

  // 2-D accessors; caller guarantees ndim() == 2.
  std::size_t rows() const { return dims[0]; }
  std::size_t cols() const { return dims[1]; }
  double& at(std::size_t i, std::size_t j) { return data[i * dims[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * dims[1] + j]; }

  // 4-D accessor (n, c, h, w).
  double& at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data[((n * dims[1] + c) * dims[2] + h) * dims[3] + w];
  }
  double at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data[((n * dims[1] + c) * dims[2] + h) * dims[3] + w];
  }

  bool same_dims(const Tensor& o) const { return dims == o.dims; }
  bool all_finite() const;
};

std::size_t product(const std::vector<std::size_t>& dims);
std::string dims_to_string(const std::vector<std::size_t>& dims);

// C = A(m x k) * B(k x n)
Tensor matmul(const Tensor& a, const Tensor& b);
// C = A(m x k) * B(n x k)^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// C = A(k x m)^T * B(k x n)
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& m);

void add_inplace(Tensor& a, const Tensor& b);
void axpy_inplace(Tensor& a, double alpha, const Tensor& b);  // a += alpha * b
Tensor sub(const Tensor& a, const Tensor& b);
void scale_inplace(Tensor& a, double alpha);
double frobenius_norm(const Tensor& m);

void require_finite(const Tensor& t, const std::string& what);

}  // namespace prfl

#endif  // PRFL_TENSOR_HPP
