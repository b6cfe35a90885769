#ifndef PRFL_DPD_HPP
#define PRFL_DPD_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "prfl/nn.hpp"
#include "prfl/tensor.hpp"

namespace prfl {

// full keeps every tensor raw; variance_only selects K by the variance
// threshold alone; aic_variance additionally searches an AIC window above
// the threshold.
enum class DpdMode { full, variance_only, aic_variance };

struct DpdConfig {
  double alpha = 0.98;
  std::size_t aic_window = 4;
  std::size_t calib_size = 32;
  std::size_t min_compress_elems = 1024;
  DpdMode mode = DpdMode::aic_variance;

  void validate() const;
};

struct CompressedMatrix {
  enum class Kind : std::uint8_t { raw = 0, lowrank = 1 };

  std::string name;
  std::vector<std::size_t> orig_dims;
  std::size_t p = 0, q = 0;  // matrix dims after reshape
  std::size_t r = 0;         // split rank
  Kind kind = Kind::raw;

  Tensor raw;  // kind == raw

  // kind == lowrank: the two factor SVDs, each truncated independently.
  Tensor u_p, vt_p;  // P x K_p, K_p x r
  std::vector<double> s_p;
  Tensor u_n, vt_n;  // r x K_n, K_n x Q
  std::vector<double> s_n;

  std::size_t k_p() const { return s_p.size(); }
  std::size_t k_n() const { return s_n.size(); }
  std::size_t payload_floats() const;
};

struct CompressedUpdate {
  std::uint32_t client_id = 0;
  std::uint64_t sample_count = 0;
  std::vector<CompressedMatrix> matrices;
  std::size_t uploaded_float_count = 0;
  std::size_t full_float_count = 0;
};

// 2-D unchanged; 4-D conv (o,i,kh,kw) -> (o, i*kh*kw); everything else
// flattened to a single row (always raw downstream).
std::pair<Tensor, std::vector<std::size_t>> reshape_to_matrix(const Tensor& t);

// max(P,Q) // min(P,Q), clamped to [1, min(P,Q)].
std::size_t split_rank(std::size_t p, std::size_t q);

// Rank-r split via truncated SVD with sqrt-singular-value balancing:
// g_p = U_r sqrt(S_r), g_n = sqrt(S_r) Vt_r.
std::pair<Tensor, Tensor> factor_split(const Tensor& m);

// Sum over the calibration batch of ln P(y_i | x_i; theta_K) for a factor
// truncated at K.
using LikelihoodFn = std::function<double(std::size_t k)>;

// Smallest K whose cumulative variance-explained ratio exceeds alpha
// (falling back to the full length when unreachable); aic_variance then
// minimizes K - likelihood(K) over {K*, ..., K*+W}, ties to smaller K.
std::size_t select_k(const std::vector<double>& singulars, const DpdConfig& cfg,
                     const LikelihoodFn& likelihood = nullptr);

// Reporting form of the information criterion: 2K - 2 sum ln P.
double aic_value(std::size_t k, double sum_log_lik);

// Evaluates a candidate delta against the received global on the
// calibration batch; returns the summed log-likelihood.
using CalibEvaluator = std::function<double(const ParamDelta& delta)>;

CompressedUpdate compress_update(const ParamDelta& delta, const DpdConfig& cfg,
                                 const CalibEvaluator& evaluator = nullptr);

ParamDelta decompress_update(const CompressedUpdate& update);

std::vector<std::uint8_t> encode(const CompressedUpdate& update);
CompressedUpdate decode(const std::uint8_t* data, std::size_t size);
CompressedUpdate decode(const std::vector<std::uint8_t>& bytes);

}  // namespace prfl

#endif  // PRFL_DPD_HPP
