#ifndef PRFL_NN_HPP
#define PRFL_NN_HPP

#include <map>
#include <random>
#include <string>
#include <vector>

#include "prfl/autodiff.hpp"
#include "prfl/tensor.hpp"

namespace prfl {

using Rng = std::mt19937_64;

enum class ModelKind { mlp, smallcnn };

struct ModelSpec {
  ModelKind kind = ModelKind::mlp;
  std::vector<std::size_t> input_dims;  // mlp: {in}; smallcnn: {c, h, w}
  std::size_t hidden_width = 32;        // mlp only
  std::size_t channels1 = 8;            // smallcnn conv blocks
  std::size_t channels2 = 32;
  std::size_t num_classes = 2;

  std::size_t input_size() const;
  // Width d of the flattened backbone output.
  std::size_t hidden_size() const;
  void validate() const;
};

enum class ParamRole { backbone, head };

struct ParamEntry {
  std::string name;
  Tensor tensor;
  ParamRole role;
};

struct ModelParams {
  std::vector<ParamEntry> entries;

  Tensor* find(const std::string& name);
  const Tensor* find(const std::string& name) const;
  std::size_t total_elements() const;
};

using Gradients = std::map<std::string, Tensor>;
using ParamDelta = std::map<std::string, Tensor>;

struct ForwardOutput {
  Tensor hidden;  // batch x d
  Tensor logits;  // batch x C
  Tensor probs;   // row-softmax of logits
};

// Graph handles for a model forward recorded on a tape.
struct GraphModel {
  std::vector<int> param_ids;  // aligned with ModelParams::entries
  int hidden = -1;
  int logits = -1;
};

// Uniform fan-in init, bound = sqrt(1/fan_in); deterministic given rng state.
ModelParams build_model(const ModelSpec& spec, Rng& rng);

ForwardOutput forward(const ModelSpec& spec, const ModelParams& params, const Tensor& batch);

// Records the forward on the tape; input_id must hold the batch. Accepts
// batch as (B, input_size) or, for smallcnn, (B, c, h, w).
GraphModel forward_graph(Tape& tape, const ModelSpec& spec, const ModelParams& params,
                         int input_id);

// p <- p - eta * g for every parameter; missing gradient is a contract error.
void sgd_step(ModelParams& params, const Gradients& grads, double eta);

// Mean over the batch of -ln(max(probs[i, y_i], 1e-12)).
double cross_entropy(const Tensor& probs, const std::vector<int>& labels);

// Sum_i p_i ln(max(p_i,eps)/max(q_i,eps)); rows are distributions.
double kl_div(const std::vector<double>& p, const std::vector<double>& q);
// Batch version: mean over rows.
double kl_div_rows(const Tensor& p, const Tensor& q);

}  // namespace prfl

#endif  // PRFL_NN_HPP
