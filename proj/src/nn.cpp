#include "prfl/nn.hpp"

#include <algorithm>
#include <cmath>

#include "prfl/errors.hpp"

namespace prfl {

std::size_t ModelSpec::input_size() const { return product(input_dims); }

std::size_t ModelSpec::hidden_size() const {
  if (kind == ModelKind::mlp) return hidden_width;
  return channels2 * (input_dims[1] / 4) * (input_dims[2] / 4);
}

void ModelSpec::validate() const {
  if (num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
  if (kind == ModelKind::mlp) {
    if (input_dims.size() != 1 || input_dims[0] == 0)
      throw ConfigError("mlp: input_dims must be a single positive size");
    if (hidden_width < 1) throw ConfigError("mlp: hidden_width must be >= 1");
  } else {
    if (input_dims.size() != 3)
      throw ConfigError("smallcnn: input_dims must be (channels, height, width)");
    if (input_dims[0] == 0 || input_dims[1] % 4 != 0 || input_dims[2] % 4 != 0 ||
        input_dims[1] == 0 || input_dims[2] == 0)
      throw ConfigError("smallcnn: spatial dims must be positive multiples of 4");
    if (channels1 < 1 || channels2 < 1)
      throw ConfigError("smallcnn: channel plan must be >= 1");
  }
}

Tensor* ModelParams::find(const std::string& name) {
  for (auto& e : entries)
    if (e.name == name) return &e.tensor;
  return nullptr;
}

const Tensor* ModelParams::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e.tensor;
  return nullptr;
}

std::size_t ModelParams::total_elements() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.tensor.size();
  return n;
}

namespace {

Tensor uniform_init(std::vector<std::size_t> dims, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t = Tensor::zeros(std::move(dims));
  for (double& v : t.data) v = dist(rng);
  return t;
}

// Reshape a flat (B, c*h*w) batch to 4-D for the conv stack.
Tensor as_4d(const ModelSpec& spec, const Tensor& batch) {
  if (batch.ndim() == 4) return batch;
  if (batch.ndim() != 2 || batch.cols() != spec.input_size())
    throw ShapeError("batch dims " + dims_to_string(batch.dims) + " do not match model input");
  return Tensor({batch.rows(), spec.input_dims[0], spec.input_dims[1], spec.input_dims[2]},
                batch.data);
}

}  // namespace

ModelParams build_model(const ModelSpec& spec, Rng& rng) {
  spec.validate();
  ModelParams p;
  if (spec.kind == ModelKind::mlp) {
    const std::size_t in = spec.input_dims[0], h = spec.hidden_width, c = spec.num_classes;
    p.entries.push_back({"backbone.w", uniform_init({h, in}, in, rng), ParamRole::backbone});
    p.entries.push_back({"backbone.b", uniform_init({h}, in, rng), ParamRole::backbone});
    p.entries.push_back({"head.w", uniform_init({c, h}, h, rng), ParamRole::head});
    p.entries.push_back({"head.b", uniform_init({c}, h, rng), ParamRole::head});
  } else {
    const std::size_t cin = spec.input_dims[0], c1 = spec.channels1, c2 = spec.channels2;
    const std::size_t d = spec.hidden_size(), c = spec.num_classes;
    p.entries.push_back(
        {"backbone.conv1.w", uniform_init({c1, cin, 3, 3}, cin * 9, rng), ParamRole::backbone});
    p.entries.push_back({"backbone.conv1.b", uniform_init({c1}, cin * 9, rng), ParamRole::backbone});
    p.entries.push_back(
        {"backbone.conv2.w", uniform_init({c2, c1, 3, 3}, c1 * 9, rng), ParamRole::backbone});
    p.entries.push_back({"backbone.conv2.b", uniform_init({c2}, c1 * 9, rng), ParamRole::backbone});
    p.entries.push_back({"head.w", uniform_init({c, d}, d, rng), ParamRole::head});
    p.entries.push_back({"head.b", uniform_init({c}, d, rng), ParamRole::head});
  }
  return p;
}

GraphModel forward_graph(Tape& tape, const ModelSpec& spec, const ModelParams& params,
                         int input_id) {
  GraphModel g;
  for (const auto& e : params.entries) g.param_ids.push_back(tape.leaf(e.tensor));
  if (spec.kind == ModelKind::mlp) {
    const Tensor& batch = tape.val(input_id);
    if (batch.ndim() != 2 || batch.cols() != spec.input_size())
      throw ShapeError("batch dims " + dims_to_string(batch.dims) + " do not match model input");
    int h = tape.tanh_op(tape.linear(input_id, g.param_ids[0], g.param_ids[1]));
    g.hidden = h;
    g.logits = tape.linear(h, g.param_ids[2], g.param_ids[3]);
  } else {
    int x = input_id;
    if (tape.val(x).ndim() == 2) x = tape.leaf(as_4d(spec, tape.val(x)));
    int b1 = tape.maxpool2(tape.relu_op(tape.conv2d(x, g.param_ids[0], g.param_ids[1])));
    int b2 = tape.maxpool2(tape.relu_op(tape.conv2d(b1, g.param_ids[2], g.param_ids[3])));
    g.hidden = tape.flatten(b2);
    g.logits = tape.linear(g.hidden, g.param_ids[4], g.param_ids[5]);
  }
  return g;
}

ForwardOutput forward(const ModelSpec& spec, const ModelParams& params, const Tensor& batch) {
  Tape tape;
  int in_id = tape.leaf(spec.kind == ModelKind::smallcnn ? as_4d(spec, batch) : batch);
  GraphModel g = forward_graph(tape, spec, params, in_id);
  ForwardOutput out;
  out.hidden = tape.val(g.hidden);
  out.logits = tape.val(g.logits);
  out.probs = softmax_rows(out.logits);
  require_finite(out.logits, "forward logits");
  return out;
}

void sgd_step(ModelParams& params, const Gradients& grads, double eta) {
  for (auto& e : params.entries) {
    auto it = grads.find(e.name);
    if (it == grads.end())
      throw ContractError("sgd_step: missing gradient for " + e.name);
    if (!it->second.same_dims(e.tensor))
      throw ContractError("sgd_step: gradient dims mismatch for " + e.name);
    axpy_inplace(e.tensor, -eta, it->second);
  }
}

double cross_entropy(const Tensor& probs, const std::vector<int>& labels) {
  if (probs.ndim() != 2 || labels.size() != probs.rows())
    throw ShapeError("cross_entropy: probs/labels mismatch");
  constexpr double eps = 1e-12;
  double loss = 0.0;
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= probs.cols())
      throw InputError("cross_entropy: label out of range");
    loss -= std::log(std::max(probs.at(i, static_cast<std::size_t>(labels[i])), eps));
  }
  return loss / static_cast<double>(probs.rows());
}

double kl_div(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw ShapeError("kl_div: length mismatch");
  constexpr double eps = 1e-12;
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    s += p[i] * std::log(std::max(p[i], eps) / std::max(q[i], eps));
  return s;
}

double kl_div_rows(const Tensor& p, const Tensor& q) {
  if (!p.same_dims(q) || p.ndim() != 2) throw ShapeError("kl_div_rows: dim mismatch");
  constexpr double eps = 1e-12;
  double s = 0.0;
  for (std::size_t i = 0; i < p.rows(); ++i)
    for (std::size_t j = 0; j < p.cols(); ++j)
      s += p.at(i, j) * std::log(std::max(p.at(i, j), eps) / std::max(q.at(i, j), eps));
  return s / static_cast<double>(p.rows());
}

}  // namespace prfl
