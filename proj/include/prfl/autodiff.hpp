#ifndef PRFL_AUTODIFF_HPP
#define PRFL_AUTODIFF_HPP

#include <cstddef>
#include <vector>

#include "prfl/tensor.hpp"

namespace prfl {

// Reverse-mode tape over the fixed op set the models and losses need.
// Nodes are referenced by creation index; grad() replays the tape backward.
class Tape {
 public:
  int leaf(Tensor value);
  // y = x * W^T + b with x: B x in, W: out x in, b: out
  int linear(int x, int w, int b);
  int matmul(int a, int b);
  int tanh_op(int x);
  int relu_op(int x);
  // 3x3 convolution, stride 1, zero padding 1. x: B x C x H x W, w: O x C x 3 x 3, b: O
  int conv2d(int x, int w, int b);
  // 2x2 max pooling, stride 2; H and W must be even.
  int maxpool2(int x);
  int flatten(int x);
  int detach(int x);
  int add(int a, int b);
  int scale(int x, double c);
  // Mean over rows of -log softmax(logits)[label], log clamped at ln(1e-12).
  int softmax_xent(int logits, std::vector<int> labels);
  // Mean over rows of KL(softmax(logits) || q) against a constant q.
  int kl_to_const(int logits, Tensor q_probs);
  // Mean over all elements of ((hs - ht) * w)^2; w is d x d.
  int correction(int hs, int ht, int w);

  const Tensor& val(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  double scalar(int id) const { return val(id).data[0]; }

  // Gradients of a scalar node w.r.t. the given node ids.
  std::vector<Tensor> grad(int loss, const std::vector<int>& wrt) const;

 private:
  enum class Op {
    Leaf, Linear, Matmul, Tanh, Relu, Conv2d, Maxpool2, Flatten, Detach,
    Add, Scale, SoftmaxXent, KlToConst, Correction,
  };
  struct Node {
    Op op;
    std::vector<int> in;
    Tensor value;
    double c = 0.0;                    // Scale
    std::vector<int> labels;           // SoftmaxXent
    Tensor aux;                        // cached probs / constant q
    std::vector<std::size_t> argmax;   // Maxpool2
    std::vector<std::size_t> in_dims;  // Flatten
  };
  int push(Node n);
  std::vector<Node> nodes_;
};

Tensor softmax_rows(const Tensor& logits);

}  // namespace prfl

#endif  // PRFL_AUTODIFF_HPP
