#include "prfl/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "prfl/errors.hpp"

namespace prfl {

namespace {
constexpr double kProbEps = 1e-12;
const double kLogEps = std::log(kProbEps);
}  // namespace

Tensor softmax_rows(const Tensor& logits) {
  if (logits.ndim() != 2) throw ShapeError("softmax expects 2-D logits");
  Tensor p = logits;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double mx = p.at(i, 0);
    for (std::size_t j = 1; j < p.cols(); ++j) mx = std::max(mx, p.at(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < p.cols(); ++j) {
      p.at(i, j) = std::exp(p.at(i, j) - mx);
      sum += p.at(i, j);
    }
    for (std::size_t j = 0; j < p.cols(); ++j) p.at(i, j) /= sum;
  }
  return p;
}

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(Tensor value) {
  Node n;
  n.op = Op::Leaf;
  n.value = std::move(value);
  return push(n);
}

int Tape::linear(int x, int w, int b) {
  const Tensor& xv = val(x);
  const Tensor& wv = val(w);
  const Tensor& bv = val(b);
  if (xv.ndim() != 2 || wv.ndim() != 2 || xv.cols() != wv.cols())
    throw ShapeError("linear dim mismatch " + dims_to_string(xv.dims) + " vs " +
                     dims_to_string(wv.dims));
  Tensor y = matmul_nt(xv, wv);
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) y.at(i, j) += bv.data[j];
  Node n;
  n.op = Op::Linear;
  n.in = {x, w, b};
  n.value = std::move(y);
  return push(n);
}

int Tape::matmul(int a, int b) {
  Node n;
  n.op = Op::Matmul;
  n.in = {a, b};
  n.value = prfl::matmul(val(a), val(b));
  return push(n);
}

int Tape::tanh_op(int x) {
  Node n;
  n.op = Op::Tanh;
  n.in = {x};
  n.value = val(x);
  for (double& v : n.value.data) v = std::tanh(v);
  return push(n);
}

int Tape::relu_op(int x) {
  Node n;
  n.op = Op::Relu;
  n.in = {x};
  n.value = val(x);
  for (double& v : n.value.data) v = std::max(v, 0.0);
  return push(n);
}

int Tape::conv2d(int x, int w, int b) {
  const Tensor& xv = val(x);
  const Tensor& wv = val(w);
  const Tensor& bv = val(b);
  if (xv.ndim() != 4 || wv.ndim() != 4 || wv.dims[2] != 3 || wv.dims[3] != 3 ||
      xv.dims[1] != wv.dims[1])
    throw ShapeError("conv2d dim mismatch " + dims_to_string(xv.dims) + " vs " +
                     dims_to_string(wv.dims));
  const std::size_t B = xv.dims[0], C = xv.dims[1], H = xv.dims[2], W = xv.dims[3];
  const std::size_t O = wv.dims[0];
  Tensor y = Tensor::zeros({B, O, H, W});
  for (std::size_t nb = 0; nb < B; ++nb) {
    for (std::size_t o = 0; o < O; ++o) {
      for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t wcol = 0; wcol < W; ++wcol) {
          double s = bv.data[o];
          for (std::size_t c = 0; c < C; ++c) {
            for (int kh = -1; kh <= 1; ++kh) {
              const int ih = static_cast<int>(h) + kh;
              if (ih < 0 || ih >= static_cast<int>(H)) continue;
              for (int kw = -1; kw <= 1; ++kw) {
                const int iw = static_cast<int>(wcol) + kw;
                if (iw < 0 || iw >= static_cast<int>(W)) continue;
                s += xv.at4(nb, c, static_cast<std::size_t>(ih), static_cast<std::size_t>(iw)) *
                     wv.at4(o, c, static_cast<std::size_t>(kh + 1), static_cast<std::size_t>(kw + 1));
              }
            }
          }
          y.at4(nb, o, h, wcol) = s;
        }
      }
    }
  }
  Node n;
  n.op = Op::Conv2d;
  n.in = {x, w, b};
  n.value = std::move(y);
  return push(n);
}

int Tape::maxpool2(int x) {
  const Tensor& xv = val(x);
  if (xv.ndim() != 4 || xv.dims[2] % 2 != 0 || xv.dims[3] % 2 != 0)
    throw ShapeError("maxpool2 expects 4-D input with even spatial dims, got " +
                     dims_to_string(xv.dims));
  const std::size_t B = xv.dims[0], C = xv.dims[1], H = xv.dims[2], W = xv.dims[3];
  Tensor y = Tensor::zeros({B, C, H / 2, W / 2});
  std::vector<std::size_t> arg(y.size());
  std::size_t out = 0;
  for (std::size_t nb = 0; nb < B; ++nb) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t h = 0; h < H; h += 2) {
        for (std::size_t wcol = 0; wcol < W; wcol += 2) {
          std::size_t best = ((nb * C + c) * H + h) * W + wcol;
          double bv = xv.data[best];
          for (std::size_t dh = 0; dh < 2; ++dh) {
            for (std::size_t dw = 0; dw < 2; ++dw) {
              const std::size_t idx = ((nb * C + c) * H + h + dh) * W + wcol + dw;
              if (xv.data[idx] > bv) {
                bv = xv.data[idx];
                best = idx;
              }
            }
          }
          y.data[out] = bv;
          arg[out] = best;
          ++out;
        }
      }
    }
  }
  Node n;
  n.op = Op::Maxpool2;
  n.in = {x};
  n.value = std::move(y);
  n.argmax = std::move(arg);
  return push(n);
}

int Tape::flatten(int x) {
  const Tensor& xv = val(x);
  Node n;
  n.op = Op::Flatten;
  n.in = {x};
  n.in_dims = xv.dims;
  n.value = Tensor({xv.dims[0], xv.size() / xv.dims[0]}, xv.data);
  return push(n);
}

int Tape::detach(int x) {
  Node n;
  n.op = Op::Detach;
  n.in = {x};
  n.value = val(x);
  return push(n);
}

int Tape::add(int a, int b) {
  Node n;
  n.op = Op::Add;
  n.in = {a, b};
  n.value = val(a);
  add_inplace(n.value, val(b));
  return push(n);
}

int Tape::scale(int x, double c) {
  Node n;
  n.op = Op::Scale;
  n.in = {x};
  n.c = c;
  n.value = val(x);
  scale_inplace(n.value, c);
  return push(n);
}

int Tape::softmax_xent(int logits, std::vector<int> labels) {
  const Tensor& lv = val(logits);
  if (lv.ndim() != 2 || labels.size() != lv.rows())
    throw ShapeError("softmax_xent: labels/logits mismatch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= lv.cols())
      throw InputError("softmax_xent: label out of range");
  }
  Tensor probs = softmax_rows(lv);
  double loss = 0.0;
  for (std::size_t i = 0; i < lv.rows(); ++i) {
    const double lp = std::log(std::max(probs.at(i, static_cast<std::size_t>(labels[i])), kProbEps));
    loss -= lp;
  }
  loss /= static_cast<double>(lv.rows());
  Node n;
  n.op = Op::SoftmaxXent;
  n.in = {logits};
  n.labels = std::move(labels);
  n.aux = std::move(probs);
  n.value = Tensor({1}, {loss});
  return push(n);
}

int Tape::kl_to_const(int logits, Tensor q_probs) {
  const Tensor& lv = val(logits);
  if (!lv.same_dims(q_probs)) throw ShapeError("kl_to_const: dim mismatch");
  Tensor p = softmax_rows(lv);
  double loss = 0.0;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    for (std::size_t j = 0; j < p.cols(); ++j) {
      const double pv = std::max(p.at(i, j), kProbEps);
      const double qv = std::max(q_probs.at(i, j), kProbEps);
      loss += p.at(i, j) * (std::log(pv) - std::log(qv));
    }
  }
  loss /= static_cast<double>(p.rows());
  Node n;
  n.op = Op::KlToConst;
  n.in = {logits};
  n.aux = std::move(q_probs);
  n.value = Tensor({1}, {loss});
  return push(n);
}

int Tape::correction(int hs, int ht, int w) {
  const Tensor& hsv = val(hs);
  const Tensor& htv = val(ht);
  const Tensor& wv = val(w);
  if (!hsv.same_dims(htv) || hsv.ndim() != 2 || wv.ndim() != 2 || wv.rows() != hsv.cols() ||
      wv.rows() != wv.cols())
    throw ShapeError("correction: dim mismatch " + dims_to_string(hsv.dims) + " / " +
                     dims_to_string(wv.dims));
  Tensor d = sub(hsv, htv);
  Tensor m = prfl::matmul(d, wv);
  double loss = 0.0;
  for (double v : m.data) loss += v * v;
  loss /= static_cast<double>(m.size());
  Node n;
  n.op = Op::Correction;
  n.in = {hs, ht, w};
  n.value = Tensor({1}, {loss});
  return push(n);
}

std::vector<Tensor> Tape::grad(int loss, const std::vector<int>& wrt) const {
  const auto& ln = nodes_[static_cast<std::size_t>(loss)];
  if (ln.value.size() != 1) throw ContractError("grad: loss node must be scalar");

  std::vector<Tensor> grads(nodes_.size());
  std::vector<bool> live(nodes_.size(), false);
  auto g = [&](int id) -> Tensor& {
    auto& t = grads[static_cast<std::size_t>(id)];
    if (!live[static_cast<std::size_t>(id)]) {
      t = Tensor::zeros(nodes_[static_cast<std::size_t>(id)].value.dims);
      live[static_cast<std::size_t>(id)] = true;
    }
    return t;
  };

  g(loss).data[0] = 1.0;
  for (int id = loss; id >= 0; --id) {
    if (!live[static_cast<std::size_t>(id)]) continue;
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    const Tensor& gy = grads[static_cast<std::size_t>(id)];
    switch (n.op) {
      case Op::Leaf:
      case Op::Detach:
        break;
      case Op::Linear: {
        const Tensor& xv = val(n.in[0]);
        const Tensor& wv = val(n.in[1]);
        add_inplace(g(n.in[0]), prfl::matmul(gy, wv));
        add_inplace(g(n.in[1]), matmul_tn(gy, xv));
        Tensor& gb = g(n.in[2]);
        for (std::size_t i = 0; i < gy.rows(); ++i)
          for (std::size_t j = 0; j < gy.cols(); ++j) gb.data[j] += gy.at(i, j);
        break;
      }
      case Op::Matmul: {
        add_inplace(g(n.in[0]), matmul_nt(gy, val(n.in[1])));
        add_inplace(g(n.in[1]), matmul_tn(val(n.in[0]), gy));
        break;
      }
      case Op::Tanh: {
        Tensor& gx = g(n.in[0]);
        for (std::size_t i = 0; i < gy.size(); ++i)
          gx.data[i] += gy.data[i] * (1.0 - n.value.data[i] * n.value.data[i]);
        break;
      }
      case Op::Relu: {
        Tensor& gx = g(n.in[0]);
        const Tensor& xv = val(n.in[0]);
        for (std::size_t i = 0; i < gy.size(); ++i)
          if (xv.data[i] > 0.0) gx.data[i] += gy.data[i];
        break;
      }
      case Op::Conv2d: {
        const Tensor& xv = val(n.in[0]);
        const Tensor& wv = val(n.in[1]);
        Tensor& gx = g(n.in[0]);
        Tensor& gw = g(n.in[1]);
        Tensor& gb = g(n.in[2]);
        const std::size_t B = xv.dims[0], C = xv.dims[1], H = xv.dims[2], W = xv.dims[3];
        const std::size_t O = wv.dims[0];
        for (std::size_t nb = 0; nb < B; ++nb) {
          for (std::size_t o = 0; o < O; ++o) {
            for (std::size_t h = 0; h < H; ++h) {
              for (std::size_t wcol = 0; wcol < W; ++wcol) {
                const double gv = gy.at4(nb, o, h, wcol);
                if (gv == 0.0) continue;
                gb.data[o] += gv;
                for (std::size_t c = 0; c < C; ++c) {
                  for (int kh = -1; kh <= 1; ++kh) {
                    const int ih = static_cast<int>(h) + kh;
                    if (ih < 0 || ih >= static_cast<int>(H)) continue;
                    for (int kw = -1; kw <= 1; ++kw) {
                      const int iw = static_cast<int>(wcol) + kw;
                      if (iw < 0 || iw >= static_cast<int>(W)) continue;
                      const std::size_t uh = static_cast<std::size_t>(ih);
                      const std::size_t uw = static_cast<std::size_t>(iw);
                      gw.at4(o, c, static_cast<std::size_t>(kh + 1), static_cast<std::size_t>(kw + 1)) +=
                          gv * xv.at4(nb, c, uh, uw);
                      gx.at4(nb, c, uh, uw) +=
                          gv * wv.at4(o, c, static_cast<std::size_t>(kh + 1), static_cast<std::size_t>(kw + 1));
                    }
                  }
                }
              }
            }
          }
        }
        break;
      }
      case Op::Maxpool2: {
        Tensor& gx = g(n.in[0]);
        for (std::size_t i = 0; i < gy.size(); ++i) gx.data[n.argmax[i]] += gy.data[i];
        break;
      }
      case Op::Flatten: {
        Tensor& gx = g(n.in[0]);
        for (std::size_t i = 0; i < gy.size(); ++i) gx.data[i] += gy.data[i];
        break;
      }
      case Op::Add: {
        add_inplace(g(n.in[0]), gy);
        add_inplace(g(n.in[1]), gy);
        break;
      }
      case Op::Scale: {
        axpy_inplace(g(n.in[0]), n.c, gy);
        break;
      }
      case Op::SoftmaxXent: {
        Tensor& gx = g(n.in[0]);
        const Tensor& p = n.aux;
        const double gs = gy.data[0] / static_cast<double>(p.rows());
        for (std::size_t i = 0; i < p.rows(); ++i) {
          const std::size_t y = static_cast<std::size_t>(n.labels[i]);
          if (p.at(i, y) <= kProbEps) continue;  // clamped row, flat loss
          for (std::size_t j = 0; j < p.cols(); ++j)
            gx.at(i, j) += gs * (p.at(i, j) - (j == y ? 1.0 : 0.0));
        }
        break;
      }
      case Op::KlToConst: {
        Tensor& gx = g(n.in[0]);
        const Tensor p = softmax_rows(val(n.in[0]));
        const Tensor& q = n.aux;
        const double gs = gy.data[0] / static_cast<double>(p.rows());
        for (std::size_t i = 0; i < p.rows(); ++i) {
          double f = 0.0;
          std::vector<double> r(p.cols());
          for (std::size_t j = 0; j < p.cols(); ++j) {
            r[j] = std::log(std::max(p.at(i, j), kProbEps)) -
                   std::log(std::max(q.at(i, j), kProbEps));
            f += p.at(i, j) * r[j];
          }
          for (std::size_t j = 0; j < p.cols(); ++j)
            gx.at(i, j) += gs * p.at(i, j) * (r[j] - f);
        }
        break;
      }
      case Op::Correction: {
        const Tensor& hsv = val(n.in[0]);
        const Tensor& htv = val(n.in[1]);
        const Tensor& wv = val(n.in[2]);
        Tensor d = sub(hsv, htv);
        Tensor m = prfl::matmul(d, wv);
        const double gs = 2.0 * gy.data[0] / static_cast<double>(m.size());
        scale_inplace(m, gs);                       // m is now dL/dM
        Tensor gd = matmul_nt(m, wv);               // dL/dD = (dL/dM) W^T
        add_inplace(g(n.in[0]), gd);
        scale_inplace(gd, -1.0);
        add_inplace(g(n.in[1]), gd);
        add_inplace(g(n.in[2]), matmul_tn(d, m));   // dL/dW = D^T (dL/dM)
        break;
      }
    }
  }

  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (int id : wrt) out.push_back(g(id));
  return out;
}

}  // namespace prfl
