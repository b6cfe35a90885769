#include "prfl/synkd.hpp"

#include <cmath>

#include "prfl/errors.hpp"

namespace prfl {

double correction_loss(const Tensor& h_s, const Tensor& h_t, const Tensor& w_aux) {
  if (!h_s.same_dims(h_t) || h_s.ndim() != 2 || w_aux.ndim() != 2 ||
      w_aux.rows() != w_aux.cols() || w_aux.rows() != h_s.cols())
    throw ShapeError("correction_loss: dim mismatch");
  Tensor m = matmul(sub(h_s, h_t), w_aux);
  double s = 0.0;
  for (double v : m.data) s += v * v;
  return s / static_cast<double>(m.size());
}

double latent_repr_loss(double l_cor, double l_task_t, double l_task_s) {
  return l_cor / (l_task_t + l_task_s + kDenomEps);
}

std::pair<double, double> bidir_distill_losses(const Tensor& probs_t, const Tensor& probs_s,
                                               double l_task_t, double l_task_s) {
  const double denom = l_task_t + l_task_s + kDenomEps;
  return {kl_div_rows(probs_t, probs_s) / denom, kl_div_rows(probs_s, probs_t) / denom};
}

Tensor init_w_aux(std::size_t d, Rng& rng) {
  Tensor w = Tensor::identity(d);
  std::normal_distribution<double> noise(0.0, 0.01);
  for (double& v : w.data) v += noise(rng);
  return w;
}

SynkdGraph build_synkd_graph(const ModelSpec& spec, const ModelParams& teacher,
                             const ModelParams& student, const Tensor& w_aux,
                             const Tensor& batch, const std::vector<int>& labels,
                             const SynkdOptions& opts) {
  SynkdGraph g;
  Tape& tape = g.tape;
  const int input = tape.leaf(batch);
  g.teacher = forward_graph(tape, spec, teacher, input);
  g.student = forward_graph(tape, spec, student, input);

  const int l_task_t = tape.softmax_xent(g.teacher.logits, labels);
  const int l_task_s = tape.softmax_xent(g.student.logits, labels);
  g.task_t = l_task_t;
  g.task_s = l_task_s;
  g.losses.l_task_t = tape.scalar(l_task_t);
  g.losses.l_task_s = tape.scalar(l_task_s);
  // Detached adaptive weight: no gradient through the task-loss sum.
  const double inv_denom = 1.0 / (g.losses.l_task_t + g.losses.l_task_s + kDenomEps);

  int w_id;
  if (opts.use_aux) {
    g.w_aux_id = tape.leaf(w_aux);
    w_id = g.w_aux_id;
  } else {
    w_id = tape.leaf(Tensor::identity(spec.hidden_size()));
  }

  // Each side's correction term sees the other hidden state detached.
  const int h_t_const = tape.detach(g.teacher.hidden);
  const int h_s_const = tape.detach(g.student.hidden);
  const int cor_t = tape.correction(h_s_const, g.teacher.hidden, w_id);
  const int cor_s = tape.correction(g.student.hidden, h_t_const, w_id);
  g.cor_t = cor_t;
  g.cor_s = cor_s;
  g.losses.l_cor = tape.scalar(cor_t);

  const Tensor probs_t = softmax_rows(tape.val(g.teacher.logits));
  const Tensor probs_s = softmax_rows(tape.val(g.student.logits));
  const int l_d_t = tape.scale(tape.kl_to_const(g.teacher.logits, probs_s), inv_denom);
  const int l_d_s = tape.scale(tape.kl_to_const(g.student.logits, probs_t), inv_denom);
  g.d_t = l_d_t;
  g.d_s = l_d_s;
  g.losses.l_d_t = tape.scalar(l_d_t);
  g.losses.l_d_s = tape.scalar(l_d_s);

  if (opts.use_lrl) {
    const int lrl_t = tape.scale(cor_t, inv_denom);
    const int lrl_s = tape.scale(cor_s, inv_denom);
    g.lrl_t = lrl_t;
    g.lrl_s = lrl_s;
    g.losses.l_lrl = tape.scalar(lrl_t);
    g.l_bik_t = tape.add(tape.add(l_d_t, lrl_t), l_task_t);
    g.l_bik_s = tape.add(tape.add(l_d_s, lrl_s), l_task_s);
  } else {
    const int zero_t = tape.scale(cor_t, 0.0);
    const int zero_s = tape.scale(cor_s, 0.0);
    g.losses.l_lrl = 0.0;
    g.l_bik_t = tape.add(tape.add(l_d_t, zero_t), l_task_t);
    g.l_bik_s = tape.add(tape.add(l_d_s, zero_s), l_task_s);
  }
  g.losses.l_bik_t = tape.scalar(g.l_bik_t);
  g.losses.l_bik_s = tape.scalar(g.l_bik_s);
  g.total = tape.add(g.l_bik_t, g.l_bik_s);
  return g;
}

LossBundle total_losses(const Tensor& batch, const std::vector<int>& labels,
                        const ClientState& state, const SynkdOptions& opts) {
  return build_synkd_graph(state.spec, state.teacher, state.student, state.w_aux, batch, labels,
                           opts)
      .losses;
}

LocalUpdateResult local_update(ClientState& state, const ModelParams& global_student,
                               std::size_t steps, double eta, std::size_t batch_size,
                               const SynkdOptions& opts) {
  LocalUpdateResult result;
  if (state.split.train.empty()) {
    result.skipped = true;
    return result;
  }
  if (steps < 1) throw ContractError("local_update: steps must be >= 1");

  // "Clients update their student models with the global parameters."
  state.student = global_student;

  std::uniform_int_distribution<std::size_t> pick(0, state.split.train.size() - 1);
  for (std::size_t step = 0; step < steps; ++step) {
    std::vector<std::size_t> batch_idx(batch_size);
    for (auto& ix : batch_idx) ix = state.split.train[pick(state.rng)];
    auto [batch, labels] = make_batch(*state.data, batch_idx);

    SynkdGraph g =
        build_synkd_graph(state.spec, state.teacher, state.student, state.w_aux, batch, labels,
                          opts);
    std::vector<int> wrt = g.teacher.param_ids;
    wrt.insert(wrt.end(), g.student.param_ids.begin(), g.student.param_ids.end());
    if (g.w_aux_id >= 0) wrt.push_back(g.w_aux_id);
    // One pass over l_bik_t + l_bik_s: the detach structure makes the
    // teacher slice equal d(l_bik_t)/dTheta_t and likewise for the student.
    const auto grads = g.tape.grad(g.total, wrt);

    Gradients teacher_grads, student_grads;
    const std::size_t np = state.teacher.entries.size();
    for (std::size_t i = 0; i < np; ++i)
      teacher_grads[state.teacher.entries[i].name] = grads[i];
    for (std::size_t i = 0; i < np; ++i)
      student_grads[state.student.entries[i].name] = grads[np + i];
    sgd_step(state.teacher, teacher_grads, eta);
    sgd_step(state.student, student_grads, eta);
    if (g.w_aux_id >= 0) axpy_inplace(state.w_aux, -eta, grads.back());
    result.final_losses = g.losses;
  }

  for (std::size_t i = 0; i < state.student.entries.size(); ++i) {
    result.delta[state.student.entries[i].name] =
        sub(state.student.entries[i].tensor, global_student.entries[i].tensor);
  }
  result.sample_count = state.split.indices.size();
  return result;
}

}  // namespace prfl
