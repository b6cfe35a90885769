#ifndef PRFL_SYNKD_HPP
#define PRFL_SYNKD_HPP

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "prfl/datakit.hpp"
#include "prfl/nn.hpp"

namespace prfl {

// Ablation switches: use_aux off drops the auxiliary matrix from the
// correction loss; use_lrl off drops the latent representation term from
// both totals.
struct SynkdOptions {
  bool use_aux = true;
  bool use_lrl = true;
};

struct LossBundle {
  double l_cor = 0.0;
  double l_task_t = 0.0;
  double l_task_s = 0.0;
  double l_lrl = 0.0;  // shared by teacher and student
  double l_d_t = 0.0;
  double l_d_s = 0.0;
  double l_bik_t = 0.0;
  double l_bik_s = 0.0;
};

struct ClientState {
  int client_id = 0;
  ModelSpec spec;
  ModelParams teacher;
  ModelParams student;
  Tensor w_aux;  // d x d, trainable
  const Dataset* data = nullptr;
  ClientSplit split;
  Rng rng;
};

struct LocalUpdateResult {
  bool skipped = false;  // empty local dataset
  ParamDelta delta;      // student change over the whole local phase
  std::size_t sample_count = 0;
  LossBundle final_losses;
};

// Adaptive-weight denominator guard for Eqs. using task-loss sums.
constexpr double kDenomEps = 1e-8;

// Mean over all batch x d elements of ((h_s - h_t) W_aux)^2.
double correction_loss(const Tensor& h_s, const Tensor& h_t, const Tensor& w_aux);

// l_cor / (l_task_t + l_task_s + eps); one value for both models.
double latent_repr_loss(double l_cor, double l_task_t, double l_task_s);

// (l_d_t, l_d_s): each direction's KL over the detached other side, divided
// by the detached task-loss sum.
std::pair<double, double> bidir_distill_losses(const Tensor& probs_t, const Tensor& probs_s,
                                               double l_task_t, double l_task_s);

// Both forwards recorded on one tape, with the detach structure the two
// optimizers need: each model's loss sees the other's outputs as constants,
// and the adaptive denominators carry no gradient.
struct SynkdGraph {
  Tape tape;
  GraphModel teacher;
  GraphModel student;
  int w_aux_id = -1;  // -1 when the aux matrix is ablated
  // Component loss nodes, exposed so gradients of individual terms can be
  // inspected (e.g. by finite-difference verification).
  int cor_t = -1, cor_s = -1;
  int task_t = -1, task_s = -1;
  int d_t = -1, d_s = -1;
  int lrl_t = -1, lrl_s = -1;  // -1 when the latent term is ablated
  int l_bik_t = -1;
  int l_bik_s = -1;
  int total = -1;  // l_bik_t + l_bik_s, the w_aux objective
  LossBundle losses;
};

SynkdGraph build_synkd_graph(const ModelSpec& spec, const ModelParams& teacher,
                             const ModelParams& student, const Tensor& w_aux,
                             const Tensor& batch, const std::vector<int>& labels,
                             const SynkdOptions& opts = {});

LossBundle total_losses(const Tensor& batch, const std::vector<int>& labels,
                        const ClientState& state, const SynkdOptions& opts = {});

// Algorithm: replace student with the received global, run `steps` joint
// SGD steps (teacher on l_bik_t, student on l_bik_s, W_aux on their sum),
// return the student delta. Teacher and W_aux persist in the state.
LocalUpdateResult local_update(ClientState& state, const ModelParams& global_student,
                               std::size_t steps, double eta, std::size_t batch_size,
                               const SynkdOptions& opts = {});

// W_aux start: identity plus N(0, 0.01) entries.
Tensor init_w_aux(std::size_t d, Rng& rng);

}  // namespace prfl

#endif  // PRFL_SYNKD_HPP
