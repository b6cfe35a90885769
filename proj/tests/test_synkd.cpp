#include <cmath>

#include "doctest.h"
#include "prfl/datakit.hpp"
#include "prfl/synkd.hpp"

using namespace prfl;

namespace {

ModelSpec small_spec() {
  ModelSpec s;
  s.kind = ModelKind::mlp;
  s.input_dims = {6};
  s.hidden_width = 5;
  s.num_classes = 3;
  return s;
}

ClientState make_client(std::uint64_t seed) {
  static Dataset ds = [] {
    Rng rng(77);
    return gen_synthetic(3, {6}, 30, 0.5, rng);
  }();
  ClientState c;
  c.client_id = 0;
  c.spec = small_spec();
  Rng mrng(seed);
  c.teacher = build_model(c.spec, mrng);
  c.student = build_model(c.spec, mrng);
  c.rng = Rng(seed + 1);
  c.w_aux = init_w_aux(c.spec.hidden_size(), c.rng);
  c.data = &ds;
  for (std::size_t i = 0; i < ds.size(); ++i) c.split.indices.push_back(i);
  split_client(c.split, c.rng);
  return c;
}

}  // namespace

TEST_CASE("correction_loss matches a hand-computed value") {
  Tensor hs({1, 2}, {1.0, 2.0});
  Tensor ht({1, 2}, {0.0, 1.0});
  Tensor w({2, 2}, {1.0, 0.0, 0.0, 2.0});
  // diff = (1,1); diff*W = (1,2); mean of squares over 2 elements = 2.5
  CHECK(correction_loss(hs, ht, w) == doctest::Approx(2.5).epsilon(1e-15));
}

TEST_CASE("latent_repr_loss uses the guarded denominator") {
  CHECK(latent_repr_loss(2.0, 0.5, 0.5) == doctest::Approx(2.0 / (1.0 + 1e-8)));
  CHECK(latent_repr_loss(1.0, 0.0, 0.0) == doctest::Approx(1e8));
}

TEST_CASE("bidir_distill_losses agree with the KL oracle") {
  Tensor pt({2, 2}, {0.6, 0.4, 0.2, 0.8});
  Tensor ps({2, 2}, {0.5, 0.5, 0.3, 0.7});
  const auto [dt, dsl] = bidir_distill_losses(pt, ps, 0.7, 0.9);
  const double denom = 0.7 + 0.9 + 1e-8;
  CHECK(dt == doctest::Approx(kl_div_rows(pt, ps) / denom).epsilon(1e-12));
  CHECK(dsl == doctest::Approx(kl_div_rows(ps, pt) / denom).epsilon(1e-12));
}

TEST_CASE("init_w_aux is near the identity") {
  Rng rng(5);
  const Tensor w = init_w_aux(4, rng);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(std::abs(w.at(i, j) - (i == j ? 1.0 : 0.0)) < 0.1);
}

TEST_CASE("graph loss identities hold exactly") {
  ClientState c = make_client(9);
  auto [batch, labels] = make_batch(*c.data, {0, 31, 62, 5});
  SynkdGraph g = build_synkd_graph(c.spec, c.teacher, c.student, c.w_aux, batch, labels);
  const LossBundle& l = g.losses;
  // Totals are built by graph addition of the exact component nodes.
  CHECK(l.l_bik_t == l.l_d_t + l.l_lrl + l.l_task_t);
  CHECK(l.l_bik_s == g.tape.scalar(g.d_s) + g.tape.scalar(g.lrl_s) + l.l_task_s);
  CHECK(g.tape.scalar(g.total) == l.l_bik_t + l.l_bik_s);

  // Component values match the standalone oracles.
  const ForwardOutput ot = forward(c.spec, c.teacher, batch);
  const ForwardOutput os = forward(c.spec, c.student, batch);
  CHECK(l.l_cor ==
        doctest::Approx(correction_loss(os.hidden, ot.hidden, c.w_aux)).epsilon(1e-12));
  CHECK(l.l_task_t == doctest::Approx(cross_entropy(ot.probs, labels)).epsilon(1e-12));
  CHECK(l.l_task_s == doctest::Approx(cross_entropy(os.probs, labels)).epsilon(1e-12));
  CHECK(l.l_lrl ==
        doctest::Approx(latent_repr_loss(l.l_cor, l.l_task_t, l.l_task_s)).epsilon(1e-12));
  const auto [dt, dsl] = bidir_distill_losses(ot.probs, os.probs, l.l_task_t, l.l_task_s);
  CHECK(l.l_d_t == doctest::Approx(dt).epsilon(1e-12));
  CHECK(l.l_d_s == doctest::Approx(dsl).epsilon(1e-12));
}

TEST_CASE("no cross-leak: each model's loss carries no gradient to the other") {
  ClientState c = make_client(10);
  auto [batch, labels] = make_batch(*c.data, {1, 2, 3, 4});
  SynkdGraph g = build_synkd_graph(c.spec, c.teacher, c.student, c.w_aux, batch, labels);

  const auto t_grads_of_s = g.tape.grad(g.l_bik_s, g.teacher.param_ids);
  for (const Tensor& t : t_grads_of_s)
    for (double v : t.data) CHECK(v == 0.0);
  const auto s_grads_of_t = g.tape.grad(g.l_bik_t, g.student.param_ids);
  for (const Tensor& t : s_grads_of_t)
    for (double v : t.data) CHECK(v == 0.0);

  // And the genuine directions are nonzero.
  double tt = 0.0, ss = 0.0;
  for (const Tensor& t : g.tape.grad(g.l_bik_t, g.teacher.param_ids))
    for (double v : t.data) tt += std::abs(v);
  for (const Tensor& t : g.tape.grad(g.l_bik_s, g.student.param_ids))
    for (double v : t.data) ss += std::abs(v);
  CHECK(tt > 0.0);
  CHECK(ss > 0.0);
}

TEST_CASE("ablations: use_aux and use_lrl") {
  ClientState c = make_client(11);
  auto [batch, labels] = make_batch(*c.data, {0, 1});

  SynkdOptions no_lrl;
  no_lrl.use_lrl = false;
  SynkdGraph g = build_synkd_graph(c.spec, c.teacher, c.student, c.w_aux, batch, labels, no_lrl);
  CHECK(g.losses.l_lrl == 0.0);
  CHECK(g.losses.l_bik_t == doctest::Approx(g.losses.l_d_t + g.losses.l_task_t).epsilon(1e-12));

  SynkdOptions no_aux;
  no_aux.use_aux = false;
  SynkdGraph h = build_synkd_graph(c.spec, c.teacher, c.student, c.w_aux, batch, labels, no_aux);
  CHECK(h.w_aux_id == -1);
  // Without the aux matrix, the correction reduces to the raw hidden gap.
  const ForwardOutput ot = forward(c.spec, c.teacher, batch);
  const ForwardOutput os = forward(c.spec, c.student, batch);
  const Tensor eye = Tensor::identity(c.spec.hidden_size());
  CHECK(h.losses.l_cor ==
        doctest::Approx(correction_loss(os.hidden, ot.hidden, eye)).epsilon(1e-12));
}

TEST_CASE("local_update: delta bookkeeping, persistence, skip and determinism") {
  ClientState c = make_client(12);
  const ModelParams global = c.student;
  const ModelParams teacher_before = c.teacher;
  const Tensor w_before = c.w_aux;

  LocalUpdateResult res = local_update(c, global, 3, 5e-3, 8);
  CHECK(!res.skipped);
  CHECK(res.sample_count == c.split.indices.size());
  // student == global + delta, exactly as constructed
  for (std::size_t i = 0; i < c.student.entries.size(); ++i) {
    const Tensor& after = c.student.entries[i].tensor;
    const Tensor& base = global.entries[i].tensor;
    const Tensor& d = res.delta.at(c.student.entries[i].name);
    for (std::size_t j = 0; j < after.size(); ++j)
      CHECK(after.data[j] == doctest::Approx(base.data[j] + d.data[j]).epsilon(1e-12));
  }
  // teacher and W_aux moved (they persist locally and keep training)
  double tmoved = 0.0;
  for (std::size_t i = 0; i < c.teacher.entries.size(); ++i)
    for (std::size_t j = 0; j < c.teacher.entries[i].tensor.size(); ++j)
      tmoved += std::abs(c.teacher.entries[i].tensor.data[j] -
                         teacher_before.entries[i].tensor.data[j]);
  CHECK(tmoved > 0.0);
  double wmoved = 0.0;
  for (std::size_t j = 0; j < c.w_aux.size(); ++j)
    wmoved += std::abs(c.w_aux.data[j] - w_before.data[j]);
  CHECK(wmoved > 0.0);

  // determinism: identical client state => identical delta
  ClientState c1 = make_client(12);
  ClientState c2 = make_client(12);
  const LocalUpdateResult r1 = local_update(c1, global, 3, 5e-3, 8);
  const LocalUpdateResult r2 = local_update(c2, global, 3, 5e-3, 8);
  for (const auto& [name, t] : r1.delta) CHECK(t.data == r2.delta.at(name).data);

  // empty train set => skipped
  ClientState empty = make_client(13);
  empty.split.train.clear();
  const LocalUpdateResult r3 = local_update(empty, global, 3, 5e-3, 8);
  CHECK(r3.skipped);
}

TEST_CASE("local_update reduces the joint objective on average") {
  ClientState c = make_client(14);
  const ModelParams global = c.student;
  auto [batch, labels] = make_batch(*c.data, c.split.train);
  const LossBundle before = total_losses(batch, labels, c);
  local_update(c, global, 40, 1e-2, 16);
  const LossBundle after = total_losses(batch, labels, c);
  CHECK(after.l_bik_t + after.l_bik_s < before.l_bik_t + before.l_bik_s);
}
