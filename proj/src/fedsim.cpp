#include "prfl/fedsim.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <thread>

#include "prfl/errors.hpp"

namespace prfl {
namespace {

constexpr double kProbFloor = 1e-12;

// Stable per-(round, client) seed so calibration draws do not depend on
// scheduling order.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t round, std::uint64_t client) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (round + 1) + 0xBF58476D1CE4E5B9ULL * (client + 1);
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ULL;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return z;
}

ModelParams apply_delta(const ModelParams& base, const ParamDelta& delta) {
  ModelParams out = base;
  for (auto& entry : out.entries) {
    auto it = delta.find(entry.name);
    if (it == delta.end())
      throw ProtocolError("apply_delta: missing parameter " + entry.name);
    if (it->second.dims != entry.tensor.dims)
      throw ProtocolError("apply_delta: shape mismatch for " + entry.name);
    add_inplace(entry.tensor, it->second);
  }
  return out;
}

ParamDelta params_as_delta(const ModelParams& params) {
  ParamDelta out;
  for (const auto& e : params.entries) out[e.name] = e.tensor;
  return out;
}

ModelParams params_from_delta(const ModelParams& layout, const ParamDelta& values) {
  ModelParams out = layout;
  for (auto& entry : out.entries) {
    auto it = values.find(entry.name);
    if (it == values.end())
      throw ProtocolError("params_from_delta: missing parameter " + entry.name);
    if (it->second.dims != entry.tensor.dims)
      throw ProtocolError("params_from_delta: shape mismatch for " + entry.name);
    entry.tensor = it->second;
  }
  return out;
}

// Pass the model state through the wire codec, exactly as a client would
// receive it. variance_only selection is used for the downlink because the
// server holds no calibration data.
ModelParams roundtrip_downlink(const ModelParams& global, const DpdConfig& cfg,
                               bool compress) {
  DpdConfig down = cfg;
  down.mode = (compress && cfg.mode != DpdMode::full) ? DpdMode::variance_only
                                                      : DpdMode::full;
  CompressedUpdate cu = compress_update(params_as_delta(global), down);
  const CompressedUpdate rx = decode(encode(cu));
  return params_from_delta(global, decompress_update(rx));
}

double sum_log_likelihood(const ModelSpec& spec, const ModelParams& params,
                          const Tensor& batch, const std::vector<int>& labels) {
  const ForwardOutput out = forward(spec, params, batch);
  double sll = 0.0;
  const std::size_t c = out.probs.dims[1];
  for (std::size_t i = 0; i < labels.size(); ++i)
    sll += std::log(std::max(out.probs.data[i * c + static_cast<std::size_t>(labels[i])],
                             kProbFloor));
  return sll;
}

// Single-model task-loss training used by the fedavg and local baselines.
struct PlainResult {
  bool skipped = false;
  ParamDelta delta;
  std::size_t sample_count = 0;
  LossBundle final_losses;
};

PlainResult plain_task_update(ClientState& state, const ModelParams& start,
                              std::size_t steps, double eta, std::size_t batch_size) {
  PlainResult result;
  if (state.split.train.empty()) {
    result.skipped = true;
    return result;
  }
  state.student = start;

  std::uniform_int_distribution<std::size_t> pick(0, state.split.train.size() - 1);
  for (std::size_t step = 0; step < steps; ++step) {
    std::vector<std::size_t> batch_idx(batch_size);
    for (auto& ix : batch_idx) ix = state.split.train[pick(state.rng)];
    auto [batch, labels] = make_batch(*state.data, batch_idx);

    Tape tape;
    const int x = tape.leaf(batch);
    GraphModel gm = forward_graph(tape, state.spec, state.student, x);
    const int loss = tape.softmax_xent(gm.logits, labels);
    const auto grads = tape.grad(loss, gm.param_ids);
    Gradients by_name;
    for (std::size_t i = 0; i < state.student.entries.size(); ++i)
      by_name[state.student.entries[i].name] = grads[i];
    sgd_step(state.student, by_name, eta);

    result.final_losses = LossBundle{};
    result.final_losses.l_task_s = tape.scalar(loss);
    result.final_losses.l_bik_s = tape.scalar(loss);
  }

  for (std::size_t i = 0; i < state.student.entries.size(); ++i)
    result.delta[state.student.entries[i].name] =
        sub(state.student.entries[i].tensor, start.entries[i].tensor);
  result.sample_count = state.split.indices.size();
  return result;
}

const std::vector<std::size_t>& eval_rows(const ClientSplit& split) {
  if (!split.test.empty()) return split.test;
  if (!split.val.empty()) return split.val;
  return split.train;
}

struct ClientWork {
  bool dropped = false;
  std::vector<std::uint8_t> bytes;
  LossBundle losses;
};

void accumulate_losses(LossBundle& acc, const LossBundle& b) {
  acc.l_cor += b.l_cor;
  acc.l_task_t += b.l_task_t;
  acc.l_task_s += b.l_task_s;
  acc.l_lrl += b.l_lrl;
  acc.l_d_t += b.l_d_t;
  acc.l_d_s += b.l_d_s;
  acc.l_bik_t += b.l_bik_t;
  acc.l_bik_s += b.l_bik_s;
}

void scale_losses(LossBundle& acc, double c) {
  acc.l_cor *= c;
  acc.l_task_t *= c;
  acc.l_task_s *= c;
  acc.l_lrl *= c;
  acc.l_d_t *= c;
  acc.l_d_s *= c;
  acc.l_bik_t *= c;
  acc.l_bik_s *= c;
}

}  // namespace

std::vector<std::size_t> sample_clients(std::size_t n_clients, double ratio, Rng& rng) {
  if (n_clients == 0) throw ConfigError("sample_clients: no clients");
  if (!(ratio > 0.0) || ratio > 1.0)
    throw ConfigError("sample_clients: participation ratio must be in (0, 1]");
  std::size_t k = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n_clients)));
  k = std::clamp<std::size_t>(k, 1, n_clients);

  std::vector<std::size_t> ids(n_clients);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n_clients - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  ids.resize(k);
  std::sort(ids.begin(), ids.end());
  return ids;
}

void apply_dp_noise(ParamDelta& delta, double tau, Rng& rng) {
  if (tau < 0.0) throw ConfigError("apply_dp_noise: tau must be >= 0");
  if (tau == 0.0) return;
  std::normal_distribution<double> noise(0.0, tau);
  for (auto& [name, tensor] : delta)
    for (double& v : tensor.data) v += noise(rng);
}

ParamDelta aggregate(const std::vector<std::pair<ParamDelta, std::size_t>>& updates) {
  if (updates.empty()) throw ProtocolError("aggregate: no updates");
  std::size_t total = 0;
  for (const auto& [delta, n] : updates) total += n;
  if (total == 0) throw ProtocolError("aggregate: zero total sample count");

  ParamDelta out;
  for (const auto& [name, tensor] : updates.front().first)
    out[name] = Tensor::zeros(tensor.dims);
  for (const auto& [delta, n] : updates) {
    if (delta.size() != out.size())
      throw ProtocolError("aggregate: parameter set mismatch across clients");
    const double w = static_cast<double>(n) / static_cast<double>(total);
    for (const auto& [name, tensor] : delta) {
      auto it = out.find(name);
      if (it == out.end() || it->second.dims != tensor.dims)
        throw ProtocolError("aggregate: parameter mismatch for " + name);
      axpy_inplace(it->second, w, tensor);
    }
  }
  return out;
}

double evaluate_accuracy(const ModelSpec& spec, const ModelParams& params, const Dataset& ds,
                         const ClientSplit& split) {
  const auto& rows = eval_rows(split);
  if (rows.empty()) return 0.0;
  auto [batch, labels] = make_batch(ds, rows);
  const ForwardOutput out = forward(spec, params, batch);
  const std::size_t c = out.logits.dims[1];
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (out.logits.data[i * c + j] > out.logits.data[i * c + best]) best = j;
    if (best == static_cast<std::size_t>(labels[i])) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

RoundReport run_round(ServerState& server, std::vector<ClientState>& clients,
                      const RoundConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.dpd.validate();
  if (clients.empty()) throw ConfigError("run_round: no clients");

  RoundReport report;
  server.round_index += 1;
  report.round = server.round_index;
  report.participants = sample_clients(clients.size(), cfg.participation_ratio, server.rng);

  const bool communicates = cfg.strategy != Strategy::local;
  ModelParams received;
  if (communicates) {
    received = (cfg.strategy == Strategy::prfl)
                   ? roundtrip_downlink(server.global_student, cfg.dpd, cfg.downlink_compress)
                   : roundtrip_downlink(server.global_student, cfg.dpd, false);
  }

  std::vector<ClientWork> work(report.participants.size());
  std::atomic<std::size_t> next{0};
  auto run_one = [&](std::size_t slot) {
    const std::size_t id = report.participants[slot];
    ClientState& client = clients[id];
    ClientWork& w = work[slot];

    if (cfg.strategy == Strategy::local) {
      PlainResult res = plain_task_update(client, client.student, cfg.local_steps, cfg.lr,
                                          cfg.batch_size);
      w.dropped = res.skipped;
      w.losses = res.final_losses;
      return;
    }

    ParamDelta delta;
    std::size_t sample_count = 0;
    if (cfg.strategy == Strategy::prfl) {
      LocalUpdateResult res =
          local_update(client, received, cfg.local_steps, cfg.lr, cfg.batch_size, cfg.synkd);
      if (res.skipped) {
        w.dropped = true;
        return;
      }
      delta = std::move(res.delta);
      sample_count = res.sample_count;
      w.losses = res.final_losses;
    } else {
      PlainResult res =
          plain_task_update(client, received, cfg.local_steps, cfg.lr, cfg.batch_size);
      if (res.skipped) {
        w.dropped = true;
        return;
      }
      delta = std::move(res.delta);
      sample_count = res.sample_count;
      w.losses = res.final_losses;
    }

    apply_dp_noise(delta, cfg.dp_tau, client.rng);

    DpdConfig dpd = cfg.dpd;
    if (cfg.strategy == Strategy::fedavg) dpd.mode = DpdMode::full;

    CalibEvaluator evaluator;
    if (dpd.mode == DpdMode::aic_variance) {
      const auto& pool = client.split.train.empty() ? client.split.indices : client.split.train;
      Rng calib_rng(mix_seed(cfg.seed, report.round, id));
      std::vector<std::size_t> calib(std::min(dpd.calib_size, pool.size()));
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      for (auto& ix : calib) ix = pool[pick(calib_rng)];
      auto [cbatch, clabels] = make_batch(*client.data, calib);
      evaluator = [&, cbatch = std::move(cbatch),
                   clabels = std::move(clabels)](const ParamDelta& candidate) {
        return sum_log_likelihood(client.spec, apply_delta(received, candidate), cbatch,
                                  clabels);
      };
    }

    CompressedUpdate cu = compress_update(delta, dpd, evaluator);
    cu.client_id = static_cast<std::uint32_t>(id);
    cu.sample_count = sample_count;
    w.bytes = encode(cu);
  };

  std::size_t n_threads = cfg.threads == 0
                              ? std::max<unsigned>(1, std::thread::hardware_concurrency())
                              : cfg.threads;
  n_threads = std::min(n_threads, work.size());
  if (n_threads <= 1) {
    for (std::size_t i = 0; i < work.size(); ++i) run_one(i);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < work.size(); i = next.fetch_add(1))
          run_one(i);
      });
    for (auto& th : pool) th.join();
  }

  // Server side: decode every surviving message in ascending client-id order
  // (participants are sorted, so slot order is id order).
  std::vector<std::pair<ParamDelta, std::size_t>> updates;
  std::size_t survivors = 0;
  for (std::size_t slot = 0; slot < work.size(); ++slot) {
    if (work[slot].dropped) {
      report.dropped.push_back(report.participants[slot]);
      continue;
    }
    ++survivors;
    accumulate_losses(report.mean_losses, work[slot].losses);
    report.participant_losses.push_back(work[slot].losses);
    if (!communicates) continue;
    const CompressedUpdate rx = decode(work[slot].bytes);
    report.uploaded_floats += rx.uploaded_float_count;
    report.full_floats += rx.full_float_count;
    updates.emplace_back(decompress_update(rx), static_cast<std::size_t>(rx.sample_count));
    report.uplink_messages.push_back(std::move(work[slot].bytes));
  }
  if (survivors > 0) scale_losses(report.mean_losses, 1.0 / static_cast<double>(survivors));

  if (communicates && !updates.empty()) {
    const ParamDelta agg = aggregate(updates);
    server.global_student = apply_delta(server.global_student, agg);
  }
  report.compression_ratio =
      report.full_floats == 0 ? 1.0
                              : static_cast<double>(report.uploaded_floats) /
                                    static_cast<double>(report.full_floats);

  report.client_accuracy.resize(clients.size());
  for (std::size_t i = 0; i < clients.size(); ++i) {
    const ModelParams& eval_model =
        cfg.strategy == Strategy::fedavg ? server.global_student : clients[i].student;
    report.client_accuracy[i] =
        evaluate_accuracy(clients[i].spec, eval_model, *clients[i].data, clients[i].split);
  }

  report.wall_ms = std::chrono::duration<double, std::milli>(
                       std::chrono::steady_clock::now() - t0)
                       .count();
  return report;
}

}  // namespace prfl
