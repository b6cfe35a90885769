#ifndef PRFL_FEDSIM_HPP
#define PRFL_FEDSIM_HPP

#include <cstdint>
#include <utility>
#include <vector>

#include "prfl/datakit.hpp"
#include "prfl/dpd.hpp"
#include "prfl/synkd.hpp"

namespace prfl {

enum class Strategy { prfl, fedavg, local };

struct ServerState {
  ModelParams global_student;
  std::size_t round_index = 0;
  Rng rng;
};

struct RoundConfig {
  Strategy strategy = Strategy::prfl;
  std::uint64_t seed = 0;  // base seed for round-scoped generators
  std::size_t local_steps = 5;
  double lr = 5e-3;
  std::size_t batch_size = 32;
  double participation_ratio = 0.1;
  double dp_tau = 0.0;
  DpdConfig dpd;
  bool downlink_compress = true;
  SynkdOptions synkd;
  std::size_t threads = 1;  // worker cap; 0 = hardware concurrency
};

struct RoundReport {
  std::size_t round = 0;
  std::vector<std::size_t> participants;
  std::vector<std::size_t> dropped;
  std::vector<double> client_accuracy;        // one entry per client
  std::vector<LossBundle> participant_losses;  // aligned with participants
  LossBundle mean_losses;                      // over surviving participants
  std::size_t uploaded_floats = 0;
  std::size_t full_floats = 0;
  double compression_ratio = 1.0;  // uploaded / full, 1.0 when nothing moved
  double wall_ms = 0.0;
  // Raw uplink bytes, kept for boundary audits; the only client->server
  // crossing type.
  std::vector<std::vector<std::uint8_t>> uplink_messages;
};

// max(1, round(ratio * N)) ids, uniform without replacement, sorted.
std::vector<std::size_t> sample_clients(std::size_t n_clients, double ratio, Rng& rng);

// Adds zero-mean Gaussian noise with standard deviation tau to every entry;
// tau = 0 leaves the delta bitwise untouched.
void apply_dp_noise(ParamDelta& delta, double tau, Rng& rng);

// Weighted mean with weights n_k / sum(n_k); summed in input order (caller
// supplies ascending client ids).
ParamDelta aggregate(const std::vector<std::pair<ParamDelta, std::size_t>>& updates);

// Mean argmax accuracy of the model on the given rows; empty test indices
// fall back to val, then train.
double evaluate_accuracy(const ModelSpec& spec, const ModelParams& params, const Dataset& ds,
                         const ClientSplit& split);

RoundReport run_round(ServerState& server, std::vector<ClientState>& clients,
                      const RoundConfig& cfg);

}  // namespace prfl

#endif  // PRFL_FEDSIM_HPP
