#ifndef PRFL_EXPCLI_HPP
#define PRFL_EXPCLI_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "prfl/fedsim.hpp"

namespace prfl {

struct ExperimentConfig {
  // [experiment]
  std::uint64_t seed = 1;
  std::size_t rounds = 100;
  std::size_t local_steps = 5;
  double lr = 5e-3;
  std::size_t batch_size = 32;
  std::size_t clients = 20;
  double participation_ratio = 0.1;
  Strategy strategy = Strategy::prfl;
  double dp_tau = 0.0;
  bool downlink_compress = true;
  std::string output_dir = "run_out";

  // [model]
  ModelSpec model;  // input_dims empty = take the dataset's feature dims

  // [dpd]
  DpdConfig dpd;

  // [partition]
  enum class PartitionKind { pathological, dirichlet };
  PartitionKind partition = PartitionKind::dirichlet;
  std::size_t classes_per_client = 2;
  double lambda = 0.1;

  // [dataset]
  enum class DatasetKind { synthetic, file };
  DatasetKind dataset = DatasetKind::synthetic;
  std::string dataset_path;
  std::size_t num_classes = 8;
  std::vector<std::size_t> data_dims = {16};
  std::size_t n_per_class = 200;
  double spread = 0.6;

  void validate() const;  // throws ConfigError naming the offending key
};

ExperimentConfig parse_config(const std::string& path);
// "key=value" or "section.key=value"; bare keys must be unique across sections.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);
std::string render_config(const ExperimentConfig& cfg);  // resolved INI text

struct ExperimentResult {
  std::vector<RoundReport> reports;  // reports[0] is the round-0 evaluation
  std::vector<std::string> eval_split;  // per client: which split accuracy used
  std::vector<double> mean_accuracy;  // per round, mean over clients
  double final_mean_accuracy = 0.0;
  std::size_t uploaded_floats = 0;  // totals over all rounds
  std::size_t full_floats = 0;
};

ExperimentResult run_experiment(const ExperimentConfig& cfg);

// CLI entry points; return a process exit status and print diagnostics to
// stderr on failure.
int cmd_run(const std::string& config_path, const std::vector<std::string>& overrides,
            const std::string& out_dir, bool force);
int cmd_summarize(const std::vector<std::string>& run_dirs, bool mixed);
int cmd_compression_report(const std::string& run_dir);

}  // namespace prfl

#endif  // PRFL_EXPCLI_HPP
