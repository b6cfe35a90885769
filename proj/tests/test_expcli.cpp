#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "prfl/errors.hpp"
#include "prfl/expcli.hpp"

using namespace prfl;
namespace fs = std::filesystem;

namespace {

fs::path write_temp_config(const std::string& body, const char* name = "expcli_test.ini") {
  const fs::path p = fs::temp_directory_path() / name;
  std::ofstream(p) << body;
  return p;
}

// metrics.csv with the wall_ms column removed, for determinism comparison.
std::string metrics_without_wall(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    const std::size_t cut = line.rfind(',');
    out << line.substr(0, cut) << "\n";
  }
  return out.str();
}

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.rounds = 2;
  cfg.clients = 4;
  cfg.participation_ratio = 0.5;
  cfg.num_classes = 3;
  cfg.data_dims = {6};
  cfg.n_per_class = 20;
  cfg.model.hidden_width = 6;
  return cfg;
}

}  // namespace

TEST_CASE("parse_config: empty file gives documented defaults") {
  const fs::path p = write_temp_config("");
  const ExperimentConfig cfg = parse_config(p.string());
  CHECK(cfg.rounds == 100);
  CHECK(cfg.local_steps == 5);
  CHECK(cfg.lr == 5e-3);
  CHECK(cfg.dpd.alpha == 0.98);
  CHECK(cfg.dp_tau == 0.0);
  CHECK(cfg.batch_size == 32);
  CHECK(cfg.participation_ratio == 0.1);
  CHECK(cfg.strategy == Strategy::prfl);
  CHECK_NOTHROW(cfg.validate());
  fs::remove(p);
}

TEST_CASE("parse_config: values reach the right fields") {
  const fs::path p = write_temp_config(
      "[experiment]\n"
      "rounds = 7\n"
      "strategy = fedavg\n"
      "tau = 0.05  # inline comment\n"
      "\n"
      "[partition]\n"
      "kind = dirichlet\n"
      "lambda = 0.1\n"
      "\n"
      "[dpd]\n"
      "mode = variance_only\n"
      "alpha = 0.9\n");
  const ExperimentConfig cfg = parse_config(p.string());
  CHECK(cfg.rounds == 7);
  CHECK(cfg.strategy == Strategy::fedavg);
  CHECK(cfg.dp_tau == 0.05);
  CHECK(cfg.lambda == 0.1);
  CHECK(cfg.dpd.mode == DpdMode::variance_only);
  CHECK(cfg.dpd.alpha == 0.9);
  fs::remove(p);
}

TEST_CASE("parse_config: errors carry line numbers and key names") {
  const fs::path p = write_temp_config("[experiment]\nnope = 3\n");
  try {
    parse_config(p.string());
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    CHECK(std::string(e.what()).find("nope") != std::string::npos);
  }
  fs::remove(p);

  const fs::path q = write_temp_config("rounds = 3\n");
  CHECK_THROWS_AS(parse_config(q.string()), ConfigError);  // key outside section
  fs::remove(q);
}

TEST_CASE("validate: alpha constraint names the key") {
  const fs::path p = write_temp_config("[dpd]\nalpha = 1.5\n");
  ExperimentConfig cfg = parse_config(p.string());
  try {
    cfg.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("alpha") != std::string::npos);
  }
  fs::remove(p);
}

TEST_CASE("apply_override: bare, qualified, ambiguous and unknown keys") {
  ExperimentConfig cfg;
  apply_override(cfg, "rounds=3");
  CHECK(cfg.rounds == 3);
  apply_override(cfg, "dpd.mode=full");
  CHECK(cfg.dpd.mode == DpdMode::full);
  apply_override(cfg, "model.kind=smallcnn");
  CHECK(cfg.model.kind == ModelKind::smallcnn);
  CHECK_THROWS_AS(apply_override(cfg, "kind=smallcnn"), ConfigError);  // ambiguous
  CHECK_THROWS_AS(apply_override(cfg, "bogus=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "no-equals"), ConfigError);
}

TEST_CASE("render_config round-trips through parse_config") {
  ExperimentConfig cfg = tiny_config();
  cfg.strategy = Strategy::local;
  cfg.dpd.mode = DpdMode::variance_only;
  const fs::path p = write_temp_config(render_config(cfg), "expcli_render.ini");
  const ExperimentConfig back = parse_config(p.string());
  CHECK(render_config(back) == render_config(cfg));
  fs::remove(p);
}

TEST_CASE("run_experiment: report count, R=0, and determinism") {
  ExperimentConfig cfg = tiny_config();
  const ExperimentResult res = run_experiment(cfg);
  CHECK(res.reports.size() == 3);  // round 0 + 2 rounds
  CHECK(res.mean_accuracy.size() == 3);
  CHECK(res.final_mean_accuracy == res.mean_accuracy.back());

  ExperimentConfig zero = tiny_config();
  zero.rounds = 0;
  const ExperimentResult rz = run_experiment(zero);
  CHECK(rz.reports.size() == 1);
  CHECK(rz.reports[0].round == 0);

  const ExperimentResult again = run_experiment(cfg);
  CHECK(again.mean_accuracy == res.mean_accuracy);
}

TEST_CASE("cmd_run writes outputs and refuses to overwrite without --force") {
  const fs::path dir = fs::temp_directory_path() / "expcli_run_dir";
  fs::remove_all(dir);
  ExperimentConfig cfg = tiny_config();
  const fs::path ini = write_temp_config(render_config(cfg), "expcli_run.ini");

  CHECK(cmd_run(ini.string(), {"rounds=1"}, dir.string(), false) == 0);
  CHECK(fs::exists(dir / "metrics.csv"));
  CHECK(fs::exists(dir / "summary.json"));
  CHECK(fs::exists(dir / "config.ini"));
  {
    std::ifstream in(dir / "metrics.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header ==
          "round,scope,split,accuracy,l_bik_t,l_bik_s,uploaded_floats,full_floats,wall_ms");
  }

  CHECK(cmd_run(ini.string(), {"rounds=1"}, dir.string(), false) == 1);  // refuse
  CHECK(cmd_run(ini.string(), {"rounds=1"}, dir.string(), true) == 0);   // --force

  // --set override beats the file value: rounds=1 means exactly rounds 0..1
  std::string last;
  {
    std::ifstream in(dir / "metrics.csv");
    std::string line;
    while (std::getline(in, line)) last = line;
  }
  CHECK(last.rfind("1,mean,", 0) == 0);

  fs::remove(ini);
  fs::remove_all(dir);
}

TEST_CASE("byte-determinism of metrics.csv modulo wall_ms") {
  const fs::path d1 = fs::temp_directory_path() / "expcli_det1";
  const fs::path d2 = fs::temp_directory_path() / "expcli_det2";
  fs::remove_all(d1);
  fs::remove_all(d2);
  ExperimentConfig cfg = tiny_config();
  const fs::path ini = write_temp_config(render_config(cfg), "expcli_det.ini");
  REQUIRE(cmd_run(ini.string(), {}, d1.string(), false) == 0);
  REQUIRE(cmd_run(ini.string(), {}, d2.string(), false) == 0);
  CHECK(metrics_without_wall(d1 / "metrics.csv") == metrics_without_wall(d2 / "metrics.csv"));
  fs::remove(ini);
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("cmd_summarize and cmd_compression_report run on real outputs") {
  const fs::path d1 = fs::temp_directory_path() / "expcli_sum1";
  const fs::path d2 = fs::temp_directory_path() / "expcli_sum2";
  fs::remove_all(d1);
  fs::remove_all(d2);
  ExperimentConfig cfg = tiny_config();
  const fs::path ini = write_temp_config(render_config(cfg), "expcli_sum.ini");
  REQUIRE(cmd_run(ini.string(), {"seed=1"}, d1.string(), false) == 0);
  REQUIRE(cmd_run(ini.string(), {"seed=2"}, d2.string(), false) == 0);

  CHECK(cmd_summarize({d1.string(), d2.string()}, false) == 0);
  CHECK(cmd_compression_report(d1.string()) == 0);

  // A run with a different strategy still summarizes (strategy is the axis),
  // but a different model does not without --mixed.
  const fs::path d3 = fs::temp_directory_path() / "expcli_sum3";
  fs::remove_all(d3);
  REQUIRE(cmd_run(ini.string(), {"rounds=1", "seed=3"}, d3.string(), false) == 0);
  CHECK(cmd_summarize({d1.string(), d3.string()}, false) == 1);
  CHECK(cmd_summarize({d1.string(), d3.string()}, true) == 0);

  CHECK(cmd_summarize({(fs::temp_directory_path() / "no_such_dir").string()}, false) == 1);

  fs::remove(ini);
  fs::remove_all(d1);
  fs::remove_all(d2);
  fs::remove_all(d3);
}
