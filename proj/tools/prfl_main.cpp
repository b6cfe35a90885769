#include <string>
#include <vector>

#include "CLI11.hpp"
#include "prfl/expcli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"prfl — federated distillation laboratory"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::vector<std::string> overrides;
  bool force = false;
  CLI::App* run = app.add_subcommand("run", "execute an experiment from an INI config");
  run->add_option("config", config_path, "path to the INI config")->required();
  run->add_option("--set", overrides, "override a config key (key=value or section.key=value)");
  run->add_option("--out", out_dir, "output directory (overrides output_dir)");
  run->add_flag("--force", force, "overwrite an existing run directory");

  std::vector<std::string> run_dirs;
  bool mixed = false;
  CLI::App* summarize = app.add_subcommand("summarize", "mean +/- std over run directories");
  summarize->add_option("dirs", run_dirs, "run directories")->required();
  summarize->add_flag("--mixed", mixed, "allow runs with differing configurations");

  std::string report_dir;
  CLI::App* report =
      app.add_subcommand("compression-report", "per-round uplink volume as a percentage");
  report->add_option("dir", report_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  if (run->parsed()) return prfl::cmd_run(config_path, overrides, out_dir, force);
  if (summarize->parsed()) return prfl::cmd_summarize(run_dirs, mixed);
  return prfl::cmd_compression_report(report_dir);
}
