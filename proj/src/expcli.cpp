#include "prfl/expcli.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "prfl/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace prfl {
namespace {

std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ULL;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& want) {
  throw ConfigError("key `" + key + "`: cannot parse \"" + value + "\" as " + want);
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const std::uint64_t v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    bad_value(key, value, "a nonnegative integer");
  }
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  return static_cast<std::size_t>(parse_u64(key, value));
}

double parse_real(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    bad_value(key, value, "a real number");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "on" || value == "1") return true;
  if (value == "false" || value == "off" || value == "0") return false;
  bad_value(key, value, "a boolean (true/false/on/off/1/0)");
}

std::vector<std::size_t> parse_dims(const std::string& key, const std::string& value) {
  std::vector<std::size_t> dims;
  std::stringstream ss(value);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (part.empty()) bad_value(key, value, "a comma-separated dimension list");
    dims.push_back(parse_size(key, part));
  }
  if (dims.empty()) bad_value(key, value, "a comma-separated dimension list");
  return dims;
}

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::prfl: return "prfl";
    case Strategy::fedavg: return "fedavg";
    case Strategy::local: return "local";
  }
  return "?";
}

Strategy parse_strategy(const std::string& key, const std::string& value) {
  if (value == "prfl") return Strategy::prfl;
  if (value == "fedavg") return Strategy::fedavg;
  if (value == "local") return Strategy::local;
  bad_value(key, value, "one of prfl|fedavg|local");
}

std::string dpd_mode_name(DpdMode m) {
  switch (m) {
    case DpdMode::full: return "full";
    case DpdMode::variance_only: return "variance_only";
    case DpdMode::aic_variance: return "aic_variance";
  }
  return "?";
}

DpdMode parse_dpd_mode(const std::string& key, const std::string& value) {
  if (value == "full") return DpdMode::full;
  if (value == "variance_only") return DpdMode::variance_only;
  if (value == "aic_variance") return DpdMode::aic_variance;
  bad_value(key, value, "one of full|variance_only|aic_variance");
}

std::string dims_csv(const std::vector<std::size_t>& dims) {
  std::string out;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(dims[i]);
  }
  return out;
}

std::string real_str(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Applies one key; throws ConfigError on unknown section/key or bad value.
void set_key(ExperimentConfig& cfg, const std::string& section, const std::string& key,
             const std::string& value) {
  const std::string full = section + "." + key;
  if (section == "experiment") {
    if (key == "seed") cfg.seed = parse_u64(full, value);
    else if (key == "rounds") cfg.rounds = parse_size(full, value);
    else if (key == "local_steps") cfg.local_steps = parse_size(full, value);
    else if (key == "lr") cfg.lr = parse_real(full, value);
    else if (key == "batch_size") cfg.batch_size = parse_size(full, value);
    else if (key == "clients") cfg.clients = parse_size(full, value);
    else if (key == "participation_ratio") cfg.participation_ratio = parse_real(full, value);
    else if (key == "strategy") cfg.strategy = parse_strategy(full, value);
    else if (key == "tau") cfg.dp_tau = parse_real(full, value);
    else if (key == "downlink_compress") cfg.downlink_compress = parse_bool(full, value);
    else if (key == "output_dir") cfg.output_dir = value;
    else throw ConfigError("unknown key `" + full + "`");
  } else if (section == "model") {
    if (key == "kind") {
      if (value == "mlp") cfg.model.kind = ModelKind::mlp;
      else if (value == "smallcnn") cfg.model.kind = ModelKind::smallcnn;
      else bad_value(full, value, "one of mlp|smallcnn");
    } else if (key == "input_dims") cfg.model.input_dims = parse_dims(full, value);
    else if (key == "hidden_width") cfg.model.hidden_width = parse_size(full, value);
    else if (key == "channels1") cfg.model.channels1 = parse_size(full, value);
    else if (key == "channels2") cfg.model.channels2 = parse_size(full, value);
    else throw ConfigError("unknown key `" + full + "`");
  } else if (section == "dpd") {
    if (key == "alpha") cfg.dpd.alpha = parse_real(full, value);
    else if (key == "mode") cfg.dpd.mode = parse_dpd_mode(full, value);
    else if (key == "aic_window") cfg.dpd.aic_window = parse_size(full, value);
    else if (key == "calib_size") cfg.dpd.calib_size = parse_size(full, value);
    else if (key == "min_compress_elems") cfg.dpd.min_compress_elems = parse_size(full, value);
    else throw ConfigError("unknown key `" + full + "`");
  } else if (section == "partition") {
    if (key == "kind") {
      if (value == "pathological") cfg.partition = ExperimentConfig::PartitionKind::pathological;
      else if (value == "dirichlet") cfg.partition = ExperimentConfig::PartitionKind::dirichlet;
      else bad_value(full, value, "one of pathological|dirichlet");
    } else if (key == "classes_per_client") cfg.classes_per_client = parse_size(full, value);
    else if (key == "lambda") cfg.lambda = parse_real(full, value);
    else throw ConfigError("unknown key `" + full + "`");
  } else if (section == "dataset") {
    if (key == "kind") {
      if (value == "synthetic") cfg.dataset = ExperimentConfig::DatasetKind::synthetic;
      else if (value == "file") cfg.dataset = ExperimentConfig::DatasetKind::file;
      else bad_value(full, value, "one of synthetic|file");
    } else if (key == "path") cfg.dataset_path = value;
    else if (key == "classes") cfg.num_classes = parse_size(full, value);
    else if (key == "dims") cfg.data_dims = parse_dims(full, value);
    else if (key == "n_per_class") cfg.n_per_class = parse_size(full, value);
    else if (key == "spread") cfg.spread = parse_real(full, value);
    else throw ConfigError("unknown key `" + full + "`");
  } else {
    throw ConfigError("unknown section `" + section + "`");
  }
}

const std::map<std::string, std::vector<std::string>>& key_sections() {
  static const std::map<std::string, std::vector<std::string>> table = [] {
    std::map<std::string, std::vector<std::string>> t;
    const std::pair<const char*, std::vector<std::string>> sections[] = {
        {"experiment",
         {"seed", "rounds", "local_steps", "lr", "batch_size", "clients",
          "participation_ratio", "strategy", "tau", "downlink_compress", "output_dir"}},
        {"model", {"kind", "input_dims", "hidden_width", "channels1", "channels2"}},
        {"dpd", {"alpha", "mode", "aic_window", "calib_size", "min_compress_elems"}},
        {"partition", {"kind", "classes_per_client", "lambda"}},
        {"dataset", {"kind", "path", "classes", "dims", "n_per_class", "spread"}},
    };
    for (const auto& [section, keys] : sections)
      for (const auto& key : keys) t[key].push_back(section);
    return t;
  }();
  return table;
}

std::size_t env_threads() {
  const char* raw = std::getenv("PRFL_THREADS");
  if (raw == nullptr || *raw == '\0') return 1;
  return parse_size("PRFL_THREADS", raw);
}

struct MeanRow {
  std::size_t round = 0;
  double accuracy = 0.0;
  std::size_t uploaded = 0, full = 0;
};

// Pulls the scope=mean rows back out of a metrics.csv.
std::vector<MeanRow> read_mean_rows(const fs::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot open " + csv_path.string());
  std::string line;
  std::getline(in, line);  // header
  std::vector<MeanRow> rows;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 9) throw IoError("malformed metrics row in " + csv_path.string());
    if (fields[1] != "mean") continue;
    MeanRow r;
    r.round = parse_size("round", fields[0]);
    r.accuracy = parse_real("accuracy", fields[3]);
    r.uploaded = parse_size("uploaded_floats", fields[6]);
    r.full = parse_size("full_floats", fields[7]);
    rows.push_back(r);
  }
  if (rows.empty()) throw IoError("no mean rows in " + csv_path.string());
  return rows;
}

std::string eval_split_name(const ClientSplit& split) {
  if (!split.test.empty()) return "test";
  if (!split.val.empty()) return "val";
  return "train";
}

void write_metrics(const fs::path& path, const ExperimentResult& res) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "round,scope,split,accuracy,l_bik_t,l_bik_s,uploaded_floats,full_floats,wall_ms\n";
  char buf[256];
  for (const auto& rep : res.reports) {
    // per-client final l_bik values, present only for surviving participants
    std::map<std::size_t, const LossBundle*> by_id;
    std::size_t li = 0;
    for (std::size_t slot = 0; slot < rep.participants.size(); ++slot) {
      const std::size_t id = rep.participants[slot];
      if (std::find(rep.dropped.begin(), rep.dropped.end(), id) != rep.dropped.end()) continue;
      by_id[id] = &rep.participant_losses[li++];
    }
    double acc_sum = 0.0;
    for (std::size_t i = 0; i < rep.client_accuracy.size(); ++i) {
      acc_sum += rep.client_accuracy[i];
      const LossBundle* lb = by_id.count(i) ? by_id.at(i) : nullptr;
      std::snprintf(buf, sizeof(buf), "%zu,%zu,%s,%.6f,%.9g,%.9g,0,0,0.000\n", rep.round, i,
                    res.eval_split[i].c_str(), rep.client_accuracy[i], lb ? lb->l_bik_t : 0.0,
                    lb ? lb->l_bik_s : 0.0);
      out << buf;
    }
    const double mean_acc =
        rep.client_accuracy.empty() ? 0.0 : acc_sum / static_cast<double>(rep.client_accuracy.size());
    std::snprintf(buf, sizeof(buf), "%zu,mean,all,%.6f,%.9g,%.9g,%zu,%zu,%.3f\n", rep.round,
                  mean_acc, rep.mean_losses.l_bik_t, rep.mean_losses.l_bik_s,
                  rep.uploaded_floats, rep.full_floats, rep.wall_ms);
    out << buf;
  }
}

// The resolved config minus run identity (seed, output dir); used by
// summarize to detect mixed configurations.
std::string config_fingerprint(const ExperimentConfig& cfg) {
  ExperimentConfig c = cfg;
  c.seed = 0;
  c.output_dir = "";
  return render_config(c);
}

}  // namespace

void ExperimentConfig::validate() const {
  if (local_steps < 1) throw ConfigError("key `local_steps`: must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("key `lr`: must be > 0");
  if (batch_size < 1) throw ConfigError("key `batch_size`: must be >= 1");
  if (clients < 1) throw ConfigError("key `clients`: must be >= 1");
  if (!(participation_ratio > 0.0) || participation_ratio > 1.0)
    throw ConfigError("key `participation_ratio`: must be in (0, 1]");
  if (dp_tau < 0.0) throw ConfigError("key `tau`: must be >= 0");
  if (!(dpd.alpha > 0.0) || dpd.alpha > 1.0)
    throw ConfigError("key `alpha`: must be in (0, 1]");
  try {
    dpd.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("section `dpd`: ") + e.what());
  }
  if (partition == PartitionKind::dirichlet && !(lambda > 0.0))
    throw ConfigError("key `lambda`: must be > 0");
  if (partition == PartitionKind::pathological && classes_per_client < 1)
    throw ConfigError("key `classes_per_client`: must be >= 1");
  if (dataset == DatasetKind::synthetic) {
    if (num_classes < 2) throw ConfigError("key `classes`: must be >= 2");
    if (n_per_class < 1) throw ConfigError("key `n_per_class`: must be >= 1");
    if (data_dims.empty()) throw ConfigError("key `dims`: must be nonempty");
    if (spread < 0.0) throw ConfigError("key `spread`: must be >= 0");
  } else if (dataset_path.empty()) {
    throw ConfigError("key `path`: required for dataset kind `file`");
  }
  if (output_dir.empty()) throw ConfigError("key `output_dir`: must be nonempty");
}

ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  ExperimentConfig cfg;
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError(path + ":" + std::to_string(lineno) + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected `key = value`");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty())
      throw ConfigError(path + ":" + std::to_string(lineno) + ": key outside any [section]");
    try {
      set_key(cfg, section, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override `" + assignment + "`: expected key=value");
  std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  std::string section;
  const std::size_t dot = key.find('.');
  if (dot != std::string::npos) {
    section = key.substr(0, dot);
    key = key.substr(dot + 1);
  } else {
    const auto& table = key_sections();
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("override: unknown key `" + key + "`");
    if (it->second.size() > 1)
      throw ConfigError("override: key `" + key + "` is ambiguous; qualify as section.key");
    section = it->second.front();
  }
  set_key(cfg, section, key, value);
}

std::string render_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "[experiment]\n"
      << "seed = " << cfg.seed << "\n"
      << "rounds = " << cfg.rounds << "\n"
      << "local_steps = " << cfg.local_steps << "\n"
      << "lr = " << real_str(cfg.lr) << "\n"
      << "batch_size = " << cfg.batch_size << "\n"
      << "clients = " << cfg.clients << "\n"
      << "participation_ratio = " << real_str(cfg.participation_ratio) << "\n"
      << "strategy = " << strategy_name(cfg.strategy) << "\n"
      << "tau = " << real_str(cfg.dp_tau) << "\n"
      << "downlink_compress = " << (cfg.downlink_compress ? "true" : "false") << "\n"
      << "output_dir = " << cfg.output_dir << "\n\n";
  out << "[model]\n"
      << "kind = " << (cfg.model.kind == ModelKind::mlp ? "mlp" : "smallcnn") << "\n";
  if (!cfg.model.input_dims.empty()) out << "input_dims = " << dims_csv(cfg.model.input_dims) << "\n";
  out << "hidden_width = " << cfg.model.hidden_width << "\n"
      << "channels1 = " << cfg.model.channels1 << "\n"
      << "channels2 = " << cfg.model.channels2 << "\n\n";
  out << "[dpd]\n"
      << "alpha = " << real_str(cfg.dpd.alpha) << "\n"
      << "mode = " << dpd_mode_name(cfg.dpd.mode) << "\n"
      << "aic_window = " << cfg.dpd.aic_window << "\n"
      << "calib_size = " << cfg.dpd.calib_size << "\n"
      << "min_compress_elems = " << cfg.dpd.min_compress_elems << "\n\n";
  out << "[partition]\n"
      << "kind = "
      << (cfg.partition == ExperimentConfig::PartitionKind::pathological ? "pathological"
                                                                         : "dirichlet")
      << "\n"
      << "classes_per_client = " << cfg.classes_per_client << "\n"
      << "lambda = " << real_str(cfg.lambda) << "\n\n";
  out << "[dataset]\n"
      << "kind = "
      << (cfg.dataset == ExperimentConfig::DatasetKind::synthetic ? "synthetic" : "file") << "\n";
  if (!cfg.dataset_path.empty()) out << "path = " << cfg.dataset_path << "\n";
  out << "classes = " << cfg.num_classes << "\n"
      << "dims = " << dims_csv(cfg.data_dims) << "\n"
      << "n_per_class = " << cfg.n_per_class << "\n"
      << "spread = " << real_str(cfg.spread) << "\n";
  return out.str();
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();

  Rng master(cfg.seed);
  const std::uint64_t data_seed = master();
  const std::uint64_t part_seed = master();
  const std::uint64_t model_seed = master();
  const std::uint64_t server_seed = master();
  const std::uint64_t client_base = master();

  Dataset ds;
  if (cfg.dataset == ExperimentConfig::DatasetKind::file) {
    ds = load_dataset(cfg.dataset_path);
  } else {
    Rng data_rng(data_seed);
    ds = gen_synthetic(cfg.num_classes, cfg.data_dims, cfg.n_per_class, cfg.spread, data_rng);
  }

  ModelSpec spec = cfg.model;
  if (spec.input_dims.empty()) spec.input_dims = ds.feature_dims();
  spec.num_classes = ds.num_classes;
  spec.validate();
  if (spec.input_size() != ds.feature_size())
    throw ConfigError("key `input_dims`: model input size " +
                      std::to_string(spec.input_size()) + " does not match dataset feature size " +
                      std::to_string(ds.feature_size()));

  Rng part_rng(part_seed);
  PartitionSpec parts =
      cfg.partition == ExperimentConfig::PartitionKind::pathological
          ? partition_pathological(ds, cfg.clients, cfg.classes_per_client, part_rng)
          : partition_dirichlet(ds, cfg.clients, cfg.lambda, {}, part_rng);
  for (auto& client : parts.clients) split_client(client, part_rng);

  Rng model_rng(model_seed);
  ModelParams global = build_model(spec, model_rng);

  std::vector<ClientState> clients(cfg.clients);
  for (std::size_t i = 0; i < cfg.clients; ++i) {
    ClientState& c = clients[i];
    c.client_id = static_cast<int>(i);
    c.spec = spec;
    c.teacher = global;
    c.student = global;
    c.data = &ds;
    c.split = parts.clients[i];
    c.rng = Rng(mix64(client_base, i));
    c.w_aux = init_w_aux(spec.hidden_size(), c.rng);
  }

  ServerState server;
  server.global_student = global;
  server.rng = Rng(server_seed);

  RoundConfig rc;
  rc.strategy = cfg.strategy;
  rc.seed = cfg.seed;
  rc.local_steps = cfg.local_steps;
  rc.lr = cfg.lr;
  rc.batch_size = cfg.batch_size;
  rc.participation_ratio = cfg.participation_ratio;
  rc.dp_tau = cfg.dp_tau;
  rc.dpd = cfg.dpd;
  rc.downlink_compress = cfg.downlink_compress;
  rc.threads = env_threads();

  ExperimentResult res;
  for (const auto& client : clients) res.eval_split.push_back(eval_split_name(client.split));
  RoundReport init;
  init.round = 0;
  init.client_accuracy.resize(cfg.clients);
  for (std::size_t i = 0; i < cfg.clients; ++i)
    init.client_accuracy[i] = evaluate_accuracy(spec, clients[i].student, ds, clients[i].split);
  res.reports.push_back(std::move(init));

  for (std::size_t r = 0; r < cfg.rounds; ++r)
    res.reports.push_back(run_round(server, clients, rc));

  for (const auto& rep : res.reports) {
    double sum = 0.0;
    for (double a : rep.client_accuracy) sum += a;
    res.mean_accuracy.push_back(rep.client_accuracy.empty()
                                    ? 0.0
                                    : sum / static_cast<double>(rep.client_accuracy.size()));
    res.uploaded_floats += rep.uploaded_floats;
    res.full_floats += rep.full_floats;
  }
  res.final_mean_accuracy = res.mean_accuracy.back();
  return res;
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& overrides,
            const std::string& out_dir, bool force) {
  try {
    ExperimentConfig cfg = parse_config(config_path);
    for (const auto& o : overrides) apply_override(cfg, o);
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    cfg.validate();

    const fs::path dir(cfg.output_dir);
    if (fs::exists(dir / "metrics.csv") && !force) {
      std::cerr << "error: " << (dir / "metrics.csv").string()
                << " already exists; pass --force to overwrite\n";
      return 1;
    }
    fs::create_directories(dir);

    ExperimentResult res = run_experiment(cfg);
    write_metrics(dir / "metrics.csv", res);

    json summary;
    summary["strategy"] = strategy_name(cfg.strategy);
    summary["seed"] = cfg.seed;
    summary["rounds"] = cfg.rounds;
    summary["clients"] = cfg.clients;
    summary["final_mean_accuracy"] = res.final_mean_accuracy;
    summary["mean_accuracy"] = res.mean_accuracy;
    summary["uploaded_floats"] = res.uploaded_floats;
    summary["full_floats"] = res.full_floats;
    summary["uploaded_percent"] =
        res.full_floats == 0
            ? 100.0
            : 100.0 * static_cast<double>(res.uploaded_floats) / static_cast<double>(res.full_floats);
    summary["config_fingerprint"] = config_fingerprint(cfg);
    std::ofstream(dir / "summary.json") << summary.dump(2) << "\n";
    std::ofstream(dir / "config.ini") << render_config(cfg);

    std::printf("run complete: final mean accuracy %.4f (%s, %zu rounds) -> %s\n",
                res.final_mean_accuracy, strategy_name(cfg.strategy).c_str(), cfg.rounds,
                dir.string().c_str());
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_summarize(const std::vector<std::string>& run_dirs, bool mixed) {
  try {
    if (run_dirs.empty()) throw ConfigError("summarize: at least one run directory required");
    struct Entry {
      std::string strategy;
      double final_acc;
      std::string fingerprint;
    };
    std::vector<Entry> entries;
    for (const auto& dir : run_dirs) {
      std::ifstream in(fs::path(dir) / "summary.json");
      if (!in) throw IoError("cannot open " + dir + "/summary.json");
      json j = json::parse(in);
      entries.push_back({j.at("strategy").get<std::string>(),
                         j.at("final_mean_accuracy").get<double>(),
                         j.value("config_fingerprint", std::string{})});
    }
    if (!mixed) {
      for (const auto& e : entries) {
        // Strategy is allowed to differ (it is what the table compares);
        // everything else must match.
        auto strip = [](std::string s, const std::string& victim) {
          const std::size_t pos = s.find(victim);
          if (pos != std::string::npos) {
            const std::size_t end = s.find('\n', pos);
            s.erase(pos, end == std::string::npos ? std::string::npos : end - pos + 1);
          }
          return s;
        };
        const std::string a = strip(entries.front().fingerprint, "strategy = ");
        const std::string b = strip(e.fingerprint, "strategy = ");
        if (a != b)
          throw ConfigError("summarize: run configurations differ; pass --mixed to combine");
      }
    }

    std::map<std::string, std::vector<double>> by_strategy;
    for (const auto& e : entries) by_strategy[e.strategy].push_back(e.final_acc);

    std::printf("%-10s %5s %10s %10s   (population std)\n", "strategy", "runs", "mean", "std");
    json machine;
    for (const auto& [strategy, accs] : by_strategy) {
      double mean = 0.0;
      for (double a : accs) mean += a;
      mean /= static_cast<double>(accs.size());
      double var = 0.0;
      for (double a : accs) var += (a - mean) * (a - mean);
      var /= static_cast<double>(accs.size());
      const double std_dev = std::sqrt(var);
      std::printf("%-10s %5zu %10.4f %10.4f\n", strategy.c_str(), accs.size(), mean, std_dev);
      machine[strategy] = {{"runs", accs.size()}, {"mean", mean}, {"std", std_dev}};
    }
    std::printf("%s\n", machine.dump().c_str());
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_compression_report(const std::string& run_dir) {
  try {
    const auto rows = read_mean_rows(fs::path(run_dir) / "metrics.csv");
    std::size_t uploaded = 0, full = 0;
    for (const auto& r : rows) {
      if (r.round == 0) continue;  // round 0 is the pre-training evaluation
      const double pct = r.full == 0 ? 100.0
                                     : 100.0 * static_cast<double>(r.uploaded) /
                                           static_cast<double>(r.full);
      std::printf("round %zu: uploaded %zu / full %zu = %.2f%%\n", r.round, r.uploaded, r.full,
                  pct);
      uploaded += r.uploaded;
      full += r.full;
    }
    const double agg = full == 0 ? 100.0
                                 : 100.0 * static_cast<double>(uploaded) /
                                       static_cast<double>(full);
    std::printf("aggregate: uploaded %zu / full %zu = %.2f%%\n", uploaded, full, agg);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace prfl
