#include "grace/cli.hpp"

#include "grace/hash.hpp"
#include "grace/log.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace grace::cli {

namespace {

struct LeakageError : Error {
  using Error::Error;
};
struct ConvergenceError : Error {
  using Error::Error;
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw ConfigError(std::string(key) + ": invalid value '" + std::string(value) + "' (expected " +
                    std::string(expected) + ")");
}

long parse_long(std::string_view key, std::string_view text) {
  const std::string v = trim(text);
  long x = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(key, text, "an integer");
  return x;
}

int parse_int(std::string_view key, std::string_view text) {
  const long x = parse_long(key, text);
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) bad_value(key, text, "an int");
  return static_cast<int>(x);
}

double parse_double(std::string_view key, std::string_view text) {
  const std::string v = trim(text);
  double x = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(key, text, "a number");
  return x;
}

bool parse_bool(std::string_view key, std::string_view text) {
  const std::string v = trim(text);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad_value(key, text, "true or false");
}

std::vector<std::uint64_t> parse_seeds(std::string_view key, std::string_view text) {
  std::vector<std::uint64_t> out;
  for (const auto& part : split(text, ',')) {
    std::uint64_t x = 0;
    const auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), x);
    if (part.empty() || ec != std::errc() || p != part.data() + part.size())
      bad_value(key, text, "a comma-separated list of non-negative integers");
    out.push_back(x);
  }
  return out;
}

std::vector<data::UserKey> parse_keys(std::string_view key, std::string_view text) {
  try {
    return data::parse_user_keys(trim(text));
  } catch (const std::exception&) {
    bad_value(key, text, "pid:cid[,pid:cid...] or none");
  }
}

}  // namespace

void RunConfig::set(std::string_view raw_key, std::string_view value) {
  const std::string key = trim(raw_key);
  auto& d = data;
  auto& ae = model.autoencoder;
  auto& cl = model.classifier;
  if (key == "data.participants") {
    d.participants = parse_int(key, value);
  } else if (key == "data.conditions") {
    d.conditions = parse_int(key, value);
  } else if (key == "data.samples_per_user") {
    d.samples_per_user = parse_int(key, value);
  } else if (key == "data.interval_noise_deg") {
    d.interval_noise_deg = parse_double(key, value);
  } else if (key == "data.coupling_noise") {
    d.coupling_noise = parse_double(key, value);
  } else if (key == "data.score_noise") {
    d.score_noise = parse_double(key, value);
  } else if (key == "data.boundary_fraction") {
    d.boundary_fraction = parse_double(key, value);
  } else if (key == "data.boundary_band_deg") {
    d.boundary_band_deg = parse_double(key, value);
  } else if (key == "data.drop_cell") {
    const auto keys = parse_keys(key, value);
    if (keys.size() > 1) bad_value(key, value, "a single pid:cid or none");
    d.drop_cell = keys.empty() ? std::nullopt : std::optional<data::UserKey>(keys.front());
  } else if (key == "grid.samples_per_dim") {
    grid_samples_per_dim = parse_int(key, value);
  } else if (key == "ocsvm.gamma") {
    ocsvm.gamma = parse_double(key, value);
  } else if (key == "ocsvm.nu") {
    ocsvm.nu = parse_double(key, value);
  } else if (key == "ocsvm.tolerance") {
    ocsvm.tolerance = parse_double(key, value);
  } else if (key == "ocsvm.max_iterations") {
    ocsvm.max_iterations = parse_long(key, value);
  } else if (key == "model.latent_dim") {
    if (parse_int(key, value) != model::kLatentDim) bad_value(key, value, "4");
  } else if (key == "model.ae_hidden") {
    ae.hidden = parse_int(key, value);
  } else if (key == "model.ae_learning_rate") {
    ae.learning_rate = parse_double(key, value);
  } else if (key == "model.ae_epochs") {
    ae.epochs = parse_int(key, value);
  } else if (key == "model.contrastive_weight") {
    ae.contrastive_weight = parse_double(key, value);
  } else if (key == "model.margin") {
    ae.margin = parse_double(key, value);
  } else if (key == "model.hidden") {
    cl.hidden = parse_int(key, value);
  } else if (key == "model.learning_rate") {
    cl.learning_rate = parse_double(key, value);
  } else if (key == "model.batch_size") {
    cl.batch_size = parse_int(key, value);
  } else if (key == "model.epochs") {
    cl.epochs = parse_int(key, value);
  } else if (key == "model.tau_optimistic") {
    model.tau_optimistic = sim.tau_optimistic = parse_double(key, value);
  } else if (key == "model.tau_conservative") {
    model.tau_conservative = sim.tau_conservative = parse_double(key, value);
  } else if (key == "eval.seeds") {
    eval_seeds = parse_seeds(key, value);
  } else if (key == "eval.global_union") {
    global_union = parse_bool(key, value);
  } else if (key == "sim.n_tasks") {
    sim.n_tasks = parse_int(key, value);
  } else if (key == "sim.candidates") {
    sim.candidates = parse_int(key, value);
  } else if (key == "sim.annulus_min") {
    sim.annulus_min = parse_double(key, value);
  } else if (key == "sim.annulus_max") {
    sim.annulus_max = parse_double(key, value);
  } else if (key == "sim.tolerance") {
    sim.tolerance = parse_double(key, value);
  } else if (key == "sim.heur_opt_radius") {
    sim.heur_opt_radius = parse_double(key, value);
  } else if (key == "sim.heur_cons_radius") {
    sim.heur_cons_radius = parse_double(key, value);
  } else if (key == "sim.probe_samples_per_dim") {
    sim.probe_samples_per_dim = parse_int(key, value);
  } else if (key == "sim.max_resample") {
    sim.max_resample = parse_int(key, value);
  } else if (key == "sim.held_out") {
    held_out = parse_keys(key, value);
  } else if (key == "sim.seeds") {
    sim_seeds = parse_seeds(key, value);
  } else if (key == "run.workers") {
    workers = parse_int(key, value);
    sim.workers = workers;
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

void RunConfig::validate() const {
  data.validate();
  if (grid_samples_per_dim < 2) throw ConfigError("grid.samples_per_dim: must be at least 2");
  if (!(ocsvm.gamma > 0.0)) throw ConfigError("ocsvm.gamma: must be positive");
  if (!(ocsvm.nu > 0.0 && ocsvm.nu <= 1.0)) throw ConfigError("ocsvm.nu: must be in (0, 1]");
  if (!(ocsvm.tolerance > 0.0)) throw ConfigError("ocsvm.tolerance: must be positive");
  if (ocsvm.max_iterations < 1) throw ConfigError("ocsvm.max_iterations: must be positive");
  const auto& ae = model.autoencoder;
  const auto& cl = model.classifier;
  if (ae.hidden < 1) throw ConfigError("model.ae_hidden: must be positive");
  if (!(ae.learning_rate > 0.0)) throw ConfigError("model.ae_learning_rate: must be positive");
  if (ae.epochs < 0) throw ConfigError("model.ae_epochs: must be non-negative");
  if (!(ae.contrastive_weight >= 0.0)) throw ConfigError("model.contrastive_weight: must be non-negative");
  if (!(ae.margin > 0.0)) throw ConfigError("model.margin: must be positive");
  if (cl.hidden < 1) throw ConfigError("model.hidden: must be positive");
  if (!(cl.learning_rate > 0.0)) throw ConfigError("model.learning_rate: must be positive");
  if (cl.batch_size < 1) throw ConfigError("model.batch_size: must be positive");
  if (cl.epochs < 0) throw ConfigError("model.epochs: must be non-negative");
  if (!(model.tau_optimistic > 0.0 && model.tau_optimistic < 1.0))
    throw ConfigError("model.tau_optimistic: must be in (0, 1)");
  if (!(model.tau_conservative > 0.0 && model.tau_conservative < 1.0))
    throw ConfigError("model.tau_conservative: must be in (0, 1)");
  if (eval_seeds.empty()) throw ConfigError("eval.seeds: at least one seed required");
  if (sim_seeds.empty()) throw ConfigError("sim.seeds: at least one seed required");
  if (workers < 1) throw ConfigError("run.workers: must be at least 1");
  sim.validate();
}

nlohmann::json RunConfig::to_json() const {
  std::vector<std::string> held;
  for (const auto& k : held_out) held.push_back(k.str());
  return {{"profile", profile},
          {"data",
           {{"participants", data.participants},
            {"conditions", data.conditions},
            {"samples_per_user", data.samples_per_user},
            {"interval_noise_deg", data.interval_noise_deg},
            {"coupling_noise", data.coupling_noise},
            {"score_noise", data.score_noise},
            {"boundary_fraction", data.boundary_fraction},
            {"boundary_band_deg", data.boundary_band_deg},
            {"drop_cell", data.drop_cell ? data.drop_cell->str() : "none"}}},
          {"grid", {{"samples_per_dim", grid_samples_per_dim}, {"union", global_union ? "global" : "per-split"}}},
          {"ocsvm",
           {{"gamma", ocsvm.gamma},
            {"nu", ocsvm.nu},
            {"tolerance", ocsvm.tolerance},
            {"max_iterations", ocsvm.max_iterations}}},
          {"model", [&] {
             auto m = model.to_json();
             m["latent_dim"] = model::kLatentDim;
             return m;
           }()},
          {"eval", {{"seeds", eval_seeds}, {"global_union", global_union}}},
          {"sim",
           {{"n_tasks", sim.n_tasks},
            {"candidates", sim.candidates},
            {"annulus_min", sim.annulus_min},
            {"annulus_max", sim.annulus_max},
            {"tolerance", sim.tolerance},
            {"heur_opt_radius", sim.heur_opt_radius},
            {"heur_cons_radius", sim.heur_cons_radius},
            {"tau_optimistic", sim.tau_optimistic},
            {"tau_conservative", sim.tau_conservative},
            {"probe_samples_per_dim", sim.probe_samples_per_dim},
            {"max_resample", sim.max_resample},
            {"held_out", held},
            {"seeds", sim_seeds}}},
          {"run", {{"workers", workers}}}};
}

RunConfig profile_config(std::string_view profile) {
  RunConfig c;
  if (profile == "test") {
    c.grid_samples_per_dim = 12;
    c.data.samples_per_user = 500;
  } else if (profile == "paper") {
    c.grid_samples_per_dim = 40;
    c.data.samples_per_user = 2000;
  } else {
    throw ConfigError("profile: unknown profile '" + std::string(profile) + "' (valid: test, paper)");
  }
  c.profile = std::string(profile);
  return c;
}

void apply_config_file(RunConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    const std::string text = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (text.empty()) continue;
    if (text.front() == '[') {
      if (text.back() != ']') throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": bad section header");
      section = trim(text.substr(1, text.size() - 2));
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(text.substr(0, eq));
    std::string value = trim(text.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (!section.empty()) key = section + "." + key;
    try {
      config.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

namespace {

namespace fs = std::filesystem;

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

class Manifest {
public:
  Manifest(std::string command, const RunConfig& config, std::uint64_t seed)
      : json_({{"tool", "grace"},
                {"version", kVersion},
                {"command", std::move(command)},
                {"config", config.to_json()},
                {"seed", seed},
                {"inputs", nlohmann::json::object()},
                {"started", utc_now()}}) {}

  void input(const std::string& name, const fs::path& path) {
    if (fs::is_directory(path))
      json_["inputs"][name] = {{"path", path.string()}, {"sha256", sha256_tree(path, {"manifest.json"})}};
    else
      json_["inputs"][name] = {{"path", path.string()}, {"sha256", sha256_file(path)}};
  }
  nlohmann::json& extra() { return json_; }

  // Hashes every file under dir except manifests, then writes dir/manifest.json.
  void finish(const fs::path& dir) {
    std::vector<std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
      if (e.is_regular_file() && e.path().filename() != "manifest.json")
        files.push_back(fs::relative(e.path(), dir).generic_string());
    std::sort(files.begin(), files.end());
    nlohmann::json outputs = nlohmann::json::object();
    for (const auto& f : files) outputs[f] = sha256_file(dir / f);
    json_["outputs"] = outputs;
    json_["finished"] = utc_now();
    write_text(dir / "manifest.json", json_.dump(2) + "\n");
  }

private:
  nlohmann::json json_;
};

struct Common {
  std::string profile = "test";
  std::string config_file;
  std::vector<std::string> sets;
  std::uint64_t seed = 1;
  std::string out;
  int workers = 0;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--profile", c.profile, "Built-in profile: test (12 grid samples/dim, 500 samples/user) or paper (40, 2000)")
      ->capture_default_str();
  cmd->add_option("--config", c.config_file, "Flat key = value config file applied over the profile");
  cmd->add_option("--set", c.sets, "Config override key=value (repeatable), applied after --config");
  cmd->add_option("--seed", c.seed, "Master seed")->capture_default_str();
  cmd->add_option("--out", c.out, "Output directory")->required();
  cmd->add_option("--workers", c.workers, "Worker threads (0 keeps the config value)")->capture_default_str();
}

RunConfig build_config(const Common& c) {
  RunConfig cfg = profile_config(c.profile);
  if (!c.config_file.empty()) apply_config_file(cfg, c.config_file);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    cfg.set(s.substr(0, eq), s.substr(eq + 1));
  }
  if (c.workers > 0) cfg.set("run.workers", std::to_string(c.workers));
  return cfg;
}

template <typename T>
void override_if(const CLI::Option* opt, T& field, const T& value) {
  if (opt->count() > 0) field = value;
}

int cmd_gen(const Common& c, RunConfig cfg, std::ostream& out) {
  cfg.validate();
  const fs::path dir = c.out;
  ensure_dir(dir);
  Manifest manifest("gen", cfg, c.seed);
  const auto ds = data::generate_dataset(cfg.data, c.seed);
  data::write_dataset(ds, dir);
  manifest.finish(dir);
  out << "wrote " << ds.users.size() << " users to " << dir.string() << '\n';
  return kOk;
}

struct TrainArgs {
  std::string data;
  std::string method = "grace";
  std::string exclude;
  bool shards = false;
};

int cmd_train(const Common& c, const TrainArgs& a, RunConfig cfg, std::ostream& out, std::ostream& err) {
  cfg.validate();
  const auto method = model::method_from_string(a.method);
  const fs::path data_dir = a.data, dir = c.out;
  const auto ds = data::read_dataset(data_dir);
  const auto excluded = a.exclude.empty() ? cfg.held_out : parse_keys("--exclude", a.exclude);

  std::vector<data::UserRecord> users;
  for (const auto& u : ds.users)
    if (std::find(excluded.begin(), excluded.end(), u.key()) == excluded.end()) users.push_back(u);
  if (users.empty()) throw ConfigError("--exclude: no training users left");

  ensure_dir(dir);
  Manifest manifest("train", cfg, c.seed);
  manifest.input("dataset", data_dir);

  const auto prep = eval::prepare(users, cfg.grid_samples_per_dim, cfg.ocsvm, cfg.workers);
  std::vector<std::size_t> all(users.size()), idx;
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto set = eval::training_set(prep, all, false, &idx);

  std::string failure;
  model::TrainedPredictor trained;
  try {
    trained = model::train_method(method, set, cfg.model, c.seed);
  } catch (const NonFiniteGradient& e) {
    failure = std::string("training diverged: ") + e.what();
  }

  nlohmann::json diag = {{"union_size", idx.size()}, {"grid", prep.grid.to_json()}};
  std::size_t positives = 0;
  for (const auto& l : set.labels) positives += static_cast<std::size_t>(std::count(l.begin(), l.end(), 1));
  diag["positive_fraction"] = set.rows() ? static_cast<double>(positives) / static_cast<double>(set.rows()) : 0.0;
  nlohmann::json fits = nlohmann::json::array();
  std::vector<std::string> unconverged;
  for (std::size_t u = 0; u < users.size(); ++u) {
    fits.push_back({{"user", users[u].key().str()},
                    {"converged", static_cast<bool>(prep.converged[u])},
                    {"iterations", prep.iterations[u]},
                    {"kkt_residual", prep.kkt_residual[u]}});
    if (!prep.converged[u]) unconverged.push_back(users[u].key().str());
  }
  diag["ocsvm_fits"] = fits;
  if (failure.empty()) {
    diag["classifier"] = {{"initial_loss", trained.log.initial_loss}, {"epoch_loss", trained.log.epoch_loss}};
    if (trained.autoencoder) {
      const auto& log = trained.autoencoder->log;
      diag["autoencoder"] = {{"final_mse", log.mse.empty() ? 0.0 : log.mse.back()},
                             {"final_contrastive", log.contrastive.empty() ? 0.0 : log.contrastive.back()},
                             {"contrastive_active", log.contrastive_active}};
    }
    model::BundleInfo info;
    info.method = method;
    for (const auto& u : users) info.training_users.push_back(u.key());
    info.dataset_hash = sha256_tree(data_dir, {"manifest.json"});
    info.seed = c.seed;
    info.config = cfg.model;
    std::optional<model::Decoder> decoder;
    if (trained.autoencoder) decoder = trained.autoencoder->decoder;
    model::save_bundle(dir, trained.predictor, decoder, info);
  } else {
    diag["error"] = failure;
  }
  write_text(dir / "grid.json", prep.grid.to_json().dump(2) + "\n");
  write_text(dir / "diagnostics.json", diag.dump(2) + "\n");

  if (a.shards) {
    grid::ClassificationDataset cd;
    cd.grid = prep.grid;
    for (std::size_t k : idx) cd.union_points.push_back(prep.grid.point(k));
    for (std::size_t u = 0; u < users.size(); ++u) {
      const std::size_t begin = cd.examples.size();
      for (std::size_t k = 0; k < idx.size(); ++k) {
        grid::LabeledExample ex;
        for (std::size_t i = 0; i < data::ScoreVector::kSize; ++i) ex.x[i] = users[u].scores[i];
        for (std::size_t j = 0; j < 4; ++j) ex.x[data::ScoreVector::kSize + j] = cd.union_points[k][j];
        ex.y = set.labels[u][k];
        ex.user_key = users[u].key();
        cd.examples.push_back(ex);
      }
      cd.index[users[u].key()] = {begin, cd.examples.size()};
    }
    grid::write_shards(cd, dir / "shards");
  }
  manifest.extra()["training_users"] = users.size();
  manifest.extra()["excluded_users"] = [&] {
    std::vector<std::string> s;
    for (const auto& k : excluded) s.push_back(k.str());
    return s;
  }();
  manifest.finish(dir);

  if (!failure.empty()) throw ConvergenceError(failure);
  if (!unconverged.empty()) {
    std::string list;
    for (const auto& s : unconverged) list += (list.empty() ? "" : ", ") + s;
    err << "error: OCSVM did not converge for " << list << " (bundle written with diagnostics)\n";
    return kConvergence;
  }
  out << "trained " << model::to_string(method) << " on " << users.size() << " users, " << idx.size()
      << " union points -> " << dir.string() << '\n';
  return kOk;
}

struct EvalArgs {
  std::string data;
  std::string scenario = "loo-user";
  std::string methods = "grace,gt-condition,user-agnostic";
  std::string seeds;
};

int cmd_eval(const Common& c, const EvalArgs& a, RunConfig cfg, std::ostream& out) {
  if (!a.seeds.empty()) cfg.eval_seeds = parse_seeds("--seeds", a.seeds);
  cfg.validate();
  const auto scenario = eval::scenario_from_string(a.scenario);
  std::vector<model::Method> methods;
  for (const auto& m : split(a.methods, ',')) methods.push_back(model::method_from_string(m));
  if (methods.empty()) throw ConfigError("--methods: at least one method required");

  const fs::path data_dir = a.data, dir = c.out;
  const auto ds = data::read_dataset(data_dir);
  const auto prep = eval::prepare(ds.users, cfg.grid_samples_per_dim, cfg.ocsvm, cfg.workers);
  eval::EvalOptions options{cfg.model, cfg.global_union, cfg.workers, c.seed};
  const auto results = eval::run_scenario(scenario, prep, methods, cfg.eval_seeds, options);
  const auto oracle = eval::oracle_nmcc(prep);

  const fs::path sdir = dir / std::string(eval::to_string(scenario));
  ensure_dir(sdir);
  Manifest manifest("eval", cfg, c.seed);
  manifest.input("dataset", data_dir);
  for (const auto& r : results) eval::write_result_csv(dir, r);
  eval::write_summary(dir, results, &oracle);
  manifest.extra()["scenario"] = a.scenario;
  manifest.extra()["union"] = cfg.global_union ? "global" : "per-split";
  manifest.finish(sdir);
  for (const auto& r : results)
    out << r.scenario << ' ' << r.method << ": nMCC " << r.mean << " +/- " << r.std << " over " << r.rows.size()
        << " fold-seeds\n";
  out << "label oracle (OCSVM vs truth): " << oracle.mean << '\n';
  return kOk;
}

struct SimArgs {
  std::string data;
  std::string bundle;
  std::string envs = "handover,rehab,dressing,bathing";
  std::string policies = "all";
  std::string seeds;
  std::string held_out;
};

int cmd_sim(const Common& c, const SimArgs& a, RunConfig cfg, std::ostream& out) {
  if (!a.seeds.empty()) cfg.sim_seeds = parse_seeds("--seeds", a.seeds);
  if (!a.held_out.empty()) cfg.held_out = parse_keys("--held-out", a.held_out);
  cfg.validate();
  std::vector<sim::Env> envs;
  for (const auto& e : split(a.envs, ',')) envs.push_back(sim::env_from_string(e));
  std::vector<sim::Policy> policies;
  if (trim(a.policies) == "all")
    policies.assign(sim::kAllPolicies.begin(), sim::kAllPolicies.end());
  else
    for (const auto& p : split(a.policies, ',')) policies.push_back(sim::policy_from_string(p));
  if (cfg.held_out.empty()) throw ConfigError("sim.held_out: at least one held-out user required");

  const fs::path data_dir = a.data, bundle_dir = a.bundle, dir = c.out;
  const auto ds = data::read_dataset(data_dir);
  const auto bundle = model::load_bundle(bundle_dir);
  std::vector<std::string> leaked;
  for (const auto& k : cfg.held_out)
    if (std::find(bundle.info.training_users.begin(), bundle.info.training_users.end(), k) !=
        bundle.info.training_users.end())
      leaked.push_back(k.str());
  if (!leaked.empty()) {
    std::string list;
    for (const auto& s : leaked) list += (list.empty() ? "" : ", ") + s;
    throw LeakageError("bundle was trained on held-out users " + list);
  }
  if (bundle.info.dataset_hash != sha256_tree(data_dir, {"manifest.json"}))
    warn("bundle was trained on a different dataset than " + data_dir.string());

  std::vector<data::UserRecord> held;
  for (const auto& k : cfg.held_out) {
    try {
      held.push_back(ds.user(k));
    } catch (const Error&) {
      throw ConfigError("sim.held_out: user " + k.str() + " is not in the dataset");
    }
  }
  const auto grid = grid::GridSpec::from_json(read_json_file(bundle_dir / "grid.json"));
  cfg.sim.workers = cfg.workers;
  cfg.sim.master_seed = c.seed;
  const auto result = sim::run_suite(held, bundle.predictor, grid, kin::ArmGeometry{}, envs, policies,
                                     cfg.sim_seeds, cfg.sim);

  ensure_dir(dir);
  Manifest manifest("sim", cfg, c.seed);
  manifest.input("dataset", data_dir);
  manifest.input("bundle", bundle_dir);
  sim::write_suite(dir, result);
  manifest.finish(dir);
  for (const auto& s : result.summary)
    out << sim::to_string(s.env) << ' ' << sim::to_string(s.policy) << ": success " << s.success << ", agency "
        << s.agency_norm << '\n';
  return kOk;
}

struct ReportRow {
  std::string kind, group, method, metric;
  long fold = -1;
  std::string user;
  long task = -1;
  std::uint64_t seed = 0;
  std::string value;
  std::string source;

  auto key() const { return std::tie(kind, group, method, metric, seed, fold, user, task); }
  std::string describe() const {
    std::ostringstream os;
    os << kind << '/' << group << '/' << method << '/' << metric << " seed " << seed;
    if (fold >= 0) os << " fold " << fold;
    if (!user.empty()) os << " user " << user;
    if (task >= 0) os << " task " << task;
    return os.str();
  }
};

std::vector<std::vector<std::string>> read_csv(const fs::path& path, std::string& header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  if (!std::getline(in, header)) return rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    rows.push_back(split(line, ','));
  }
  return rows;
}

void collect(const fs::path& file, std::vector<ReportRow>& rows) {
  static const std::string kEval = "fold,seed,nmcc,n_test,positives";
  static const std::string kSim = "policy,user,task,seed,success,agency_raw,agency_norm";
  std::string header;
  const auto body = read_csv(file, header);
  header = trim(header);
  int lineno = 1;
  if (header == kEval) {
    for (const auto& r : body) {
      ++lineno;
      if (r.size() != 5) throw FormatError(file.string() + ":" + std::to_string(lineno) + ": expected 5 columns");
      ReportRow row;
      row.kind = "eval";
      row.group = file.parent_path().filename().string();
      row.method = file.stem().string();
      row.fold = parse_long("fold", r[0]);
      row.seed = parse_seeds("seed", r[1]).front();
      row.source = file.string();
      for (auto [metric, col] : {std::pair{"nmcc", 2}, std::pair{"n_test", 3}, std::pair{"positives", 4}}) {
        row.metric = metric;
        row.value = r[static_cast<std::size_t>(col)];
        rows.push_back(row);
      }
    }
  } else if (header == kSim) {
    for (const auto& r : body) {
      ++lineno;
      if (r.size() != 7) throw FormatError(file.string() + ":" + std::to_string(lineno) + ": expected 7 columns");
      ReportRow row;
      row.kind = "sim";
      row.group = file.stem().string();
      row.method = r[0];
      row.user = r[1];
      row.task = parse_long("task", r[2]);
      row.seed = parse_seeds("seed", r[3]).front();
      row.source = file.string();
      for (auto [metric, col] : {std::pair{"success", 4}, std::pair{"agency_raw", 5}, std::pair{"agency_norm", 6}}) {
        row.metric = metric;
        row.value = r[static_cast<std::size_t>(col)];
        rows.push_back(row);
      }
    }
  }
}

int cmd_report(const Common& c, const std::vector<std::string>& inputs, const RunConfig& cfg, std::ostream& out) {
  std::vector<std::string> paths;
  for (const auto& in : inputs)
    for (const auto& p : split(in, ','))
      if (!p.empty()) paths.push_back(p);
  if (paths.empty()) throw IoError("report: no input directories given");

  std::vector<fs::path> files;
  for (const auto& p : paths) {
    if (!fs::exists(p)) throw IoError("report: input not found: " + p);
    if (fs::is_regular_file(p)) {
      files.emplace_back(p);
      continue;
    }
    std::vector<fs::path> found;
    for (const auto& e : fs::recursive_directory_iterator(p))
      if (e.is_regular_file() && e.path().extension() == ".csv") found.push_back(e.path());
    std::sort(found.begin(), found.end());
    files.insert(files.end(), found.begin(), found.end());
  }

  std::vector<ReportRow> rows;
  for (const auto& f : files) collect(f, rows);
  if (rows.empty()) throw IoError("report: no result rows found in the inputs");

  std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) { return a.key() < b.key(); });
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i].key() == rows[i - 1].key())
      throw FormatError("report: duplicate row " + rows[i].describe() + " in " + rows[i - 1].source + " and " +
                        rows[i].source);

  const fs::path dir = c.out;
  ensure_dir(dir);
  Manifest manifest("report", cfg, c.seed);
  for (std::size_t i = 0; i < paths.size(); ++i) manifest.input("input" + std::to_string(i), paths[i]);

  std::ostringstream table;
  table << "kind,group,method,metric,seed,fold,user,task,value\n";
  for (const auto& r : rows) {
    table << r.kind << ',' << r.group << ',' << r.method << ',' << r.metric << ',' << r.seed << ',';
    if (r.fold >= 0) table << r.fold;
    table << ',' << r.user << ',';
    if (r.task >= 0) table << r.task;
    table << ',' << r.value << '\n';
  }
  write_text(dir / "report.csv", table.str());

  std::ostringstream summary;
  summary << "kind,group,method,metric,n,mean\n";
  for (std::size_t i = 0; i < rows.size();) {
    std::size_t j = i, n = 0;
    double sum = 0.0;
    while (j < rows.size() && std::tie(rows[j].kind, rows[j].group, rows[j].method, rows[j].metric) ==
                                  std::tie(rows[i].kind, rows[i].group, rows[i].method, rows[i].metric)) {
      const double v = std::strtod(rows[j].value.c_str(), nullptr);
      if (std::isfinite(v)) {
        sum += v;
        ++n;
      }
      ++j;
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", n ? sum / static_cast<double>(n) : std::nan(""));
    summary << rows[i].kind << ',' << rows[i].group << ',' << rows[i].method << ',' << rows[i].metric << ',' << n
            << ',' << buf << '\n';
    i = j;
  }
  write_text(dir / "report_summary.csv", summary.str());
  manifest.finish(dir);
  out << "merged " << rows.size() << " rows from " << files.size() << " files -> " << (dir / "report.csv").string()
      << '\n';
  return kOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Functional range-of-motion prediction pipeline", "grace"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  Common common;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  add_common(gen, common);

  TrainArgs ta;
  double gamma = 0.0003, nu = 0.01, lr = 5e-4;
  int batch = 4096, epochs = 10, latent = model::kLatentDim;
  auto* train = app.add_subcommand("train", "Fit per-user OCSVMs, build the grid dataset, train a model bundle");
  add_common(train, common);
  train->add_option("--data", ta.data, "Dataset directory")->required();
  train->add_option("--method", ta.method, "grace | gt-condition | user-agnostic")->capture_default_str();
  train->add_option("--exclude", ta.exclude, "Users left out of training (pid:cid list or none); default: sim.held_out");
  train->add_flag("--shards", ta.shards, "Also write the labeled grid dataset as CSV shards");
  auto* o_gamma = train->add_option("--gamma", gamma, "OCSVM RBF gamma")->capture_default_str();
  auto* o_nu = train->add_option("--nu", nu, "OCSVM nu")->capture_default_str();
  auto* o_lr = train->add_option("--lr", lr, "Classifier Adam learning rate")->capture_default_str();
  auto* o_batch = train->add_option("--batch", batch, "Classifier batch size")->capture_default_str();
  auto* o_epochs = train->add_option("--epochs", epochs, "Classifier epochs")->capture_default_str();
  auto* o_latent = train->add_option("--latent", latent, "Latent dimension (fixed)")->capture_default_str();

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Cross-validate methods over a scenario");
  add_common(ev, common);
  ev->add_option("--data", ea.data, "Dataset directory")->required();
  ev->add_option("--scenario", ea.scenario, "loo-user | loo-participant | loo-condition | within-condition")
      ->capture_default_str();
  ev->add_option("--methods", ea.methods, "Comma-separated methods")->capture_default_str();
  ev->add_option("--seeds", ea.seeds, "Comma-separated seeds (default: eval.seeds = 1,2,3,4,5)");

  SimArgs sa;
  double tau_opt = 0.5, tau_cons = 0.95;
  int n_tasks = 100;
  auto* sm = app.add_subcommand("sim", "Run the caregiving simulation suite");
  add_common(sm, common);
  sm->add_option("--data", sa.data, "Dataset directory")->required();
  sm->add_option("--bundle", sa.bundle, "Model bundle directory")->required();
  sm->add_option("--envs", sa.envs, "Comma-separated environments")->capture_default_str();
  sm->add_option("--policies", sa.policies, "all or comma-separated: oracle, grace-opt, grace-cons, heur-opt, heur-cons")
      ->capture_default_str();
  sm->add_option("--seeds", sa.seeds, "Comma-separated seeds (default: sim.seeds = 1,2,3,4,5)");
  sm->add_option("--held-out", sa.held_out, "Held-out users (default: sim.held_out = 1:1,2:2,3:3,4:4,5:1)");
  auto* o_tasks = sm->add_option("--tasks", n_tasks, "Tasks per user and seed")->capture_default_str();
  auto* o_topt = sm->add_option("--tau-opt", tau_opt, "Optimistic threshold")->capture_default_str();
  auto* o_tcons = sm->add_option("--tau-cons", tau_cons, "Conservative threshold")->capture_default_str();

  std::vector<std::string> inputs;
  auto* rep = app.add_subcommand("report", "Merge result directories into a long-format table");
  add_common(rep, common);
  rep->add_option("inputs", inputs, "Result directories or CSV files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    RunConfig cfg = build_config(common);
    if (*gen) return cmd_gen(common, cfg, out);
    if (*train) {
      override_if(o_gamma, cfg.ocsvm.gamma, gamma);
      override_if(o_nu, cfg.ocsvm.nu, nu);
      override_if(o_lr, cfg.model.classifier.learning_rate, lr);
      override_if(o_batch, cfg.model.classifier.batch_size, batch);
      override_if(o_epochs, cfg.model.classifier.epochs, epochs);
      if (o_latent->count() > 0) cfg.set("model.latent_dim", std::to_string(latent));
      return cmd_train(common, ta, cfg, out, err);
    }
    if (*ev) return cmd_eval(common, ea, cfg, out);
    if (*sm) {
      override_if(o_tasks, cfg.sim.n_tasks, n_tasks);
      if (o_topt->count() > 0) cfg.set("model.tau_optimistic", std::to_string(tau_opt));
      if (o_tcons->count() > 0) cfg.set("model.tau_conservative", std::to_string(tau_cons));
      return cmd_sim(common, sa, cfg, out);
    }
    if (*rep) return cmd_report(common, inputs, cfg, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const InsufficientFolds& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const LeakageError& e) {
    err << "error: leakage: " << e.what() << '\n';
    return kLeakage;
  } catch (const ConvergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kConvergence;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}

}  // namespace grace::cli
