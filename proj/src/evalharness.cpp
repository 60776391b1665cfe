#include "grace/evalharness.hpp"

#include "grace/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

namespace grace::eval {

void ConfusionCounts::add(bool predicted, bool actual) {
  if (predicted)
    ++(actual ? tp : fp);
  else
    ++(actual ? fn : tn);
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  fp += o.fp;
  tn += o.tn;
  fn += o.fn;
  return *this;
}

ConfusionCounts confusion(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> actual) {
  if (predicted.size() != actual.size()) throw ShapeMismatch("confusion: label vectors differ in length");
  ConfusionCounts c;
  for (std::size_t i = 0; i < predicted.size(); ++i) c.add(predicted[i] != 0, actual[i] != 0);
  return c;
}

Nmcc nmcc(const ConfusionCounts& c) {
  if (c.total() == 0) throw std::invalid_argument("nmcc: empty confusion table");
  const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp);
  const double tn = static_cast<double>(c.tn), fn = static_cast<double>(c.fn);
  const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  if (denom == 0.0) return {0.5, true};
  const double mcc = (tp * tn - fp * fn) / std::sqrt(denom);
  return {std::clamp((mcc + 1.0) / 2.0, 0.0, 1.0), false};
}

std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::loo_user:
      return "loo-user";
    case Scenario::loo_participant:
      return "loo-participant";
    case Scenario::loo_condition:
      return "loo-condition";
    case Scenario::within_condition:
      return "within-condition";
  }
  return "loo-user";
}

Scenario scenario_from_string(std::string_view name) {
  for (Scenario s : {Scenario::loo_user, Scenario::loo_participant, Scenario::loo_condition,
                     Scenario::within_condition})
    if (to_string(s) == name) return s;
  throw ConfigError("unknown scenario '" + std::string(name) +
                    "' (valid: loo-user, loo-participant, loo-condition, within-condition)");
}

namespace {

template <typename KeyFn>
std::vector<Fold> group_folds(std::span<const data::UserRecord> users, KeyFn key, const char* what) {
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < users.size(); ++i) groups[key(users[i])].push_back(i);
  if (groups.size() < 2)
    throw InsufficientFolds(std::string("need at least two distinct ") + what + "s, got " +
                            std::to_string(groups.size()));
  std::vector<Fold> folds;
  for (const auto& [k, members] : groups) {
    Fold f;
    f.id = folds.size();
    f.label = std::string(what) + " " + std::to_string(k);
    f.test = members;
    for (std::size_t i = 0; i < users.size(); ++i)
      if (key(users[i]) != k) f.train.push_back(i);
    folds.push_back(std::move(f));
  }
  return folds;
}

}  // namespace

std::vector<Fold> make_folds(Scenario scenario, std::span<const data::UserRecord> users) {
  std::vector<Fold> folds;
  switch (scenario) {
    case Scenario::loo_user:
      if (users.size() < 2) throw InsufficientFolds("loo-user needs at least two users");
      for (std::size_t i = 0; i < users.size(); ++i) {
        Fold f;
        f.id = i;
        f.label = "user " + users[i].key().str();
        f.test = {i};
        for (std::size_t j = 0; j < users.size(); ++j)
          if (j != i) f.train.push_back(j);
        folds.push_back(std::move(f));
      }
      return folds;
    case Scenario::loo_participant:
      return group_folds(users, [](const data::UserRecord& r) { return r.participant_id; }, "participant");
    case Scenario::loo_condition:
      return group_folds(users, [](const data::UserRecord& r) { return r.condition_id; }, "condition");
    case Scenario::within_condition: {
      std::map<int, std::vector<std::size_t>> by_condition;
      for (std::size_t i = 0; i < users.size(); ++i) by_condition[users[i].condition_id].push_back(i);
      for (const auto& [c, members] : by_condition) {
        if (members.size() < 2)
          throw InsufficientFolds("within-condition: condition " + std::to_string(c) +
                                  " has fewer than two users");
        for (std::size_t held : members) {
          Fold f;
          f.id = folds.size();
          f.label = "condition " + std::to_string(c) + " user " + users[held].key().str();
          f.test = {held};
          for (std::size_t j : members)
            if (j != held) f.train.push_back(j);
          folds.push_back(std::move(f));
        }
      }
      if (folds.empty()) throw InsufficientFolds("within-condition: no users");
      return folds;
    }
  }
  throw InsufficientFolds("unknown scenario");
}

PreparedData prepare(std::span<const data::UserRecord> users, int samples_per_dim,
                     const ocsvm::FitParams& params, int workers) {
  PreparedData out;
  out.grid = grid::compute_bound(users, samples_per_dim);
  out.users.assign(users.begin(), users.end());
  out.masks.resize(users.size());
  out.truth_masks.resize(users.size());
  std::vector<char> converged(users.size(), 0);
  out.iterations.resize(users.size());
  out.kkt_residual.resize(users.size());
  parallel_for(users.size(), workers, [&](std::size_t u) {
    const auto fit = ocsvm::fit(users[u].sample_matrix(), params);
    converged[u] = fit.converged ? 1 : 0;
    out.iterations[u] = fit.iterations;
    out.kkt_residual[u] = fit.kkt_residual;
    out.masks[u] = grid::label_grid(out.grid, fit.model);
    out.truth_masks[u] = grid::label_grid(out.grid, users[u].truth);
  });
  out.converged.assign(converged.begin(), converged.end());
  return out;
}

model::TrainingSet training_set(const PreparedData& data, std::span<const std::size_t> train, bool global_union,
                                std::vector<std::size_t>* union_out) {
  std::vector<const GridMask*> sources;
  if (global_union)
    for (const auto& m : data.masks) sources.push_back(&m);
  else
    for (std::size_t u : train) sources.push_back(&data.masks.at(u));
  const auto idx = grid::union_indices(sources);

  model::TrainingSet set;
  set.points = data.grid.points(idx);
  for (std::size_t u : train) {
    set.users.push_back(model::profile_of(data.users.at(u)));
    std::vector<std::uint8_t> labels(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) labels[k] = data.masks[u][idx[k]];
    set.labels.push_back(std::move(labels));
  }
  if (union_out) *union_out = idx;
  return set;
}

std::vector<double> ScenarioResult::fold_means() const {
  std::vector<double> sum(fold_labels.size(), 0.0);
  std::vector<std::size_t> n(fold_labels.size(), 0);
  for (const auto& r : rows) {
    sum.at(r.fold) += r.nmcc;
    ++n[r.fold];
  }
  for (std::size_t f = 0; f < sum.size(); ++f) sum[f] = n[f] ? sum[f] / static_cast<double>(n[f]) : 0.0;
  return sum;
}

std::vector<double> ScenarioResult::seed_means() const {
  std::vector<double> out;
  for (std::uint64_t s : seeds) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows)
      if (r.seed == s) {
        sum += r.nmcc;
        ++n;
      }
    out.push_back(n ? sum / static_cast<double>(n) : 0.0);
  }
  return out;
}

void summarize(ScenarioResult& result) {
  const std::size_t n = result.rows.size();
  if (n == 0) {
    result.mean = result.std = 0.0;
    return;
  }
  double sum = 0.0;
  for (const auto& r : result.rows) sum += r.nmcc;
  result.mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (const auto& r : result.rows) ss += (r.nmcc - result.mean) * (r.nmcc - result.mean);
  result.std = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
}

std::vector<ScenarioResult> run_scenario(Scenario scenario, const PreparedData& data,
                                         std::span<const Method> methods, std::span<const std::uint64_t> seeds,
                                         const EvalOptions& options) {
  if (seeds.empty()) throw ConfigError("eval.seeds: at least one seed required");
  const auto folds = make_folds(scenario, data.users);
  const std::size_t n_jobs = folds.size() * seeds.size();
  std::vector<std::vector<FoldResult>> job_rows(n_jobs);

  parallel_for(n_jobs, options.workers, [&](std::size_t job) {
    const std::size_t s = job / folds.size();
    const Fold& fold = folds[job % folds.size()];
    std::vector<std::size_t> idx;
    const auto set = training_set(data, fold.train, options.global_union, &idx);
    const JointMatrix& points = set.points;
    const std::uint64_t train_seed =
        derive_seed(options.master_seed, seeds[s], static_cast<std::uint64_t>(scenario), fold.id);
    for (Method m : methods) {
      const auto trained = model::train_method(m, set, options.model, train_seed);
      FoldResult row;
      row.fold = fold.id;
      row.seed = seeds[s];
      for (std::size_t u : fold.test) {
        const auto p = trained.predictor.probabilities(model::profile_of(data.users[u]), points);
        for (std::size_t k = 0; k < idx.size(); ++k)
          row.counts.add(p[static_cast<Eigen::Index>(k)] >= trained.predictor.threshold(),
                         data.masks[u][idx[k]] != 0);
      }
      row.n_test = row.counts.total();
      row.positives = row.counts.tp + row.counts.fn;
      if (row.n_test > 0) {
        const auto v = nmcc(row.counts);
        row.nmcc = v.value;
        row.degenerate = v.degenerate;
      } else {
        row.degenerate = true;
      }
      job_rows[job].push_back(row);
    }
  });

  std::vector<ScenarioResult> out;
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    ScenarioResult r;
    r.scenario = to_string(scenario);
    r.method = model::to_string(methods[mi]);
    for (const auto& f : folds) r.fold_labels.push_back(f.label);
    r.seeds.assign(seeds.begin(), seeds.end());
    for (const auto& rows : job_rows) r.rows.push_back(rows[mi]);
    summarize(r);
    out.push_back(std::move(r));
  }
  return out;
}

ScenarioResult run_scenario(Scenario scenario, const PreparedData& data, Method method,
                            std::span<const std::uint64_t> seeds, const EvalOptions& options) {
  const Method m[] = {method};
  return std::move(run_scenario(scenario, data, m, seeds, options).front());
}

ScenarioResult oracle_nmcc(std::span<const GridMask> predicted, std::span<const GridMask> truth) {
  if (predicted.size() != truth.size()) throw ShapeMismatch("oracle_nmcc: one truth mask per prediction");
  ScenarioResult r;
  r.scenario = "oracle";
  r.method = "ocsvm";
  r.seeds = {0};
  for (std::size_t u = 0; u < predicted.size(); ++u) {
    FoldResult row;
    row.fold = u;
    row.counts = confusion(predicted[u], truth[u]);
    row.n_test = row.counts.total();
    row.positives = row.counts.tp + row.counts.fn;
    const auto v = nmcc(row.counts);
    row.nmcc = v.value;
    row.degenerate = v.degenerate;
    r.fold_labels.push_back("user " + std::to_string(u));
    r.rows.push_back(row);
  }
  summarize(r);
  return r;
}

ScenarioResult oracle_nmcc(const PreparedData& data) {
  auto r = oracle_nmcc(data.masks, data.truth_masks);
  for (std::size_t u = 0; u < data.users.size(); ++u) r.fold_labels[u] = "user " + data.users[u].key().str();
  return r;
}

namespace {

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::filesystem::path scenario_dir(const std::filesystem::path& dir, const std::string& scenario) {
  const auto d = dir / scenario;
  std::error_code ec;
  std::filesystem::create_directories(d, ec);
  if (ec) throw IoError("cannot create " + d.string() + ": " + ec.message());
  return d;
}

}  // namespace

std::filesystem::path write_result_csv(const std::filesystem::path& dir, const ScenarioResult& result) {
  const auto path = scenario_dir(dir, result.scenario) / (result.method + ".csv");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "fold,seed,nmcc,n_test,positives\n";
  for (const auto& r : result.rows)
    out << r.fold << ',' << r.seed << ',' << fmt(r.nmcc) << ',' << r.n_test << ',' << r.positives << '\n';
  if (!out) throw IoError("write failed: " + path.string());
  return path;
}

std::filesystem::path write_summary(const std::filesystem::path& dir, std::span<const ScenarioResult> results,
                                    const ScenarioResult* label_oracle) {
  if (results.empty()) throw std::invalid_argument("write_summary: no results");
  nlohmann::json methods = nlohmann::json::object();
  for (const auto& r : results) {
    if (r.scenario != results.front().scenario)
      throw std::invalid_argument("write_summary: results from different scenarios");
    methods[r.method] = {{"mean", r.mean},
                         {"std", r.std},
                         {"rows", r.rows.size()},
                         {"folds", r.fold_labels.size()},
                         {"seeds", r.seeds},
                         {"fold_means", r.fold_means()}};
  }
  nlohmann::json j = {{"scenario", results.front().scenario},
                      {"fold_labels", results.front().fold_labels},
                      {"methods", methods}};
  if (label_oracle) j["label_oracle"] = {{"mean", label_oracle->mean}, {"std", label_oracle->std}};
  const auto path = scenario_dir(dir, results.front().scenario) / "summary.json";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
  return path;
}

}  // namespace grace::eval
