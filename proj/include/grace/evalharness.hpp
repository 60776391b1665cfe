#pragma once

// Cross-validation scenarios over users, the nMCC metric, and result export.

#include "grace/gridlab.hpp"
#include "grace/model.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace grace::eval {

using data::UserKey;
using grid::GridMask;
using model::Method;

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  void add(bool predicted, bool actual);
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

ConfusionCounts confusion(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> actual);

struct Nmcc {
  double value = 0.5;
  bool degenerate = false;  // a zero marginal: MCC undefined, value pinned at 0.5
};

// (MCC + 1) / 2. Throws std::invalid_argument on an empty table.
Nmcc nmcc(const ConfusionCounts& counts);

enum class Scenario { loo_user, loo_participant, loo_condition, within_condition };

std::string_view to_string(Scenario s);
Scenario scenario_from_string(std::string_view name);  // throws ConfigError

struct Fold {
  std::size_t id = 0;
  std::string label;
  std::vector<std::size_t> train;  // indices into the user list
  std::vector<std::size_t> test;
};

// Throws InsufficientFolds when the users cannot support the scenario.
std::vector<Fold> make_folds(Scenario scenario, std::span<const data::UserRecord> users);

// Per-user OCSVM labels and ground-truth labels on one shared grid.
struct PreparedData {
  grid::GridSpec grid;
  std::vector<data::UserRecord> users;
  std::vector<GridMask> masks;        // OCSVM completion
  std::vector<GridMask> truth_masks;  // synthetic ground truth
  std::vector<bool> converged;
  std::vector<long> iterations;
  std::vector<double> kkt_residual;
};

// The grid bounds the samples of every user in `users`.
PreparedData prepare(std::span<const data::UserRecord> users, int samples_per_dim,
                     const ocsvm::FitParams& params = {}, int workers = 1);

// Training set for a split: union of the training masks (or of every user
// when `global_union`), labeled by each training user's mask.
model::TrainingSet training_set(const PreparedData& data, std::span<const std::size_t> train,
                                bool global_union, std::vector<std::size_t>* union_out = nullptr);

struct EvalOptions {
  model::ModelConfig model;
  bool global_union = false;
  int workers = 1;
  std::uint64_t master_seed = 0;  // combined with each listed seed
};

struct FoldResult {
  std::size_t fold = 0;
  std::uint64_t seed = 0;
  double nmcc = 0.5;
  bool degenerate = false;
  std::size_t n_test = 0;     // evaluated (user, point) pairs
  std::size_t positives = 0;  // positive labels among them
  ConfusionCounts counts;
};

struct ScenarioResult {
  std::string scenario;
  std::string method;
  std::vector<std::string> fold_labels;
  std::vector<std::uint64_t> seeds;
  std::vector<FoldResult> rows;  // seed-major, then fold
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation over rows

  // Mean over seeds for each fold, in fold order.
  std::vector<double> fold_means() const;
  // Mean over folds for each seed, in seed order.
  std::vector<double> seed_means() const;
};

void summarize(ScenarioResult& result);

// Trains every method on each (fold, seed) split from the training users
// only, then scores the held-out users on the split's union points.
std::vector<ScenarioResult> run_scenario(Scenario scenario, const PreparedData& data,
                                         std::span<const Method> methods, std::span<const std::uint64_t> seeds,
                                         const EvalOptions& options = {});
ScenarioResult run_scenario(Scenario scenario, const PreparedData& data, Method method,
                            std::span<const std::uint64_t> seeds, const EvalOptions& options = {});

// One row per user comparing a membership mask with the ground truth over the full grid.
ScenarioResult oracle_nmcc(std::span<const GridMask> predicted, std::span<const GridMask> truth);
ScenarioResult oracle_nmcc(const PreparedData& data);

// <dir>/<scenario>/<method>.csv with columns fold,seed,nmcc,n_test,positives.
std::filesystem::path write_result_csv(const std::filesystem::path& dir, const ScenarioResult& result);
// <dir>/<scenario>/summary.json with mean/std per method, plus the label
// oracle (OCSVM completion vs ground truth) when given.
std::filesystem::path write_summary(const std::filesystem::path& dir, std::span<const ScenarioResult> results,
                                    const ScenarioResult* label_oracle = nullptr);

}  // namespace grace::eval
