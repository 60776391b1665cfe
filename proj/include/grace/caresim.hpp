#pragma once

// Caregiving task simulator: handover, rehab, dressing and bathing trials
// scored for success and agency under different reachability beliefs.

#include "grace/gridlab.hpp"
#include "grace/model.hpp"

#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <unordered_map>
#include <vector>

namespace grace::sim {

using data::UserKey;
using grid::GridMask;
using kin::ArmGeometry;
using kin::JointConfig;

enum class Env { handover, rehab, dressing, bathing };
enum class Policy { oracle, grace_opt, grace_cons, heur_opt, heur_cons };

inline constexpr std::array<Env, 4> kAllEnvs = {Env::handover, Env::rehab, Env::dressing, Env::bathing};
inline constexpr std::array<Policy, 5> kAllPolicies = {Policy::oracle, Policy::grace_opt, Policy::grace_cons,
                                                       Policy::heur_opt, Policy::heur_cons};

std::string_view to_string(Env e);
std::string_view to_string(Policy p);
Env env_from_string(std::string_view name);        // throws ConfigError
Policy policy_from_string(std::string_view name);  // throws ConfigError

// Wrist positions of every grid configuration, bucketed for radius queries.
class ProbeSet {
public:
  ProbeSet(const grid::GridSpec& grid, const ArmGeometry& geometry, double cell = 0.05);

  const grid::GridSpec& grid() const { return grid_; }
  const ArmGeometry& geometry() const { return geometry_; }
  const Eigen::Matrix3Xd& positions() const { return positions_; }

  // Indices of probes within `tolerance` of `position`, ascending.
  std::vector<std::uint32_t> within(const Vector3<double>& position, double tolerance) const;
  // True iff some probe i with mask[i] lies within `tolerance` of `position`.
  bool any_within(const GridMask& mask, const Vector3<double>& position, double tolerance) const;

private:
  std::int64_t key(long x, long y, long z) const;

  grid::GridSpec grid_;
  ArmGeometry geometry_;
  Eigen::Matrix3Xd positions_;
  double cell_;
  std::unordered_map<std::int64_t, std::vector<std::uint32_t>> buckets_;
};

bool reachable_position(const ProbeSet& probes, const GridMask& reachable, const Vector3<double>& position,
                        double tolerance = 0.05);
bool reachable_position(const ProbeSet& probes, const ocsvm::Membership& membership,
                        const Vector3<double>& position, double tolerance = 0.05);

// What a policy (or the world) believes about reachability.
struct Reachability {
  std::function<bool(const Vector3<double>&)> position;
  std::function<bool(const JointConfig&)> config;
};

struct SimTask {
  Env env = Env::handover;
  std::vector<Vector3<double>> positions;  // handover, dressing
  std::vector<JointConfig> configs;        // rehab
  JointConfig target;                      // bathing
  Vector3<double> rest_wrist = Vector3<double>::Zero();
  std::size_t index = 0;
  std::uint64_t seed = 0;
};

struct TrialResult {
  std::size_t choice = 0;  // candidate index (handover, rehab, dressing)
  bool asked = false;      // bathing: user asked to move unassisted
  bool success = false;
  double agency_raw = 0.0;
  double agency_norm = std::numeric_limits<double>::quiet_NaN();
};

TrialResult run_handover(const SimTask& task, const Reachability& policy, const Reachability& truth);
TrialResult run_rehab(const SimTask& task, const Reachability& policy, const Reachability& truth);
TrialResult run_dressing(const SimTask& task, const Reachability& policy, const Reachability& truth,
                         const ArmGeometry& geometry);
TrialResult run_bathing(const SimTask& task, const Reachability& policy, const Reachability& truth);

struct SuiteConfig {
  int n_tasks = 100;
  int candidates = 8;
  double annulus_min = 0.05;
  double annulus_max = 0.55;
  double tolerance = 0.05;
  double heur_opt_radius = 0.30;
  double heur_cons_radius = 0.10;
  double tau_optimistic = 0.5;
  double tau_conservative = 0.95;
  int probe_samples_per_dim = 24;
  int max_resample = 1000;
  int workers = 1;
  std::uint64_t master_seed = 0;

  void validate() const;  // throws ConfigError naming the field
};

// Candidate sampling. Positions are drawn around the rest wrist with uniform
// radius in [annulus_min, annulus_max] and uniform direction, inside the
// workspace sphere. Rehab draws candidates-1 grid points plus the rest pose.
std::vector<Vector3<double>> sample_positions(Rng& rng, const ArmGeometry& geometry, const SuiteConfig& config);
std::vector<JointConfig> sample_rehab_configs(Rng& rng, const grid::GridSpec& grid, const SuiteConfig& config);
JointConfig sample_target(Rng& rng, const grid::GridSpec& grid);
// Bathing: a wrist location drawn like a handover candidate, then a probe
// configuration placing the wrist within tolerance of it.
JointConfig sample_bathing_target(Rng& rng, const ProbeSet& probes, const SuiteConfig& config);

// Workspace sphere around the rest wrist, applied to configurations via FK.
Reachability sphere_heuristic(const ArmGeometry& geometry, double radius);

struct TrialRow {
  Env env = Env::handover;
  Policy policy = Policy::oracle;
  UserKey user;
  std::size_t task = 0;
  std::uint64_t seed = 0;
  bool success = false;
  double agency_raw = 0.0;
  double agency_norm = std::numeric_limits<double>::quiet_NaN();
};

struct PolicySummary {
  Env env = Env::handover;
  Policy policy = Policy::oracle;
  std::size_t trials = 0;
  double success = 0.0;
  double agency_raw = 0.0;
  double agency_norm = 0.0;      // over trials with a defined normalization
  std::size_t normalized = 0;
};

// One entry per (env, policy) present in rows, in first-appearance order.
std::vector<PolicySummary> summarize(std::span<const TrialRow> rows);

struct SuiteResult {
  std::vector<TrialRow> rows;  // seed, env, user, task, policy order
  std::vector<PolicySummary> summary;

  const PolicySummary& at(Env env, Policy policy) const;
  std::vector<PolicySummary> per_seed(std::uint64_t seed) const;
};

// Runs every env x policy over n_tasks tasks for each held-out user and seed.
// Success is scored against each user's synthetic ground truth.
SuiteResult run_suite(std::span<const data::UserRecord> held_out, const model::Predictor& predictor,
                      const grid::GridSpec& bounds, const ArmGeometry& geometry, std::span<const Env> envs,
                      std::span<const Policy> policies, std::span<const std::uint64_t> seeds,
                      const SuiteConfig& config = {});

// <dir>/<env>.csv (policy,user,task,seed,success,agency_raw,agency_norm) and
// <dir>/<env>_summary.json for each env present.
std::vector<std::filesystem::path> write_suite(const std::filesystem::path& dir, const SuiteResult& result);

}  // namespace grace::sim
