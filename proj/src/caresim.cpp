#include "grace/caresim.hpp"

#include "grace/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace grace::sim {

std::string_view to_string(Env e) {
  switch (e) {
    case Env::handover:
      return "handover";
    case Env::rehab:
      return "rehab";
    case Env::dressing:
      return "dressing";
    case Env::bathing:
      return "bathing";
  }
  return "handover";
}

std::string_view to_string(Policy p) {
  switch (p) {
    case Policy::oracle:
      return "oracle";
    case Policy::grace_opt:
      return "grace-opt";
    case Policy::grace_cons:
      return "grace-cons";
    case Policy::heur_opt:
      return "heur-opt";
    case Policy::heur_cons:
      return "heur-cons";
  }
  return "oracle";
}

Env env_from_string(std::string_view name) {
  for (Env e : kAllEnvs)
    if (to_string(e) == name) return e;
  throw ConfigError("unknown environment '" + std::string(name) + "' (valid: handover, rehab, dressing, bathing)");
}

Policy policy_from_string(std::string_view name) {
  for (Policy p : kAllPolicies)
    if (to_string(p) == name) return p;
  throw ConfigError("unknown policy '" + std::string(name) +
                    "' (valid: oracle, grace-opt, grace-cons, heur-opt, heur-cons)");
}

ProbeSet::ProbeSet(const grid::GridSpec& grid, const ArmGeometry& geometry, double cell)
    : grid_(grid), geometry_(geometry), cell_(cell) {
  grid_.validate();
  if (!(cell_ > 0.0)) throw std::invalid_argument("ProbeSet: cell size must be positive");
  const std::size_t n = grid_.size();
  positions_.resize(3, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = kin::forward_hand_position(grid_.point(i), geometry_);
    positions_.col(static_cast<Eigen::Index>(i)) = p;
    buckets_[key(std::lround(std::floor(p.x() / cell_)), std::lround(std::floor(p.y() / cell_)),
                 std::lround(std::floor(p.z() / cell_)))]
        .push_back(static_cast<std::uint32_t>(i));
  }
}

std::int64_t ProbeSet::key(long x, long y, long z) const {
  constexpr std::int64_t off = 1 << 20;
  return ((x + off) << 42) | ((y + off) << 21) | (z + off);
}

std::vector<std::uint32_t> ProbeSet::within(const Vector3<double>& position, double tolerance) const {
  std::vector<std::uint32_t> out;
  if (!position.allFinite()) return out;
  const long reach = static_cast<long>(std::ceil(tolerance / cell_));
  const long cx = std::lround(std::floor(position.x() / cell_));
  const long cy = std::lround(std::floor(position.y() / cell_));
  const long cz = std::lround(std::floor(position.z() / cell_));
  const double tol2 = tolerance * tolerance;
  for (long dx = -reach; dx <= reach; ++dx)
    for (long dy = -reach; dy <= reach; ++dy)
      for (long dz = -reach; dz <= reach; ++dz) {
        const auto it = buckets_.find(key(cx + dx, cy + dy, cz + dz));
        if (it == buckets_.end()) continue;
        for (std::uint32_t i : it->second)
          if ((positions_.col(i) - position).squaredNorm() <= tol2) out.push_back(i);
      }
  std::sort(out.begin(), out.end());
  return out;
}

bool ProbeSet::any_within(const GridMask& mask, const Vector3<double>& position, double tolerance) const {
  if (mask.size() != grid_.size()) throw ShapeMismatch("ProbeSet: mask size differs from probe grid");
  if (!position.allFinite()) return false;
  const long reach = static_cast<long>(std::ceil(tolerance / cell_));
  const long cx = std::lround(std::floor(position.x() / cell_));
  const long cy = std::lround(std::floor(position.y() / cell_));
  const long cz = std::lround(std::floor(position.z() / cell_));
  const double tol2 = tolerance * tolerance;
  for (long dx = -reach; dx <= reach; ++dx)
    for (long dy = -reach; dy <= reach; ++dy)
      for (long dz = -reach; dz <= reach; ++dz) {
        const auto it = buckets_.find(key(cx + dx, cy + dy, cz + dz));
        if (it == buckets_.end()) continue;
        for (std::uint32_t i : it->second)
          if (mask[i] && (positions_.col(i) - position).squaredNorm() <= tol2) return true;
      }
  return false;
}

bool reachable_position(const ProbeSet& probes, const GridMask& reachable, const Vector3<double>& position,
                        double tolerance) {
  if (!(tolerance > 0.0)) throw std::invalid_argument("reachable_position: tolerance must be positive");
  return probes.any_within(reachable, position, tolerance);
}

bool reachable_position(const ProbeSet& probes, const ocsvm::Membership& membership,
                        const Vector3<double>& position, double tolerance) {
  return reachable_position(probes, grid::label_grid(probes.grid(), membership), position, tolerance);
}

namespace {

TrialResult choose_position(const SimTask& task, const Reachability& policy) {
  if (task.positions.empty()) throw std::invalid_argument("task has no candidate positions");
  TrialResult r;
  double best = -1.0;
  for (std::size_t i = 0; i < task.positions.size(); ++i) {
    const double d = (task.positions[i] - task.rest_wrist).norm();
    if (d > best && policy.position(task.positions[i])) {
      best = d;
      r.choice = i;
    }
  }
  if (best >= 0.0) {
    r.agency_raw = best;
    return r;
  }
  // Nothing predicted reachable: fall back to the candidate nearest rest.
  double nearest = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < task.positions.size(); ++i) {
    const double d = (task.positions[i] - task.rest_wrist).norm();
    if (d < nearest) {
      nearest = d;
      r.choice = i;
    }
  }
  r.agency_raw = 0.0;
  return r;
}

JointConfig straight_arm(const Vector3<double>& position, const ArmGeometry& geometry) {
  const Vector3<double> d = position - geometry.shoulder_origin();
  if (d.norm() == 0.0) return {};
  const auto [plane, elevation] = kin::pointing_angles(d);
  return {plane, elevation, 0.0, 0.0};
}

}  // namespace

TrialResult run_handover(const SimTask& task, const Reachability& policy, const Reachability& truth) {
  TrialResult r = choose_position(task, policy);
  r.success = truth.position(task.positions[r.choice]);
  return r;
}

TrialResult run_dressing(const SimTask& task, const Reachability& policy, const Reachability& truth,
                         const ArmGeometry& geometry) {
  TrialResult r = choose_position(task, policy);
  const Vector3<double>& p = task.positions[r.choice];
  r.success = truth.position(p) && truth.config(straight_arm(p, geometry));
  return r;
}

TrialResult run_rehab(const SimTask& task, const Reachability& policy, const Reachability& truth) {
  if (task.configs.empty()) throw std::invalid_argument("rehab task has no candidate configurations");
  TrialResult r;
  double best = -1.0;
  for (std::size_t i = 0; i < task.configs.size(); ++i) {
    const double d = task.configs[i].vector().norm();
    if (d > best && policy.config(task.configs[i])) {
      best = d;
      r.choice = i;
    }
  }
  if (best < 0.0) {
    double nearest = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < task.configs.size(); ++i) {
      const double d = task.configs[i].vector().norm();
      if (d < nearest) {
        nearest = d;
        r.choice = i;
      }
    }
    best = 0.0;
  }
  r.agency_raw = best;
  r.success = truth.config(task.configs[r.choice]);
  return r;
}

TrialResult run_bathing(const SimTask& task, const Reachability& policy, const Reachability& truth) {
  TrialResult r;
  r.asked = policy.config(task.target);
  r.success = r.asked ? truth.config(task.target) : true;
  r.agency_raw = r.asked ? 1.0 : 0.0;
  return r;
}

void SuiteConfig::validate() const {
  auto fail = [](const char* field, const char* why) { throw ConfigError(std::string("sim.") + field + ": " + why); };
  if (n_tasks < 1) fail("n_tasks", "must be at least 1");
  if (candidates < 2) fail("candidates", "must be at least 2");
  if (!(annulus_min >= 0.0)) fail("annulus_min", "must be non-negative");
  if (!(annulus_max > annulus_min)) fail("annulus_max", "must exceed annulus_min");
  if (!(tolerance > 0.0)) fail("tolerance", "must be positive");
  if (!(heur_opt_radius > 0.0)) fail("heur_opt_radius", "must be positive");
  if (!(heur_cons_radius > 0.0)) fail("heur_cons_radius", "must be positive");
  if (!(tau_optimistic > 0.0 && tau_optimistic < 1.0)) fail("tau_optimistic", "must be in (0, 1)");
  if (!(tau_conservative > 0.0 && tau_conservative < 1.0)) fail("tau_conservative", "must be in (0, 1)");
  if (probe_samples_per_dim < 2) fail("probe_samples_per_dim", "must be at least 2");
  if (max_resample < 1) fail("max_resample", "must be at least 1");
  if (workers < 1) fail("workers", "must be at least 1");
}

std::vector<Vector3<double>> sample_positions(Rng& rng, const ArmGeometry& geometry, const SuiteConfig& config) {
  const Vector3<double> rest = kin::forward_hand_position(JointConfig{}, geometry);
  std::vector<Vector3<double>> out;
  while (out.size() < static_cast<std::size_t>(config.candidates)) {
    const double r = rng.uniform(config.annulus_min, config.annulus_max);
    Vector3<double> u(rng.normal(), rng.normal(), rng.normal());
    if (u.norm() < 1e-12) continue;
    const Vector3<double> p = rest + r * u.normalized();
    if ((p - geometry.shoulder_origin()).norm() <= geometry.reach()) out.push_back(p);
  }
  return out;
}

JointConfig sample_target(Rng& rng, const grid::GridSpec& grid) {
  return grid.point(static_cast<std::size_t>(rng.below(grid.size())));
}

JointConfig sample_bathing_target(Rng& rng, const ProbeSet& probes, const SuiteConfig& config) {
  SuiteConfig one = config;
  one.candidates = 1;
  for (int attempt = 0; attempt < config.max_resample; ++attempt) {
    const auto hits = probes.within(sample_positions(rng, probes.geometry(), one).front(), config.tolerance);
    if (!hits.empty()) return probes.grid().point(hits[static_cast<std::size_t>(rng.below(hits.size()))]);
  }
  return sample_target(rng, probes.grid());
}

std::vector<JointConfig> sample_rehab_configs(Rng& rng, const grid::GridSpec& grid, const SuiteConfig& config) {
  std::vector<JointConfig> out;
  for (int i = 0; i + 1 < config.candidates; ++i) out.push_back(sample_target(rng, grid));
  out.emplace_back();  // rest pose
  return out;
}

Reachability sphere_heuristic(const ArmGeometry& geometry, double radius) {
  const Vector3<double> rest = kin::forward_hand_position(JointConfig{}, geometry);
  return {[rest, radius](const Vector3<double>& p) { return (p - rest).norm() <= radius; },
          [rest, radius, geometry](const JointConfig& q) {
            return (kin::forward_hand_position(q, geometry) - rest).norm() <= radius;
          }};
}

std::vector<PolicySummary> summarize(std::span<const TrialRow> rows) {
  std::vector<PolicySummary> out;
  auto slot = [&](Env e, Policy p) -> PolicySummary& {
    for (auto& s : out)
      if (s.env == e && s.policy == p) return s;
    out.push_back({e, p});
    return out.back();
  };
  for (const auto& r : rows) {
    auto& s = slot(r.env, r.policy);
    ++s.trials;
    s.success += r.success ? 1.0 : 0.0;
    s.agency_raw += r.agency_raw;
    if (std::isfinite(r.agency_norm)) {
      s.agency_norm += r.agency_norm;
      ++s.normalized;
    }
  }
  for (auto& s : out) {
    s.success /= static_cast<double>(s.trials);
    s.agency_raw /= static_cast<double>(s.trials);
    s.agency_norm = s.normalized ? s.agency_norm / static_cast<double>(s.normalized) : 0.0;
  }
  return out;
}

const PolicySummary& SuiteResult::at(Env env, Policy policy) const {
  for (const auto& s : summary)
    if (s.env == env && s.policy == policy) return s;
  throw std::out_of_range("no summary for " + std::string(to_string(env)) + "/" + std::string(to_string(policy)));
}

std::vector<PolicySummary> SuiteResult::per_seed(std::uint64_t seed) const {
  std::vector<TrialRow> subset;
  for (const auto& r : rows)
    if (r.seed == seed) subset.push_back(r);
  return summarize(subset);
}

namespace {

struct UserWorld {
  model::UserProfile profile;
  data::TrueFrom truth;
  GridMask true_mask, opt_mask, cons_mask;
};

}  // namespace

SuiteResult run_suite(std::span<const data::UserRecord> held_out, const model::Predictor& predictor,
                      const grid::GridSpec& bounds, const ArmGeometry& geometry, std::span<const Env> envs,
                      std::span<const Policy> policies, std::span<const std::uint64_t> seeds,
                      const SuiteConfig& config) {
  config.validate();
  if (held_out.empty()) throw EmptyDataset("run_suite: no held-out users");
  if (seeds.empty()) throw ConfigError("sim.seeds: at least one seed required");
  grid::GridSpec probe_grid = bounds;
  probe_grid.samples_per_dim = config.probe_samples_per_dim;
  const ProbeSet probes(probe_grid, geometry, config.tolerance);
  const JointMatrix probe_points = probe_grid.points();

  const auto opt = predictor.with_threshold(config.tau_optimistic);
  const auto cons = predictor.with_threshold(config.tau_conservative);

  std::vector<UserWorld> worlds(held_out.size());
  parallel_for(held_out.size(), config.workers, [&](std::size_t u) {
    UserWorld& w = worlds[u];
    w.profile = model::profile_of(held_out[u]);
    w.truth = held_out[u].truth;
    w.true_mask = grid::label_grid(probe_grid, w.truth);
    const Vector<double> p = predictor.probabilities(w.profile, probe_points);
    w.opt_mask.resize(p.size());
    w.cons_mask.resize(p.size());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      w.opt_mask[i] = p[i] >= config.tau_optimistic;
      w.cons_mask[i] = p[i] >= config.tau_conservative;
    }
  });

  const Vector3<double> rest = kin::forward_hand_position(JointConfig{}, geometry);
  const double tol = config.tolerance;
  const std::size_t n_jobs = seeds.size() * envs.size() * worlds.size();
  std::vector<std::vector<TrialRow>> job_rows(n_jobs);

  parallel_for(n_jobs, config.workers, [&](std::size_t job) {
    const std::size_t u = job % worlds.size();
    const std::size_t e = (job / worlds.size()) % envs.size();
    const std::size_t s = job / (worlds.size() * envs.size());
    const UserWorld& w = worlds[u];
    const Env env = envs[e];

    const Reachability truth{[&](const Vector3<double>& p) { return probes.any_within(w.true_mask, p, tol); },
                             [&](const JointConfig& q) { return w.truth.contains(q); }};
    auto learned = [&](const model::Predictor& pred, const GridMask& mask) {
      return Reachability{[&probes, &mask, tol](const Vector3<double>& p) { return probes.any_within(mask, p, tol); },
                          [&pred, &w](const JointConfig& q) { return pred.predict(w.profile, q).is_reachable; }};
    };
    auto belief = [&](Policy p) -> Reachability {
      switch (p) {
        case Policy::oracle:
          return truth;
        case Policy::grace_opt:
          return learned(opt, w.opt_mask);
        case Policy::grace_cons:
          return learned(cons, w.cons_mask);
        case Policy::heur_opt:
          return sphere_heuristic(geometry, config.heur_opt_radius);
        case Policy::heur_cons:
          return sphere_heuristic(geometry, config.heur_cons_radius);
      }
      return truth;
    };
    auto run = [&](const SimTask& task, const Reachability& b) {
      switch (env) {
        case Env::handover:
          return run_handover(task, b, truth);
        case Env::rehab:
          return run_rehab(task, b, truth);
        case Env::dressing:
          return run_dressing(task, b, truth, geometry);
        case Env::bathing:
          return run_bathing(task, b, truth);
      }
      return TrialResult{};
    };

    std::vector<Reachability> beliefs;
    for (Policy p : policies) beliefs.push_back(belief(p));

    auto& rows = job_rows[job];
    for (int t = 0; t < config.n_tasks; ++t) {
      SimTask task;
      task.env = env;
      task.index = static_cast<std::size_t>(t);
      task.seed = derive_seed(config.master_seed, seeds[s], static_cast<std::uint64_t>(env), task.index);
      task.rest_wrist = rest;
      Rng rng(task.seed);
      switch (env) {
        case Env::handover:
        case Env::dressing:
          // Resample until the user can truly reach at least one candidate.
          for (int attempt = 0; attempt < config.max_resample; ++attempt) {
            task.positions = sample_positions(rng, geometry, config);
            bool any = false;
            for (const auto& p : task.positions) any = any || truth.position(p);
            if (any) break;
          }
          break;
        case Env::rehab:
          task.configs = sample_rehab_configs(rng, probe_grid, config);
          break;
        case Env::bathing:
          task.target = sample_bathing_target(rng, probes, config);
          break;
      }
      const double oracle_raw = run(task, truth).agency_raw;
      for (std::size_t k = 0; k < policies.size(); ++k) {
        const TrialResult r = run(task, beliefs[k]);
        TrialRow row;
        row.env = env;
        row.policy = policies[k];
        row.user = w.profile.key;
        row.task = task.index;
        row.seed = seeds[s];
        row.success = r.success;
        row.agency_raw = r.agency_raw;
        if (oracle_raw > 0.0) row.agency_norm = r.agency_raw / oracle_raw;
        rows.push_back(row);
      }
    }
  });

  SuiteResult out;
  for (auto& rows : job_rows) out.rows.insert(out.rows.end(), rows.begin(), rows.end());
  out.summary = summarize(out.rows);
  return out;
}

namespace {

std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

std::vector<std::filesystem::path> write_suite(const std::filesystem::path& dir, const SuiteResult& result) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  for (Env env : kAllEnvs) {
    bool present = false;
    for (const auto& r : result.rows) present = present || r.env == env;
    if (!present) continue;
    const auto csv = dir / (std::string(to_string(env)) + ".csv");
    std::ofstream out(csv, std::ios::binary);
    if (!out) throw IoError("cannot write " + csv.string());
    out << "policy,user,task,seed,success,agency_raw,agency_norm\n";
    for (const auto& r : result.rows) {
      if (r.env != env) continue;
      out << to_string(r.policy) << ',' << r.user.str() << ',' << r.task << ',' << r.seed << ','
          << (r.success ? 1 : 0) << ',' << fmt(r.agency_raw) << ',' << fmt(r.agency_norm) << '\n';
    }
    if (!out) throw IoError("write failed: " + csv.string());
    written.push_back(csv);

    nlohmann::json policies = nlohmann::json::object();
    for (const auto& s : result.summary) {
      if (s.env != env) continue;
      policies[std::string(to_string(s.policy))] = {{"trials", s.trials},
                                                    {"success", s.success},
                                                    {"agency_raw", s.agency_raw},
                                                    {"agency_norm", s.agency_norm},
                                                    {"normalized_trials", s.normalized}};
    }
    const auto json_path = dir / (std::string(to_string(env)) + "_summary.json");
    std::ofstream js(json_path, std::ios::binary);
    if (!js) throw IoError("cannot write " + json_path.string());
    js << nlohmann::json{{"env", to_string(env)}, {"policies", policies}}.dump(2) << '\n';
    if (!js) throw IoError("write failed: " + json_path.string());
    written.push_back(json_path);
  }
  return written;
}

}  // namespace grace::sim
