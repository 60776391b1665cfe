#pragma once

// Synthetic participants x conditions dataset: condition archetypes, per-user
// realized joint limits, fROM samples and functional assessment scores.

#include "grace/kinematics.hpp"

#include <array>
#include <compare>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace grace::data {

using kin::JointConfig;

struct JointInterval {
  double lo = 0.0;
  double hi = 0.0;
  double width() const { return hi - lo; }
  friend bool operator==(const JointInterval&, const JointInterval&) = default;
};

using Intervals = std::array<JointInterval, 4>;

// Ground-truth reachable set: an axis-aligned box in joint space cut by one
// coupling constraint between elevation and elbow flexion,
//   (elev - lo)/w_elev + (elbow - lo)/w_elbow <= 2 - coupling_penalty.
struct TrueFrom {
  Intervals intervals{};
  double coupling_penalty = 0.0;

  bool contains(double plane, double elev, double rot, double elbow) const;
  bool contains(const JointConfig& q) const { return contains(q[0], q[1], q[2], q[3]); }
  bool contains(const Vector4<double>& q) const { return contains(q[0], q[1], q[2], q[3]); }

  friend bool operator==(const TrueFrom&, const TrueFrom&) = default;
};

struct ConditionArchetype {
  int condition_id = 0;
  Intervals joint_interval_means{};
  double coupling_penalty = 0.0;
};

// The four fixed archetypes, condition ids 1..4.
std::vector<ConditionArchetype> make_archetypes();

struct ScoreVector {
  static constexpr std::size_t kSize = 6;
  static constexpr std::array<std::string_view, kSize> kNames = {
      "arat_grasp", "arat_grip", "arat_gross", "fma_ue_a", "fma_ue_b", "fma_ue_coord"};

  std::array<double, kSize> values{};

  double arat_grasp() const { return values[0]; }
  double arat_grip() const { return values[1]; }
  double arat_gross() const { return values[2]; }
  double fma_ue_a() const { return values[3]; }
  double fma_ue_b() const { return values[4]; }
  double fma_ue_coord() const { return values[5]; }

  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](std::size_t i) { return values[i]; }
  Vector<double> vector() const { return Eigen::Map<const Vector<double>>(values.data(), kSize); }

  friend bool operator==(const ScoreVector&, const ScoreVector&) = default;
};

struct UserKey {
  int participant_id = 0;
  int condition_id = 0;

  std::string str() const;  // "pid:cid"
  static UserKey parse(std::string_view text);
  friend auto operator<=>(const UserKey&, const UserKey&) = default;
};

std::vector<UserKey> parse_user_keys(std::string_view text);  // "1:1,2:3" or "none"

struct UserRecord {
  int participant_id = 0;
  int condition_id = 0;
  ScoreVector scores;
  std::vector<JointConfig> from_samples;
  TrueFrom truth;

  UserKey key() const { return {participant_id, condition_id}; }
  JointMatrix sample_matrix() const;
  friend bool operator==(const UserRecord&, const UserRecord&) = default;
};

struct GeneratorConfig {
  int participants = 11;
  int conditions = 4;
  int samples_per_user = 2000;
  double interval_noise_deg = 5.0;
  double coupling_noise = 0.05;
  double score_noise = 0.04;
  double boundary_fraction = 0.3;
  double boundary_band_deg = 5.0;
  std::optional<UserKey> drop_cell = UserKey{11, 4};

  void validate() const;  // throws ConfigError naming the offending field
};

// Instrument-grid scores from a reachable set. Each item is the fraction of
// the way from rest to a task target configuration that stays inside the set
// (ARAT) or a normalized joint-range width (FMA), plus N(0, noise_sigma),
// quantized to the item scale and averaged.
ScoreVector score_model(const TrueFrom& truth, std::uint64_t seed, double noise_sigma = 0.04);

// Fraction s in [0, 1] of the straight joint-space path from rest towards
// target that remains inside truth. Monotone in every interval width.
double reach_fraction(const TrueFrom& truth, const Vector4<double>& target);

UserRecord sample_user(int participant_id, const ConditionArchetype& archetype, std::uint64_t seed,
                       const GeneratorConfig& config = {});

struct Dataset {
  std::uint64_t master_seed = 0;
  GeneratorConfig config;
  std::vector<ConditionArchetype> archetypes;
  std::vector<UserRecord> users;

  const UserRecord& user(const UserKey& key) const;
};

Dataset generate_dataset(const GeneratorConfig& config, std::uint64_t master_seed);

// dataset.json manifest plus user_<pid>_<cid>.csv sample files.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

// Rounds to 9 decimals through the text form used on disk.
double quantize9(double x);

}  // namespace grace::data
