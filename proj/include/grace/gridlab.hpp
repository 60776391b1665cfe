#pragma once

// Binary-classification dataset over a joint-space mesh grid: bounding
// volume, feasible union, and per-user labels x = [scores; joints].

#include "grace/datagen.hpp"
#include "grace/ocsvm.hpp"

#include <filesystem>
#include <map>
#include <span>
#include <vector>

namespace grace::grid {

using data::UserKey;
using kin::JointConfig;
using ocsvm::Membership;

struct GridSpec {
  std::array<data::JointInterval, 4> bounds{};
  int samples_per_dim = 40;

  void validate() const;  // throws std::invalid_argument
  std::size_t size() const;
  // Inclusive linspace coordinate i of joint j.
  double coordinate(std::size_t joint, std::size_t i) const;
  // Row-major: elbow index varies fastest.
  JointConfig point(std::size_t index) const;
  JointMatrix points() const;
  JointMatrix points(std::span<const std::size_t> indices) const;

  nlohmann::json to_json() const;
  static GridSpec from_json(const nlohmann::json& j);
  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

// Per-joint min/max over every user's samples. Throws EmptyDataset.
GridSpec compute_bound(std::span<const data::UserRecord> records, int samples_per_dim = 40);

// Grid points feasible for at least one membership, in row-major order.
std::vector<JointConfig> compute_union(const GridSpec& grid, std::span<const Membership> memberships);

inline constexpr std::size_t kFeatureDim = data::ScoreVector::kSize + 4;

struct LabeledExample {
  std::array<double, kFeatureDim> x{};  // [scores (6); joints (4)]
  int y = 0;
  UserKey user_key;
};

std::vector<LabeledExample> label_user(std::span<const JointConfig> union_points,
                                       const Membership& membership, const data::ScoreVector& scores,
                                       const UserKey& user_key);

struct ClassificationDataset {
  GridSpec grid;
  std::vector<JointConfig> union_points;
  std::vector<LabeledExample> examples;
  std::map<UserKey, std::pair<std::size_t, std::size_t>> index;  // [begin, end) per user

  std::span<const LabeledExample> rows(const UserKey& key) const;
  double positive_fraction() const;
};

// One membership per record, same order.
ClassificationDataset assemble(std::span<const data::UserRecord> records,
                               std::span<const Membership> memberships, const GridSpec& grid);

// Dense label mask over the full grid (one byte per grid index).
using GridMask = std::vector<std::uint8_t>;

GridMask label_grid(const GridSpec& grid, const ocsvm::FromModel& model);
GridMask label_grid(const GridSpec& grid, const data::TrueFrom& truth);
GridMask label_grid(const GridSpec& grid, const Membership& membership);

// Indices set in at least one mask, ascending.
std::vector<std::size_t> union_indices(std::span<const GridMask* const> masks);

struct ShardManifest {
  std::vector<std::string> shards;
  std::size_t rows = 0;
  std::string dataset_hash;
};

// Writes shard_<k>.csv files (columns pid,cid,s1..s6,plane,elev,rot,elbow,y)
// and shards.json with the shard list, grid spec and content hash.
ShardManifest write_shards(const ClassificationDataset& dataset, const std::filesystem::path& dir,
                           std::size_t rows_per_shard = 500000);

}  // namespace grace::grid
