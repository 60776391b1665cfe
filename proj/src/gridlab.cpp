#include "grace/gridlab.hpp"

#include "grace/hash.hpp"

#include <cstdio>
#include <fstream>
#include <limits>

namespace grace::grid {

void GridSpec::validate() const {
  if (samples_per_dim < 2) throw std::invalid_argument("grid: samples_per_dim must be >= 2");
  for (std::size_t j = 0; j < 4; ++j)
    if (!(bounds[j].lo < bounds[j].hi))
      throw std::invalid_argument(std::string("grid: empty bound for joint ") + kin::kJointNames[j]);
}

std::size_t GridSpec::size() const {
  const auto n = static_cast<std::size_t>(samples_per_dim);
  return n * n * n * n;
}

double GridSpec::coordinate(std::size_t joint, std::size_t i) const {
  const auto& b = bounds[joint];
  if (i + 1 == static_cast<std::size_t>(samples_per_dim)) return b.hi;
  return b.lo + (b.hi - b.lo) * static_cast<double>(i) / static_cast<double>(samples_per_dim - 1);
}

JointConfig GridSpec::point(std::size_t index) const {
  const auto n = static_cast<std::size_t>(samples_per_dim);
  const std::size_t i3 = index % n;
  const std::size_t i2 = (index / n) % n;
  const std::size_t i1 = (index / (n * n)) % n;
  const std::size_t i0 = index / (n * n * n);
  return {coordinate(0, i0), coordinate(1, i1), coordinate(2, i2), coordinate(3, i3)};
}

JointMatrix GridSpec::points() const {
  JointMatrix m(4, static_cast<Eigen::Index>(size()));
  for (std::size_t i = 0; i < size(); ++i) m.col(static_cast<Eigen::Index>(i)) = point(i).vector();
  return m;
}

JointMatrix GridSpec::points(std::span<const std::size_t> indices) const {
  JointMatrix m(4, static_cast<Eigen::Index>(indices.size()));
  for (std::size_t k = 0; k < indices.size(); ++k)
    m.col(static_cast<Eigen::Index>(k)) = point(indices[k]).vector();
  return m;
}

nlohmann::json GridSpec::to_json() const {
  nlohmann::json b = nlohmann::json::array();
  for (const auto& iv : bounds) b.push_back({iv.lo, iv.hi});
  return {{"bounds", b}, {"samples_per_dim", samples_per_dim}};
}

GridSpec GridSpec::from_json(const nlohmann::json& j) {
  GridSpec g;
  try {
    g.samples_per_dim = j.at("samples_per_dim").get<int>();
    const auto& b = j.at("bounds");
    if (b.size() != 4) throw FormatError("grid spec: expected 4 bounds");
    for (std::size_t k = 0; k < 4; ++k) g.bounds[k] = {b[k].at(0).get<double>(), b[k].at(1).get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("grid spec: ") + e.what());
  }
  return g;
}

GridSpec compute_bound(std::span<const data::UserRecord> records, int samples_per_dim) {
  GridSpec g;
  g.samples_per_dim = samples_per_dim;
  for (auto& b : g.bounds)
    b = {std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  bool any = false;
  for (const auto& r : records) {
    for (const auto& q : r.from_samples) {
      any = true;
      for (std::size_t j = 0; j < 4; ++j) {
        g.bounds[j].lo = std::min(g.bounds[j].lo, q[j]);
        g.bounds[j].hi = std::max(g.bounds[j].hi, q[j]);
      }
    }
  }
  if (!any) throw EmptyDataset("compute_bound: no fROM samples in dataset");
  g.validate();
  return g;
}

std::vector<JointConfig> compute_union(const GridSpec& grid, std::span<const Membership> memberships) {
  if (memberships.empty()) throw std::invalid_argument("compute_union: need at least one membership");
  std::vector<JointConfig> out;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const JointConfig q = grid.point(i);
    for (const auto& m : memberships) {
      if (m(q)) {
        out.push_back(q);
        break;
      }
    }
  }
  return out;
}

std::vector<LabeledExample> label_user(std::span<const JointConfig> union_points,
                                       const Membership& membership, const data::ScoreVector& scores,
                                       const UserKey& user_key) {
  std::vector<LabeledExample> out;
  out.reserve(union_points.size());
  for (const auto& q : union_points) {
    LabeledExample ex;
    for (std::size_t k = 0; k < data::ScoreVector::kSize; ++k) ex.x[k] = scores[k];
    for (std::size_t j = 0; j < 4; ++j) ex.x[data::ScoreVector::kSize + j] = q[j];
    ex.y = membership(q) ? 1 : 0;
    ex.user_key = user_key;
    out.push_back(ex);
  }
  return out;
}

std::span<const LabeledExample> ClassificationDataset::rows(const UserKey& key) const {
  const auto it = index.find(key);
  if (it == index.end()) return {};
  return std::span<const LabeledExample>(examples).subspan(it->second.first,
                                                           it->second.second - it->second.first);
}

double ClassificationDataset::positive_fraction() const {
  if (examples.empty()) return 0.0;
  std::size_t pos = 0;
  for (const auto& e : examples) pos += static_cast<std::size_t>(e.y);
  return static_cast<double>(pos) / static_cast<double>(examples.size());
}

ClassificationDataset assemble(std::span<const data::UserRecord> records,
                               std::span<const Membership> memberships, const GridSpec& grid) {
  if (records.size() != memberships.size())
    throw std::invalid_argument("assemble: need one membership per record");
  ClassificationDataset ds;
  ds.grid = grid;
  ds.union_points = compute_union(grid, memberships);
  for (std::size_t u = 0; u < records.size(); ++u) {
    const auto begin = ds.examples.size();
    auto rows = label_user(ds.union_points, memberships[u], records[u].scores, records[u].key());
    ds.examples.insert(ds.examples.end(), rows.begin(), rows.end());
    ds.index[records[u].key()] = {begin, ds.examples.size()};
  }
  return ds;
}

GridMask label_grid(const GridSpec& grid, const ocsvm::FromModel& model) {
  GridMask mask(grid.size());
  const Eigen::Index nsv = model.support_vectors.cols();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Vector4<double> q = grid.point(i).vector();
    double s = 0.0;
    for (Eigen::Index k = 0; k < nsv; ++k)
      s += model.alphas[k] * std::exp(-model.gamma * (model.support_vectors.col(k) - q).squaredNorm());
    mask[i] = s - model.rho >= 0.0 ? 1 : 0;
  }
  return mask;
}

GridMask label_grid(const GridSpec& grid, const data::TrueFrom& truth) {
  GridMask mask(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) mask[i] = truth.contains(grid.point(i)) ? 1 : 0;
  return mask;
}

GridMask label_grid(const GridSpec& grid, const Membership& membership) {
  GridMask mask(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) mask[i] = membership(grid.point(i)) ? 1 : 0;
  return mask;
}

std::vector<std::size_t> union_indices(std::span<const GridMask* const> masks) {
  std::vector<std::size_t> out;
  if (masks.empty()) return out;
  const std::size_t n = masks.front()->size();
  for (std::size_t i = 0; i < n; ++i) {
    for (const GridMask* m : masks) {
      if ((*m)[i]) {
        out.push_back(i);
        break;
      }
    }
  }
  return out;
}

ShardManifest write_shards(const ClassificationDataset& dataset, const std::filesystem::path& dir,
                           std::size_t rows_per_shard) {
  if (rows_per_shard == 0) throw std::invalid_argument("write_shards: rows_per_shard must be > 0");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  ShardManifest manifest;
  Sha256 hash;
  std::ofstream out;
  std::string line;
  char buf[64];
  for (std::size_t r = 0; r < dataset.examples.size(); ++r) {
    if (r % rows_per_shard == 0) {
      if (out.is_open()) out.close();
      char name[32];
      std::snprintf(name, sizeof name, "shard_%05zu.csv", manifest.shards.size());
      manifest.shards.emplace_back(name);
      out.open(dir / name, std::ios::binary);
      if (!out) throw IoError("cannot write " + (dir / name).string());
      const std::string header = "pid,cid,s1,s2,s3,s4,s5,s6,plane,elev,rot,elbow,y\n";
      out << header;
      hash.update(header);
    }
    const auto& ex = dataset.examples[r];
    line = std::to_string(ex.user_key.participant_id) + "," + std::to_string(ex.user_key.condition_id);
    for (double v : ex.x) {
      std::snprintf(buf, sizeof buf, ",%.9f", v);
      line += buf;
    }
    line += "," + std::to_string(ex.y) + "\n";
    out << line;
    hash.update(line);
  }
  if (out.is_open()) out.close();
  manifest.rows = dataset.examples.size();
  manifest.dataset_hash = hash.hex();

  nlohmann::json j;
  j["shards"] = manifest.shards;
  j["rows"] = manifest.rows;
  j["grid"] = dataset.grid.to_json();
  j["union_size"] = dataset.union_points.size();
  j["dataset_hash"] = manifest.dataset_hash;
  std::ofstream mf(dir / "shards.json", std::ios::binary);
  if (!mf) throw IoError("cannot write " + (dir / "shards.json").string());
  mf << j.dump(2) << '\n';
  return manifest;
}

}  // namespace grace::grid
