#include "grace/datagen.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace grace::data {

namespace {

using json = nlohmann::json;

constexpr std::size_t kElev = 1;
constexpr std::size_t kElbow = 3;

Intervals degrees(std::array<double, 4> hi_deg) {
  Intervals out{};
  for (std::size_t j = 0; j < 4; ++j) out[j] = {0.0, deg2rad(hi_deg[j])};
  return out;
}

// Task targets (plane, elev, rot, elbow) in degrees.
struct ItemTarget {
  std::array<double, 4> deg;
  Vector4<double> radians() const {
    return {deg2rad(deg[0]), deg2rad(deg[1]), deg2rad(deg[2]), deg2rad(deg[3])};
  }
};

// Lift objects from table height to the top of the box.
const std::array<ItemTarget, 6> kGraspItems = {{{{30, 70, 30, 80}},
                                                {{40, 80, 40, 90}},
                                                {{50, 85, 30, 100}},
                                                {{20, 75, 50, 70}},
                                                {{60, 90, 45, 95}},
                                                {{35, 95, 35, 85}}}};
// Pouring and placing inside the box; needs axial rotation.
const std::array<ItemTarget, 4> kGripItems = {
    {{{40, 60, 90, 90}}, {{30, 70, 70, 100}}, {{50, 80, 60, 80}}, {{20, 65, 100, 95}}}};
// Back of head, top of head, mouth.
const std::array<ItemTarget, 3> kGrossItems = {
    {{{100, 150, 90, 130}}, {{60, 140, 40, 140}}, {{30, 75, 20, 130}}}};

constexpr int kAratLevels = 3;  // item scores 0..3
constexpr int kFmaLevels = 2;   // item scores 0..2

double quantized_item(double reach, int max_level, Rng& rng, double sigma) {
  const double noisy = reach + (sigma > 0.0 ? rng.normal(0.0, sigma) : 0.0);
  const double level = std::round(std::clamp(noisy, 0.0, 1.0) * max_level);
  return level;
}

template <std::size_t N>
double arat_subscore(const TrueFrom& truth, const std::array<ItemTarget, N>& items, Rng& rng,
                     double sigma) {
  double total = 0.0;
  for (const auto& item : items)
    total += quantized_item(reach_fraction(truth, item.radians()), kAratLevels, rng, sigma);
  return total / static_cast<double>(N * kAratLevels);
}

double fma_subscore(std::initializer_list<double> items, Rng& rng, double sigma) {
  double total = 0.0;
  for (double x : items) total += quantized_item(x, kFmaLevels, rng, sigma);
  return total / static_cast<double>(items.size() * kFmaLevels);
}

std::string format9(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9f", x);
  return buf;
}

std::string user_file_name(const UserKey& key) {
  return "user_" + std::to_string(key.participant_id) + "_" + std::to_string(key.condition_id) +
         ".csv";
}

json intervals_to_json(const Intervals& iv) {
  json arr = json::array();
  for (const auto& i : iv) arr.push_back({i.lo, i.hi});
  return arr;
}

Intervals intervals_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 4) throw FormatError(where + ": expected 4 [lo, hi] pairs");
  Intervals out{};
  for (std::size_t k = 0; k < 4; ++k) {
    const auto& p = j[k];
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
      throw FormatError(where + "[" + std::to_string(k) + "]: expected [lo, hi]");
    out[k] = {p[0].get<double>(), p[1].get<double>()};
    if (!(out[k].lo < out[k].hi))
      throw FormatError(where + "[" + std::to_string(k) + "]: lo must be < hi");
  }
  return out;
}

}  // namespace

bool TrueFrom::contains(double plane, double elev, double rot, double elbow) const {
  const double q[4] = {plane, elev, rot, elbow};
  for (std::size_t j = 0; j < 4; ++j)
    if (q[j] < intervals[j].lo || q[j] > intervals[j].hi) return false;
  const double u = (elev - intervals[kElev].lo) / intervals[kElev].width();
  const double v = (elbow - intervals[kElbow].lo) / intervals[kElbow].width();
  return u + v <= 2.0 - coupling_penalty;
}

std::vector<ConditionArchetype> make_archetypes() {
  return {
      // No restriction.
      {1, degrees({130, 160, 150, 145}), 0.0},
      // Limited shoulder flexion/abduction and elbow flexion.
      {2, degrees({110, 100, 120, 95}), 0.3},
      // Severely restricted flexion/abduction, rotation held internal.
      {3, degrees({80, 55, 60, 100}), 0.5},
      // Full flexion/abduction blocked.
      {4, degrees({120, 120, 100, 130}), 0.2},
  };
}

std::string UserKey::str() const {
  return std::to_string(participant_id) + ":" + std::to_string(condition_id);
}

namespace {

std::string_view strip(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool parse_whole(std::string_view s, int& out) {
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size() && !s.empty();
}

}  // namespace

UserKey UserKey::parse(std::string_view raw) {
  const auto text = strip(raw);
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) throw ConfigError("user key '" + std::string(text) + "': expected pid:cid");
  UserKey key;
  if (!parse_whole(strip(text.substr(0, colon)), key.participant_id) ||
      !parse_whole(strip(text.substr(colon + 1)), key.condition_id))
    throw ConfigError("user key '" + std::string(text) + "': expected integers pid:cid");
  return key;
}

std::vector<UserKey> parse_user_keys(std::string_view raw) {
  std::vector<UserKey> keys;
  const auto text = strip(raw);
  if (text.empty() || text == "none") return keys;
  std::size_t start = 0;
  for (;;) {
    const auto comma = text.find(',', start);
    const auto item = strip(text.substr(start, comma == std::string_view::npos ? text.npos : comma - start));
    if (!item.empty()) keys.push_back(UserKey::parse(item));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return keys;
}

JointMatrix UserRecord::sample_matrix() const {
  JointMatrix m(4, static_cast<Eigen::Index>(from_samples.size()));
  for (std::size_t i = 0; i < from_samples.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = from_samples[i].vector();
  return m;
}

void GeneratorConfig::validate() const {
  if (participants < 1) throw ConfigError("data.participants: must be >= 1");
  if (conditions < 1 || conditions > 4) throw ConfigError("data.conditions: must be in 1..4");
  if (samples_per_user < 10) throw ConfigError("data.samples_per_user: must be >= 10");
  if (interval_noise_deg < 0) throw ConfigError("data.interval_noise_deg: must be >= 0");
  if (coupling_noise < 0) throw ConfigError("data.coupling_noise: must be >= 0");
  if (score_noise < 0) throw ConfigError("data.score_noise: must be >= 0");
  if (boundary_fraction < 0 || boundary_fraction > 1)
    throw ConfigError("data.boundary_fraction: must be in [0, 1]");
  if (boundary_band_deg <= 0) throw ConfigError("data.boundary_band_deg: must be > 0");
}

double reach_fraction(const TrueFrom& truth, const Vector4<double>& target) {
  double s = 1.0;
  for (std::size_t j = 0; j < 4; ++j) {
    const auto& iv = truth.intervals[j];
    const double t = target[static_cast<Eigen::Index>(j)];
    if (t <= 0.0) {
      if (iv.lo > 0.0) return 0.0;
      continue;
    }
    s = std::min(s, std::clamp((std::min(iv.hi, t) - iv.lo) / t, 0.0, 1.0));
  }
  const double load = target[kElev] / truth.intervals[kElev].width() +
                      target[kElbow] / truth.intervals[kElbow].width();
  if (load > 0.0) s = std::min(s, std::max(0.0, 2.0 - truth.coupling_penalty) / load);
  return s;
}

ScoreVector score_model(const TrueFrom& truth, std::uint64_t seed, double noise_sigma) {
  Rng rng(seed);
  const auto normative = make_archetypes().front().joint_interval_means;
  std::array<double, 4> w{};
  for (std::size_t j = 0; j < 4; ++j)
    w[j] = std::clamp(truth.intervals[j].width() / normative[j].width(), 0.0, 1.0);
  const double plane = w[0], elev = w[1], rot = w[2], elbow = w[3];
  const double coord = std::clamp(1.0 - truth.coupling_penalty, 0.0, 1.0);

  ScoreVector s;
  s[0] = arat_subscore(truth, kGraspItems, rng, noise_sigma);
  s[1] = arat_subscore(truth, kGripItems, rng, noise_sigma);
  s[2] = arat_subscore(truth, kGrossItems, rng, noise_sigma);
  s[3] = fma_subscore({elev, elbow, plane}, rng, noise_sigma);
  s[4] = fma_subscore({rot, plane, std::min(elev, rot)}, rng, noise_sigma);
  s[5] = fma_subscore({coord, std::min(elev, elbow), (plane + elev + rot + elbow) / 4.0}, rng,
                      noise_sigma);
  return s;
}

double quantize9(double x) {
  const std::string text = format9(x);
  return std::strtod(text.c_str(), nullptr);
}

UserRecord sample_user(int participant_id, const ConditionArchetype& archetype, std::uint64_t seed,
                       const GeneratorConfig& config) {
  Rng rng(seed);
  UserRecord rec;
  rec.participant_id = participant_id;
  rec.condition_id = archetype.condition_id;

  // Lower limits stay at the rest posture; upper limits vary per participant.
  const double sigma = deg2rad(config.interval_noise_deg);
  const double min_width = deg2rad(5.0);
  for (std::size_t j = 0; j < 4; ++j) {
    const auto& mean = archetype.joint_interval_means[j];
    double hi = mean.hi + rng.normal(0.0, sigma);
    const double cap = j == kElev ? kPi : kTwoPi - 1e-6;
    hi = std::clamp(hi, mean.lo + min_width, cap);
    rec.truth.intervals[j] = {mean.lo, hi};
  }
  rec.truth.coupling_penalty =
      std::clamp(archetype.coupling_penalty + rng.normal(0.0, config.coupling_noise), 0.0, 1.0);

  const auto& iv = rec.truth.intervals;
  const double band = deg2rad(config.boundary_band_deg);
  const int n = config.samples_per_user;
  const int n_boundary = static_cast<int>(std::lround(config.boundary_fraction * n));
  rec.from_samples.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const bool boundary = i >= n - n_boundary;
    for (;;) {
      std::array<double, 4> q{};
      for (std::size_t j = 0; j < 4; ++j) q[j] = rng.uniform(iv[j].lo, iv[j].hi);
      if (boundary) {
        const auto j = static_cast<std::size_t>(rng.below(4));
        const double b = std::min(band, iv[j].width());
        q[j] = rng.below(2) == 0 ? rng.uniform(iv[j].lo, iv[j].lo + b)
                                 : rng.uniform(iv[j].hi - b, iv[j].hi);
      }
      for (auto& x : q) x = quantize9(x);
      if (rec.truth.contains(q[0], q[1], q[2], q[3])) {
        rec.from_samples.emplace_back(q[0], q[1], q[2], q[3]);
        break;
      }
    }
  }
  rec.scores = score_model(rec.truth, mix_seed(seed ^ 0x5c0e5c0e5c0eULL), config.score_noise);
  return rec;
}

const UserRecord& Dataset::user(const UserKey& key) const {
  for (const auto& u : users)
    if (u.key() == key) return u;
  throw Error("unknown user " + key.str());
}

Dataset generate_dataset(const GeneratorConfig& config, std::uint64_t master_seed) {
  config.validate();
  Dataset ds;
  ds.master_seed = master_seed;
  ds.config = config;
  ds.archetypes = make_archetypes();
  ds.archetypes.resize(static_cast<std::size_t>(config.conditions));
  for (int pid = 1; pid <= config.participants; ++pid) {
    for (const auto& arch : ds.archetypes) {
      const UserKey key{pid, arch.condition_id};
      if (config.drop_cell && *config.drop_cell == key) continue;
      const auto seed = derive_seed(master_seed, pid, arch.condition_id);
      ds.users.push_back(sample_user(pid, arch, seed, config));
    }
  }
  return ds;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  json manifest;
  manifest["format"] = "grace-dataset";
  manifest["version"] = 1;
  manifest["master_seed"] = dataset.master_seed;
  const auto& c = dataset.config;
  manifest["generator"] = {{"participants", c.participants},
                           {"conditions", c.conditions},
                           {"samples_per_user", c.samples_per_user},
                           {"interval_noise_deg", c.interval_noise_deg},
                           {"coupling_noise", c.coupling_noise},
                           {"score_noise", c.score_noise},
                           {"boundary_fraction", c.boundary_fraction},
                           {"boundary_band_deg", c.boundary_band_deg},
                           {"drop_cell", c.drop_cell ? json(c.drop_cell->str()) : json(nullptr)}};
  json archetypes = json::array();
  for (const auto& a : dataset.archetypes)
    archetypes.push_back({{"condition_id", a.condition_id},
                          {"intervals", intervals_to_json(a.joint_interval_means)},
                          {"coupling_penalty", a.coupling_penalty}});
  manifest["archetypes"] = archetypes;

  json users = json::array();
  for (const auto& u : dataset.users) {
    json scores = json::object();
    for (std::size_t k = 0; k < ScoreVector::kSize; ++k)
      scores[std::string(ScoreVector::kNames[k])] = u.scores[k];
    const auto file = user_file_name(u.key());
    users.push_back({{"participant_id", u.participant_id},
                     {"condition_id", u.condition_id},
                     {"scores", scores},
                     {"true_intervals", intervals_to_json(u.truth.intervals)},
                     {"coupling_penalty", u.truth.coupling_penalty},
                     {"samples_file", file},
                     {"n_samples", u.from_samples.size()}});

    std::ofstream csv(dir / file, std::ios::binary);
    if (!csv) throw IoError("cannot write " + (dir / file).string());
    csv << "plane,elev,rot,elbow\n";
    for (const auto& q : u.from_samples)
      csv << format9(q[0]) << ',' << format9(q[1]) << ',' << format9(q[2]) << ',' << format9(q[3])
          << '\n';
    if (!csv) throw IoError("write failed: " + (dir / file).string());
  }
  manifest["users"] = users;

  std::ofstream out(dir / "dataset.json", std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir / "dataset.json").string());
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + (dir / "dataset.json").string());
}

namespace {

std::vector<JointConfig> read_samples(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty sample file");
  if (line != "plane,elev,rot,elbow")
    throw FormatError(path.string() + ":1: expected header 'plane,elev,rot,elbow'");
  std::vector<JointConfig> samples;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::array<double, 4> q{};
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (std::size_t k = 0; k < 4; ++k) {
      const auto res = std::from_chars(p, end, q[k]);
      if (res.ec != std::errc{})
        throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad value in column " +
                          kin::kJointNames[k]);
      p = res.ptr;
      if (k < 3) {
        if (p == end || *p != ',')
          throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 4 columns");
        ++p;
      }
    }
    if (p != end)
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": trailing characters");
    samples.emplace_back(q[0], q[1], q[2], q[3]);
  }
  return samples;
}

}  // namespace

Dataset read_dataset(const std::filesystem::path& dir) {
  const auto path = dir / "dataset.json";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  if (text.find_first_not_of(" \t\r\n") == std::string::npos)
    throw FormatError(path.string() + ": no records");

  json manifest;
  try {
    manifest = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }

  Dataset ds;
  try {
    ds.master_seed = manifest.at("master_seed").get<std::uint64_t>();
    const auto& g = manifest.at("generator");
    ds.config.participants = g.at("participants").get<int>();
    ds.config.conditions = g.at("conditions").get<int>();
    ds.config.samples_per_user = g.at("samples_per_user").get<int>();
    ds.config.interval_noise_deg = g.at("interval_noise_deg").get<double>();
    ds.config.coupling_noise = g.at("coupling_noise").get<double>();
    ds.config.score_noise = g.at("score_noise").get<double>();
    ds.config.boundary_fraction = g.at("boundary_fraction").get<double>();
    ds.config.boundary_band_deg = g.at("boundary_band_deg").get<double>();
    if (g.at("drop_cell").is_null())
      ds.config.drop_cell.reset();
    else
      ds.config.drop_cell = UserKey::parse(g.at("drop_cell").get<std::string>());

    for (const auto& a : manifest.at("archetypes")) {
      ConditionArchetype arch;
      arch.condition_id = a.at("condition_id").get<int>();
      arch.joint_interval_means = intervals_from_json(a.at("intervals"), "archetypes.intervals");
      arch.coupling_penalty = a.at("coupling_penalty").get<double>();
      ds.archetypes.push_back(arch);
    }

    const auto& users = manifest.at("users");
    if (!users.is_array() || users.empty()) throw FormatError(path.string() + ": no records");
    for (std::size_t i = 0; i < users.size(); ++i) {
      const auto& u = users[i];
      const std::string where = "users[" + std::to_string(i) + "]";
      UserRecord rec;
      rec.participant_id = u.at("participant_id").get<int>();
      rec.condition_id = u.at("condition_id").get<int>();
      const auto& scores = u.at("scores");
      for (std::size_t k = 0; k < ScoreVector::kSize; ++k) {
        const std::string name(ScoreVector::kNames[k]);
        if (!scores.contains(name) || !scores[name].is_number())
          throw FormatError(path.string() + ": " + where + ".scores." + name + " missing");
        const double v = scores[name].get<double>();
        if (!(v >= 0.0 && v <= 1.0))
          throw FormatError(path.string() + ": " + where + ".scores." + name +
                            " out of [0, 1]: " + std::to_string(v));
        rec.scores[k] = v;
      }
      rec.truth.intervals = intervals_from_json(u.at("true_intervals"), where + ".true_intervals");
      rec.truth.coupling_penalty = u.at("coupling_penalty").get<double>();
      rec.from_samples = read_samples(dir / u.at("samples_file").get<std::string>());
      if (rec.from_samples.empty())
        throw FormatError(path.string() + ": " + where + " has no fROM samples");
      if (u.contains("n_samples") && u["n_samples"].get<std::size_t>() != rec.from_samples.size())
        throw FormatError(path.string() + ": " + where + ".n_samples does not match sample file");
      ds.users.push_back(std::move(rec));
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return ds;
}

}  // namespace grace::data
