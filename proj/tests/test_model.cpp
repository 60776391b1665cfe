#include "grace/evalharness.hpp"
#include "grace/log.hpp"
#include "grace/model.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numeric>

using namespace grace;
using namespace grace::model;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  eval::PreparedData data;
  TrainingSet set;
};

// Small synthetic dataset labeled on an 8-per-dim grid.
const Fixture& fixture() {
  static const Fixture f = [] {
    data::GeneratorConfig cfg;
    cfg.samples_per_user = 300;
    const auto ds = data::generate_dataset(cfg, 42);
    Fixture out;
    out.data = eval::prepare(ds.users, 8);
    std::vector<std::size_t> all(out.data.users.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    out.set = eval::training_set(out.data, all, false);
    return out;
  }();
  return f;
}

std::vector<UserProfile> profiles(std::span<const data::UserRecord> users) {
  std::vector<UserProfile> out;
  for (const auto& u : users) out.push_back(profile_of(u));
  return out;
}

double mean_distance(const Matrix<double>& z, std::span<const UserProfile> users, bool same) {
  double sum = 0.0;
  long n = 0;
  for (Eigen::Index i = 0; i < z.cols(); ++i)
    for (Eigen::Index j = i + 1; j < z.cols(); ++j)
      if ((users[static_cast<std::size_t>(i)].condition_id == users[static_cast<std::size_t>(j)].condition_id) == same) {
        sum += (z.col(i) - z.col(j)).norm();
        ++n;
      }
  return sum / static_cast<double>(n);
}

struct CaptureWarnings {
  std::vector<std::string> seen;
  WarningSink previous;
  CaptureWarnings() {
    previous = set_warning_sink([this](std::string_view m) { seen.emplace_back(m); });
  }
  ~CaptureWarnings() { set_warning_sink(previous); }
  bool contains(std::string_view needle) const {
    for (const auto& s : seen)
      if (s.find(needle) != std::string::npos) return true;
    return false;
  }
};

Predictor constant_predictor(double probability, double tau) {
  nn::Layer<double> L{Matrix<double>::Zero(1, 4), Vector<double>::Constant(1, std::log(probability / (1 - probability))),
                      nn::Activation::sigmoid};
  return Predictor(Method::user_agnostic, std::nullopt, nn::Mlp<double>({L}), {}, tau);
}

}  // namespace

TEST_CASE("config defaults") {
  const ModelConfig c;
  CHECK(c.classifier.batch_size == 4096);
  CHECK(c.classifier.learning_rate == 5e-4);
  CHECK(c.classifier.epochs == 10);
  CHECK(c.classifier.hidden == 16);
  CHECK(c.autoencoder.hidden == 16);
  CHECK(c.autoencoder.epochs == 500);
  CHECK(c.tau_optimistic == 0.5);
  CHECK(c.tau_conservative == 0.95);
  CHECK(kLatentDim == 4);
  const auto back = ModelConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
}

TEST_CASE("methods by name") {
  CHECK(method_from_string("grace") == Method::grace);
  CHECK(method_from_string("gt-condition") == Method::gt_condition);
  CHECK(method_from_string("user-agnostic") == Method::user_agnostic);
  CHECK(to_string(Method::gt_condition) == "gt-condition");
  CHECK_THROWS_AS(method_from_string("svm"), ConfigError);
}

TEST_CASE("encoder training") {
  const auto& f = fixture();
  const auto users = profiles(f.data.users);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto ae = train_encoder(users, AutoencoderConfig{}, seed);
    CHECK(ae.encoder.net.dims() == std::vector<int>{6, 16, 4});
    CHECK(ae.decoder.net.dims() == std::vector<int>{4, 16, 6});
    REQUIRE(ae.log.mse.size() == 500);
    CHECK(ae.log.mse.back() < ae.log.mse.front());
    CHECK(ae.log.contrastive_active);
    const auto z = ae.encoder.embed(users);
    CHECK(mean_distance(z, users, true) < mean_distance(z, users, false));
    // Pure function of frozen weights.
    CHECK(ae.encoder.embed(users[3].scores) == ae.encoder.embed(users[3].scores));
  }
  const auto again = train_encoder(users, AutoencoderConfig{}, 1);
  CHECK(again.encoder.embed(users) == train_encoder(users, AutoencoderConfig{}, 1).encoder.embed(users));

  std::vector<UserProfile> single;
  for (const auto& u : users)
    if (u.condition_id == 2) single.push_back(u);
  CaptureWarnings w;
  const auto ae = train_encoder(single, AutoencoderConfig{}, 3);
  CHECK(w.contains("ContrastiveUndefined"));
  CHECK_FALSE(ae.log.contrastive_active);
  CHECK(ae.log.mse.back() < ae.log.mse.front());
}

TEST_CASE("feasibility classifier on a separable box labeling") {
  const auto& f = fixture();
  TrainingSet toy = f.set;
  for (auto& row : toy.labels)
    for (Eigen::Index p = 0; p < toy.points.cols(); ++p)
      row[static_cast<std::size_t>(p)] = toy.points(1, p) < 1.0 ? 1 : 0;
  ClassifierConfig cfg;
  cfg.batch_size = 512;
  cfg.learning_rate = 5e-3;
  ClassifierLog log;
  const auto net = train_classifier(toy, Matrix<double>(0, static_cast<Eigen::Index>(toy.users.size())), cfg, 4, &log);
  const Predictor pred(Method::user_agnostic, std::nullopt, net);
  const auto p = pred.probabilities(toy.users[0], toy.points);
  std::size_t correct = 0;
  for (Eigen::Index k = 0; k < p.size(); ++k) correct += (p[k] >= 0.5) == (toy.labels[0][static_cast<std::size_t>(k)] == 1);
  CHECK(static_cast<double>(correct) / static_cast<double>(p.size()) > 0.95);
  CHECK(log.epoch_loss.size() == 10);
  CHECK(log.epoch_loss.back() < log.initial_loss);
}

TEST_CASE("trained methods") {
  const auto& f = fixture();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto g = train_grace(f.set, ModelConfig{}, seed);
    CHECK(g.log.epoch_loss.back() < g.log.initial_loss);
  }
  const auto grace = train_grace(f.set, ModelConfig{}, 9).predictor;
  const auto gt = baseline_gt_condition(f.set, ModelConfig{}, 9).predictor;
  const auto agnostic = baseline_user_agnostic(f.set, ModelConfig{}, 9).predictor;
  CHECK(grace.classifier().dims() == std::vector<int>{8, 16, 16, 1});
  CHECK(gt.classifier().input_dim() == 8);
  CHECK(agnostic.classifier().input_dim() == 4);

  const auto& users = f.set.users;
  SUBCASE("user-agnostic ignores the user") {
    const auto a = agnostic.probabilities(users[0], f.set.points);
    CHECK(a == agnostic.probabilities(users[20], f.set.points));
  }
  SUBCASE("personalization") {
    bool differs = false;
    for (std::size_t u = 1; u < users.size() && !differs; ++u)
      differs = grace.probabilities(users[0], f.set.points) != grace.probabilities(users[u], f.set.points);
    CHECK(differs);
  }
  SUBCASE("gt-condition one-hot and unseen condition") {
    const auto feat = gt.user_features(users[0]);
    CHECK(feat.size() == 4);
    CHECK(feat.sum() == 1.0);
    CHECK(feat[users[0].condition_id - 1] == 1.0);

    TrainingSet only12 = f.set;
    only12.users.clear();
    only12.labels.clear();
    for (std::size_t u = 0; u < f.set.users.size(); ++u)
      if (f.set.users[u].condition_id <= 2) {
        only12.users.push_back(f.set.users[u]);
        only12.labels.push_back(f.set.labels[u]);
      }
    const auto partial = baseline_gt_condition(only12, ModelConfig{}, 2).predictor;
    UserProfile stranger = users[0];
    stranger.condition_id = 3;
    CaptureWarnings w;
    CHECK(partial.user_features(stranger).isZero(0.0));
    CHECK(w.contains("UnknownCondition"));
  }
  SUBCASE("condition 1 centroid is reachable") {
    Vector4<double> centroid = Vector4<double>::Zero();
    std::size_t n = 0;
    for (const auto& u : f.data.users)
      for (const auto& q : u.from_samples) {
        centroid += q.vector();
        ++n;
      }
    centroid /= static_cast<double>(n);
    for (const auto& u : users)
      if (u.condition_id == 1) {
        bool inside_all = true;
        for (const auto& rec : f.data.users) inside_all = inside_all && rec.truth.contains(centroid);
        if (inside_all) CHECK(gt.predict(u, kin::JointConfig(centroid)).is_reachable);
      }
  }
  SUBCASE("raising the threshold never enlarges the reachable set") {
    const auto p = grace.probabilities(users[5], f.set.points);
    double prev_count = static_cast<double>(p.size()) + 1;
    for (double tau : {0.1, 0.3, 0.5, 0.7, 0.9, 0.95, 0.99}) {
      const auto strict = grace.with_threshold(tau);
      double count = 0;
      for (Eigen::Index k = 0; k < p.size(); ++k) {
        const auto q = kin::JointConfig(Vector4<double>(f.set.points.col(k)));
        const bool r = strict.predict(users[5], q).is_reachable;
        if (r) CHECK(grace.with_threshold(std::max(0.05, tau - 0.05)).predict(users[5], q).is_reachable);
        count += r;
      }
      CHECK(count <= prev_count);
      prev_count = count;
    }
  }
}

TEST_CASE("threshold semantics") {
  const data::ScoreVector scores{};
  const kin::JointConfig q(0.1, 0.2, 0.3, 0.4);
  const auto cons = predict_from(constant_predictor(0.9, 0.95), scores, q);
  CHECK(cons.probability == doctest::Approx(0.9).epsilon(1e-12));
  CHECK_FALSE(cons.is_reachable);
  const auto opt = predict_from(constant_predictor(0.9, 0.5), scores, q);
  CHECK(opt.is_reachable);
  CHECK(predict_from(constant_predictor(0.9, 0.5), scores, q).probability == opt.probability);
  CHECK_THROWS_AS(constant_predictor(0.9, 1.0), std::invalid_argument);
}

TEST_CASE("bundle round trip and architecture checks") {
  const auto& f = fixture();
  const auto trained = train_grace(f.set, ModelConfig{}, 5);
  const auto dir = fs::temp_directory_path() / "grace_model_bundle";
  fs::remove_all(dir);
  BundleInfo info;
  info.method = Method::grace;
  for (const auto& u : f.set.users) info.training_users.push_back(u.key);
  info.dataset_hash = "abc";
  info.seed = 5;
  save_bundle(dir, trained.predictor, trained.autoencoder->decoder, info);
  for (const char* file : {"encoder.json", "decoder.json", "classifier.json", "config.json", "bundle.json"})
    CHECK(fs::exists(dir / file));
  const auto back = load_bundle(dir);
  CHECK(back.info.training_users == info.training_users);
  CHECK(back.info.seed == 5);
  CHECK(back.info.dataset_hash == "abc");
  CHECK(back.predictor.probabilities(f.set.users[2], f.set.points) ==
        trained.predictor.probabilities(f.set.users[2], f.set.points));

  // A classifier of the wrong shape is rejected at load.
  const int dims[] = {8, 12, 1};
  const nn::Activation acts[] = {nn::Activation::relu, nn::Activation::sigmoid};
  const auto wrong = nn::Mlp<double>::glorot(dims, acts, 1);
  std::ofstream(dir / "classifier.json") << nn::to_json(wrong).dump();
  CHECK_THROWS_AS(load_bundle(dir), FormatError);
  CHECK_THROWS_AS(load_bundle(dir / "missing"), IoError);
}
