#include "grace/model.hpp"

#include "grace/log.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace grace::model {

namespace {

using nn::Activation;

constexpr int kJointDim = 4;
constexpr int kScoreDim = static_cast<int>(ScoreVector::kSize);

nn::Mlp<double> make_classifier(int feature_dim, int hidden, std::uint64_t seed) {
  const std::array<int, 4> dims = {feature_dim + kJointDim, hidden, hidden, 1};
  const std::array<Activation, 3> acts = {Activation::relu, Activation::relu, Activation::sigmoid};
  return nn::Mlp<double>::glorot(dims, acts, seed);
}

int feature_dim(Method m) {
  switch (m) {
    case Method::grace:
      return kLatentDim;
    case Method::gt_condition:
      return kNumConditions;
    case Method::user_agnostic:
      return 0;
  }
  return 0;
}

void check_architecture(const nn::Mlp<double>& net, std::vector<int> expected, const char* what) {
  if (net.dims() != expected) {
    std::ostringstream os;
    os << what << ": architecture mismatch, expected";
    for (int d : expected) os << ' ' << d;
    os << ", got";
    for (int d : net.dims()) os << ' ' << d;
    throw FormatError(os.str());
  }
  Eigen::Index params = 0;
  for (std::size_t l = 0; l + 1 < expected.size(); ++l) params += (expected[l] + 1) * expected[l + 1];
  if (net.parameter_count() != params) throw FormatError(std::string(what) + ": parameter count mismatch");
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

nlohmann::json ModelConfig::to_json() const {
  return {{"autoencoder",
           {{"hidden", autoencoder.hidden},
            {"latent", kLatentDim},
            {"learning_rate", autoencoder.learning_rate},
            {"epochs", autoencoder.epochs},
            {"contrastive_weight", autoencoder.contrastive_weight},
            {"margin", autoencoder.margin}}},
          {"classifier",
           {{"hidden", classifier.hidden},
            {"learning_rate", classifier.learning_rate},
            {"batch_size", classifier.batch_size},
            {"epochs", classifier.epochs}}},
          {"tau_optimistic", tau_optimistic},
          {"tau_conservative", tau_conservative}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    const auto& ae = j.at("autoencoder");
    c.autoencoder.hidden = ae.at("hidden").get<int>();
    c.autoencoder.learning_rate = ae.at("learning_rate").get<double>();
    c.autoencoder.epochs = ae.at("epochs").get<int>();
    c.autoencoder.contrastive_weight = ae.at("contrastive_weight").get<double>();
    c.autoencoder.margin = ae.at("margin").get<double>();
    const auto& cl = j.at("classifier");
    c.classifier.hidden = cl.at("hidden").get<int>();
    c.classifier.learning_rate = cl.at("learning_rate").get<double>();
    c.classifier.batch_size = cl.at("batch_size").get<int>();
    c.classifier.epochs = cl.at("epochs").get<int>();
    c.tau_optimistic = j.at("tau_optimistic").get<double>();
    c.tau_conservative = j.at("tau_conservative").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
  return c;
}

UserProfile profile_of(const data::UserRecord& record) {
  return {record.key(), record.scores, record.condition_id};
}

Vector<double> Encoder::embed(const ScoreVector& scores) const {
  return nn::forward(net, Matrix<double>(scores.vector()));
}

Matrix<double> Encoder::embed(std::span<const UserProfile> users) const {
  Matrix<double> s(kScoreDim, static_cast<Eigen::Index>(users.size()));
  for (std::size_t u = 0; u < users.size(); ++u) s.col(static_cast<Eigen::Index>(u)) = users[u].scores.vector();
  return nn::forward(net, s);
}

TrainedAutoencoder train_encoder(std::span<const UserProfile> users, const AutoencoderConfig& config,
                                 std::uint64_t seed) {
  if (users.empty()) throw EmptyDataset("train_encoder: no users");
  TrainedAutoencoder out;
  const std::array<int, 3> enc_dims = {kScoreDim, config.hidden, kLatentDim};
  const std::array<int, 3> dec_dims = {kLatentDim, config.hidden, kScoreDim};
  const std::array<Activation, 2> enc_acts = {Activation::relu, Activation::linear};
  const std::array<Activation, 2> dec_acts = {Activation::relu, Activation::sigmoid};
  auto encoder = nn::Mlp<double>::glorot(enc_dims, enc_acts, derive_seed(seed, 10));
  auto decoder = nn::Mlp<double>::glorot(dec_dims, dec_acts, derive_seed(seed, 11));

  std::vector<int> conditions;
  Matrix<double> scores(kScoreDim, static_cast<Eigen::Index>(users.size()));
  for (std::size_t u = 0; u < users.size(); ++u) {
    scores.col(static_cast<Eigen::Index>(u)) = users[u].scores.vector();
    conditions.push_back(users[u].condition_id);
  }
  const bool contrastive = std::set<int>(conditions.begin(), conditions.end()).size() >= 2;
  out.log.contrastive_active = contrastive;
  if (!contrastive) warn("ContrastiveUndefined: a single condition has no negative pairs; training with MSE only");
  const double weight = contrastive ? config.contrastive_weight : 0.0;

  auto enc_state = nn::AdamState<double>::for_model(encoder, config.learning_rate);
  auto dec_state = nn::AdamState<double>::for_model(decoder, config.learning_rate);
  nn::ForwardCache<double> enc_cache, dec_cache;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const Matrix<double>& z = nn::forward(encoder, scores, enc_cache);
    const Matrix<double>& recon = nn::forward(decoder, z, dec_cache);
    const auto mse = nn::mse_loss(recon, scores);
    const auto con = nn::contrastive_loss<double>(z, conditions, config.margin);
    out.log.mse.push_back(mse.loss);
    out.log.contrastive.push_back(con.loss);

    const auto dec_grad = nn::backward(decoder, dec_cache, mse.grad);
    Matrix<double> dz = dec_grad.input;
    if (weight > 0.0) dz += weight * con.grad;
    const auto enc_grad = nn::backward(encoder, enc_cache, dz);
    nn::adam_step(decoder, dec_grad, dec_state);
    nn::adam_step(encoder, enc_grad, enc_state);
  }
  out.encoder.net = std::move(encoder);
  out.decoder.net = std::move(decoder);
  return out;
}

void TrainingSet::validate() const {
  if (users.empty()) throw EmptyDataset("training set: no users");
  if (points.cols() == 0) throw EmptyDataset("training set: no joint points");
  if (labels.size() != users.size()) throw ShapeMismatch("training set: one label row per user required");
  for (const auto& l : labels)
    if (static_cast<Eigen::Index>(l.size()) != points.cols())
      throw ShapeMismatch("training set: label row length differs from point count");
}

std::string_view to_string(Method m) {
  switch (m) {
    case Method::grace:
      return "grace";
    case Method::gt_condition:
      return "gt-condition";
    case Method::user_agnostic:
      return "user-agnostic";
  }
  return "grace";
}

Method method_from_string(std::string_view name) {
  if (name == "grace") return Method::grace;
  if (name == "gt-condition") return Method::gt_condition;
  if (name == "user-agnostic") return Method::user_agnostic;
  throw ConfigError("unknown method '" + std::string(name) +
                    "' (valid: grace, gt-condition, user-agnostic)");
}

Predictor::Predictor(Method method, std::optional<Encoder> encoder, nn::Mlp<double> classifier,
                     std::vector<int> known_conditions, double tau)
    : method_(method),
      encoder_(std::move(encoder)),
      classifier_(std::move(classifier)),
      known_conditions_(std::move(known_conditions)),
      tau_(tau) {
  if (method_ == Method::grace && !encoder_) throw std::invalid_argument("GRACE predictor needs an encoder");
  if (classifier_.input_dim() != feature_dim(method_) + kJointDim)
    throw ShapeMismatch("predictor: classifier input width does not match method");
  if (!(tau_ > 0.0 && tau_ < 1.0)) throw std::invalid_argument("predictor: threshold must be in (0, 1)");
}

Predictor Predictor::with_threshold(double tau) const {
  Predictor p = *this;
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("predictor: threshold must be in (0, 1)");
  p.tau_ = tau;
  return p;
}

Vector<double> Predictor::user_features(const UserProfile& user) const {
  switch (method_) {
    case Method::grace:
      return encoder_->embed(user.scores);
    case Method::gt_condition: {
      Vector<double> f = Vector<double>::Zero(kNumConditions);
      const bool known = std::find(known_conditions_.begin(), known_conditions_.end(), user.condition_id) !=
                         known_conditions_.end();
      if (!known || user.condition_id < 1 || user.condition_id > kNumConditions) {
        warn("UnknownCondition: condition " + std::to_string(user.condition_id) +
             " was not seen in training; using the all-zero encoding");
        return f;
      }
      f[user.condition_id - 1] = 1.0;
      return f;
    }
    case Method::user_agnostic:
      break;
  }
  return Vector<double>(0);
}

Vector<double> Predictor::probabilities(const UserProfile& user, const JointMatrix& points) const {
  const Vector<double> f = user_features(user);
  Matrix<double> x(f.size() + kJointDim, points.cols());
  if (f.size() > 0) x.topRows(f.size()) = f.replicate(1, points.cols());
  x.bottomRows(kJointDim) = points;
  return nn::forward(classifier_, x).row(0).transpose();
}

double Predictor::probability(const UserProfile& user, const JointConfig& q) const {
  JointMatrix p(4, 1);
  p.col(0) = q.vector();
  return probabilities(user, p)[0];
}

PredictResult Predictor::predict(const UserProfile& user, const JointConfig& q) const {
  const double p = probability(user, q);
  return {p, p >= tau_};
}

PredictResult predict_from(const Predictor& predictor, const ScoreVector& scores, const JointConfig& q) {
  UserProfile user;
  user.scores = scores;
  return predictor.predict(user, q);
}

nn::Mlp<double> train_classifier(const TrainingSet& data, const Matrix<double>& user_features,
                                 const ClassifierConfig& config, std::uint64_t seed, ClassifierLog* log) {
  data.validate();
  if (config.batch_size < 1 || config.epochs < 0 || !(config.learning_rate > 0.0))
    throw ConfigError("classifier: batch_size, epochs and learning_rate must be positive");
  const auto fdim = static_cast<int>(user_features.rows());
  const Eigen::Index n_points = data.points.cols();
  const std::size_t n_rows = data.rows();

  // Training runs in single precision; the returned weights are widened.
  auto net = make_classifier(fdim, config.hidden, derive_seed(seed, 20)).cast<float>();
  auto state = nn::AdamState<float>::for_model(net, static_cast<float>(config.learning_rate));
  const Matrix<float> feats = user_features.cast<float>();
  const Matrix<float> points = data.points.cast<float>();

  std::vector<std::uint32_t> order(n_rows);
  std::iota(order.begin(), order.end(), 0u);
  Rng rng(derive_seed(seed, 21));
  nn::ForwardCache<float> cache;
  Matrix<float> x, y;
  bool first = true;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = n_rows; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n_rows; start += static_cast<std::size_t>(config.batch_size)) {
      const auto b = static_cast<Eigen::Index>(std::min<std::size_t>(config.batch_size, n_rows - start));
      x.resize(fdim + kJointDim, b);
      y.resize(1, b);
      for (Eigen::Index k = 0; k < b; ++k) {
        const std::uint32_t r = order[start + static_cast<std::size_t>(k)];
        const auto u = static_cast<Eigen::Index>(r / static_cast<std::uint32_t>(n_points));
        const auto p = static_cast<Eigen::Index>(r % static_cast<std::uint32_t>(n_points));
        if (fdim > 0) x.col(k).head(fdim) = feats.col(u);
        x.col(k).tail(kJointDim) = points.col(p);
        y(0, k) = static_cast<float>(data.labels[static_cast<std::size_t>(u)][static_cast<std::size_t>(p)]);
      }
      nn::forward(net, x, cache);
      const auto loss = nn::bce_with_logits<float>(cache.pre.back(), y);
      if (first && log) log->initial_loss = loss.loss;
      first = false;
      loss_sum += loss.loss;
      ++batches;
      nn::adam_step(net, nn::backward_from_logits(net, cache, loss.grad), state);
    }
    if (log) log->epoch_loss.push_back(batches ? loss_sum / static_cast<double>(batches) : 0.0);
  }
  return net.cast<double>();
}

nn::Mlp<double> train_feasibility(const TrainingSet& data, const Encoder& encoder,
                                  const ClassifierConfig& config, std::uint64_t seed, ClassifierLog* log) {
  return train_classifier(data, encoder.embed(data.users), config, seed, log);
}

namespace {
std::vector<int> conditions_of(const TrainingSet& data) {
  std::set<int> s;
  for (const auto& u : data.users) s.insert(u.condition_id);
  return {s.begin(), s.end()};
}
}  // namespace

TrainedPredictor train_grace(const TrainingSet& data, const ModelConfig& config, std::uint64_t seed) {
  data.validate();
  TrainedPredictor out;
  out.autoencoder = train_encoder(data.users, config.autoencoder, derive_seed(seed, 1));
  auto clf = train_feasibility(data, out.autoencoder->encoder, config.classifier, derive_seed(seed, 2), &out.log);
  out.predictor = Predictor(Method::grace, out.autoencoder->encoder, std::move(clf), conditions_of(data),
                            config.tau_optimistic);
  return out;
}

TrainedPredictor baseline_gt_condition(const TrainingSet& data, const ModelConfig& config,
                                       std::uint64_t seed) {
  data.validate();
  Matrix<double> feats = Matrix<double>::Zero(kNumConditions, static_cast<Eigen::Index>(data.users.size()));
  for (std::size_t u = 0; u < data.users.size(); ++u) {
    const int c = data.users[u].condition_id;
    if (c < 1 || c > kNumConditions) throw ConfigError("gt-condition: condition id out of range");
    feats(c - 1, static_cast<Eigen::Index>(u)) = 1.0;
  }
  TrainedPredictor out;
  auto clf = train_classifier(data, feats, config.classifier, derive_seed(seed, 2), &out.log);
  out.predictor = Predictor(Method::gt_condition, std::nullopt, std::move(clf), conditions_of(data),
                            config.tau_optimistic);
  return out;
}

TrainedPredictor baseline_user_agnostic(const TrainingSet& data, const ModelConfig& config,
                                        std::uint64_t seed) {
  data.validate();
  TrainedPredictor out;
  const Matrix<double> feats(0, static_cast<Eigen::Index>(data.users.size()));
  auto clf = train_classifier(data, feats, config.classifier, derive_seed(seed, 2), &out.log);
  out.predictor = Predictor(Method::user_agnostic, std::nullopt, std::move(clf), conditions_of(data),
                            config.tau_optimistic);
  return out;
}

TrainedPredictor train_method(Method method, const TrainingSet& data, const ModelConfig& config,
                              std::uint64_t seed) {
  switch (method) {
    case Method::grace:
      return train_grace(data, config, seed);
    case Method::gt_condition:
      return baseline_gt_condition(data, config, seed);
    case Method::user_agnostic:
      return baseline_user_agnostic(data, config, seed);
  }
  throw ConfigError("unknown method");
}

void save_bundle(const std::filesystem::path& dir, const Predictor& predictor,
                 const std::optional<Decoder>& decoder, const BundleInfo& info) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  if (predictor.encoder()) write_json(dir / "encoder.json", nn::to_json(predictor.encoder()->net));
  if (decoder) write_json(dir / "decoder.json", nn::to_json(decoder->net));
  write_json(dir / "classifier.json", nn::to_json(predictor.classifier()));
  write_json(dir / "config.json", info.config.to_json());
  std::vector<std::string> users;
  for (const auto& k : info.training_users) users.push_back(k.str());
  write_json(dir / "bundle.json", {{"method", to_string(info.method)},
                                   {"training_users", users},
                                   {"known_conditions", predictor.known_conditions()},
                                   {"dataset_hash", info.dataset_hash},
                                   {"seed", info.seed}});
}

LoadedBundle load_bundle(const std::filesystem::path& dir) {
  LoadedBundle out;
  const auto meta = read_json(dir / "bundle.json");
  std::vector<int> known;
  try {
    out.info.method = method_from_string(meta.at("method").get<std::string>());
    for (const auto& s : meta.at("training_users").get<std::vector<std::string>>())
      out.info.training_users.push_back(UserKey::parse(s));
    known = meta.at("known_conditions").get<std::vector<int>>();
    out.info.dataset_hash = meta.at("dataset_hash").get<std::string>();
    out.info.seed = meta.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError((dir / "bundle.json").string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError((dir / "bundle.json").string() + ": " + e.what());
  }
  out.info.config = ModelConfig::from_json(read_json(dir / "config.json"));
  const auto& cfg = out.info.config;

  std::optional<Encoder> encoder;
  if (out.info.method == Method::grace) {
    Encoder e{nn::mlp_from_json(read_json(dir / "encoder.json"))};
    check_architecture(e.net, {kScoreDim, cfg.autoencoder.hidden, kLatentDim}, "encoder.json");
    encoder = std::move(e);
    if (std::filesystem::exists(dir / "decoder.json")) {
      Decoder d{nn::mlp_from_json(read_json(dir / "decoder.json"))};
      check_architecture(d.net, {kLatentDim, cfg.autoencoder.hidden, kScoreDim}, "decoder.json");
      out.decoder = std::move(d);
    }
  }
  auto clf = nn::mlp_from_json(read_json(dir / "classifier.json"));
  const int h = cfg.classifier.hidden;
  check_architecture(clf, {feature_dim(out.info.method) + kJointDim, h, h, 1}, "classifier.json");
  out.predictor = Predictor(out.info.method, std::move(encoder), std::move(clf), std::move(known),
                            cfg.tau_optimistic);
  return out;
}

}  // namespace grace::model
