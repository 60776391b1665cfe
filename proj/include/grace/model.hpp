#pragma once

// Functional-score autoencoder, feasibility classifier over [z; theta], and
// the two comparison baselines (ground-truth condition, user-agnostic).

#include "grace/datagen.hpp"
#include "grace/nn.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace grace::model {

using data::ScoreVector;
using data::UserKey;
using kin::JointConfig;

inline constexpr int kLatentDim = 4;
inline constexpr int kNumConditions = 4;

struct AutoencoderConfig {
  int hidden = 16;
  double learning_rate = 1e-3;
  int epochs = 500;
  double contrastive_weight = 0.5;
  double margin = 1.0;
};

struct ClassifierConfig {
  int hidden = 16;
  double learning_rate = 5e-4;
  int batch_size = 4096;
  int epochs = 10;
};

struct ModelConfig {
  AutoencoderConfig autoencoder;
  ClassifierConfig classifier;
  double tau_optimistic = 0.5;
  double tau_conservative = 0.95;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// What a predictor may know about a user at test time.
struct UserProfile {
  UserKey key;
  ScoreVector scores;
  int condition_id = 0;
};

UserProfile profile_of(const data::UserRecord& record);

struct Encoder {
  nn::Mlp<double> net;  // 6 -> 16 -> 4

  Vector<double> embed(const ScoreVector& scores) const;
  Matrix<double> embed(std::span<const UserProfile> users) const;  // k x n
};

struct Decoder {
  nn::Mlp<double> net;  // 4 -> 16 -> 6
};

struct AutoencoderLog {
  std::vector<double> mse;
  std::vector<double> contrastive;
  bool contrastive_active = true;
};

struct TrainedAutoencoder {
  Encoder encoder;
  Decoder decoder;
  AutoencoderLog log;
};

// Full-batch Adam on MSE + contrastive_weight * contrastive. With a single
// condition there are no negative pairs: warns and trains on MSE only.
TrainedAutoencoder train_encoder(std::span<const UserProfile> users, const AutoencoderConfig& config,
                                 std::uint64_t seed);

// Labeled training rows: every user is labeled on the same joint points.
struct TrainingSet {
  JointMatrix points;                      // 4 x P
  std::vector<UserProfile> users;
  std::vector<std::vector<std::uint8_t>> labels;  // users.size() x P

  std::size_t rows() const { return users.size() * static_cast<std::size_t>(points.cols()); }
  void validate() const;
};

enum class Method { grace, gt_condition, user_agnostic };

std::string_view to_string(Method m);
Method method_from_string(std::string_view name);  // throws ConfigError

struct ClassifierLog {
  double initial_loss = 0.0;  // first minibatch, before any update
  std::vector<double> epoch_loss;
};

struct PredictResult {
  double probability = 0.0;
  bool is_reachable = false;
};

class Predictor {
public:
  Predictor() = default;
  Predictor(Method method, std::optional<Encoder> encoder, nn::Mlp<double> classifier,
            std::vector<int> known_conditions = {}, double tau = 0.5);

  Method method() const { return method_; }
  double threshold() const { return tau_; }
  Predictor with_threshold(double tau) const;
  const std::optional<Encoder>& encoder() const { return encoder_; }
  const nn::Mlp<double>& classifier() const { return classifier_; }
  const std::vector<int>& known_conditions() const { return known_conditions_; }

  // Per-user conditioning features: z (GRACE), one-hot condition, or empty.
  Vector<double> user_features(const UserProfile& user) const;

  double probability(const UserProfile& user, const JointConfig& q) const;
  Vector<double> probabilities(const UserProfile& user, const JointMatrix& points) const;
  PredictResult predict(const UserProfile& user, const JointConfig& q) const;

private:
  Method method_ = Method::grace;
  std::optional<Encoder> encoder_;
  nn::Mlp<double> classifier_;
  std::vector<int> known_conditions_;
  double tau_ = 0.5;
};

// probability = sigmoid output; is_reachable = probability >= threshold.
PredictResult predict_from(const Predictor& predictor, const ScoreVector& scores, const JointConfig& q);

struct TrainedPredictor {
  Predictor predictor;
  ClassifierLog log;
  std::optional<TrainedAutoencoder> autoencoder;
};

// BCE + Adam over [features(user); theta] rows with the frozen encoder.
nn::Mlp<double> train_feasibility(const TrainingSet& data, const Encoder& encoder,
                                  const ClassifierConfig& config, std::uint64_t seed,
                                  ClassifierLog* log = nullptr);

TrainedPredictor train_grace(const TrainingSet& data, const ModelConfig& config, std::uint64_t seed);
TrainedPredictor baseline_gt_condition(const TrainingSet& data, const ModelConfig& config,
                                       std::uint64_t seed);
TrainedPredictor baseline_user_agnostic(const TrainingSet& data, const ModelConfig& config,
                                        std::uint64_t seed);
TrainedPredictor train_method(Method method, const TrainingSet& data, const ModelConfig& config,
                              std::uint64_t seed);

// Generic classifier trainer over per-user feature columns (f x n_users).
nn::Mlp<double> train_classifier(const TrainingSet& data, const Matrix<double>& user_features,
                                 const ClassifierConfig& config, std::uint64_t seed,
                                 ClassifierLog* log = nullptr);

// Model bundle directory: encoder.json, decoder.json, classifier.json,
// config.json, bundle.json (method, training users, dataset hash, seed).
struct BundleInfo {
  Method method = Method::grace;
  std::vector<UserKey> training_users;
  std::string dataset_hash;
  std::uint64_t seed = 0;
  ModelConfig config;
};

void save_bundle(const std::filesystem::path& dir, const Predictor& predictor,
                 const std::optional<Decoder>& decoder, const BundleInfo& info);

struct LoadedBundle {
  Predictor predictor;
  std::optional<Decoder> decoder;
  BundleInfo info;
};

// Verifies every network against the expected architecture.
LoadedBundle load_bundle(const std::filesystem::path& dir);

}  // namespace grace::model
