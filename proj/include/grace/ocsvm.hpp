#pragma once

// One-class SVM with an RBF kernel. The dual
//   min 1/2 a^T Q a   s.t.  0 <= a_i <= 1/(nu l),  sum a_i = 1
// is solved by pairwise SMO with maximal-violating-pair selection.

#include "grace/kinematics.hpp"

#include <json.hpp>

#include <functional>
#include <span>
#include <vector>

namespace grace::ocsvm {

using kin::JointConfig;

template <typename Derived1, typename Derived2>
double rbf_kernel(const Eigen::MatrixBase<Derived1>& a, const Eigen::MatrixBase<Derived2>& b,
                  double gamma) {
  return std::exp(-gamma * (a - b).squaredNorm());
}

struct FitParams {
  double gamma = 0.0003;
  double nu = 0.01;
  // Gradient spread across the Gram matrix is ~1e-3 at gamma = 3e-4 on radians,
  // so the stopping gap has to sit well below it for the nu-bound to hold.
  double tolerance = 1e-8;
  long max_iterations = 100000;
  std::size_t min_samples = 10;
  // Training sets up to this size use a full Gram matrix, larger ones an LRU row cache.
  std::size_t full_gram_limit = 4000;
  std::size_t row_cache_rows = 512;
  bool record_objective = false;
};

struct FromModel {
  JointMatrix support_vectors;  // 4 x n_sv
  Vector<double> alphas;
  double rho = 0.0;
  double gamma = 0.0003;

  // sum_i alpha_i K(sv_i, q) - rho; members satisfy decision >= 0.
  double decision(const Vector4<double>& q) const;
  double decision(const JointConfig& q) const { return decision(q.vector()); }
  Vector<double> decision(const JointMatrix& points) const;
  bool contains(const JointConfig& q) const { return decision(q) >= 0.0; }

  nlohmann::json to_json() const;
  static FromModel from_json(const nlohmann::json& j);
};

struct FitResult {
  FromModel model;
  Vector<double> all_alphas;      // one per training point
  Vector<double> training_decision;
  double objective = 0.0;         // 1/2 a^T Q a at the returned iterate
  double kkt_residual = 0.0;      // max violating-pair gap
  long iterations = 0;
  bool converged = false;
  std::vector<double> objective_trace;  // filled when FitParams::record_objective
};

// Throws TooFewSamples when fewer than params.min_samples points are given
// and std::invalid_argument on a bad gamma or nu. A run that hits the
// iteration cap returns converged == false with the best iterate.
FitResult fit(const JointMatrix& samples, const FitParams& params = {});
FitResult fit(std::span<const JointConfig> samples, const FitParams& params = {});

// Same problem on an arbitrary symmetric PSD Q; used by fit().
struct DualSolution {
  Vector<double> alphas;
  Vector<double> gradient;  // Q a
  double rho = 0.0;
  double objective = 0.0;
  double kkt_residual = 0.0;
  long iterations = 0;
  bool converged = false;
  std::vector<double> objective_trace;
};

class KernelRows {
public:
  virtual ~KernelRows() = default;
  virtual Eigen::Index size() const = 0;
  virtual const double* row(Eigen::Index i) = 0;
  virtual double diagonal(Eigen::Index i) const = 0;
};

DualSolution solve_dual(KernelRows& q, double upper_bound, const FitParams& params);

using Membership = std::function<bool(const JointConfig&)>;

// theta -> decision(theta) >= 0 over a model fitted to the samples.
Membership complete_from(std::span<const JointConfig> samples, const FitParams& params = {});

}  // namespace grace::ocsvm
