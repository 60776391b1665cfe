#include "grace/ocsvm.hpp"

#include <algorithm>
#include <list>
#include <memory>
#include <unordered_map>

namespace grace::ocsvm {

namespace {

class FullGram final : public KernelRows {
public:
  FullGram(const JointMatrix& x, double gamma) : gram_(x.cols(), x.cols()) {
    const Eigen::Index n = x.cols();
    for (Eigen::Index j = 0; j < n; ++j) {
      gram_(j, j) = 1.0;
      for (Eigen::Index i = j + 1; i < n; ++i) {
        const double k = rbf_kernel(x.col(i), x.col(j), gamma);
        gram_(i, j) = k;
        gram_(j, i) = k;
      }
    }
  }
  Eigen::Index size() const override { return gram_.cols(); }
  const double* row(Eigen::Index i) override { return gram_.col(i).data(); }
  double diagonal(Eigen::Index i) const override { return gram_(i, i); }

private:
  Matrix<double> gram_;
};

class CachedRows final : public KernelRows {
public:
  CachedRows(const JointMatrix& x, double gamma, std::size_t capacity)
      : x_(x), gamma_(gamma), capacity_(std::max<std::size_t>(capacity, 2)) {}

  Eigen::Index size() const override { return x_.cols(); }
  double diagonal(Eigen::Index) const override { return 1.0; }

  const double* row(Eigen::Index i) override {
    if (auto it = index_.find(i); it != index_.end()) {
      lru_.splice(lru_.begin(), lru_, it->second);
      return it->second->values.data();
    }
    if (lru_.size() >= capacity_) {
      index_.erase(lru_.back().index);
      lru_.pop_back();
    }
    Entry e{i, Vector<double>(x_.cols())};
    for (Eigen::Index j = 0; j < x_.cols(); ++j) e.values[j] = rbf_kernel(x_.col(i), x_.col(j), gamma_);
    e.values[i] = 1.0;
    lru_.push_front(std::move(e));
    index_[i] = lru_.begin();
    return lru_.front().values.data();
  }

private:
  struct Entry {
    Eigen::Index index;
    Vector<double> values;
  };
  const JointMatrix& x_;
  double gamma_;
  std::size_t capacity_;
  std::list<Entry> lru_;
  std::unordered_map<Eigen::Index, std::list<Entry>::iterator> index_;
};

double median(std::vector<double> v) {
  const auto mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  if (v.size() % 2 == 1) return v[mid];
  const double hi = v[mid];
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid) - 1, v.end());
  return 0.5 * (hi + v[mid - 1]);
}

constexpr double kAlphaEps = 1e-9;

}  // namespace

DualSolution solve_dual(KernelRows& q, double upper_bound, const FitParams& params) {
  const Eigen::Index n = q.size();
  const double c = upper_bound;
  DualSolution sol;
  sol.alphas = Vector<double>::Zero(n);

  // Feasible start: fill the first floor(1/c) coordinates to the bound.
  double remaining = 1.0;
  for (Eigen::Index i = 0; i < n && remaining > 0.0; ++i) {
    const double a = std::min(c, remaining);
    sol.alphas[i] = a;
    remaining -= a;
  }

  sol.gradient = Vector<double>::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (sol.alphas[i] == 0.0) continue;
    const double* qi = q.row(i);
    sol.gradient += sol.alphas[i] * Eigen::Map<const Vector<double>>(qi, n);
  }
  sol.objective = 0.5 * sol.alphas.dot(sol.gradient);
  if (params.record_objective) sol.objective_trace.push_back(sol.objective);

  auto& alpha = sol.alphas;
  auto& grad = sol.gradient;
  long iter = 0;
  for (;; ++iter) {
    // i: smallest gradient among coordinates that may increase,
    // j: largest gradient among coordinates that may decrease.
    Eigen::Index up = -1, low = -1;
    double g_up = std::numeric_limits<double>::infinity();
    double g_low = -std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < n; ++t) {
      if (alpha[t] < c && grad[t] < g_up) {
        g_up = grad[t];
        up = t;
      }
      if (alpha[t] > 0.0 && grad[t] > g_low) {
        g_low = grad[t];
        low = t;
      }
    }
    sol.kkt_residual = (up < 0 || low < 0) ? 0.0 : std::max(0.0, g_low - g_up);
    if (sol.kkt_residual < params.tolerance) {
      sol.converged = true;
      break;
    }
    if (iter >= params.max_iterations) break;

    const double* q_up = q.row(up);
    const double k_ul = q_up[low];
    const double* q_low = q.row(low);
    double curvature = q.diagonal(up) + q.diagonal(low) - 2.0 * k_ul;
    if (curvature <= 1e-12) curvature = 1e-12;
    double delta = (g_low - g_up) / curvature;
    delta = std::min({delta, c - alpha[up], alpha[low]});

    alpha[up] += delta;
    alpha[low] -= delta;
    if (c - alpha[up] < 1e-15) alpha[up] = c;
    if (alpha[low] < 1e-15) alpha[low] = 0.0;

    const Eigen::Map<const Vector<double>> row_up(q_up, n), row_low(q_low, n);
    grad += delta * (row_up - row_low);
    sol.objective += delta * (g_up - g_low) + 0.5 * delta * delta * curvature;
    if (params.record_objective) sol.objective_trace.push_back(sol.objective);
  }
  sol.iterations = iter;

  // Exact objective at the returned iterate.
  sol.objective = 0.5 * alpha.dot(grad);

  double free_sum = 0.0;
  long free_count = 0;
  double ub_low = -std::numeric_limits<double>::infinity();  // max gradient at the upper bound
  double lb_up = std::numeric_limits<double>::infinity();    // min gradient at zero
  for (Eigen::Index t = 0; t < n; ++t) {
    if (alpha[t] > kAlphaEps && alpha[t] < c - kAlphaEps) {
      free_sum += grad[t];
      ++free_count;
    } else if (alpha[t] >= c - kAlphaEps) {
      ub_low = std::max(ub_low, grad[t]);
    } else {
      lb_up = std::min(lb_up, grad[t]);
    }
  }
  if (free_count > 0) {
    sol.rho = free_sum / static_cast<double>(free_count);
  } else {
    // No margin vector: any rho between the bounded extremes satisfies KKT;
    // take the median of the two.
    std::vector<double> ends;
    if (std::isfinite(ub_low)) ends.push_back(ub_low);
    if (std::isfinite(lb_up)) ends.push_back(lb_up);
    sol.rho = ends.empty() ? 0.0 : median(ends);
  }
  return sol;
}

FitResult fit(const JointMatrix& samples, const FitParams& params) {
  const auto n = static_cast<std::size_t>(samples.cols());
  if (n == 0 || n < params.min_samples)
    throw TooFewSamples("one-class SVM needs at least " + std::to_string(params.min_samples) +
                        " samples, got " + std::to_string(n));
  if (!(params.gamma > 0.0)) throw std::invalid_argument("one-class SVM: gamma must be > 0");
  if (!(params.nu > 0.0 && params.nu <= 1.0))
    throw std::invalid_argument("one-class SVM: nu must be in (0, 1]");

  const double upper = 1.0 / (params.nu * static_cast<double>(n));
  std::unique_ptr<KernelRows> rows;
  if (n <= params.full_gram_limit)
    rows = std::make_unique<FullGram>(samples, params.gamma);
  else
    rows = std::make_unique<CachedRows>(samples, params.gamma, params.row_cache_rows);

  DualSolution sol = solve_dual(*rows, upper, params);

  FitResult out;
  out.objective = sol.objective;
  out.kkt_residual = sol.kkt_residual;
  out.iterations = sol.iterations;
  out.converged = sol.converged;
  out.objective_trace = std::move(sol.objective_trace);
  out.all_alphas = sol.alphas;
  out.training_decision = sol.gradient.array() - sol.rho;

  std::vector<Eigen::Index> sv;
  for (Eigen::Index i = 0; i < sol.alphas.size(); ++i)
    if (sol.alphas[i] > kAlphaEps) sv.push_back(i);
  out.model.gamma = params.gamma;
  out.model.rho = sol.rho;
  out.model.support_vectors.resize(4, static_cast<Eigen::Index>(sv.size()));
  out.model.alphas.resize(static_cast<Eigen::Index>(sv.size()));
  for (std::size_t k = 0; k < sv.size(); ++k) {
    out.model.support_vectors.col(static_cast<Eigen::Index>(k)) = samples.col(sv[k]);
    out.model.alphas[static_cast<Eigen::Index>(k)] = sol.alphas[sv[k]];
  }
  return out;
}

FitResult fit(std::span<const JointConfig> samples, const FitParams& params) {
  JointMatrix m(4, static_cast<Eigen::Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = samples[i].vector();
  return fit(m, params);
}

double FromModel::decision(const Vector4<double>& q) const {
  double s = 0.0;
  for (Eigen::Index i = 0; i < support_vectors.cols(); ++i)
    s += alphas[i] * rbf_kernel(support_vectors.col(i), q, gamma);
  return s - rho;
}

Vector<double> FromModel::decision(const JointMatrix& points) const {
  Vector<double> out(points.cols());
  for (Eigen::Index p = 0; p < points.cols(); ++p) out[p] = decision(Vector4<double>(points.col(p)));
  return out;
}

nlohmann::json FromModel::to_json() const {
  nlohmann::json sv = nlohmann::json::array();
  for (Eigen::Index i = 0; i < support_vectors.cols(); ++i)
    sv.push_back({support_vectors(0, i), support_vectors(1, i), support_vectors(2, i),
                  support_vectors(3, i)});
  return {{"kernel", "rbf"},
          {"gamma", gamma},
          {"rho", rho},
          {"alphas", std::vector<double>(alphas.data(), alphas.data() + alphas.size())},
          {"support_vectors", sv}};
}

FromModel FromModel::from_json(const nlohmann::json& j) {
  FromModel m;
  try {
    m.gamma = j.at("gamma").get<double>();
    m.rho = j.at("rho").get<double>();
    const auto alphas = j.at("alphas").get<std::vector<double>>();
    const auto& sv = j.at("support_vectors");
    if (sv.size() != alphas.size()) throw FormatError("one-class SVM model: alphas/support_vectors size mismatch");
    m.alphas = Eigen::Map<const Vector<double>>(alphas.data(), static_cast<Eigen::Index>(alphas.size()));
    m.support_vectors.resize(4, static_cast<Eigen::Index>(sv.size()));
    for (std::size_t i = 0; i < sv.size(); ++i) {
      const auto v = sv[i].get<std::vector<double>>();
      if (v.size() != 4) throw FormatError("one-class SVM model: support vector must have 4 entries");
      for (int k = 0; k < 4; ++k) m.support_vectors(k, static_cast<Eigen::Index>(i)) = v[static_cast<std::size_t>(k)];
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("one-class SVM model: ") + e.what());
  }
  return m;
}

Membership complete_from(std::span<const JointConfig> samples, const FitParams& params) {
  auto model = std::make_shared<const FromModel>(fit(samples, params).model);
  return [model](const JointConfig& q) { return model->contains(q); };
}

}  // namespace grace::ocsvm
