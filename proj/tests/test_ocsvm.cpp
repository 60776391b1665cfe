#include "grace/datagen.hpp"
#include "grace/ocsvm.hpp"

#include <doctest.h>

using namespace grace;
using namespace grace::ocsvm;

namespace {

JointMatrix cluster(Rng& rng, Eigen::Index n, const Vector4<double>& center, double spread) {
  JointMatrix m(4, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index d = 0; d < 4; ++d) m(d, i) = center[d] + spread * rng.normal();
  return m;
}

// Naive double loop, no symmetry, no caching.
double naive_objective(const JointMatrix& x, const Vector<double>& a, double gamma) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < x.cols(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) s += a[i] * a[j] * std::exp(-gamma * (x.col(i) - x.col(j)).squaredNorm());
  return 0.5 * s;
}

// Euclidean projection onto {0 <= a <= c, sum a = 1} by bisection on the shift.
Vector<double> project_capped_simplex(const Vector<double>& v, double c) {
  double lo = v.minCoeff() - 1.0, hi = v.maxCoeff();
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double s = (v.array() - mid).max(0.0).min(c).sum();
    (s > 1.0 ? lo : hi) = mid;
  }
  return (v.array() - 0.5 * (lo + hi)).max(0.0).min(c).matrix();
}

// Accelerated projected gradient on the dual, independent of SMO.
double reference_dual(const JointMatrix& x, double gamma, double c) {
  const Eigen::Index n = x.cols();
  Matrix<double> q(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) q(i, j) = std::exp(-gamma * (x.col(i) - x.col(j)).squaredNorm());
  const double step = 1.0 / Eigen::SelfAdjointEigenSolver<Matrix<double>>(q).eigenvalues().maxCoeff();
  Vector<double> a = Vector<double>::Constant(n, 1.0 / static_cast<double>(n)), y = a;
  double t = 1.0;
  for (int it = 0; it < 20000; ++it) {
    const Vector<double> next = project_capped_simplex(y - step * (q * y), c);
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = next + ((t - 1.0) / t_next) * (next - a);
    a = next;
    t = t_next;
  }
  return 0.5 * a.dot(q * a);
}

}  // namespace

TEST_CASE("rbf kernel") {
  const Vector4<double> x(0.1, 0.2, 0.3, 0.4);
  CHECK(rbf_kernel(x, x, 0.7) == 1.0);
  const Vector4<double> y = x + Vector4<double>(1, 0, 0, 0);
  CHECK(rbf_kernel(x, y, 1.0) == doctest::Approx(0.3678794).epsilon(1e-7));
  const Vector4<double> z = x + Vector4<double>(10, 0, 0, 0);
  CHECK(rbf_kernel(x, z, 0.0003) == doctest::Approx(std::exp(-0.03)).epsilon(1e-12));
  CHECK(rbf_kernel(x, z, 0.0003) == doctest::Approx(0.970446).epsilon(1e-6));
}

TEST_CASE("argument checks") {
  CHECK_THROWS_AS(fit(JointMatrix(4, 0)), TooFewSamples);
  CHECK_THROWS_AS(complete_from(std::span<const JointConfig>{}), TooFewSamples);
  Rng rng(1);
  const auto x = cluster(rng, 20, Vector4<double>::Constant(1.0), 0.1);
  FitParams p;
  p.gamma = 0.0;
  CHECK_THROWS_AS(fit(x, p), std::invalid_argument);
  p = {};
  p.nu = 1.5;
  CHECK_THROWS_AS(fit(x, p), std::invalid_argument);
}

TEST_CASE("dual constraints and nu-property on a tight cluster") {
  Rng rng(2);
  const auto x = cluster(rng, 500, Vector4<double>(1.0, 1.0, 1.0, 1.0), 0.2);
  FitParams p;
  p.record_objective = true;
  const auto r = fit(x, p);
  CHECK(r.converged);
  CHECK(r.kkt_residual < 1e-4);
  const double c = 1.0 / (p.nu * 500.0);
  CHECK(r.all_alphas.sum() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(r.all_alphas.minCoeff() >= 0.0);
  CHECK(r.all_alphas.maxCoeff() <= c + 1e-15);
  CHECK(r.model.alphas.size() == (r.all_alphas.array() > 1e-9).count());
  const auto outside = (r.training_decision.array() < 0.0).count();
  CHECK(static_cast<double>(outside) <= 0.01 * 500 + 2);

  for (std::size_t k = 1; k < r.objective_trace.size(); ++k)
    CHECK(r.objective_trace[k] <= r.objective_trace[k - 1] + 1e-15);

  // Margin support vectors sit on the boundary.
  for (Eigen::Index i = 0; i < x.cols(); ++i)
    if (r.all_alphas[i] > 1e-9 && r.all_alphas[i] < c - 1e-9) CHECK(std::abs(r.model.decision(Vector4<double>(x.col(i)))) < 1e-4);

  // Far outside and at the centroid.
  CHECK(r.model.rho > 0.0);
  CHECK(r.model.decision(Vector4<double>(1.0 + 10 * 0.8, 1, 1, 1)) < 0.0);
  const Vector4<double> centroid = x.rowwise().mean();
  double brute = 0.0;
  for (Eigen::Index i = 0; i < x.cols(); ++i) brute += r.all_alphas[i] * std::exp(-p.gamma * (x.col(i) - centroid).squaredNorm());
  CHECK(r.model.decision(centroid) == doctest::Approx(brute - r.model.rho).epsilon(1e-12));
  CHECK(r.model.decision(centroid) > 0.0);
}

TEST_CASE("50-point instances agree with brute-force dual evaluation") {
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const auto x = cluster(rng, 50, Vector4<double>(1, 2, 1, 2), 0.6);
    for (double gamma : {0.0003, 0.5}) {
      FitParams p;
      p.gamma = gamma;
      p.nu = 0.2;
      const auto r = fit(x, p);
      CHECK(r.converged);
      CHECK(std::abs(r.objective - naive_objective(x, r.all_alphas, gamma)) < 1e-10);
      // Independent solver reaches the same optimum.
      CHECK(std::abs(r.objective - reference_dual(x, gamma, 1.0 / (p.nu * 50.0))) < 1e-9);
    }
  }
}

TEST_CASE("duplicating the data leaves the decision function unchanged") {
  Rng rng(4);
  const auto x = cluster(rng, 100, Vector4<double>(1, 1, 1, 1), 0.5);
  JointMatrix twice(4, 200);
  twice << x, x;
  FitParams p;
  p.gamma = 0.5;
  p.nu = 0.1;
  const auto a = fit(x, p).model, b = fit(twice, p).model;
  for (int k = 0; k < 100; ++k) {
    const Vector4<double> probe(1 + rng.normal(), 1 + rng.normal(), 1 + rng.normal(), 1 + rng.normal());
    CHECK(std::abs(a.decision(probe) - b.decision(probe)) < 1e-6);
  }
}

TEST_CASE("two-point toy problem") {
  JointMatrix x(4, 2);
  x << 0, 1, 0, 1, 0, 0, 0, 0;
  FitParams p;
  p.min_samples = 2;
  p.nu = 1.0;
  const auto r = fit(x, p);
  CHECK(r.all_alphas.sum() == doctest::Approx(1.0));
  CHECK(r.model.decision(Vector4<double>(x.col(0))) >= -1e-12);
  CHECK(r.model.decision(Vector4<double>(x.col(1))) >= -1e-12);
}

TEST_CASE("row cache matches the full Gram matrix") {
  Rng rng(5);
  const auto x = cluster(rng, 300, Vector4<double>(1, 1, 1, 1), 0.4);
  FitParams full, cached;
  full.gamma = cached.gamma = 0.3;
  full.nu = cached.nu = 0.05;
  cached.full_gram_limit = 10;
  cached.row_cache_rows = 16;
  const auto a = fit(x, full), b = fit(x, cached);
  CHECK((a.all_alphas - b.all_alphas).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(a.model.rho == doctest::Approx(b.model.rho).epsilon(1e-12));
}

TEST_CASE("iteration cap reports non-convergence") {
  Rng rng(6);
  const auto x = cluster(rng, 200, Vector4<double>(1, 1, 1, 1), 0.4);
  FitParams p;
  p.gamma = 0.5;
  p.max_iterations = 3;
  const auto r = fit(x, p);
  CHECK_FALSE(r.converged);
  CHECK(r.iterations == 3);
  CHECK(r.all_alphas.sum() == doctest::Approx(1.0));
}

TEST_CASE("model json round trip is exact") {
  Rng rng(7);
  const auto r = fit(cluster(rng, 80, Vector4<double>(1, 1, 1, 1), 0.3));
  const auto back = FromModel::from_json(nlohmann::json::parse(r.model.to_json().dump()));
  CHECK(back.rho == r.model.rho);
  CHECK(back.gamma == r.model.gamma);
  CHECK(back.alphas == r.model.alphas);
  CHECK(back.support_vectors == r.model.support_vectors);
  CHECK_THROWS_AS(FromModel::from_json(nlohmann::json::parse(R"({"rho": 1})")), FormatError);
}

TEST_CASE("completion of a synthetic user") {
  data::GeneratorConfig cfg;
  cfg.samples_per_user = 500;
  const auto user = data::sample_user(1, data::make_archetypes()[2], 99, cfg);
  const auto member = complete_from(user.from_samples);
  std::size_t inside = 0;
  for (const auto& q : user.from_samples) inside += member(q);
  CHECK(static_cast<double>(inside) >= 0.99 * 500 - 2);
  CHECK_FALSE(member(kin::JointConfig(6.0, 3.0, 6.0, 6.0)));
}
