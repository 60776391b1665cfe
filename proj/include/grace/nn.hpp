#pragma once

// Small dense feed-forward networks: forward/backward passes, losses and Adam.
// Batches are column-major: one sample per column.

#include "grace/common.hpp"

#include <json.hpp>

#include <span>
#include <string_view>
#include <vector>

namespace grace::nn {

enum class Activation { relu, sigmoid, linear };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view name);

template <typename Scalar>
struct Layer {
  Matrix<Scalar> weight;  // out x in
  Vector<Scalar> bias;    // out
  Activation activation = Activation::linear;
};

template <typename Scalar>
class Mlp {
public:
  Mlp() = default;

  explicit Mlp(std::vector<Layer<Scalar>> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw ShapeMismatch("Mlp: no layers");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& L = layers_[l];
      if (L.bias.size() != L.weight.rows())
        throw ShapeMismatch("Mlp: layer " + std::to_string(l) + " bias/weight mismatch");
      if (l > 0 && L.weight.cols() != layers_[l - 1].weight.rows())
        throw ShapeMismatch("Mlp: layer " + std::to_string(l) + " input width mismatch");
      if (!L.weight.allFinite() || !L.bias.allFinite())
        throw ShapeMismatch("Mlp: layer " + std::to_string(l) + " has non-finite entries");
    }
  }

  // Uniform(+-sqrt(6 / (fan_in + fan_out))) weights, zero biases.
  static Mlp glorot(std::span<const int> dims, std::span<const Activation> activations,
                    std::uint64_t seed) {
    if (dims.size() < 2 || activations.size() + 1 != dims.size())
      throw ShapeMismatch("Mlp::glorot: need one activation per layer");
    Rng rng(seed);
    std::vector<Layer<Scalar>> layers;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      const int fan_in = dims[l], fan_out = dims[l + 1];
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      Layer<Scalar> L;
      L.weight.resize(fan_out, fan_in);
      for (Eigen::Index c = 0; c < L.weight.cols(); ++c)
        for (Eigen::Index r = 0; r < L.weight.rows(); ++r)
          L.weight(r, c) = static_cast<Scalar>(rng.uniform(-limit, limit));
      L.bias = Vector<Scalar>::Zero(fan_out);
      L.activation = activations[l];
      layers.push_back(std::move(L));
    }
    return Mlp(std::move(layers));
  }

  const std::vector<Layer<Scalar>>& layers() const { return layers_; }
  std::vector<Layer<Scalar>>& layers() { return layers_; }
  Eigen::Index input_dim() const { return layers_.front().weight.cols(); }
  Eigen::Index output_dim() const { return layers_.back().weight.rows(); }
  std::vector<int> dims() const {
    std::vector<int> d{static_cast<int>(input_dim())};
    for (const auto& L : layers_) d.push_back(static_cast<int>(L.weight.rows()));
    return d;
  }

  Eigen::Index parameter_count() const {
    Eigen::Index n = 0;
    for (const auto& L : layers_) n += L.weight.size() + L.bias.size();
    return n;
  }

  template <typename Other>
  Mlp<Other> cast() const {
    std::vector<Layer<Other>> out;
    for (const auto& L : layers_)
      out.push_back({L.weight.template cast<Other>(), L.bias.template cast<Other>(), L.activation});
    return Mlp<Other>(std::move(out));
  }

private:
  std::vector<Layer<Scalar>> layers_;
};

template <typename Scalar>
struct ForwardCache {
  std::vector<Matrix<Scalar>> inputs;  // input to each layer
  std::vector<Matrix<Scalar>> pre;     // pre-activation of each layer
  Matrix<Scalar> output;
};

namespace detail {

template <typename Scalar>
void apply_activation(Activation a, Matrix<Scalar>& z) {
  switch (a) {
    case Activation::relu:
      z = z.cwiseMax(Scalar(0));
      break;
    case Activation::sigmoid:
      z = (Scalar(1) + (-z.array()).exp()).inverse().matrix();
      break;
    case Activation::linear:
      break;
  }
}

// dL/dz from dL/da and the post-activation a (and pre-activation z for relu).
template <typename Scalar>
Matrix<Scalar> activation_backward(Activation act, const Matrix<Scalar>& z, const Matrix<Scalar>& a,
                                   const Matrix<Scalar>& grad_a) {
  switch (act) {
    case Activation::relu:
      return (z.array() > Scalar(0)).select(grad_a.array(), Scalar(0)).matrix();
    case Activation::sigmoid:
      return (grad_a.array() * a.array() * (Scalar(1) - a.array())).matrix();
    case Activation::linear:
      break;
  }
  return grad_a;
}

template <typename Scalar>
void check_input(const Mlp<Scalar>& mlp, const Matrix<Scalar>& input) {
  if (input.rows() != mlp.input_dim())
    throw ShapeMismatch("forward: input width " + std::to_string(input.rows()) + " != " +
                        std::to_string(mlp.input_dim()));
}

}  // namespace detail

template <typename Scalar>
Matrix<Scalar> forward(const Mlp<Scalar>& mlp, const Matrix<Scalar>& input) {
  detail::check_input(mlp, input);
  Matrix<Scalar> a = input;
  for (const auto& L : mlp.layers()) {
    Matrix<Scalar> z = L.weight * a;
    z.colwise() += L.bias;
    detail::apply_activation(L.activation, z);
    a = std::move(z);
  }
  return a;
}

template <typename Scalar>
const Matrix<Scalar>& forward(const Mlp<Scalar>& mlp, const Matrix<Scalar>& input,
                              ForwardCache<Scalar>& cache) {
  detail::check_input(mlp, input);
  const std::size_t n = mlp.layers().size();
  cache.inputs.resize(n);
  cache.pre.resize(n);
  cache.inputs[0] = input;
  for (std::size_t l = 0; l < n; ++l) {
    const auto& L = mlp.layers()[l];
    cache.pre[l] = L.weight * cache.inputs[l];
    cache.pre[l].colwise() += L.bias;
    Matrix<Scalar> a = cache.pre[l];
    detail::apply_activation(L.activation, a);
    if (l + 1 < n)
      cache.inputs[l + 1] = std::move(a);
    else
      cache.output = std::move(a);
  }
  return cache.output;
}

template <typename Scalar>
struct Gradients {
  std::vector<Matrix<Scalar>> weight;
  std::vector<Vector<Scalar>> bias;
  Matrix<Scalar> input;  // dL/d(input batch)

  bool all_finite() const {
    for (const auto& w : weight)
      if (!w.allFinite()) return false;
    for (const auto& b : bias)
      if (!b.allFinite()) return false;
    return true;
  }
};

// Reverse pass given dL/d(pre-activation) of the last layer.
template <typename Scalar>
Gradients<Scalar> backward_from_logits(const Mlp<Scalar>& mlp, const ForwardCache<Scalar>& cache,
                                       const Matrix<Scalar>& logit_grad) {
  const std::size_t n = mlp.layers().size();
  if (cache.pre.size() != n || logit_grad.rows() != cache.pre.back().rows() ||
      logit_grad.cols() != cache.pre.back().cols())
    throw ShapeMismatch("backward: gradient does not match forward cache");
  Gradients<Scalar> g;
  g.weight.resize(n);
  g.bias.resize(n);
  Matrix<Scalar> dz = logit_grad;
  for (std::size_t l = n; l-- > 0;) {
    const auto& L = mlp.layers()[l];
    g.weight[l].noalias() = dz * cache.inputs[l].transpose();
    g.bias[l] = dz.rowwise().sum();
    Matrix<Scalar> da = L.weight.transpose() * dz;
    if (l == 0) {
      g.input = std::move(da);
    } else {
      const auto& prev = mlp.layers()[l - 1];
      dz = detail::activation_backward(prev.activation, cache.pre[l - 1], cache.inputs[l], da);
    }
  }
  return g;
}

// Reverse pass given dL/d(output).
template <typename Scalar>
Gradients<Scalar> backward(const Mlp<Scalar>& mlp, const ForwardCache<Scalar>& cache,
                           const Matrix<Scalar>& output_grad) {
  if (cache.pre.empty() || output_grad.rows() != cache.output.rows() ||
      output_grad.cols() != cache.output.cols())
    throw ShapeMismatch("backward: gradient does not match forward output");
  const auto& last = mlp.layers().back();
  return backward_from_logits(
      mlp, cache, detail::activation_backward(last.activation, cache.pre.back(), cache.output, output_grad));
}

template <typename Scalar>
struct LossResult {
  Scalar loss{};
  Matrix<Scalar> grad;
};

// Mean squared error over every entry.
template <typename Scalar>
LossResult<Scalar> mse_loss(const Matrix<Scalar>& pred, const Matrix<Scalar>& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw ShapeMismatch("mse_loss: shape mismatch");
  const Matrix<Scalar> diff = pred - target;
  const Scalar count = static_cast<Scalar>(diff.size());
  return {diff.squaredNorm() / count, (Scalar(2) / count) * diff};
}

// Mean binary cross-entropy of sigmoid(logits); gradient is w.r.t. the logits.
template <typename Scalar>
LossResult<Scalar> bce_with_logits(const Matrix<Scalar>& logits, const Matrix<Scalar>& labels) {
  if (logits.rows() != labels.rows() || logits.cols() != labels.cols())
    throw ShapeMismatch("bce_with_logits: shape mismatch");
  const auto z = logits.array();
  const auto y = labels.array();
  const Scalar count = static_cast<Scalar>(logits.size());
  const Scalar loss =
      (z.cwiseMax(Scalar(0)) - z * y + (Scalar(1) + (-z.abs()).exp()).log()).sum() / count;
  const Matrix<Scalar> p = (Scalar(1) + (-z).exp()).inverse().matrix();
  return {loss, (p - labels) / count};
}

template <typename Scalar>
Scalar bce_from_probabilities(const Matrix<Scalar>& prob, const Matrix<Scalar>& labels) {
  const Scalar eps = static_cast<Scalar>(1e-12);
  const auto p = prob.array().cwiseMax(eps).cwiseMin(Scalar(1) - eps);
  const auto y = labels.array();
  return -(y * p.log() + (Scalar(1) - y) * (Scalar(1) - p).log()).sum() /
         static_cast<Scalar>(prob.size());
}

// Mean over all unordered pairs of columns of
//   d^2 for equal condition ids, max(0, margin - d)^2 otherwise.
// grad has the shape of z. Fewer than two columns gives zero loss.
template <typename Scalar>
LossResult<Scalar> contrastive_loss(const Matrix<Scalar>& z, std::span<const int> conditions,
                                    Scalar margin) {
  if (static_cast<std::size_t>(z.cols()) != conditions.size())
    throw ShapeMismatch("contrastive_loss: one condition id per embedding required");
  LossResult<Scalar> out{Scalar(0), Matrix<Scalar>::Zero(z.rows(), z.cols())};
  const Eigen::Index n = z.cols();
  if (n < 2) return out;
  const Scalar pairs = static_cast<Scalar>(n * (n - 1) / 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const Vector<Scalar> diff = z.col(i) - z.col(j);
      if (conditions[static_cast<std::size_t>(i)] == conditions[static_cast<std::size_t>(j)]) {
        out.loss += diff.squaredNorm();
        out.grad.col(i) += Scalar(2) * diff / pairs;
        out.grad.col(j) -= Scalar(2) * diff / pairs;
      } else {
        const Scalar d = diff.norm();
        const Scalar hinge = margin - d;
        if (hinge > Scalar(0)) {
          out.loss += hinge * hinge;
          if (d > Scalar(0)) {
            const Vector<Scalar> g = (-Scalar(2) * hinge / d / pairs) * diff;
            out.grad.col(i) += g;
            out.grad.col(j) -= g;
          }
        }
      }
    }
  }
  out.loss /= pairs;
  return out;
}

template <typename Scalar>
struct AdamState {
  std::vector<Matrix<Scalar>> m_weight, v_weight;
  std::vector<Vector<Scalar>> m_bias, v_bias;
  long step = 0;
  Scalar lr = Scalar(1e-3);
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar eps = Scalar(1e-8);

  static AdamState for_model(const Mlp<Scalar>& mlp, Scalar learning_rate) {
    AdamState s;
    s.lr = learning_rate;
    for (const auto& L : mlp.layers()) {
      s.m_weight.push_back(Matrix<Scalar>::Zero(L.weight.rows(), L.weight.cols()));
      s.v_weight.push_back(Matrix<Scalar>::Zero(L.weight.rows(), L.weight.cols()));
      s.m_bias.push_back(Vector<Scalar>::Zero(L.bias.size()));
      s.v_bias.push_back(Vector<Scalar>::Zero(L.bias.size()));
    }
    return s;
  }
};

// Bias-corrected Adam. Parameters are untouched if the gradient is rejected.
template <typename Scalar>
void adam_step(Mlp<Scalar>& mlp, const Gradients<Scalar>& grads, AdamState<Scalar>& state) {
  auto& layers = mlp.layers();
  const std::size_t n = layers.size();
  if (grads.weight.size() != n || grads.bias.size() != n || state.m_weight.size() != n)
    throw ShapeMismatch("adam_step: layer count mismatch");
  for (std::size_t l = 0; l < n; ++l) {
    if (grads.weight[l].rows() != layers[l].weight.rows() ||
        grads.weight[l].cols() != layers[l].weight.cols() ||
        grads.bias[l].size() != layers[l].bias.size() ||
        state.m_weight[l].rows() != layers[l].weight.rows() ||
        state.m_weight[l].cols() != layers[l].weight.cols())
      throw ShapeMismatch("adam_step: shape mismatch in layer " + std::to_string(l));
  }
  if (!grads.all_finite()) throw NonFiniteGradient("adam_step: non-finite gradient");

  ++state.step;
  const Scalar c1 = Scalar(1) - std::pow(state.beta1, static_cast<Scalar>(state.step));
  const Scalar c2 = Scalar(1) - std::pow(state.beta2, static_cast<Scalar>(state.step));
  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = state.beta1 * m + (Scalar(1) - state.beta1) * g;
    v = state.beta2 * v + (Scalar(1) - state.beta2) * g.cwiseProduct(g);
    param.array() -= state.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.eps);
  };
  for (std::size_t l = 0; l < n; ++l) {
    update(layers[l].weight, state.m_weight[l], state.v_weight[l], grads.weight[l]);
    update(layers[l].bias, state.m_bias[l], state.v_bias[l], grads.bias[l]);
  }
}

// Weight file: layer shapes, row-major weights, activation tags.
nlohmann::json to_json(const Mlp<double>& mlp);
Mlp<double> mlp_from_json(const nlohmann::json& j);

}  // namespace grace::nn
