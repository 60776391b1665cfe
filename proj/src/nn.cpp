#include "grace/nn.hpp"

namespace grace::nn {

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::relu:
      return "relu";
    case Activation::sigmoid:
      return "sigmoid";
    case Activation::linear:
      return "linear";
  }
  return "linear";
}

Activation activation_from_string(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "linear") return Activation::linear;
  throw FormatError("unknown activation '" + std::string(name) + "'");
}

nlohmann::json to_json(const Mlp<double>& mlp) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& L : mlp.layers()) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(L.weight.size()));
    for (Eigen::Index r = 0; r < L.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < L.weight.cols(); ++c) w.push_back(L.weight(r, c));
    layers.push_back({{"rows", L.weight.rows()},
                      {"cols", L.weight.cols()},
                      {"activation", to_string(L.activation)},
                      {"weight", w},
                      {"bias", std::vector<double>(L.bias.data(), L.bias.data() + L.bias.size())}});
  }
  return {{"layers", layers}};
}

Mlp<double> mlp_from_json(const nlohmann::json& j) {
  std::vector<Layer<double>> layers;
  try {
    for (const auto& l : j.at("layers")) {
      const auto rows = l.at("rows").get<Eigen::Index>();
      const auto cols = l.at("cols").get<Eigen::Index>();
      const auto w = l.at("weight").get<std::vector<double>>();
      const auto b = l.at("bias").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(w.size()) != rows * cols || static_cast<Eigen::Index>(b.size()) != rows)
        throw ShapeMismatch("weight file: layer size does not match its shape");
      Layer<double> L;
      L.weight.resize(rows, cols);
      for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) L.weight(r, c) = w[static_cast<std::size_t>(r * cols + c)];
      L.bias = Eigen::Map<const Vector<double>>(b.data(), rows);
      L.activation = activation_from_string(l.at("activation").get<std::string>());
      layers.push_back(std::move(L));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("weight file: ") + e.what());
  }
  return Mlp<double>(std::move(layers));
}

}  // namespace grace::nn
