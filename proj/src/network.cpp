#include "dppt/network.hpp"

#include <cmath>
#include <optional>
#include <string>

namespace dppt {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::tanh: return "tanh";
  }
  return "?";
}

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out, InitScheme init) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.fan_in = in;
  s.fan_out = out;
  s.init = init;
  return s;
}

LayerSpec LayerSpec::conv2d(std::size_t in_channels, std::size_t filters, std::size_t kernel, std::size_t stride,
                            InitScheme init) {
  LayerSpec s;
  s.kind = LayerKind::conv2d;
  s.in_channels = in_channels;
  s.filters = filters;
  s.kernel = kernel;
  s.stride = stride;
  s.init = init;
  return s;
}

std::vector<LayerSpec> mlp_layers(std::size_t in, std::span<const std::size_t> hidden, std::size_t out,
                                  LayerKind activation) {
  const InitScheme hidden_init =
      activation == LayerKind::relu ? InitScheme::he_uniform : InitScheme::xavier_uniform;
  std::vector<LayerSpec> layers;
  std::size_t prev = in;
  for (std::size_t h : hidden) {
    layers.push_back(LayerSpec::dense(prev, h, hidden_init));
    layers.push_back(LayerSpec{activation});
    prev = h;
  }
  layers.push_back(LayerSpec::dense(prev, out, InitScheme::xavier_uniform));
  return layers;
}

Network::Network(std::vector<LayerSpec> layers) : layers_(std::move(layers)) {
  std::optional<std::size_t> dense_out;
  std::optional<std::size_t> conv_out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& l = layers_[i];
    if (l.kind == LayerKind::dense) {
      if (l.fan_in == 0 || l.fan_out == 0) throw ShapeError("dense layer " + std::to_string(i) + " has zero width");
      if (dense_out && *dense_out != l.fan_in) {
        throw ShapeError("dense layer " + std::to_string(i) + " fan-in " + std::to_string(l.fan_in) +
                         " does not match upstream fan-out " + std::to_string(*dense_out));
      }
      dense_out = l.fan_out;
      params_.emplace_back(Shape{l.fan_in, l.fan_out});
      params_.emplace_back(Shape{l.fan_out});
    } else if (l.kind == LayerKind::conv2d) {
      if (l.filters == 0 || l.kernel == 0 || l.stride == 0 || l.in_channels == 0) {
        throw ShapeError("conv2d layer " + std::to_string(i) + " has a zero dimension");
      }
      if (conv_out && *conv_out != l.in_channels) {
        throw ShapeError("conv2d layer " + std::to_string(i) + " expects " + std::to_string(l.in_channels) +
                         " channels, upstream produces " + std::to_string(*conv_out));
      }
      conv_out = l.filters;
      params_.emplace_back(Shape{l.filters, l.in_channels, l.kernel, l.kernel});
      params_.emplace_back(Shape{l.filters});
    }
  }
}

void Network::initialize(Rng& rng) {
  std::size_t p = 0;
  for (const LayerSpec& l : layers_) {
    if (!l.has_parameters()) continue;
    Tensor& w = params_[p];
    std::size_t fan_in = 0, fan_out = 0;
    if (l.kind == LayerKind::dense) {
      fan_in = l.fan_in;
      fan_out = l.fan_out;
    } else {
      fan_in = l.in_channels * l.kernel * l.kernel;
      fan_out = l.filters * l.kernel * l.kernel;
    }
    double bound = 0.0;
    switch (l.init) {
      case InitScheme::he_uniform: bound = std::sqrt(6.0 / static_cast<double>(fan_in)); break;
      case InitScheme::xavier_uniform: bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)); break;
      case InitScheme::zeros: bound = 0.0; break;
    }
    for (double& v : w.values()) v = bound > 0.0 ? uniform(rng, -bound, bound) : 0.0;
    params_[p + 1].fill(0.0);
    p += 2;
  }
}

std::vector<std::string> Network::parameter_names(const std::string& prefix) const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!layers_[i].has_parameters()) continue;
    names.push_back(prefix + "layer" + std::to_string(i) + ".weight");
    names.push_back(prefix + "layer" + std::to_string(i) + ".bias");
  }
  return names;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& t : params_) n += t.size();
  return n;
}

std::vector<Var> Network::bind(Tape& tape) const {
  std::vector<Var> vars;
  vars.reserve(params_.size());
  for (const Tensor& t : params_) vars.push_back(tape.leaf(t));
  return vars;
}

void Network::check_input(std::size_t layer, const Shape& shape) const {
  const LayerSpec& l = layers_[layer];
  if (l.kind == LayerKind::dense) {
    const std::size_t features = shape.size() >= 2 ? shape_size(shape) / shape[0] : 0;
    if (shape.size() < 2 || features != l.fan_in) {
      throw ShapeError("layer " + std::to_string(layer) + " (dense) expects [n, " + std::to_string(l.fan_in) +
                       "], got " + shape_string(shape));
    }
  } else if (l.kind == LayerKind::conv2d) {
    if (shape.size() != 4 || shape[1] != l.in_channels || shape[2] < l.kernel || shape[3] < l.kernel) {
      throw ShapeError("layer " + std::to_string(layer) + " (conv2d) expects [n, " + std::to_string(l.in_channels) +
                       ", h>=" + std::to_string(l.kernel) + ", w>=" + std::to_string(l.kernel) + "], got " +
                       shape_string(shape));
    }
  }
}

Var Network::forward(Tape& tape, Var x, std::span<const Var> params) const {
  if (params.size() != params_.size()) throw ShapeError("network forward: parameter binding size mismatch");
  std::size_t p = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& l = layers_[i];
    check_input(i, x.shape());
    switch (l.kind) {
      case LayerKind::dense: {
        if (x.shape().size() != 2) x = ops::reshape(x, {x.shape()[0], l.fan_in});
        x = ops::add_bias(ops::matmul(x, params[p]), params[p + 1]);
        p += 2;
        break;
      }
      case LayerKind::conv2d:
        x = ops::conv2d(x, params[p], params[p + 1], l.stride);
        p += 2;
        break;
      case LayerKind::relu: x = ops::relu(x); break;
      case LayerKind::tanh: x = ops::tanh(x); break;
    }
  }
  (void)tape;
  return x;
}

Tensor Network::forward(const Tensor& x) const {
  Tape tape(false);
  auto params = bind(tape);
  return forward(tape, tape.constant(x), params).value();
}

Shape Network::output_shape(const Shape& input) const {
  Shape s = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    check_input(i, s);
    const LayerSpec& l = layers_[i];
    if (l.kind == LayerKind::dense) {
      s = {s[0], l.fan_out};
    } else if (l.kind == LayerKind::conv2d) {
      s = {s[0], l.filters, conv_output_size(s[2], l.kernel, l.stride), conv_output_size(s[3], l.kernel, l.stride)};
    }
  }
  return s;
}

}  // namespace dppt
