#pragma once

#include <span>
#include <string>
#include <vector>

#include "dppt/autodiff.hpp"
#include "dppt/rng.hpp"
#include "dppt/tensor.hpp"

namespace dppt {

enum class LayerKind { dense, conv2d, relu, tanh };
enum class InitScheme { he_uniform, xavier_uniform, zeros };

const char* to_string(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::size_t fan_in = 0;   // dense
  std::size_t fan_out = 0;  // dense
  std::size_t in_channels = 0;  // conv2d
  std::size_t filters = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  InitScheme init = InitScheme::xavier_uniform;

  static LayerSpec dense(std::size_t in, std::size_t out, InitScheme init = InitScheme::xavier_uniform);
  static LayerSpec conv2d(std::size_t in_channels, std::size_t filters, std::size_t kernel, std::size_t stride,
                          InitScheme init = InitScheme::he_uniform);
  static LayerSpec relu() { return LayerSpec{LayerKind::relu}; }
  static LayerSpec tanh() { return LayerSpec{LayerKind::tanh}; }

  bool has_parameters() const { return kind == LayerKind::dense || kind == LayerKind::conv2d; }
};

// Dense MLP spec: hidden layers use `activation`, output layer is linear.
std::vector<LayerSpec> mlp_layers(std::size_t in, std::span<const std::size_t> hidden, std::size_t out,
                                  LayerKind activation = LayerKind::tanh);

// A feed-forward stack of layers with its own weights.
// Parameters are stored as (weight, bias) per parametric layer, in layer order.
class Network {
 public:
  Network() = default;
  explicit Network(std::vector<LayerSpec> layers);

  void initialize(Rng& rng);

  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::vector<Tensor>& parameters() { return params_; }
  const std::vector<Tensor>& parameters() const { return params_; }
  std::vector<std::string> parameter_names(const std::string& prefix) const;
  std::size_t parameter_count() const;

  std::vector<Var> bind(Tape& tape) const;
  // Records the forward pass on `tape` using previously bound parameters.
  Var forward(Tape& tape, Var x, std::span<const Var> params) const;
  // Value-only forward.
  Tensor forward(const Tensor& x) const;

  Shape output_shape(const Shape& input) const;

 private:
  void check_input(std::size_t layer, const Shape& shape) const;

  std::vector<LayerSpec> layers_;
  std::vector<Tensor> params_;
};

}  // namespace dppt
