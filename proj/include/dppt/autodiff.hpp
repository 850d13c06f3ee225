#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "dppt/tensor.hpp"

namespace dppt {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode tape. Nodes are appended in execution order; backward replays
// them strictly in reverse. With recording disabled, ops only compute values.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  Var constant(Tensor value);
  Var leaf(Tensor value);  // trainable input; gradients accumulate here

  // Appends an op result. `backward` is dropped when no input needs gradients.
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Gradient buffer of a node; zeros if backward never reached it.
  const Tensor& grad(std::size_t id) const;
  const Tensor& grad(Var v) const { return grad(v.id()); }
  Tensor& grad_buffer(std::size_t id);

  // Scalar loss. Throws ShapeError for non-scalar output.
  void backward(Var loss);
  // Vector-Jacobian product: seeds `output` with `seed` and propagates.
  void backward(Var output, const Tensor& seed);
  void zero_grad();

  std::size_t size() const { return nodes_.size(); }
  // Ids in the order backward visited them on the last call.
  const std::vector<std::size_t>& last_backward_order() const { return visit_order_; }

 private:
  struct Node {
    Tensor value;
    mutable Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  void propagate(std::size_t from);

  bool recording_;
  std::vector<Node> nodes_;
  std::vector<std::size_t> visit_order_;
};

namespace ops {

Var matmul(Var a, Var b);                  // [n,k] x [k,m]
Var add(Var a, Var b);                     // same shape
Var sub(Var a, Var b);
Var mul(Var a, Var b);                     // elementwise
Var add_bias(Var x, Var bias);             // [n,f] + [f]
Var scale(Var x, double c);
Var add_constant(Var x, double c);
Var mul_scalar(Var x, Var s);              // x * s, s has one element
Var div_scalar(Var x, Var s);
Var relu(Var x);
Var tanh(Var x);
Var exp(Var x);
Var log(Var x);
Var square(Var x);
Var sum(Var x);                            // -> [1]
Var mean(Var x);                           // -> [1]
Var reshape(Var x, Shape shape);
Var gather_rows(Var x, std::vector<std::size_t> rows);  // [n,m] -> [rows,m]
Var softmax_rows(Var x);                   // row-wise softmax of [n,m]
// Valid (unpadded) convolution. x [n,c,h,w], w [f,c,k,k], b [f].
Var conv2d(Var x, Var w, Var b, std::size_t stride);

}  // namespace ops

std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride);

}  // namespace dppt
