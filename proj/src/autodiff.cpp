#include "dppt/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

namespace dppt {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

ConstMatMap as_matrix(const Tensor& t) { return ConstMatMap(t.data(), t.dim(0), t.dim(1)); }
MatMap as_matrix(Tensor& t) { return MatMap(t.data(), t.dim(0), t.dim(1)); }
ConstVecMap as_vector(const Tensor& t) { return ConstVecMap(t.data(), static_cast<Eigen::Index>(t.size())); }
VecMap as_vector(Tensor& t) { return VecMap(t.data(), static_cast<Eigen::Index>(t.size())); }

void require_rank(const Var& v, std::size_t rank, const char* op) {
  if (v.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(v.shape()));
  }
}

void require_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void require_scalar(const Var& v, const char* op) {
  if (v.value().size() != 1) {
    throw ShapeError(std::string(op) + ": expected a single-element tensor, got " + shape_string(v.shape()));
  }
}

// Elementwise unary op with derivative expressed through input and output values.
template <class F, class D>
Var unary(Var x, F f, D df) {
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  const std::size_t xi = x.id();
  Var inputs[] = {x};
  return x.tape().record(std::move(out), inputs, [xi, df](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& xin = t.value(xi);
    const Tensor& yout = t.value(self);
    Tensor& gx = t.grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xin[i], yout[i]);
  });
}

}  // namespace

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, recording_, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  bool needs = false;
  if (recording_) {
    for (const Var& v : inputs) needs = needs || nodes_[v.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : BackwardFn{}});
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::grad(std::size_t id) const {
  const Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::zero_grad() {
  for (Node& n : nodes_) n.grad = Tensor();
}

void Tape::backward(Var loss) {
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_string(loss.shape()));
  }
  backward(loss, Tensor(loss.shape(), 1.0));
}

void Tape::backward(Var output, const Tensor& seed) {
  if (seed.shape() != output.shape()) {
    throw ShapeError("backward: seed shape " + shape_string(seed.shape()) + " does not match output " +
                     shape_string(output.shape()));
  }
  zero_grad();
  grad_buffer(output.id()) = seed;
  propagate(output.id());
}

void Tape::propagate(std::size_t from) {
  visit_order_.clear();
  for (std::size_t i = from + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    visit_order_.push_back(i);
    n.backward(*this, i);
  }
}

std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride) {
  if (kernel > in || stride == 0) return 0;
  return (in - kernel) / stride + 1;
}

namespace ops {

Var matmul(Var a, Var b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  Tensor out({a.shape()[0], b.shape()[1]});
  as_matrix(out).noalias() = as_matrix(a.value()) * as_matrix(b.value());
  const std::size_t ai = a.id(), bi = b.id();
  Var inputs[] = {a, b};
  return a.tape().record(std::move(out), inputs, [ai, bi](Tape& t, std::size_t self) {
    auto g = as_matrix(t.grad(self));
    if (t.requires_grad(ai)) as_matrix(t.grad_buffer(ai)).noalias() += g * as_matrix(t.value(bi)).transpose();
    if (t.requires_grad(bi)) as_matrix(t.grad_buffer(bi)).noalias() += as_matrix(t.value(ai)).transpose() * g;
  });
}

Var add(Var a, Var b) {
  require_same(a, b, "add");
  Tensor out = a.value();
  as_vector(out) += as_vector(b.value());
  const std::size_t ai = a.id(), bi = b.id();
  Var inputs[] = {a, b};
  return a.tape().record(std::move(out), inputs, [ai, bi](Tape& t, std::size_t self) {
    auto g = as_vector(t.grad(self));
    if (t.requires_grad(ai)) as_vector(t.grad_buffer(ai)) += g;
    if (t.requires_grad(bi)) as_vector(t.grad_buffer(bi)) += g;
  });
}

Var sub(Var a, Var b) {
  require_same(a, b, "sub");
  Tensor out = a.value();
  as_vector(out) -= as_vector(b.value());
  const std::size_t ai = a.id(), bi = b.id();
  Var inputs[] = {a, b};
  return a.tape().record(std::move(out), inputs, [ai, bi](Tape& t, std::size_t self) {
    auto g = as_vector(t.grad(self));
    if (t.requires_grad(ai)) as_vector(t.grad_buffer(ai)) += g;
    if (t.requires_grad(bi)) as_vector(t.grad_buffer(bi)) -= g;
  });
}

Var mul(Var a, Var b) {
  require_same(a, b, "mul");
  Tensor out = a.value();
  as_vector(out).array() *= as_vector(b.value()).array();
  const std::size_t ai = a.id(), bi = b.id();
  Var inputs[] = {a, b};
  return a.tape().record(std::move(out), inputs, [ai, bi](Tape& t, std::size_t self) {
    auto g = as_vector(t.grad(self)).array();
    if (t.requires_grad(ai)) as_vector(t.grad_buffer(ai)).array() += g * as_vector(t.value(bi)).array();
    if (t.requires_grad(bi)) as_vector(t.grad_buffer(bi)).array() += g * as_vector(t.value(ai)).array();
  });
}

Var add_bias(Var x, Var bias) {
  require_rank(x, 2, "add_bias");
  if (bias.value().size() != x.shape()[1]) {
    throw ShapeError("add_bias: bias " + shape_string(bias.shape()) + " does not match " + shape_string(x.shape()));
  }
  Tensor out = x.value();
  as_matrix(out).rowwise() += as_vector(bias.value()).transpose();
  const std::size_t xi = x.id(), bi = bias.id();
  Var inputs[] = {x, bias};
  return x.tape().record(std::move(out), inputs, [xi, bi](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(xi)) as_vector(t.grad_buffer(xi)) += as_vector(g);
    if (t.requires_grad(bi)) as_vector(t.grad_buffer(bi)) += as_matrix(g).colwise().sum().transpose();
  });
}

Var scale(Var x, double c) {
  Tensor out = x.value();
  as_vector(out) *= c;
  const std::size_t xi = x.id();
  Var inputs[] = {x};
  return x.tape().record(std::move(out), inputs, [xi, c](Tape& t, std::size_t self) {
    as_vector(t.grad_buffer(xi)) += c * as_vector(t.grad(self));
  });
}

Var add_constant(Var x, double c) {
  Tensor out = x.value();
  as_vector(out).array() += c;
  const std::size_t xi = x.id();
  Var inputs[] = {x};
  return x.tape().record(std::move(out), inputs, [xi](Tape& t, std::size_t self) {
    as_vector(t.grad_buffer(xi)) += as_vector(t.grad(self));
  });
}

Var mul_scalar(Var x, Var s) {
  require_scalar(s, "mul_scalar");
  const double sv = s.value()[0];
  Tensor out = x.value();
  as_vector(out) *= sv;
  const std::size_t xi = x.id(), si = s.id();
  Var inputs[] = {x, s};
  return x.tape().record(std::move(out), inputs, [xi, si](Tape& t, std::size_t self) {
    auto g = as_vector(t.grad(self));
    const double s_now = t.value(si)[0];
    if (t.requires_grad(xi)) as_vector(t.grad_buffer(xi)) += s_now * g;
    if (t.requires_grad(si)) t.grad_buffer(si)[0] += g.dot(as_vector(t.value(xi)));
  });
}

Var div_scalar(Var x, Var s) {
  require_scalar(s, "div_scalar");
  const double sv = s.value()[0];
  Tensor out = x.value();
  as_vector(out) /= sv;
  const std::size_t xi = x.id(), si = s.id();
  Var inputs[] = {x, s};
  return x.tape().record(std::move(out), inputs, [xi, si](Tape& t, std::size_t self) {
    auto g = as_vector(t.grad(self));
    const double s_now = t.value(si)[0];
    if (t.requires_grad(xi)) as_vector(t.grad_buffer(xi)) += g / s_now;
    if (t.requires_grad(si)) t.grad_buffer(si)[0] -= g.dot(as_vector(t.value(self))) / s_now;
  });
}

Var relu(Var x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Var x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double out) { return 1.0 - out * out; });
}

Var exp(Var x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double out) { return out; });
}

Var log(Var x) {
  return unary(
      x, [](double v) { return std::log(v); }, [](double in, double) { return 1.0 / in; });
}

Var square(Var x) {
  return unary(
      x, [](double v) { return v * v; }, [](double in, double) { return 2.0 * in; });
}

Var sum(Var x) {
  Tensor out = Tensor::scalar(as_vector(x.value()).sum());
  const std::size_t xi = x.id();
  Var inputs[] = {x};
  return x.tape().record(std::move(out), inputs, [xi](Tape& t, std::size_t self) {
    as_vector(t.grad_buffer(xi)).array() += t.grad(self)[0];
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const std::size_t xi = x.id();
  Var inputs[] = {x};
  return x.tape().record(std::move(out), inputs, [xi](Tape& t, std::size_t self) {
    as_vector(t.grad_buffer(xi)) += as_vector(t.grad(self));
  });
}

Var gather_rows(Var x, std::vector<std::size_t> rows) {
  require_rank(x, 2, "gather_rows");
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  if (rows.empty()) throw ShapeError("gather_rows: empty row set");
  Tensor out({rows.size(), m});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n) throw ShapeError("gather_rows: row index out of range");
    std::copy_n(x.value().data() + rows[r] * m, m, out.data() + r * m);
  }
  const std::size_t xi = x.id();
  Var inputs[] = {x};
  return x.tape().record(std::move(out), inputs, [xi, rows = std::move(rows), m](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(xi);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t j = 0; j < m; ++j) gx[rows[r] * m + j] += g[r * m + j];
    }
  });
}

Var softmax_rows(Var x) {
  require_rank(x, 2, "softmax_rows");
  const std::size_t n = x.shape()[0], m = x.shape()[1];
  Tensor out({n, m});
  const Tensor& in = x.value();
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = in.data() + r * m;
    double* o = out.data() + r * m;
    const double mx = *std::max_element(row, row + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      o[j] = std::exp(row[j] - mx);
      z += o[j];
    }
    for (std::size_t j = 0; j < m; ++j) o[j] /= z;
  }
  const std::size_t xi = x.id();
  Var inputs[] = {x};
  return x.tape().record(std::move(out), inputs, [xi, n, m](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& p = t.value(self);
    Tensor& gx = t.grad_buffer(xi);
    for (std::size_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += g[r * m + j] * p[r * m + j];
      for (std::size_t j = 0; j < m; ++j) gx[r * m + j] += p[r * m + j] * (g[r * m + j] - dot);
    }
  });
}

Var conv2d(Var x, Var w, Var b, std::size_t stride) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  const std::size_t n = xs[0], c = xs[1], h = xs[2], wd = xs[3];
  const std::size_t f = ws[0], k = ws[2];
  if (ws[1] != c || ws[3] != k) {
    throw ShapeError("conv2d: input " + shape_string(xs) + " incompatible with kernel " + shape_string(ws));
  }
  if (b.value().size() != f) throw ShapeError("conv2d: bias length does not match filter count");
  const std::size_t ho = conv_output_size(h, k, stride), wo = conv_output_size(wd, k, stride);
  if (ho == 0 || wo == 0) {
    throw ShapeError("conv2d: kernel " + std::to_string(k) + " larger than input " + shape_string(xs));
  }
  const std::size_t patch = c * k * k, rows = n * ho * wo;

  // im2col: one row per output location, columns ordered (channel, ky, kx) to match the kernel layout.
  auto cols = std::make_shared<Tensor>(Shape{rows, patch});
  const double* xd = x.value().data();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        double* dst = cols->data() + ((s * ho + i) * wo + j) * patch;
        for (std::size_t ch = 0; ch < c; ++ch) {
          for (std::size_t ky = 0; ky < k; ++ky) {
            const double* src = xd + ((s * c + ch) * h + i * stride + ky) * wd + j * stride;
            std::copy_n(src, k, dst);
            dst += k;
          }
        }
      }
    }
  }
  const ConstMatMap wmat(w.value().data(), f, patch);
  RowMat prod = as_matrix(*cols) * wmat.transpose();  // [rows, f]
  Tensor out({n, f, ho, wo});
  const double* bd = b.value().data();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t fi = 0; fi < f; ++fi) {
      double* o = out.data() + (s * f + fi) * ho * wo;
      for (std::size_t p = 0; p < ho * wo; ++p) o[p] = prod(s * ho * wo + p, fi) + bd[fi];
    }
  }

  const std::size_t xi = x.id(), wi = w.id(), bi = b.id();
  Var inputs[] = {x, w, b};
  return x.tape().record(
      std::move(out), inputs,
      [=](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        RowMat gmat(rows, f);
        for (std::size_t s = 0; s < n; ++s) {
          for (std::size_t fi = 0; fi < f; ++fi) {
            const double* gp = g.data() + (s * f + fi) * ho * wo;
            for (std::size_t p = 0; p < ho * wo; ++p) gmat(s * ho * wo + p, fi) = gp[p];
          }
        }
        if (t.requires_grad(bi)) as_vector(t.grad_buffer(bi)) += gmat.colwise().sum().transpose();
        if (t.requires_grad(wi)) {
          MatMap(t.grad_buffer(wi).data(), f, patch).noalias() += gmat.transpose() * as_matrix(*cols);
        }
        if (t.requires_grad(xi)) {
          const ConstMatMap wm(t.value(wi).data(), f, patch);
          RowMat dcols = gmat * wm;
          double* gx = t.grad_buffer(xi).data();
          for (std::size_t s = 0; s < n; ++s) {
            for (std::size_t i = 0; i < ho; ++i) {
              for (std::size_t j = 0; j < wo; ++j) {
                const double* src = dcols.data() + ((s * ho + i) * wo + j) * patch;
                for (std::size_t ch = 0; ch < c; ++ch) {
                  for (std::size_t ky = 0; ky < k; ++ky) {
                    double* dst = gx + ((s * c + ch) * h + i * stride + ky) * wd + j * stride;
                    for (std::size_t kx = 0; kx < k; ++kx) dst[kx] += src[kx];
                    src += k;
                  }
                }
              }
            }
          }
        }
      });
}

}  // namespace ops
}  // namespace dppt
