#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "dppt/autodiff.hpp"
#include "dppt/rng.hpp"

namespace dppt::checks {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = uniform(rng, lo, hi);
  return t;
}

// Pushes entries away from the relu kink so central differences stay on one side.
inline void avoid_kink(Tensor& t, double gap = 1e-2) {
  for (double& v : t.values()) {
    if (std::abs(v) < gap) v = v < 0 ? -gap : gap;
  }
}

using LossFn = std::function<Var(Tape&, std::vector<Var>&)>;

// Max relative error between tape gradients and central differences.
inline double gradient_check(const LossFn& f, std::vector<Tensor> inputs, double eps = 1e-5) {
  Tape tape;
  std::vector<Var> leaves;
  for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t));
  tape.backward(f(tape, leaves));
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic = tape.grad(leaves[k]);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const auto eval = [&](double delta) {
        std::vector<Tensor> shifted = inputs;
        shifted[k][i] += delta;
        Tape t2(false);
        std::vector<Var> l2;
        for (const Tensor& s : shifted) l2.push_back(t2.constant(s));
        return f(t2, l2).value().item();
      };
      const double numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-4});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

inline Var project(Tape& tape, Var out, Rng& rng) {
  return ops::sum(ops::mul(out, tape.constant(random_tensor(out.shape(), rng))));
}

inline Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t f = w.dim(0), k = w.dim(2);
  const std::size_t oh = (h - k) / stride + 1, ow = (wd - k) / stride + 1;
  Tensor out({n, f, oh, ow});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < f; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double s = b[o];
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t dy = 0; dy < k; ++dy)
              for (std::size_t dx = 0; dx < k; ++dx) {
                s += x[((i * c + ch) * h + y * stride + dy) * wd + xx * stride + dx] *
                     w[((o * c + ch) * k + dy) * k + dx];
              }
          out[((i * f + o) * oh + y) * ow + xx] = s;
        }
  return out;
}

}  // namespace dppt::checks
