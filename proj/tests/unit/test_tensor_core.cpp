#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>

#include "dppt/autodiff.hpp"
#include "dppt/checkpoint.hpp"
#include "dppt/network.hpp"
#include "dppt/optim.hpp"
#include "checks.hpp"
#include "test_util.hpp"

using namespace dppt;
using namespace dppt::checks;

TEST_CASE("tensor shape bookkeeping") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.at(1, 2) == 1.5);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS((void)t.reshaped({4}), ShapeError);
  CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
  CHECK(conv_output_size(64, 5, 2) == 30);
  CHECK(conv_output_size(30, 3, 1) == 28);
}

TEST_CASE("dense identity layer passes input through") {
  Network net({LayerSpec::dense(3, 3)});
  net.parameters()[0] = Tensor({3, 3}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1});
  net.parameters()[1] = Tensor({3});
  const Tensor y = net.forward(Tensor({1, 3}, std::vector<double>{1, 2, 3}));
  CHECK(y.storage() == std::vector<double>{1, 2, 3});
}

TEST_CASE("unit 1x1 convolution is the identity") {
  Network net({LayerSpec::conv2d(1, 1, 1, 1)});
  net.parameters()[0] = Tensor({1, 1, 1, 1}, 1.0);
  net.parameters()[1] = Tensor({1});
  Rng rng = make_rng(3, "conv-identity");
  const Tensor x = random_tensor({1, 1, 6, 5}, rng);
  CHECK(net.forward(x) == x);
}

TEST_CASE("zero-bias tanh net maps zero to zero") {
  const std::size_t hidden[] = {8};
  Network net(mlp_layers(4, hidden, 3, LayerKind::tanh));
  Rng rng = make_rng(0, "init");
  net.initialize(rng);
  for (std::size_t i = 1; i < net.parameters().size(); i += 2) net.parameters()[i].fill(0.0);
  const Tensor y = net.forward(Tensor({1, 4}));
  for (double v : y.values()) CHECK(v == 0.0);
}

TEST_CASE("forward rejects mismatched input and reports shapes") {
  Network net({LayerSpec::dense(3, 2)});
  Rng rng = make_rng(0, "init");
  net.initialize(rng);
  try {
    (void)net.forward(Tensor({1, 4}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find('4') != std::string::npos);
    CHECK(msg.find('3') != std::string::npos);
  }
}

TEST_CASE("forward is bit-deterministic") {
  Network net({LayerSpec::conv2d(3, 4, 3, 1), LayerSpec::relu(), LayerSpec::conv2d(4, 2, 3, 2)});
  Rng rng = make_rng(1, "init");
  net.initialize(rng);
  const Tensor x = random_tensor({2, 3, 9, 9}, rng);
  CHECK(net.forward(x) == net.forward(x));
}

TEST_CASE("backward on simple expressions") {
  SUBCASE("linear") {
    Tape tape;
    Var w = tape.leaf(Tensor::vector({3.0}));
    Var x = tape.constant(Tensor::vector({2.0}));
    tape.backward(ops::sum(ops::mul(w, x)));
    CHECK(tape.grad(w)[0] == 2.0);
  }
  SUBCASE("relu gate") {
    Tape tape;
    Var x = tape.leaf(Tensor::vector({-1.0, 4.0}));
    tape.backward(ops::sum(ops::relu(x)));
    CHECK(tape.grad(x).storage() == std::vector<double>{0.0, 1.0});
  }
  SUBCASE("non-scalar loss is rejected") {
    Tape tape;
    Var x = tape.leaf(Tensor::vector({1.0, 2.0}));
    CHECK_THROWS_AS(tape.backward(ops::square(x)), ShapeError);
  }
  SUBCASE("unused nodes keep zero gradients") {
    Tape tape;
    Var x = tape.leaf(Tensor::vector({1.0, 2.0}));
    Var unused = tape.leaf(Tensor::vector({5.0}));
    tape.backward(ops::sum(ops::square(x)));
    CHECK(tape.grad(unused)[0] == 0.0);
    CHECK(tape.grad(x).storage() == std::vector<double>{2.0, 4.0});
  }
}

TEST_CASE("backward visits nodes in reverse recording order") {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({0.3, -0.2}));
  Var y = ops::tanh(ops::scale(x, 2.0));
  Var z = ops::sum(ops::square(y));
  tape.backward(z);
  const auto& order = tape.last_backward_order();
  REQUIRE(!order.empty());
  for (std::size_t i = 1; i < order.size(); ++i) CHECK(order[i] < order[i - 1]);
  CHECK(order.front() == z.id());
}

TEST_CASE("conv2d matches the naive reference exactly") {
  // Dyadic inputs: every partial sum is exact.
  const auto dyadic = [](Shape shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = std::uniform_int_distribution<int>(-64, 64)(rng) / 32.0;
    return t;
  };
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng = make_rng(seed, "conv-ref");
    const std::size_t stride = 1 + seed % 2;
    const std::size_t k = seed % 3 == 0 ? 1 : (seed % 3 == 1 ? 3 : 5);
    const Tensor x = dyadic({2, 3, 8, 8}, rng);
    const Tensor w = dyadic({4, 3, k, k}, rng);
    const Tensor b = dyadic({4}, rng);
    Tape tape(false);
    const Tensor got = ops::conv2d(tape.constant(x), tape.constant(w), tape.constant(b), stride).value();
    CHECK(got == naive_conv(x, w, b, stride));
  }
}

TEST_CASE("conv2d agrees with the naive reference on random reals") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng = make_rng(seed, "conv-ref-real");
    const Tensor x = random_tensor({2, 3, 8, 8}, rng);
    const Tensor w = random_tensor({4, 3, 3, 3}, rng);
    const Tensor b = random_tensor({4}, rng);
    Tape tape(false);
    const Tensor got = ops::conv2d(tape.constant(x), tape.constant(w), tape.constant(b), 1 + seed % 2).value();
    const Tensor want = naive_conv(x, w, b, 1 + seed % 2);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= 1e-12);
  }
}

TEST_CASE("finite-difference gradients for every layer kind over 100 seeds") {
  double worst_dense = 0, worst_conv = 0, worst_relu = 0, worst_tanh = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng = make_rng(seed, "fd-layers");
    {
      Tensor x = random_tensor({3, 4}, rng), w = random_tensor({4, 5}, rng), b = random_tensor({5}, rng);
      Rng proj = make_rng(seed, "proj");
      worst_dense = std::max(worst_dense, gradient_check([&](Tape& t, std::vector<Var>& v) {
        Rng p = proj;
        return project(t, ops::add_bias(ops::matmul(v[0], v[1]), v[2]), p);
      }, {x, w, b}));
    }
    {
      const std::size_t stride = 1 + seed % 2;
      Tensor x = random_tensor({2, 2, 7, 7}, rng), w = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({3}, rng);
      Rng proj = make_rng(seed, "proj");
      worst_conv = std::max(worst_conv, gradient_check([&](Tape& t, std::vector<Var>& v) {
        Rng p = proj;
        return project(t, ops::conv2d(v[0], v[1], v[2], stride), p);
      }, {x, w, b}));
    }
    {
      Tensor x = random_tensor({4, 6}, rng);
      avoid_kink(x);
      Rng proj = make_rng(seed, "proj");
      worst_relu = std::max(worst_relu, gradient_check([&](Tape& t, std::vector<Var>& v) {
        Rng p = proj;
        return project(t, ops::relu(v[0]), p);
      }, {x}));
    }
    {
      Tensor x = random_tensor({4, 6}, rng, -2.0, 2.0);
      Rng proj = make_rng(seed, "proj");
      worst_tanh = std::max(worst_tanh, gradient_check([&](Tape& t, std::vector<Var>& v) {
        Rng p = proj;
        return project(t, ops::tanh(v[0]), p);
      }, {x}));
    }
  }
  CHECK(worst_dense <= 1e-4);
  CHECK(worst_conv <= 1e-4);
  CHECK(worst_relu <= 1e-4);
  CHECK(worst_tanh <= 1e-4);
}

TEST_CASE("finite-difference gradients for the remaining primitives") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng = make_rng(seed, "fd-ops");
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
    Tensor pos = random_tensor({3, 4}, rng, 0.5, 2.0);
    Tensor s = random_tensor({1}, rng, 0.5, 1.5);
    Rng proj = make_rng(seed, "proj");
    const auto check = [&](const LossFn& f, std::vector<Tensor> in) { CHECK(gradient_check(f, std::move(in)) <= 1e-4); };
    check([&](Tape& t, std::vector<Var>& v) { Rng p = proj; return project(t, ops::sub(ops::add(v[0], v[1]), ops::mul(v[0], v[1])), p); }, {a, b});
    check([&](Tape& t, std::vector<Var>& v) { Rng p = proj; return project(t, ops::exp(v[0]), p); }, {a});
    check([&](Tape& t, std::vector<Var>& v) { Rng p = proj; return project(t, ops::log(v[0]), p); }, {pos});
    check([&](Tape& t, std::vector<Var>& v) { Rng p = proj; return project(t, ops::softmax_rows(v[0]), p); }, {a});
    check([&](Tape& t, std::vector<Var>& v) { Rng p = proj; return project(t, ops::div_scalar(v[0], v[1]), p); }, {a, s});
    check([&](Tape& t, std::vector<Var>& v) { Rng p = proj; return project(t, ops::mul_scalar(v[0], v[1]), p); }, {a, s});
    check([&](Tape& t, std::vector<Var>& v) {
      Rng p = proj;
      return project(t, ops::gather_rows(ops::reshape(v[0], {4, 3}), {3, 0, 3}), p);
    }, {a});
    check([](Tape&, std::vector<Var>& v) { return ops::mean(ops::square(v[0])); }, {a});
  }
}

TEST_CASE("gradient of a random three-layer network") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng = make_rng(seed, "fd-net");
    const std::size_t hidden[] = {6, 5};
    Network net(mlp_layers(4, hidden, 3, LayerKind::tanh));
    net.initialize(rng);
    std::vector<Tensor> inputs = net.parameters();
    inputs.push_back(random_tensor({2, 4}, rng));
    const double err = gradient_check([&](Tape& t, std::vector<Var>& v) {
      std::vector<Var> params(v.begin(), v.end() - 1);
      return ops::sum(ops::square(net.forward(t, v.back(), params)));
    }, inputs);
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("adam step identities") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    Tensor p = Tensor::vector({0.5, -1.0});
    AdamState state;
    Tensor* ps[] = {&p};
    const Tensor g[] = {Tensor({2})};
    CHECK(adam_step(ps, g, state));
    CHECK(p.storage() == std::vector<double>{0.5, -1.0});
  }
  SUBCASE("first step moves each coordinate by about lr") {
    Tensor p = Tensor::vector({0.0, 0.0, 0.0});
    AdamState state;
    Tensor* ps[] = {&p};
    const Tensor g[] = {Tensor::vector({3.0, -0.01, 1e3})};
    CHECK(adam_step(ps, g, state, {.lr = 1e-3}));
    CHECK(p[0] == doctest::Approx(-1e-3).epsilon(1e-4));
    CHECK(p[1] == doctest::Approx(1e-3).epsilon(1e-4));
    CHECK(p[2] == doctest::Approx(-1e-3).epsilon(1e-4));
  }
  SUBCASE("two steps reduce x^2/2 from 1") {
    Tensor x = Tensor::vector({1.0});
    AdamState state;
    Tensor* ps[] = {&x};
    double prev = 0.5;
    for (int i = 0; i < 2; ++i) {
      const Tensor g[] = {Tensor::vector({x[0]})};
      CHECK(adam_step(ps, g, state, {.lr = 0.1}));
      const double loss = 0.5 * x[0] * x[0];
      CHECK(loss < prev);
      prev = loss;
    }
  }
  SUBCASE("non-finite gradient is rejected without side effects") {
    Tensor p = Tensor::vector({1.0});
    AdamState state;
    Tensor* ps[] = {&p};
    const Tensor g[] = {Tensor::vector({std::nan("")})};
    CHECK_FALSE(adam_step(ps, g, state));
    CHECK(p[0] == 1.0);
    CHECK(state.step == 0);
  }
}

TEST_CASE("checkpoint round trip is lossless") {
  Rng rng = make_rng(5, "ckpt");
  Checkpoint ck("test");
  ck.meta()["note"] = "x";
  Tensor t = random_tensor({3, 2}, rng, -1e10, 1e10);
  t[0] = 0.1;
  t[1] = 1.0 / 3.0;
  ck.add("w", t);
  const auto path = test_util::scratch_dir("ckpt") / "c.json";
  ck.save(path);
  const Checkpoint back = Checkpoint::load(path);
  CHECK(back.kind() == "test");
  CHECK(back.get("w") == t);
  CHECK(back.meta()["note"] == "x");
  CHECK_THROWS_AS((void)back.get("missing"), FormatError);
  CHECK_THROWS_AS(Checkpoint::from_json(nlohmann::json{{"format", "other"}}), FormatError);
}
