#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "seqvae/gradcheck.hpp"
#include "seqvae/nn.hpp"
#include "seqvae/rng.hpp"

using namespace seqvae;

TEST_CASE("param store rejects duplicates and unknown names") {
  ParamStore s;
  s.add_param("w", Tensor::zeros({2, 2}));
  CHECK_THROWS_AS(s.add_param("w", Tensor::zeros({2, 2})), ConfigError);
  CHECK_THROWS_AS(s.param("nope"), ConfigError);
  s.add_buffer("rm", Tensor::zeros({1, 2}));
  CHECK_THROWS_AS(s.add_buffer("rm", Tensor::zeros({1, 2})), ConfigError);
  CHECK_THROWS_AS(s.buffer("nope"), ConfigError);
  CHECK(s.has_param("w"));
  CHECK_FALSE(s.has_param("rm"));
  CHECK(s.param_count() == 4);
  Binding bind(s, true);
  CHECK_THROWS_AS(bind["nope"], ConfigError);
  CHECK(bind["w"].requires_grad());
  Binding frozen(s, false);
  CHECK_FALSE(frozen["w"].requires_grad());
}

TEST_CASE("linear applies xW+b and can drop the bias") {
  ParamStore s;
  Rng rng(1);
  Linear lin(s, "lin", 2, 3, rng);
  CHECK(s.has_param("lin.w"));
  CHECK(s.has_param("lin.b"));
  s.param("lin.w") = Tensor({2, 3}, {1, 0, 2, 0, 1, 3});
  s.param("lin.b") = Tensor({1, 3}, {10, 20, 30});
  Binding bind(s, false);
  Fwd f{bind, s, false};
  Tensor y = lin.forward(f, constant(Tensor({1, 2}, {1, 2}))).value();
  CHECK(y[0] == 11.0);
  CHECK(y[1] == 22.0);
  CHECK(y[2] == 38.0);

  ParamStore s2;
  Linear nobias(s2, "nb", 2, 3, rng, /*with_bias=*/false);
  CHECK(s2.has_param("nb.w"));
  CHECK_FALSE(s2.has_param("nb.b"));
}

TEST_CASE("kaiming init respects the fan-in bound") {
  ParamStore s;
  Rng rng(3);
  Linear lin(s, "lin", 16, 8, rng);
  double bound = std::sqrt(6.0 / 16.0);
  const Tensor& w = s.param("lin.w");
  double maxabs = 0.0;
  for (size_t i = 0; i < w.numel(); ++i) maxabs = std::max(maxabs, std::abs(w[i]));
  CHECK(maxabs <= bound);
  CHECK(maxabs > 0.25 * bound);  // not degenerate
}

TEST_CASE("batchnorm normalizes with batch statistics in training mode") {
  ParamStore s;
  BatchNorm bn(s, "bn", 1);
  Binding bind(s, false);
  Fwd f{bind, s, true};
  Tensor y = bn.forward(f, constant(Tensor({2, 1}, {1, 3}))).value();
  // mean 2, biased var 1: xhat = (x-2)/sqrt(1+1e-5)
  double expect = 0.9999950000374997;
  CHECK(y[0] == Catch::Approx(-expect).margin(1e-15));
  CHECK(y[1] == Catch::Approx(expect).margin(1e-15));
  // Running stats blend in the batch mean and the unbiased variance.
  CHECK(s.buffer("bn.running_mean")[0] == Catch::Approx(0.2).margin(1e-12));
  CHECK(s.buffer("bn.running_var")[0] == Catch::Approx(1.1).margin(1e-12));
}

TEST_CASE("batchnorm maps a single-row batch to beta") {
  ParamStore s;
  BatchNorm bn(s, "bn", 3);
  s.param("bn.beta") = Tensor({1, 3}, {5, 6, 7});
  Binding bind(s, false);
  Fwd f{bind, s, true};
  Tensor y = bn.forward(f, constant(Tensor({1, 3}, {9, -4, 2}))).value();
  CHECK(y[0] == 5.0);
  CHECK(y[1] == 6.0);
  CHECK(y[2] == 7.0);
}

TEST_CASE("batchnorm in eval mode uses running statistics as constants") {
  ParamStore s;
  BatchNorm bn(s, "bn", 2);
  s.buffer("bn.running_mean") = Tensor({1, 2}, {1.0, -1.0});
  s.buffer("bn.running_var") = Tensor({1, 2}, {4.0, 1.0});
  Binding bind(s, false);
  Fwd f{bind, s, false};
  Tensor y = bn.forward(f, constant(Tensor({1, 2}, {3.0, 0.0}))).value();
  CHECK(y[0] == Catch::Approx((3.0 - 1.0) / std::sqrt(4.0 + 1e-5)).margin(1e-12));
  CHECK(y[1] == Catch::Approx(1.0 / std::sqrt(1.0 + 1e-5)).margin(1e-12));
  // Eval mode must not touch the running stats.
  CHECK(s.buffer("bn.running_mean")[0] == 1.0);
  CHECK(s.buffer("bn.running_var")[0] == 4.0);
}

TEST_CASE("batchnorm training output has zero mean and near-unit variance per column") {
  ParamStore s;
  BatchNorm bn(s, "bn", 3);
  Rng rng(17);
  Tensor x({16, 3});
  for (size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal(2.0, 3.0);
  Binding bind(s, false);
  Fwd f{bind, s, true};
  Tensor y = bn.forward(f, constant(x)).value();
  for (size_t c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    for (size_t r = 0; r < 16; ++r) mean += y[r * 3 + c];
    mean /= 16.0;
    for (size_t r = 0; r < 16; ++r) var += (y[r * 3 + c] - mean) * (y[r * 3 + c] - mean);
    var /= 16.0;
    CHECK(std::abs(mean) < 1e-12);
    CHECK(var == Catch::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("recurrent cells with zero parameters follow their closed forms") {
  Rng rng(5);
  auto make = [&](CellKind kind) {
    auto s = std::make_shared<ParamStore>();
    RecurrentCell cell(*s, "cell", kind, 2, 3, rng);
    for (const auto& n : s->param_names()) {
      Tensor& p = s->param(n);
      for (size_t i = 0; i < p.numel(); ++i) p[i] = 0.0;
    }
    return std::make_pair(s, cell);
  };

  Tensor x({1, 2}, {0.7, -0.3});
  Tensor h0({1, 3}, {0.4, -0.8, 1.2});

  {
    auto [s, cell] = make(CellKind::RNN);
    Binding bind(*s, false);
    Fwd f{bind, *s, true};
    CellState st;
    st.h = constant(h0);
    Tensor h1 = cell.forward(f, constant(x), st).h.value();
    for (size_t i = 0; i < 3; ++i) CHECK(h1[i] == 0.0);  // tanh(0)
  }
  {
    auto [s, cell] = make(CellKind::GRU);
    Binding bind(*s, false);
    Fwd f{bind, *s, true};
    CellState st;
    st.h = constant(h0);
    Tensor h1 = cell.forward(f, constant(x), st).h.value();
    // gates at sigmoid(0)=0.5, candidate tanh(0)=0: h' = 0.5 h
    for (size_t i = 0; i < 3; ++i) CHECK(h1[i] == Catch::Approx(0.5 * h0[i]).margin(1e-15));
  }
  {
    auto [s, cell] = make(CellKind::LSTM);
    Binding bind(*s, false);
    Fwd f{bind, *s, true};
    CellState st = cell.initial_state(1);
    st.h = constant(h0);
    Tensor c0({1, 3}, {0.5, -1.0, 2.0});
    st.c = constant(c0);
    CellState nx = cell.forward(f, constant(x), st);
    // i=f=o=0.5, g=0: c' = 0.5 c, h' = 0.5 tanh(0.5 c)
    for (size_t i = 0; i < 3; ++i) {
      CHECK(nx.c.value()[i] == Catch::Approx(0.5 * c0[i]).margin(1e-15));
      CHECK(nx.h.value()[i] == Catch::Approx(0.5 * std::tanh(0.5 * c0[i])).margin(1e-15));
    }
  }
}

TEST_CASE("block gradients match finite differences") {
  ParamStore s;
  Rng rng(11);
  Block block(s, "blk", 3, 4, rng);
  CHECK_FALSE(s.has_param("blk.linear.b"));  // bias is redundant before batchnorm
  Tensor x({5, 3});
  for (size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
  auto builder = [&](const Binding& bind) {
    Fwd f{bind, s, true};
    return ops::mean_all(block.forward(f, constant(x)));
  };
  auto rep = grad_check(s, builder, 1e-5);
  INFO("worst " << rep.worst_param << "[" << rep.worst_index << "]");
  CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("recurrent cell gradients match finite differences across two steps") {
  for (CellKind kind : {CellKind::GRU, CellKind::RNN, CellKind::LSTM}) {
    ParamStore s;
    Rng rng(23);
    RecurrentCell cell(s, "cell", kind, 2, 3, rng);
    Tensor x1({4, 2}), x2({4, 2});
    for (size_t i = 0; i < x1.numel(); ++i) x1[i] = rng.normal();
    for (size_t i = 0; i < x2.numel(); ++i) x2[i] = rng.normal();
    auto builder = [&](const Binding& bind) {
      Fwd f{bind, s, true};
      CellState st = cell.initial_state(4);
      st = cell.forward(f, constant(x1), st);
      st = cell.forward(f, constant(x2), st);
      return ops::mean_all(st.h);
    };
    auto rep = grad_check(s, builder, 1e-5);
    INFO("cell kind " << static_cast<int>(kind) << " worst " << rep.worst_param);
    CHECK(rep.max_rel_err < 1e-5);
  }
}

TEST_CASE("backward pass is bitwise deterministic") {
  ParamStore s;
  Rng rng(31);
  Block block(s, "blk", 3, 4, rng);
  Tensor x({6, 3});
  for (size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();

  auto run = [&]() {
    Binding bind(s, true);
    Fwd f{bind, s, true};
    Var loss = ops::mean_all(block.forward(f, constant(x)));
    backward(loss);
    std::vector<double> grads;
    for (const auto& n : s.param_names()) {
      const Tensor& g = bind[n].grad();
      for (size_t i = 0; i < g.numel(); ++i) grads.push_back(g[i]);
    }
    return grads;
  };
  auto g1 = run();
  // Reset running stats so the second pass sees identical buffers.
  s.buffer("blk.bn.running_mean") = Tensor::zeros({1, 4});
  s.buffer("blk.bn.running_var") = Tensor::full({1, 4}, 1.0);
  auto g2 = run();
  REQUIRE(g1.size() == g2.size());
  for (size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}
