#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include "seqvae/ops.hpp"
#include "seqvae/rng.hpp"

using namespace seqvae;
using namespace seqvae::ops;

namespace {

// Central-difference check of d(f)/d(x) against the adjoint that backward()
// leaves on the leaf. Inputs are kept away from relu/clamp kinks by the
// callers, so 1e-6 is a comfortable step.
void check_grad(const Tensor& x0,
                const std::function<Var(const Var&)>& f,
                double eps = 1e-6,
                double tol = 1e-6) {
  Var leaf(x0, true);
  Var loss = sum_all(f(leaf));
  backward(loss);
  const Tensor& analytic = leaf.grad();
  Tensor x = x0;
  for (size_t i = 0; i < x.numel(); ++i) {
    double orig = x[i];
    x[i] = orig + eps;
    double fp = sum_all(f(Var(x, false))).item();
    x[i] = orig - eps;
    double fm = sum_all(f(Var(x, false))).item();
    x[i] = orig;
    double numeric = (fp - fm) / (2.0 * eps);
    double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    INFO("coordinate " << i << " analytic=" << analytic[i] << " numeric=" << numeric);
    CHECK(std::abs(analytic[i] - numeric) / denom < tol);
  }
}

Tensor random_matrix(size_t r, size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t({r, c});
  for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("matmul forward and adjoint") {
  // [1 2; 3 4] * [5; 6] = [17; 39]
  Var a(Tensor({2, 2}, {1, 2, 3, 4}), true);
  Var b(Tensor({2, 1}, {5, 6}), true);
  Var y = matmul(a, b);
  REQUIRE(y.shape() == std::vector<size_t>{2, 1});
  CHECK(y.value()[0] == 17.0);
  CHECK(y.value()[1] == 39.0);
  backward(sum_all(y));
  // d(sum)/da = ones * b^T rows
  CHECK(a.grad()[0] == 5.0);
  CHECK(a.grad()[1] == 6.0);
  CHECK(a.grad()[2] == 5.0);
  CHECK(a.grad()[3] == 6.0);
  CHECK(b.grad()[0] == 4.0);  // 1+3
  CHECK(b.grad()[1] == 6.0);  // 2+4
}

TEST_CASE("sum of elementwise square has adjoint 2x") {
  Var x(Tensor({1, 2}, {1, 2}), true);
  Var loss = sum_all(mul(x, x));
  CHECK(loss.item() == 5.0);
  backward(loss);
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 4.0);
}

TEST_CASE("mean_all spreads its adjoint uniformly") {
  Var x(Tensor({2, 2}, {1, 2, 3, 4}), true);
  Var loss = mean_all(x);
  CHECK(loss.item() == 2.5);
  backward(loss);
  for (size_t i = 0; i < 4; ++i) CHECK(x.grad()[i] == 0.25);
}

TEST_CASE("sigmoid value and derivative at zero") {
  Var x(Tensor::scalar(0.0), true);
  Var y = sigmoid(x);
  CHECK(y.item() == 0.5);
  backward(y);
  CHECK(x.grad()[0] == 0.25);
}

TEST_CASE("logsumexp of [0,0] is log 2 and is shift-stable") {
  Var x(Tensor({1, 2}, {0, 0}), false);
  CHECK(logsumexp_rows(x).item() == Catch::Approx(0.6931471805599453).epsilon(0).margin(1e-15));
  // Large magnitudes must not overflow.
  Var big(Tensor({1, 2}, {1000.0, 1000.0}), false);
  CHECK(logsumexp_rows(big).item() == Catch::Approx(1000.0 + 0.6931471805599453).margin(1e-9));
}

TEST_CASE("clamp passes gradient only inside the interval") {
  Var x(Tensor({1, 3}, {-2.0, 0.5, 2.0}), true);
  Var y = clamp(x, -1.0, 1.0);
  CHECK(y.value()[0] == -1.0);
  CHECK(y.value()[1] == 0.5);
  CHECK(y.value()[2] == 1.0);
  backward(sum_all(y));
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 1.0);
  CHECK(x.grad()[2] == 0.0);
}

TEST_CASE("unary op gradients match finite differences") {
  Rng rng(101);
  // Positive inputs, clear of relu/clamp kinks and log/sqrt singularities.
  Tensor xp = random_matrix(3, 4, rng, 0.3, 1.7);
  check_grad(xp, [](const Var& v) { return log_v(v); });
  check_grad(xp, [](const Var& v) { return sqrt_v(v); });
  check_grad(xp, [](const Var& v) { return relu(v); });
  Tensor xs = random_matrix(3, 4, rng, -1.5, 1.5);
  check_grad(xs, [](const Var& v) { return exp_v(v); });
  check_grad(xs, [](const Var& v) { return sigmoid(v); });
  check_grad(xs, [](const Var& v) { return tanh_v(v); });
  check_grad(xs, [](const Var& v) { return softplus(v); });
  check_grad(xs, [](const Var& v) { return square(v); });
  check_grad(xs, [](const Var& v) { return neg(v); });
  check_grad(xs, [](const Var& v) { return add_scalar(v, 2.5); });
  check_grad(xs, [](const Var& v) { return mul_scalar(v, -1.3); });
  check_grad(xs, [](const Var& v) { return scalar_sub(0.7, v); });
  check_grad(xs, [](const Var& v) { return logsumexp_rows(v); });
}

TEST_CASE("binary op gradients match finite differences in both slots") {
  Rng rng(202);
  Tensor a = random_matrix(3, 4, rng, 0.4, 1.6);
  Tensor b = random_matrix(3, 4, rng, 0.4, 1.6);
  auto both = [&](const std::function<Var(const Var&, const Var&)>& op) {
    check_grad(a, [&](const Var& v) { return op(v, Var(b, false)); });
    check_grad(b, [&](const Var& v) { return op(Var(a, false), v); });
  };
  both([](const Var& x, const Var& y) { return add(x, y); });
  both([](const Var& x, const Var& y) { return sub(x, y); });
  both([](const Var& x, const Var& y) { return mul(x, y); });
  both([](const Var& x, const Var& y) { return div(x, y); });

  Tensor m = random_matrix(4, 3, rng);
  Tensor n = random_matrix(3, 5, rng);
  check_grad(m, [&](const Var& v) { return matmul(v, Var(n, false)); });
  check_grad(n, [&](const Var& v) { return matmul(Var(m, false), v); });
  Tensor nt = random_matrix(5, 3, rng);
  check_grad(m, [&](const Var& v) { return matmul_nt(v, Var(nt, false)); });
  check_grad(nt, [&](const Var& v) { return matmul_nt(Var(m, false), v); });
}

TEST_CASE("matmul_nt equals matmul against the transpose") {
  Rng rng(7);
  Tensor a = random_matrix(3, 4, rng);
  Tensor b = random_matrix(5, 4, rng);
  Tensor bt({4, 5});
  for (size_t i = 0; i < 4; ++i)
    for (size_t j = 0; j < 5; ++j) bt[i * 5 + j] = b[j * 4 + i];
  Tensor lhs = matmul_nt(Var(a, false), Var(b, false)).value();
  Tensor rhs = matmul(Var(a, false), Var(bt, false)).value();
  REQUIRE(lhs.numel() == rhs.numel());
  for (size_t i = 0; i < lhs.numel(); ++i) CHECK(lhs[i] == Catch::Approx(rhs[i]).margin(1e-14));
}

TEST_CASE("row and column vector broadcasts match finite differences") {
  Rng rng(303);
  Tensor m = random_matrix(3, 4, rng, 0.4, 1.6);
  Tensor r = random_matrix(1, 4, rng, 0.4, 1.6);
  Tensor c = random_matrix(3, 1, rng, 0.4, 1.6);
  auto rv = [&](const std::function<Var(const Var&, const Var&)>& op) {
    check_grad(m, [&](const Var& v) { return op(v, Var(r, false)); });
    check_grad(r, [&](const Var& v) { return op(Var(m, false), v); });
  };
  rv([](const Var& x, const Var& y) { return add_rowvec(x, y); });
  rv([](const Var& x, const Var& y) { return sub_rowvec(x, y); });
  rv([](const Var& x, const Var& y) { return mul_rowvec(x, y); });
  rv([](const Var& x, const Var& y) { return div_rowvec(x, y); });
  check_grad(m, [&](const Var& v) { return mul_colvec(v, Var(c, false)); });
  check_grad(c, [&](const Var& v) { return mul_colvec(Var(m, false), v); });
  check_grad(m, [&](const Var& v) { return div_colvec(v, Var(c, false)); });
  check_grad(c, [&](const Var& v) { return div_colvec(Var(m, false), v); });
}

TEST_CASE("reductions match finite differences") {
  Rng rng(404);
  Tensor m = random_matrix(3, 4, rng);
  check_grad(m, [](const Var& v) { return row_sum(v); });
  check_grad(m, [](const Var& v) { return row_mean(v); });
  check_grad(m, [](const Var& v) { return col_sum(v); });
  check_grad(m, [](const Var& v) { return col_mean(v); });
  check_grad(m, [](const Var& v) { return mean_all(v); });
}

TEST_CASE("concat, slice and select route values and gradients by position") {
  Rng rng(505);
  Tensor a = random_matrix(2, 3, rng);
  Tensor b = random_matrix(2, 2, rng);
  check_grad(a, [&](const Var& v) { return concat_cols(v, Var(b, false)); });
  check_grad(b, [&](const Var& v) { return concat_cols(Var(a, false), v); });

  Tensor c = random_matrix(3, 3, rng);
  check_grad(a, [&](const Var& v) { return concat_rows({v, Var(c, false)}); });
  check_grad(c, [&](const Var& v) { return concat_rows({Var(a, false), v}); });

  Var joined = concat_cols(Var(a, false), Var(b, false));
  Var left = slice_cols(joined, 0, 3);
  for (size_t i = 0; i < 2; ++i)
    for (size_t j = 0; j < 3; ++j) CHECK(left.value()[i * 3 + j] == a[i * 3 + j]);
  check_grad(c, [](const Var& v) { return slice_cols(v, 1, 3); });

  // Row repeated in the selection accumulates both adjoint contributions.
  Var sel_leaf(a, true);
  Var picked = select_rows(sel_leaf, {1, 1, 0});
  REQUIRE(picked.shape() == std::vector<size_t>{3, 3});
  backward(sum_all(picked));
  for (size_t j = 0; j < 3; ++j) {
    CHECK(sel_leaf.grad()[0 * 3 + j] == 1.0);
    CHECK(sel_leaf.grad()[1 * 3 + j] == 2.0);
  }
  check_grad(c, [](const Var& v) { return select_rows(v, {2, 0, 2}); });
}

TEST_CASE("gather_cols_per_row picks per-row columns and routes gradients") {
  Tensor m({2, 3}, {1, 2, 3, 4, 5, 6});
  Var leaf(m, true);
  Var g = gather_cols_per_row(leaf, {{2, 0}, {1, 1}});
  REQUIRE(g.shape() == std::vector<size_t>{2, 2});
  CHECK(g.value()[0] == 3.0);
  CHECK(g.value()[1] == 1.0);
  CHECK(g.value()[2] == 5.0);
  CHECK(g.value()[3] == 5.0);
  backward(sum_all(g));
  CHECK(leaf.grad()[0] == 1.0);
  CHECK(leaf.grad()[2] == 1.0);
  CHECK(leaf.grad()[4] == 2.0);  // column picked twice
  CHECK(leaf.grad()[5] == 0.0);
}

TEST_CASE("backward rejects non-scalar roots") {
  Var x(Tensor({2, 2}, {1, 2, 3, 4}), true);
  CHECK_THROWS_AS(backward(mul(x, x)), NumericError);
}

TEST_CASE("no-grad evaluation leaves no graph behind") {
  Var x(Tensor({1, 2}, {1.0, 2.0}), true);
  {
    NoGradGuard ng;
    Var y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
  }
  Var z = mul(x, x);
  CHECK(z.requires_grad());
}
