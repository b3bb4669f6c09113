#include <doctest.h>

#include <cmath>

#include "elm/autodiff.hpp"
#include "elm/error.hpp"
#include "elm/rng.hpp"
#include "../support/oracles.hpp"

using namespace elm;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t(Shape{r, c});
  for (double& v : t.data()) v = standard_normal(rng);
  return t;
}

// Central-difference check of d f(x) / dx for a free variable x.
double fd_max_rel(const Tensor& x0, const std::function<Var(Tape&, Var)>& f) {
  Tape tape;
  Var x = tape.variable(x0);
  tape.backward(f(tape, x));
  std::vector<double> analytic(tape.grad(x).begin(), tape.grad(x).end());
  double worst = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    Tensor up = x0, down = x0;
    up[i] += 1e-5;
    down[i] -= 1e-5;
    Tape a(false), b(false);
    const double n = (f(a, a.constant(up)).item() - f(b, b.constant(down)).item()) / 2e-5;
    worst = std::max(worst, testing::rel_error(analytic[i], n, 1e-8));
  }
  return worst;
}

}  // namespace

TEST_CASE("tensor shape invariants") {
  Tensor t(Shape{2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK_FALSE(t.has_grad());
  t.ensure_grad();
  CHECK(t.grad().size() == 6);
  CHECK_THROWS_AS(Tensor(Shape{2, 0}), DimensionError);
  CHECK_THROWS_AS(t.reshape(Shape{4}), DimensionError);
  t.reshape(Shape{3, 2});
  CHECK(t.rows() == 3);
}

TEST_CASE("matmul values and shape errors") {
  Tape tape(false);
  Var id = tape.constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  Var m = tape.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  Var out = matmul(id, m);
  for (std::size_t i = 0; i < 4; ++i) CHECK(out.value()[i] == m.value()[i]);

  Var zero = tape.constant(Tensor(Shape{2, 2}));
  Var any = tape.constant(Tensor::matrix(2, 3, {1, -2, 3, 4, 5, 6}));
  for (double v : matmul(zero, any).value().data()) CHECK(v == 0.0);

  CHECK_THROWS_AS(matmul(any, any), DimensionError);
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(7);
  const Tensor a = random_matrix(3, 4, rng), b = random_matrix(4, 2, rng);
  Tape tape;
  Var va = tape.variable(a), vb = tape.variable(b);
  tape.backward(sum(matmul(va, vb)));
  // d sum(ab) / d a[i][k] = sum_j b[k][j]
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(tape.grad(va)[i * 4 + k] == doctest::Approx(b.at(k, 0) + b.at(k, 1)).epsilon(1e-12));
    }
  }
  CHECK(fd_max_rel(a, [&](Tape& t, Var x) { return sum(matmul(x, t.constant(b))); }) < 1e-6);
  CHECK(fd_max_rel(b, [&](Tape& t, Var x) { return sum(matmul(t.constant(a), x)); }) < 1e-6);
}

TEST_CASE("elementwise values") {
  Tape tape(false);
  Var s = softmax(tape.constant(Tensor::vector({0, 0, 0})));
  for (double v : s.value().data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));
  for (double a : {-3.5, 0.0, 2.0, 700.0}) CHECK(logsumexp(tape.constant(Tensor::vector({a}))).item() == a);
  // Overflow-safe.
  CHECK(logsumexp(tape.constant(Tensor::vector({1000, 1000}))).item() ==
        doctest::Approx(1000 + std::log(2.0)).epsilon(1e-15));
  Var x = tape.constant(Tensor::vector({1, 2}));
  Var y = tape.constant(Tensor::vector({3, 5}));
  CHECK(add(x, y).value()[1] == 7);
  CHECK(mul(x, y).value()[1] == 10);
  CHECK(exp(x).value()[0] == doctest::Approx(std::exp(1.0)));
  CHECK(tanh(x).value()[1] == doctest::Approx(std::tanh(2.0)));
  CHECK(log(y).value()[0] == doctest::Approx(std::log(3.0)));
}

TEST_CASE("domain and index errors") {
  Tape tape(false);
  CHECK_THROWS_AS(log(tape.constant(Tensor::vector({1.0, 0.0}))), DomainError);
  CHECK_THROWS_AS(log(tape.constant(Tensor::vector({-2.0}))), DomainError);
  const std::vector<std::size_t> bad = {3};
  CHECK_THROWS_AS(gather(tape.constant(Tensor::vector({1, 2, 3})), bad), IndexError);
  CHECK_THROWS_AS(add(tape.constant(Tensor::vector({1, 2, 3})), tape.constant(Tensor::vector({1, 2}))),
                  DimensionError);
}

TEST_CASE("gather backward scatters to selected slots only") {
  Tape tape;
  Var v = tape.variable(Tensor::vector({1, 2, 3, 4}));
  const std::vector<std::size_t> idx = {2, 0, 2};
  tape.backward(sum(mul(gather(v, idx), tape.constant(Tensor::vector({1, 10, 100})))));
  const auto g = tape.grad(v);
  CHECK(g[0] == 10);
  CHECK(g[1] == 0);
  CHECK(g[2] == 101);
  CHECK(g[3] == 0);
  Rng rng(3);
  const Tensor x = random_matrix(2, 3, rng);
  CHECK(fd_max_rel(x, [&](Tape&, Var a) { return sum(exp(gather(a, idx))); }) < 1e-6);
}

TEST_CASE("backward basics") {
  Tape tape;
  Var x = tape.variable(Tensor::scalar(3));
  tape.backward(mul(x, x));
  CHECK(tape.grad(x)[0] == 6);

  Tape t2;
  Var v = t2.variable(Tensor::vector({0.5, -1.0, 2.0}));
  Var s = softmax(t2.constant(v.value()));
  t2.backward(logsumexp(v));
  for (std::size_t i = 0; i < 3; ++i) CHECK(t2.grad(v)[i] == doctest::Approx(s.value()[i]).epsilon(1e-14));

  Tape t3;
  Var m = t3.variable(Tensor::vector({1, 2}));
  CHECK_THROWS_AS(t3.backward(m), ContractError);
  t3.backward(sum(m));
  CHECK_THROWS_AS(t3.backward(sum(m)), ContractError);
}

TEST_CASE("every primitive passes a finite-difference check") {
  Rng rng(11);
  const Tensor a = random_matrix(3, 4, rng);
  Tensor pos = a;
  for (double& v : pos.data()) v = 0.5 + std::abs(v);
  const Tensor row = random_matrix(1, 4, rng);
  const Tensor vec4 = Tensor::vector({0.3, -0.2, 0.9, 1.4});
  const std::vector<std::size_t> cols = {1, 3, 0};
  const std::vector<std::size_t> rows = {2, 0, 2, 1};

  auto weigh = [&](Tape& t, Var out) {
    // Random linear functional so the check is not symmetric in the outputs.
    Tensor c(out.value().shape());
    Rng r(99);
    for (double& v : c.data()) v = standard_normal(r);
    return sum(mul(out, t.constant(c)));
  };
  struct Case {
    const char* name;
    Tensor input;
    std::function<Var(Tape&, Var)> f;
  };
  const std::vector<Case> cases = {
      {"add broadcast", a, [&](Tape& t, Var x) { return weigh(t, add(x, t.constant(vec4))); }},
      {"add broadcast rhs", vec4, [&](Tape& t, Var x) { return weigh(t, add(t.constant(a), x)); }},
      {"sub", a, [&](Tape& t, Var x) { return weigh(t, sub(exp(x), mul(x, t.constant(a)))); }},
      {"mul", a, [&](Tape& t, Var x) { return weigh(t, mul(x, x)); }},
      {"mul broadcast rhs", row, [&](Tape& t, Var x) { return weigh(t, mul(t.constant(a), x)); }},
      {"scale", a, [&](Tape& t, Var x) { return weigh(t, scale(add_scalar(neg(x), 0.5), -1.7)); }},
      {"exp", a, [&](Tape& t, Var x) { return weigh(t, exp(x)); }},
      {"log", pos, [&](Tape& t, Var x) { return weigh(t, log(x)); }},
      {"tanh", a, [&](Tape& t, Var x) { return weigh(t, tanh(x)); }},
      {"gelu", a, [&](Tape& t, Var x) { return weigh(t, gelu(x)); }},
      {"softmax", a, [&](Tape& t, Var x) { return weigh(t, softmax(x)); }},
      {"log_softmax", a, [&](Tape& t, Var x) { return weigh(t, log_softmax(x)); }},
      {"logsumexp", a, [&](Tape& t, Var x) { return weigh(t, logsumexp(x)); }},
      {"sum_rows", a, [&](Tape& t, Var x) { return weigh(t, sum_rows(x)); }},
      {"pick", a, [&](Tape& t, Var x) { return weigh(t, pick(x, cols)); }},
      {"take_rows", a, [&](Tape& t, Var x) { return weigh(t, take_rows(x, rows)); }},
      {"take_cols", a, [&](Tape& t, Var x) { return weigh(t, take_cols(x, rows)); }},
      {"transpose", a, [&](Tape& t, Var x) { return weigh(t, matmul(transpose(x), x)); }},
      {"concat_cols", a, [&](Tape& t, Var x) { return weigh(t, concat_cols({x, exp(x)})); }},
      {"concat", vec4, [&](Tape& t, Var x) { return weigh(t, concat({x, sum(x), tanh(x)})); }},
      {"layer_norm input", a,
       [&](Tape& t, Var x) {
         return weigh(t, layer_norm(x, t.constant(Tensor::vector({1, 2, 0.5, 1})), t.constant(vec4), 1e-5));
       }},
      {"layer_norm gain", vec4,
       [&](Tape& t, Var g) { return weigh(t, layer_norm(t.constant(a), g, t.constant(vec4), 1e-5)); }},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    CHECK(fd_max_rel(c.input, c.f) < 1e-6);
  }
}

TEST_CASE("composite two-layer network gradient") {
  Rng rng(5);
  ParamStore ps;
  Tensor& w1 = ps.add("w1", random_matrix(4, 6, rng));
  Tensor& b1 = ps.add("b1", Tensor::vector({0.1, -0.1, 0.2, 0, 0.3, -0.3}));
  Tensor& w2 = ps.add("w2", random_matrix(6, 3, rng));
  const Tensor x = random_matrix(5, 4, rng);
  const std::vector<std::size_t> targets = {0, 2, 1, 1, 0};
  auto loss = [&](Tape& t) {
    Var h = tanh(add(matmul(t.constant(x), t.param(w1)), t.param(b1)));
    return neg(sum(pick(log_softmax(matmul(h, t.param(w2))), targets)));
  };
  CHECK(testing::check_gradients(ps, loss).max_rel_error < 1e-4);
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(8);
  ParamStore ps;
  Tensor& w = ps.add("w", random_matrix(3, 3, rng));
  ps.set_requires_grad(true);
  const Tensor x = random_matrix(2, 3, rng);
  auto l1 = [&](Tape& t) { return sum(exp(matmul(t.constant(x), t.param(w)))); };
  auto l2 = [&](Tape& t) { return logsumexp(concat({sum(tanh(t.param(w))), sum(t.param(w))})); };
  auto grad_of = [&](const std::function<Var(Tape&)>& f) {
    ps.zero_grad();
    Tape t;
    t.backward(f(t));
    return ps.flat_grads();
  };
  const auto g1 = grad_of(l1), g2 = grad_of(l2);
  const auto g = grad_of([&](Tape& t) { return add(scale(l1(t), 2.5), scale(l2(t), -0.75)); });
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == doctest::Approx(2.5 * g1[i] - 0.75 * g2[i]).epsilon(1e-12));
}

TEST_CASE("param nodes are shared and forward is bit-identical") {
  ParamStore ps;
  Tensor& w = ps.add("w", Tensor::vector({1, 2, 3}));
  ps.set_requires_grad(true);
  ps.zero_grad();
  Tape t;
  Var a = t.param(w), b = t.param(w);
  CHECK(a.id() == b.id());
  t.backward(sum(mul(a, b)));
  CHECK(w.grad()[2] == 6);

  Rng rng(1);
  const Tensor x = random_matrix(3, 3, rng);
  Tape p(false), q(false);
  const Tensor r1 = softmax(matmul(p.constant(x), p.constant(x))).value();
  const Tensor r2 = softmax(matmul(q.constant(x), q.constant(x))).value();
  for (std::size_t i = 0; i < r1.size(); ++i) CHECK(r1[i] == r2[i]);
}
