#include <cmath>

#include "doctest.h"
#include "esr/autodiff.hpp"
#include "esr/common.hpp"

using namespace esr;
using namespace esr::ad;

TEST_SUITE_BEGIN("autodiff");

TEST_CASE("product rule at (2,3)") {
  Tape t;
  Var x = t.leaf(Array::scalar(2.0));
  Var y = t.leaf(Array::scalar(3.0));
  Var z = mul(x, y);
  t.backward(z);
  CHECK(x.grad()[0] == doctest::Approx(3.0));
  CHECK(y.grad()[0] == doctest::Approx(2.0));
}

TEST_CASE("softmax of zeros is uniform") {
  Tape t;
  Var x = t.leaf(Array::vec({0.0, 0.0}));
  Var s = softmax(x);
  CHECK(s.value()[0] == doctest::Approx(0.5));
  CHECK(s.value()[1] == doctest::Approx(0.5));
}

TEST_CASE("gradient of logsumexp equals softmax") {
  Tape t;
  Var x = t.leaf(Array::vec({0.3, -1.2, 2.0}));
  Var l = sum(logsumexp(x));
  t.backward(l);
  Tape t2;
  Var x2 = t2.leaf(Array::vec({0.3, -1.2, 2.0}));
  Var s = softmax(x2);
  for (size_t i = 0; i < 3; ++i)
    CHECK(x.grad()[i] == doctest::Approx(s.value()[i]).epsilon(1e-12));
}

TEST_CASE("grad_check x^2 at 3") {
  auto fn = [](Tape& t, const std::vector<Var>& xs) {
    (void)t;
    return mul(xs[0], xs[0]);
  };
  double err = grad_check(fn, {Array::scalar(3.0)});
  CHECK(err < 1e-9);
  Tape t;
  Var x = t.leaf(Array::scalar(3.0));
  Var y = mul(x, x);
  t.backward(y);
  CHECK(x.grad()[0] == doctest::Approx(6.0));
}

static Array random_array(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  Array a(shape);
  for (size_t i = 0; i < a.size(); ++i) a[i] = lo + (hi - lo) * rng.real();
  return a;
}

TEST_CASE("grad_check covers every primitive op") {
  Rng rng(1234);
  auto check = [&](const char* name,
                   std::function<Var(Tape&, const std::vector<Var>&)> fn,
                   std::vector<Array> point, double tol = 1e-6) {
    INFO(name);
    CHECK(grad_check(fn, point) < tol);
  };

  Array a = random_array({3, 4}, rng);
  Array b = random_array({3, 4}, rng);
  // keep away from relu/abs kinks and div/log guards
  Array pos = random_array({3, 4}, rng, 0.5, 2.0);
  Array sc = Array::scalar(1.7);

  check("add", [](Tape&, const std::vector<Var>& v) { return sum(add(v[0], v[1])); },
        {a, b});
  check("sub", [](Tape&, const std::vector<Var>& v) { return sum(sub(v[0], v[1])); },
        {a, b});
  check("mul", [](Tape&, const std::vector<Var>& v) { return sum(mul(v[0], v[1])); },
        {a, b});
  check("div", [](Tape&, const std::vector<Var>& v) { return sum(div(v[0], v[1])); },
        {a, pos});
  check("scalar b",
        [](Tape&, const std::vector<Var>& v) { return sum(mul(v[0], v[1])); },
        {a, sc});
  check("scalar a",
        [](Tape&, const std::vector<Var>& v) { return sum(div(v[1], v[0])); },
        {sc, a});
  check("exp", [](Tape&, const std::vector<Var>& v) { return sum(exp(v[0])); }, {a});
  check("log", [](Tape&, const std::vector<Var>& v) { return sum(log(v[0])); },
        {pos});
  check("tanh", [](Tape&, const std::vector<Var>& v) { return sum(tanh(v[0])); },
        {a});
  check("relu", [](Tape&, const std::vector<Var>& v) { return sum(relu(v[0])); },
        {pos});
  check("absval", [](Tape&, const std::vector<Var>& v) { return sum(absval(v[0])); },
        {pos});
  check("matmul",
        [](Tape&, const std::vector<Var>& v) { return sum(matmul(v[0], v[1])); },
        {random_array({3, 2}, rng), random_array({2, 4}, rng)});
  check("transpose",
        [](Tape&, const std::vector<Var>& v) {
          return sum(mul(transpose(v[0]), transpose(v[0])));
        },
        {a});
  check("mean", [](Tape&, const std::vector<Var>& v) { return mean(v[0]); }, {a});
  check("sum_axis0",
        [](Tape&, const std::vector<Var>& v) {
          Var s = sum_axis(v[0], 0);
          return sum(mul(s, s));
        },
        {a});
  check("sum_axis1",
        [](Tape&, const std::vector<Var>& v) {
          Var s = sum_axis(v[0], 1);
          return sum(mul(s, s));
        },
        {a});
  check("reshape",
        [](Tape&, const std::vector<Var>& v) {
          Var r = reshape(v[0], {4, 3});
          return sum(mul(r, r));
        },
        {a});
  check("gather_rows",
        [](Tape&, const std::vector<Var>& v) {
          Var g = gather_rows(v[0], {2, 0, 2});
          return sum(mul(g, g));
        },
        {a});
  check("pick",
        [](Tape&, const std::vector<Var>& v) {
          Var p = pick(v[0], {0, 5, 5, 11});
          return sum(mul(p, p));
        },
        {a});
  check("concat_rows",
        [](Tape&, const std::vector<Var>& v) {
          Var c = concat_rows({v[0], v[1]});
          return sum(mul(c, c));
        },
        {a, b});
  check("stack_last",
        [](Tape&, const std::vector<Var>& v) {
          Var s = stack_last({v[0], v[1]});
          return sum(mul(s, s));
        },
        {a, b});
  check("add_rowvec",
        [](Tape&, const std::vector<Var>& v) {
          Var r = add_rowvec(v[0], v[1]);
          return sum(mul(r, r));
        },
        {a, random_array({4}, rng)});
  check("sub_colvec",
        [](Tape&, const std::vector<Var>& v) {
          Var r = sub_colvec(v[0], v[1]);
          return sum(mul(r, r));
        },
        {a, random_array({3}, rng)});
  check("softmax",
        [](Tape&, const std::vector<Var>& v) {
          Var s = softmax(v[0]);
          return sum(mul(s, s));
        },
        {a});
  check("log_softmax",
        [](Tape&, const std::vector<Var>& v) {
          Var s = log_softmax(v[0]);
          return sum(mul(s, s));
        },
        {a});
  check("logsumexp",
        [](Tape&, const std::vector<Var>& v) {
          Var s = logsumexp(v[0]);
          return sum(mul(s, s));
        },
        {a});

  Array mask({3, 4}, 1.0);
  mask.at(0, 1) = 0.0;
  mask.at(2, 3) = 0.0;
  check("masked_softmax",
        [mask](Tape&, const std::vector<Var>& v) {
          Var s = masked_softmax(v[0], mask);
          return sum(mul(s, s));
        },
        {a});
  check("masked_log_softmax",
        [mask](Tape&, const std::vector<Var>& v) {
          Var s = masked_log_softmax(v[0], mask);
          // only touch allowed entries; masked ones hold a -1e300 sentinel
          return sum(mul(exp(s), s));
        },
        {a});
}

TEST_CASE("masked softmax zeroes masked entries exactly") {
  Tape t;
  Var x = t.leaf(Array::matrix(2, 3, {5.0, 1.0, 2.0, 0.0, 0.0, 0.0}));
  Array mask = Array::matrix(2, 3, {0, 1, 1, 1, 1, 0});
  Var s = masked_softmax(x, mask);
  CHECK(s.value().at(0, 0) == 0.0);
  CHECK(s.value().at(1, 2) == 0.0);
  CHECK(s.value().at(0, 1) + s.value().at(0, 2) == doctest::Approx(1.0));
}

TEST_CASE("custom node: identity passes gradient through") {
  Tape t;
  Var x = t.leaf(Array::vec({1.0, -2.0, 0.5}));
  size_t xi = x.id();
  Var y = custom(t, x.value(), {x}, [xi](Tape& t, const Array& up) {
    Array& g = t.grad_mut(xi);
    for (size_t i = 0; i < up.size(); ++i) g[i] += up[i];
  });
  Var loss = sum(mul(y, y));
  t.backward(loss);
  for (size_t i = 0; i < 3; ++i)
    CHECK(x.grad()[i] == doctest::Approx(2.0 * x.value()[i]));
}

TEST_CASE("custom node wrapping sum matches primitive sum") {
  Array point = Array::vec({0.3, 1.5, -0.7});
  auto viaCustom = [](Tape& t, const std::vector<Var>& v) {
    double s = 0.0;
    for (size_t i = 0; i < v[0].value().size(); ++i) s += v[0].value()[i];
    size_t id = v[0].id();
    return custom(t, Array::scalar(s), {v[0]}, [id](Tape& t, const Array& up) {
      Array& g = t.grad_mut(id);
      for (size_t i = 0; i < g.size(); ++i) g[i] += up[0];
    });
  };
  Tape t1, t2;
  Var a = t1.leaf(point);
  Var s1 = viaCustom(t1, {a});
  t1.backward(s1);
  Var b = t2.leaf(point);
  Var s2 = sum(b);
  t2.backward(s2);
  CHECK(s1.value()[0] == doctest::Approx(s2.value()[0]));
  for (size_t i = 0; i < 3; ++i)
    CHECK(a.grad()[i] == doctest::Approx(b.grad()[i]));
}

TEST_CASE("determinism: identical seeds give bit-identical values") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    Tape t;
    Var w = t.leaf(Array::matrix(4, 4, [&] {
      std::vector<double> v(16);
      for (auto& x : v) x = rng.normal();
      return v;
    }()));
    Var h = tanh(matmul(w, transpose(w)));
    Var l = mean(mul(h, h));
    t.backward(l);
    return std::make_pair(l.value()[0], w.grad()[5]);
  };
  auto [v1, g1] = run(99);
  auto [v2, g2] = run(99);
  CHECK(v1 == v2);
  CHECK(g1 == g2);
}

TEST_CASE("shape mismatch names the op") {
  Tape t;
  Var a = t.leaf(Array::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  Var b = t.leaf(Array::matrix(2, 2, {1, 2, 3, 4}));
  CHECK_THROWS_WITH_AS(add(a, b),
                       doctest::Contains("add"), Error);
  CHECK_THROWS_AS(matmul(a, a), Error);
}

TEST_SUITE_END();
