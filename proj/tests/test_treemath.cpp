#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "esr/treemath.hpp"

using namespace esr;
using namespace esr::treemath;

TEST_SUITE_BEGIN("treemath");

namespace {

// Brute-force oracle: enumerate all head assignments, keep single-root
// acyclic ones, and accumulate Z / marginals / entropy directly.
struct Enumerated {
  double z = 0.0;
  Array mu;
  double entropy = 0.0;
};

bool is_single_root_tree(const std::vector<int>& heads) {
  const int n = static_cast<int>(heads.size());
  int roots = 0;
  for (int i = 0; i < n; ++i)
    if (heads[i] == 0) ++roots;
  if (roots != 1) return false;
  for (int i = 0; i < n; ++i) {
    int cur = i + 1, steps = 0;
    while (cur != 0) {
      cur = heads[cur - 1];
      if (++steps > n) return false;
    }
  }
  return true;
}

Enumerated enumerate(const ArcWeights& aw) {
  const int n = static_cast<int>(aw.n);
  Enumerated out;
  out.mu = Array({aw.n, aw.n + 1});
  std::vector<int> heads(n, 0);
  std::vector<std::pair<std::vector<int>, double>> trees;
  std::function<void(int)> rec = [&](int i) {
    if (i == n) {
      if (!is_single_root_tree(heads)) return;
      double w = 1.0;
      for (int c = 0; c < n; ++c) {
        const int h = heads[c];
        w *= h == 0 ? aw.root[c] : aw.inner.at(h - 1, c);
      }
      trees.emplace_back(heads, w);
      out.z += w;
      return;
    }
    for (int h = 0; h <= n; ++h) {
      if (h == i + 1) continue;
      heads[i] = h;
      rec(i + 1);
    }
  };
  rec(0);
  for (const auto& [tree, w] : trees) {
    const double p = w / out.z;
    out.entropy -= p * std::log(p);
    for (int c = 0; c < n; ++c) out.mu.at(c, tree[c]) += p;
  }
  return out;
}

ArcWeights worked_example() {
  // ROOT->1 = 1, ROOT->2 = 1, 1->2 = 2, 2->1 = 3
  Array inner({2, 2});
  inner.at(0, 1) = 2.0;
  inner.at(1, 0) = 3.0;
  return ArcWeights::from_weights(2, {1.0, 1.0}, inner);
}

}  // namespace

TEST_CASE("n=1 single tree") {
  Array inner({1, 1});
  ArcWeights aw = ArcWeights::from_weights(1, {3.5}, inner);
  CHECK(log_partition(aw) == doctest::Approx(std::log(3.5)).epsilon(1e-12));
  Array mu = edge_marginals(aw);
  CHECK(mu.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(tree_entropy(aw) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("worked n=2 example: Z=5, mu(1->2)=0.4, H=0.6730") {
  ArcWeights aw = worked_example();
  CHECK(std::exp(log_partition(aw)) == doctest::Approx(5.0).epsilon(1e-12));
  Array mu = edge_marginals(aw);
  CHECK(mu.at(1, 1) == doctest::Approx(0.4).epsilon(1e-12));  // 1 -> 2
  CHECK(mu.at(0, 2) == doctest::Approx(0.6).epsilon(1e-12));  // 2 -> 1
  CHECK(mu.at(0, 0) == doctest::Approx(0.4).epsilon(1e-12));  // root -> 1
  const double expected_h = -(0.4 * std::log(0.4) + 0.6 * std::log(0.6));
  CHECK(tree_entropy(aw) == doctest::Approx(expected_h).epsilon(1e-12));
  CHECK(expected_h == doctest::Approx(0.6730).epsilon(1e-4));
}

TEST_CASE("uniform weights count arborescences") {
  Array inner({3, 3}, 1.0);
  ArcWeights aw = ArcWeights::from_weights(3, {1.0, 1.0, 1.0}, inner);
  CHECK(std::exp(log_partition(aw)) == doctest::Approx(9.0).epsilon(1e-9));
  // uniform over 9 trees
  CHECK(tree_entropy(aw) == doctest::Approx(std::log(9.0)).epsilon(1e-9));
}

TEST_CASE("matches enumeration for n in {1,2,3}") {
  Rng rng(2024);
  for (size_t n = 1; n <= 3; ++n) {
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> root(n);
      Array inner({n, n});
      for (size_t i = 0; i < n; ++i) {
        root[i] = 0.25 + 2.0 * rng.real();
        for (size_t j = 0; j < n; ++j)
          if (i != j) inner.at(i, j) = 0.25 + 2.0 * rng.real();
      }
      ArcWeights aw = ArcWeights::from_weights(n, root, inner);
      Enumerated e = enumerate(aw);
      CHECK(log_partition(aw) == doctest::Approx(std::log(e.z)).epsilon(1e-9));
      Array mu = edge_marginals(aw);
      double row_sum_err = 0.0;
      for (size_t c = 0; c < n; ++c) {
        double row = 0.0;
        for (size_t h = 0; h <= n; ++h) {
          CHECK(mu.at(c, h) == doctest::Approx(e.mu.at(c, h)).epsilon(1e-9));
          CHECK(mu.at(c, h) >= -1e-12);
          CHECK(mu.at(c, h) <= 1.0 + 1e-12);
          row += mu.at(c, h);
        }
        row_sum_err = std::max(row_sum_err, std::fabs(row - 1.0));
      }
      CHECK(row_sum_err < 1e-9);
      CHECK(tree_entropy(aw) == doctest::Approx(e.entropy).epsilon(1e-9));
      CHECK(tree_entropy(aw) >= -1e-9);
    }
  }
}

TEST_CASE("gradient of log Z w.r.t. scores equals edge marginals") {
  Rng rng(7);
  for (size_t n : {2ul, 3ul, 4ul}) {
    Array scores({n, n + 1});
    for (size_t i = 0; i < scores.size(); ++i) scores[i] = 2.0 * rng.normal();
    ad::Tape t;
    ad::Var s = t.leaf(scores);
    ad::Var lz = log_partition_node(s);
    t.backward(lz);
    Array mu = edge_marginals(ArcWeights::from_scores(scores));
    for (size_t k = 0; k < mu.size(); ++k)
      CHECK(s.grad()[k] == doctest::Approx(mu[k]).epsilon(1e-10));

    auto fn = [](ad::Tape&, const std::vector<ad::Var>& v) {
      return log_partition_node(v[0]);
    };
    CHECK(ad::grad_check(fn, {scores}) < 1e-5);
  }
}

TEST_CASE("edge_marginals_node and tree_entropy_node pass grad_check") {
  Rng rng(11);
  for (size_t n : {2ul, 3ul}) {
    Array scores({n, n + 1});
    for (size_t i = 0; i < scores.size(); ++i) scores[i] = 1.5 * rng.normal();
    Array weights({n, n + 1});
    for (size_t i = 0; i < weights.size(); ++i) weights[i] = rng.normal();

    // random linear functional of the marginal matrix
    auto fn_mu = [&](ad::Tape& tt, const std::vector<ad::Var>& v) {
      ad::Var mu = edge_marginals_node(v[0]);
      return ad::sum(ad::mul(mu, tt.constant(weights)));
    };
    CHECK(ad::grad_check(fn_mu, {scores}) < 1e-5);

    auto fn_h = [](ad::Tape&, const std::vector<ad::Var>& v) {
      return tree_entropy_node(v[0]);
    };
    CHECK(ad::grad_check(fn_h, {scores}) < 1e-5);

    // node values agree with the plain computations
    ad::Tape t;
    ad::Var s = t.leaf(scores);
    CHECK(tree_entropy_node(s).value().item() ==
          doctest::Approx(tree_entropy(ArcWeights::from_scores(scores)))
              .epsilon(1e-12));
  }
}

TEST_SUITE_END();
