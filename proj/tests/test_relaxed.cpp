#include <cmath>

#include "doctest.h"
#include "esr/oracle.hpp"
#include "esr/relaxed.hpp"

using namespace esr;
using namespace esr::relaxed;

TEST_SUITE_BEGIN("relaxed");

namespace {

Vocab nv_vocab() {
  Treebank tb = read_conllu_text(
      "1\ta\t_\tA\t_\t_\t2\tx\t_\t_\n"
      "2\tb\t_\tB\t_\t_\t0\tr\t_\t_\n\n",
      ReadMode::labeled);
  return Vocab::build(tb);
}

MarginalSet one_hot_margs(const Vocab& v, const stats::Structure& st) {
  const size_t n = st.size();
  MarginalSet ms;
  ms.n = n;
  ms.tag = Array({n, v.tag_count()});
  ms.head = Array({n, n + 1});
  ms.label = Array({n, n + 1, v.label_count()});
  ms.arc_scores = Array({n, n + 1});
  for (size_t i = 0; i < n; ++i) {
    ms.tag.at(i, st.tags[i]) = 1.0;
    ms.head.at(i, static_cast<size_t>(st.heads[i])) = 1.0;
    for (size_t j = 0; j <= n; ++j) ms.label.at(i, j, st.labels[i]) = 1.0;
  }
  return ms;
}

std::vector<MarginalVars> as_vars(ad::Tape& t, const std::vector<MarginalSet>& batch) {
  std::vector<MarginalVars> out;
  for (const MarginalSet& ms : batch) {
    MarginalVars mv;
    mv.n = ms.n;
    // log-marginals with the masked-entry sentinel
    Array tag_logp(ms.tag.shape()), head_logp(ms.head.shape()),
        label_logp(ms.label.shape());
    auto fill = [](const Array& p, Array& lp) {
      for (size_t i = 0; i < p.size(); ++i)
        lp[i] = p[i] > 0.0 ? std::log(p[i]) : -1e300;
    };
    fill(ms.tag, tag_logp);
    fill(ms.head, head_logp);
    fill(ms.label, label_logp);
    mv.tag_logp = t.leaf(tag_logp);
    mv.head_logp = t.leaf(head_logp);
    mv.label_logp = t.leaf(label_logp);
    mv.tag_prob = t.leaf(ms.tag);
    mv.head_prob = t.leaf(ms.head);
    mv.label_prob = t.leaf(ms.label);
    mv.arc_scores = t.leaf(ms.arc_scores);
    out.push_back(mv);
  }
  return out;
}

}  // namespace

TEST_CASE("one-hot marginals: mc equals the gold statistic at any sample count") {
  Vocab v = nv_vocab();
  Sentence s;
  s.words = {"a", "b"};
  s.tags = {"A", "B"};
  s.heads = {2, 0};
  s.labels = {"x", "r"};
  stats::Structure st = stats::structure_of(v, s);
  MarginalSet ms = one_hot_margs(v, st);
  stats::StatisticSpec cld = stats::catalog_make(v, "cld");
  stats::StatisticVector mc = mc_estimate(cld, {ms}, 3, 7);
  Array gold_g = stats::count_gold(cld, v, std::vector<const Sentence*>{&s});
  stats::StatisticVector gold = stats::aggregate(cld, gold_g);
  for (size_t j = 0; j < cld.dim_f; ++j)
    CHECK(mc.values[j] == gold.values[j]);
}

TEST_CASE("mc at 100k samples: n=1 Bernoulli tag lands within 0.005") {
  Vocab v = nv_vocab();
  MarginalSet ms;
  ms.n = 1;
  ms.tag = Array({1, v.tag_count()});
  ms.tag.at(0, v.tag_index("A")) = 0.7;
  ms.tag.at(0, v.tag_index("B")) = 0.3;
  ms.head = Array({1, 2});
  ms.head.at(0, 0) = 1.0;  // forced root arc
  ms.label = Array({1, 2, v.label_count()});
  for (size_t j = 0; j < 2; ++j) ms.label.at(0, j, v.label_index("x")) = 1.0;
  ms.arc_scores = Array({1, 2});
  stats::StatisticSpec cld = stats::catalog_make(v, "cld");
  stats::StatisticVector est = mc_estimate(cld, {ms}, 100000, 2024);
  const size_t target = *cld.event_from_name("A,x,root", v);
  CHECK(std::fabs(est.values[target] - 0.7) < 0.005);
}

TEST_CASE("fixed seed gives bit-identical estimates") {
  Vocab v = nv_vocab();
  Rng rng(3);
  MarginalSet ms = oracle::random_instance(3, v.tag_count(), v.label_count(), rng);
  stats::StatisticSpec cld = stats::catalog_make(v, "cld");
  stats::StatisticVector a = mc_estimate(cld, {ms}, 500, 42);
  stats::StatisticVector b = mc_estimate(cld, {ms}, 500, 42);
  for (size_t j = 0; j < cld.dim_f; ++j) CHECK(a.values[j] == b.values[j]);
  stats::StatisticVector c = mc_estimate(cld, {ms}, 500, 43);
  bool any_diff = false;
  for (size_t j = 0; j < cld.dim_f; ++j)
    if (a.values[j] != c.values[j]) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("mc converges to the exact expectation (3-sigma band)") {
  Vocab v = nv_vocab();
  Rng rng(11);
  MarginalSet ms = oracle::random_instance(2, v.tag_count(), v.label_count(), rng);
  for (const char* id : {"cld", "sibling", "valency", "pos-bigram"}) {
    stats::StatisticSpec spec = stats::catalog_make(v, id);
    const size_t S = 40000;
    stats::StatisticVector est = mc_estimate(spec, {ms}, S, 99);
    stats::StatisticVector exact =
        stats::aggregate(spec, stats::expect_arrays(spec, stats::views(ms)));
    // mc_estimate is a ratio of sample means (h applied to the averaged
    // gbar), so the right 3-sigma scale is the delta-method standard error
    // with exact per-sample moments from enumeration
    auto structures = oracle::enumerate_structures(ms, oracle::Mode::independent);
    for (size_t j = 0; j < spec.dim_f; ++j) {
      const size_t num = spec.num_idx[j];
      const auto& members = spec.den_members[spec.den_group[j]];
      double mean_n = 0.0, mean_d = 0.0, var_n = 0.0, var_d = 0.0, cov = 0.0;
      for (const auto& ws : structures) {
        Array g({spec.dim_g});
        stats::count_structure(spec, ws.st, g);
        double d = 0.0;
        for (size_t slot : members) d += g[slot];
        mean_n += ws.prob * g[num];
        mean_d += ws.prob * d;
        var_n += ws.prob * g[num] * g[num];
        var_d += ws.prob * d * d;
        cov += ws.prob * g[num] * d;
      }
      var_n -= mean_n * mean_n;
      var_d -= mean_d * mean_d;
      cov -= mean_n * mean_d;
      const double fj = exact.values[j];
      const double se =
          mean_d > 0.0
              ? std::sqrt(std::max(
                    0.0, (var_n - 2.0 * fj * cov + fj * fj * var_d)) /
                    static_cast<double>(S)) /
                    mean_d
              : 0.0;
      INFO(id << " event " << j);
      CHECK(std::fabs(est.values[j] - exact.values[j]) <= 3.5 * se + 1e-9);
    }
  }
}

TEST_CASE("tree-mode sampling follows the arborescence distribution") {
  Vocab v = nv_vocab();
  Rng rng(5);
  MarginalSet ms = oracle::random_instance(2, v.tag_count(), v.label_count(), rng);
  stats::StatisticSpec cld = stats::catalog_make(v, "cld");
  const size_t S = 60000;
  stats::StatisticVector est = mc_estimate(cld, {ms}, S, 7, SampleMode::tree);
  stats::StatisticVector exact = oracle::oracle_expect(cld, ms, oracle::Mode::tree);
  for (size_t j = 0; j < cld.dim_f; ++j)
    CHECK(std::fabs(est.values[j] - exact.values[j]) < 0.02);
}

TEST_CASE("relaxed at tiny temperature equals the hard-sample estimate") {
  Vocab v = nv_vocab();
  Rng rng(13);
  std::vector<MarginalSet> batch = {
      oracle::random_instance(2, v.tag_count(), v.label_count(), rng),
      oracle::random_instance(3, v.tag_count(), v.label_count(), rng)};
  stats::StatisticSpec cld = stats::catalog_make(v, "cld");
  const size_t S = 5;
  const uint64_t seed = 321;
  stats::StatisticVector hard = mc_estimate(cld, batch, S, seed);
  ad::Tape t;
  std::vector<MarginalVars> vars = as_vars(t, batch);
  ad::Var soft = relaxed_estimate(cld, vars, S, 1e-4, seed);
  for (size_t j = 0; j < cld.dim_f; ++j)
    CHECK(soft.value()[j] == doctest::Approx(hard.values[j]).epsilon(1e-6));
}

TEST_CASE("one-hot marginals: relaxed equals the exact statistic at any tau") {
  Vocab v = nv_vocab();
  Sentence s;
  s.words = {"a", "b"};
  s.tags = {"A", "B"};
  s.heads = {2, 0};
  s.labels = {"x", "r"};
  stats::Structure st = stats::structure_of(v, s);
  MarginalSet ms = one_hot_margs(v, st);
  stats::StatisticSpec cld = stats::catalog_make(v, "cld");
  Array gold_g = stats::count_gold(cld, v, std::vector<const Sentence*>{&s});
  stats::StatisticVector gold = stats::aggregate(cld, gold_g);
  for (double tau : {0.25, 1.0, 4.0}) {
    ad::Tape t;
    std::vector<MarginalVars> vars = as_vars(t, {ms});
    ad::Var est = relaxed_estimate(cld, vars, 3, tau, 9);
    for (size_t j = 0; j < cld.dim_f; ++j)
      CHECK(est.value()[j] == doctest::Approx(gold.values[j]).epsilon(1e-9));
  }
}

TEST_CASE("relaxed at 10k samples lands near the exact expectation") {
  Vocab v = nv_vocab();
  Rng rng(17);
  MarginalSet ms = oracle::random_instance(2, v.tag_count(), v.label_count(), rng);
  stats::StatisticSpec cld = stats::catalog_make(v, "cld");
  stats::StatisticVector exact =
      stats::aggregate(cld, stats::expect_arrays(cld, stats::views(ms)));
  ad::Tape t;
  std::vector<MarginalVars> vars = as_vars(t, {ms});
  ad::Var est = relaxed_estimate(cld, vars, 10000, 0.5, 77);
  double linf = 0.0;
  for (size_t j = 0; j < cld.dim_f; ++j)
    linf = std::max(linf, std::fabs(est.value()[j] - exact.values[j]));
  CHECK(linf < 0.02);
}

TEST_CASE("relaxed gradients are finite and pass grad_check on the relaxed objective") {
  Vocab v = nv_vocab();
  Rng rng(19);
  const size_t n = 2, T = v.tag_count(), R = v.label_count();
  Array tag_s({n, T}), head_s({n, n + 1}), label_s({n, n + 1, R});
  for (size_t i = 0; i < tag_s.size(); ++i) tag_s[i] = rng.normal();
  for (size_t i = 0; i < head_s.size(); ++i) head_s[i] = rng.normal();
  for (size_t i = 0; i < label_s.size(); ++i) label_s[i] = rng.normal();
  Array mask({n, n + 1}, 1.0);
  for (size_t i = 0; i < n; ++i) mask.at(i, i + 1) = 0.0;
  stats::StatisticSpec cld = stats::catalog_make(v, "cld");
  Array probe({cld.dim_f});
  for (size_t i = 0; i < probe.size(); ++i) probe[i] = rng.normal();
  auto fn = [&](ad::Tape& t, const std::vector<ad::Var>& vars) {
    MarginalVars mv;
    mv.n = n;
    mv.tag_logp = ad::log_softmax(vars[0]);
    mv.head_logp = ad::masked_log_softmax(vars[1], mask);
    mv.label_logp = ad::log_softmax(vars[2]);
    mv.tag_prob = ad::exp(mv.tag_logp);
    mv.head_prob = ad::exp(mv.head_logp);
    mv.label_prob = ad::exp(mv.label_logp);
    ad::Var est = relaxed_estimate(cld, {mv}, 3, 0.8, 55);
    return ad::sum(ad::mul(est, t.constant(probe)));
  };
  CHECK(ad::grad_check(fn, {tag_s, head_s, label_s}) < 1e-4);
}

TEST_CASE("temperature must be positive; entropy families are rejected") {
  Vocab v = nv_vocab();
  Rng rng(29);
  MarginalSet ms = oracle::random_instance(2, v.tag_count(), v.label_count(), rng);
  stats::StatisticSpec cld = stats::catalog_make(v, "cld");
  ad::Tape t;
  std::vector<MarginalVars> vars = as_vars(t, {ms});
  CHECK_THROWS_AS(relaxed_estimate(cld, vars, 1, 0.0, 1), Error);
  CHECK_THROWS_AS(relaxed_estimate(cld, vars, 1, -1.0, 1), Error);
  stats::StatisticSpec ent = stats::catalog_make(v, "entropy-token");
  CHECK_THROWS_AS(mc_estimate(ent, {ms}, 10, 1), Error);
}

TEST_SUITE_END();
