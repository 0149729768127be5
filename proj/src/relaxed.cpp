#include "esr/relaxed.hpp"

#include <cmath>

#include "esr/treemath.hpp"

namespace esr::relaxed {

namespace {

double safe_log(double p) { return p > 0.0 ? std::log(p) : -1e300; }

// Choices are enumerated in a fixed order (tags, heads, labels per candidate
// head) so the Gumbel stream aligns between the hard and relaxed samplers.
Rng choice_rng(uint64_t seed, size_t sample, size_t sentence) {
  Rng master(seed);
  return master.fork(sample * 1000003ULL + sentence);
}

size_t gumbel_argmax(Rng& rng, const double* logp, size_t k) {
  double best = -HUGE_VAL;
  size_t arg = 0;
  for (size_t j = 0; j < k; ++j) {
    const double g = rng.gumbel();
    if (logp[j] <= -1e299) continue;  // zero-probability option
    const double v = logp[j] + g;
    if (v > best) {
      best = v;
      arg = j;
    }
  }
  return arg;
}

stats::Structure independent_sample(const MarginalSet& ms, Rng& rng) {
  const size_t n = ms.n;
  const size_t T = ms.tag.cols();
  const size_t R = ms.label.shape().at(2);
  stats::Structure st;
  st.tags.resize(n);
  st.heads.resize(n);
  st.labels.resize(n);
  std::vector<double> logp;
  for (size_t i = 0; i < n; ++i) {
    logp.assign(T, 0.0);
    for (size_t t = 0; t < T; ++t) logp[t] = safe_log(ms.tag.at(i, t));
    st.tags[i] = gumbel_argmax(rng, logp.data(), T);
  }
  for (size_t i = 0; i < n; ++i) {
    logp.assign(n + 1, 0.0);
    for (size_t j = 0; j <= n; ++j) logp[j] = safe_log(ms.head.at(i, j));
    st.heads[i] = static_cast<int>(gumbel_argmax(rng, logp.data(), n + 1));
  }
  for (size_t i = 0; i < n; ++i) {
    size_t chosen = 0;
    for (size_t j = 0; j <= n; ++j) {
      logp.assign(R, 0.0);
      for (size_t r = 0; r < R; ++r) logp[r] = safe_log(ms.label.at(i, j, r));
      const size_t lab = gumbel_argmax(rng, logp.data(), R);
      if (j == static_cast<size_t>(st.heads[i])) chosen = lab;
    }
    st.labels[i] = chosen;
  }
  return st;
}

// Exact arborescence sampling: draw each child's head from the edge
// marginals of the weights conditioned on all previously fixed arcs.
std::vector<int> tree_heads_sample(const MarginalSet& ms, Rng& rng) {
  const size_t n = ms.n;
  treemath::ArcWeights aw;
  aw.n = n;
  aw.shift.assign(n, 0.0);
  aw.root.assign(n, 0.0);
  aw.inner = Array({n, n});
  for (size_t i = 0; i < n; ++i) {
    aw.root[i] = std::max(ms.head.at(i, 0), 0.0);
    for (size_t j = 1; j <= n; ++j)
      if (j != i + 1) aw.inner.at(j - 1, i) = std::max(ms.head.at(i, j), 0.0);
  }
  std::vector<int> heads(n, 0);
  for (size_t i = 0; i < n; ++i) {
    Array mu = treemath::edge_marginals(aw);
    std::vector<double> row(n + 1, 0.0);
    for (size_t j = 0; j <= n; ++j) row[j] = std::max(mu.at(i, j), 0.0);
    const size_t j = rng.categorical(row);
    heads[i] = static_cast<int>(j);
    // condition on the sampled arc
    aw.root[i] = j == 0 ? aw.root[i] : 0.0;
    for (size_t h = 1; h <= n; ++h)
      if (h != i + 1 && h != j) aw.inner.at(h - 1, i) = 0.0;
  }
  return heads;
}

stats::Structure tree_sample(const MarginalSet& ms, Rng& rng) {
  const size_t n = ms.n;
  const size_t T = ms.tag.cols();
  const size_t R = ms.label.shape().at(2);
  stats::Structure st;
  st.tags.resize(n);
  st.labels.resize(n);
  st.heads = tree_heads_sample(ms, rng);
  std::vector<double> w;
  for (size_t i = 0; i < n; ++i) {
    w.assign(T, 0.0);
    for (size_t t = 0; t < T; ++t) w[t] = std::max(ms.tag.at(i, t), 0.0);
    st.tags[i] = rng.categorical(w);
    w.assign(R, 0.0);
    const size_t j = static_cast<size_t>(st.heads[i]);
    for (size_t r = 0; r < R; ++r) w[r] = std::max(ms.label.at(i, j, r), 0.0);
    st.labels[i] = rng.categorical(w);
  }
  return st;
}

}  // namespace

stats::Structure hard_sample(const MarginalSet& ms, uint64_t seed,
                             size_t sample, size_t sentence) {
  Rng rng = choice_rng(seed, sample, sentence);
  return independent_sample(ms, rng);
}

stats::StatisticVector mc_estimate(const stats::StatisticSpec& spec,
                                   const std::vector<MarginalSet>& batch,
                                   size_t samples, uint64_t seed,
                                   SampleMode mode) {
  if (samples < 1) fail(ErrorCode::invalid_argument, "mc_estimate: samples >= 1");
  if (spec.family == stats::Family::entropy)
    fail(ErrorCode::invalid_argument,
         "entropy statistics are not structure tallies; no sampling estimator");
  Array gbar({spec.dim_g});
  for (size_t s = 0; s < samples; ++s) {
    for (size_t x = 0; x < batch.size(); ++x) {
      Rng rng = choice_rng(seed, s, x);
      stats::Structure st = mode == SampleMode::independent
                                ? independent_sample(batch[x], rng)
                                : tree_sample(batch[x], rng);
      stats::count_structure(spec, st, gbar);
    }
  }
  for (size_t i = 0; i < gbar.size(); ++i) gbar[i] /= static_cast<double>(samples);
  return stats::aggregate(spec, gbar);
}

ad::Var relaxed_estimate(const stats::StatisticSpec& spec,
                         const std::vector<MarginalVars>& batch,
                         size_t samples, double temperature, uint64_t seed) {
  if (temperature <= 0.0)
    fail(ErrorCode::invalid_argument, "relaxed_estimate: temperature must be > 0");
  if (samples < 1)
    fail(ErrorCode::invalid_argument, "relaxed_estimate: samples >= 1");
  if (spec.family == stats::Family::entropy)
    fail(ErrorCode::invalid_argument,
         "entropy statistics are not structure tallies; no sampling estimator");
  if (batch.empty()) fail(ErrorCode::invalid_argument, "relaxed_estimate: empty batch");
  ad::Tape& t = *batch[0].tag_prob.tape();
  const double inv_tau = 1.0 / temperature;
  ad::Var gbar_total;
  bool first = true;
  for (size_t s = 0; s < samples; ++s) {
    for (size_t x = 0; x < batch.size(); ++x) {
      const MarginalVars& mv = batch[x];
      const size_t n = mv.n;
      const size_t T = mv.tag_logp.value().cols();
      const size_t R = mv.label_logp.value().shape().at(2);
      Rng rng = choice_rng(seed, s, x);
      // perturbations drawn in the same order as the hard sampler
      Array g_tag({n, T}), g_head({n, n + 1}), g_label({n, n + 1, R});
      for (size_t i = 0; i < g_tag.size(); ++i) g_tag[i] = rng.gumbel();
      for (size_t i = 0; i < g_head.size(); ++i) g_head[i] = rng.gumbel();
      for (size_t i = 0; i < g_label.size(); ++i) g_label[i] = rng.gumbel();
      Array mask({n, n + 1}, 1.0);
      for (size_t i = 0; i < n; ++i) mask.at(i, i + 1) = 0.0;

      ad::Var tag_rel = ad::softmax(
          ad::scale(ad::add(mv.tag_logp, t.constant(g_tag)), inv_tau));
      ad::Var head_rel = ad::masked_softmax(
          ad::scale(ad::add(mv.head_logp, t.constant(g_head)), inv_tau), mask);
      ad::Var label_rel = ad::softmax(
          ad::scale(ad::add(mv.label_logp, t.constant(g_label)), inv_tau));
      ad::Var gbar = stats::expect_node(spec, n, tag_rel, head_rel, label_rel);
      gbar_total = first ? gbar : ad::add(gbar_total, gbar);
      first = false;
    }
  }
  ad::Var mean_gbar = ad::scale(gbar_total, 1.0 / static_cast<double>(samples));
  return stats::aggregate_node(spec, mean_gbar);
}

}  // namespace esr::relaxed
