#pragma once

#include "esr/model.hpp"
#include "esr/stats.hpp"

namespace esr::relaxed {

enum class SampleMode { independent, tree };

// Plain Monte Carlo estimate of the statistic: draws full structures
// (Gumbel-max per categorical choice, or sequential conditional arborescence
// sampling in tree mode), averages g over samples, then aggregates.
// Evaluation only: not differentiable.
stats::StatisticVector mc_estimate(const stats::StatisticSpec& spec,
                                   const std::vector<MarginalSet>& batch,
                                   size_t samples, uint64_t seed,
                                   SampleMode mode = SampleMode::independent);

// One hard structure per sentence, drawn with the same perturbation stream
// as sample index `sample` of mc_estimate / relaxed_estimate.
stats::Structure hard_sample(const MarginalSet& ms, uint64_t seed,
                             size_t sample, size_t sentence);

// Differentiable relaxed-sample estimate: every categorical choice becomes a
// temperature-softmax over Gumbel-perturbed log-marginals, g is evaluated as
// a multilinear function of the relaxed indicators, samples are averaged and
// aggregated. Gradients flow through the relaxation.
ad::Var relaxed_estimate(const stats::StatisticSpec& spec,
                         const std::vector<MarginalVars>& batch,
                         size_t samples, double temperature, uint64_t seed);

struct RelaxedDefaults {
  static constexpr double temperature = 1.0;
};

}  // namespace esr::relaxed
