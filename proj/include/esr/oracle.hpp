#pragma once

#include <string>
#include <vector>

#include "esr/model.hpp"
#include "esr/stats.hpp"

namespace esr::oracle {

enum class Mode { independent, tree };

// hard caps; exceeding them is an error, not a warning
constexpr size_t kMaxN = 4;
constexpr size_t kMaxTags = 3;
constexpr size_t kMaxLabels = 2;

struct WeightedStructure {
  stats::Structure st;
  double prob = 0.0;
};

// All (tags, heads, labels) assignments with their model probabilities.
// Independent mode enumerates every head assignment; tree mode restricts
// heads to single-root arborescences and renormalizes.
std::vector<WeightedStructure> enumerate_structures(const MarginalSet& ms,
                                                    Mode mode);

// Exact statistic by full enumeration: sum_y p(y) g(x,y), then h. Entropy
// statistics are computed from the enumerated distribution itself.
stats::StatisticVector oracle_expect(const stats::StatisticSpec& spec,
                                     const MarginalSet& ms, Mode mode);
// batch version: per-sentence gbar summed before aggregation (Eq. 7)
stats::StatisticVector oracle_expect(const stats::StatisticSpec& spec,
                                     const std::vector<MarginalSet>& batch,
                                     Mode mode);
Array oracle_gbar(const stats::StatisticSpec& spec, const MarginalSet& ms,
                  Mode mode);

// Random but valid marginal set (simplex rows, self-head zero, arc scores =
// log head marginals) for oracle comparisons.
MarginalSet random_instance(size_t n, size_t tags, size_t labels, Rng& rng);

// Full oracle suite: every catalog family (plus a universal-arc instance)
// against enumeration on seeded random instances, and the matrix-tree
// quantities against direct enumeration. Used by `oracle-check` and the
// acceptance tests.
struct SuiteResult {
  bool pass = false;
  double max_err = 0.0;
  std::string report;
};
SuiteResult run_suite(size_t instances_per_family, uint64_t seed,
                      double tolerance = 1e-10);

}  // namespace esr::oracle
