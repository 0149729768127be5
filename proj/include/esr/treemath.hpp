#pragma once

#include "esr/array.hpp"
#include "esr/autodiff.hpp"

namespace esr::treemath {

// Arc weights for a sentence of n words. Scores are laid out child-major:
// scores[i][j] is the score of arc (head j -> child i+1) with column 0 the
// ROOT; the self column j == i+1 is ignored everywhere. Weights are
// exp(score - shift[child]) with a per-child max shift: the arborescence
// distribution is invariant to per-child rescaling, and a per-child shift
// keeps every Laplacian column well-scaled no matter how peaked the scores
// get. The shifts are undone in log Z.
struct ArcWeights {
  size_t n = 0;
  std::vector<double> shift;        // [n], per-child subtracted log scale
  std::vector<double> root;         // [n], w(0 -> i+1)
  Array inner;                      // [n][n], w(h+1 -> m+1); diagonal unused

  static ArcWeights from_scores(const Array& scores);
  // direct construction from positive weights (shift = 0)
  static ArcWeights from_weights(size_t n, const std::vector<double>& root,
                                 const Array& inner);
};

// log of the total weight of all single-root spanning arborescences
// (root-augmented Laplacian determinant, partial-pivoting LU in 64-bit).
double log_partition(const ArcWeights& aw);

// mu[i][j] = P(arc j -> i+1 in tree); child rows sum to 1.
Array edge_marginals(const ArcWeights& aw);

// H = log Z - sum_edges mu * log w; nonnegative.
double tree_entropy(const ArcWeights& aw);

// --- autodiff nodes over a score matrix Var of shape [n][n+1] ---

// scalar log Z; backward adds mu into the score gradient
ad::Var log_partition_node(ad::Var scores);
// [n][n+1] marginal matrix with exact backward (differentiates through the
// Laplacian inverse); self columns are constant 0
ad::Var edge_marginals_node(ad::Var scores);
// composed: log Z - sum(mu . scores), with self entries excluded
ad::Var tree_entropy_node(ad::Var scores);

}  // namespace esr::treemath
