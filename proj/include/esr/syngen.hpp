#pragma once

#include <string>
#include <vector>

#include "esr/treebank.hpp"

namespace esr::syngen {

// Generative grammar for synthetic treebanks: Markov tag chain, a root
// position drawn by tag affinity, every other word attached toward the root
// with geometric distance decay, labels conditioned on (head tag, child
// tag). Key-value text format; see parse().
struct Grammar {
  std::vector<std::string> tags;
  std::vector<std::string> labels;
  // transition rows: row 0 = from BOS, then one per tag
  std::vector<std::vector<double>> trans;
  // label_given[h][c] over labels; h = 0 is ROOT, then tags
  std::vector<std::vector<std::vector<double>>> label_given;
  std::vector<double> root_weight;  // per-tag root affinity (default 1)
  double attach_decay = 0.5;        // weight decay^(distance-1)
  size_t len_min = 3;
  size_t len_max = 9;
  size_t words_per_tag = 20;
  double amb_prob = 0.0;  // chance of drawing from the shared ambiguous pool
  size_t amb_words = 10;

  static Grammar parse(const std::string& text);
  static Grammar load(const std::string& path);

  // true when every transition row is identical (tags are iid)
  bool position_independent_tags() const;
};

// Samples well-formed single-root trees; deterministic given seed.
Treebank generate(const Grammar& g, size_t size, uint64_t seed);

// Closed-form CLD proportions (child tag, label, direction) of the
// generative process. Requires position-independent tags (iid rows) and
// uniform root affinity; otherwise errors.
std::vector<std::pair<std::string, double>> analytic_cld(const Grammar& g);

// analytic values rendered as a report (one "event value" line each)
std::string analytic_report(const Grammar& g);

}  // namespace esr::syngen
