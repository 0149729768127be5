#pragma once

#include <string>
#include <vector>

#include "esr/autodiff.hpp"
#include "esr/treebank.hpp"

namespace esr {

// signed head-child distance buckets for the arc-score bias:
// root, then -11+,-10..-7,-6..-4,-3,-2,-1,+1,+2,+3,+4..6,+7..10,+11+
constexpr size_t kArcDistBuckets = 13;
size_t arc_dist_bucket(int head, int child_pos);

struct ModelConfig {
  size_t emb_dim = 64;
  size_t hidden_dim = 128;
  size_t biaffine_rank = 0;  // 0 -> hidden_dim
  size_t window = 2;         // context tokens on each side
  size_t mlp_depth = 1;
  uint64_t init_seed = 1;

  size_t rank() const { return biaffine_rank ? biaffine_rank : hidden_dim; }
};

// Named parameter store with a fixed, deterministic ordering. The joint
// model factorizes as p(e|w) * prod_i p(t_i|w) p(r_i|e_i,w): a window-MLP
// encoder feeds a tag scorer, an arc biaffine and per-label biaffines.
class ModelParams {
 public:
  ModelParams() = default;
  ModelParams(Vocab vocab, ModelConfig cfg);

  const Vocab& vocab() const { return vocab_; }
  const ModelConfig& config() const { return cfg_; }

  size_t count() const { return arrays_.size(); }
  const std::string& name(size_t i) const { return names_[i]; }
  Array& array(size_t i) { return arrays_[i]; }
  const Array& array(size_t i) const { return arrays_[i]; }
  Array& array(const std::string& name);
  const Array& array(const std::string& name) const;
  size_t index_of(const std::string& name) const;

  void save(const std::string& path) const;
  static ModelParams load(const std::string& path);

  bool all_finite() const;

 private:
  void register_array(const std::string& name, Shape shape, Rng& rng,
                      double scale);
  Vocab vocab_;
  ModelConfig cfg_;
  std::vector<std::string> names_;
  std::vector<Array> arrays_;
};

// Parameter leaves bound onto a tape, in ModelParams order.
struct BoundParams {
  std::vector<ad::Var> vars;
  ad::Var operator[](size_t i) const { return vars[i]; }
};
BoundParams bind(ad::Tape& tape, const ModelParams& params);

// Differentiable per-sentence distributions.
struct MarginalVars {
  size_t n = 0;
  ad::Var tag_logp;    // [n][T]
  ad::Var tag_prob;    // [n][T]
  ad::Var head_logp;   // [n][n+1], self column masked
  ad::Var head_prob;   // self-head probability exactly 0
  ad::Var label_logp;  // [n][n+1][R]
  ad::Var label_prob;
  ad::Var arc_scores;  // [n][n+1] raw biaffine scores (tree-mode weights)
};

// Plain-array snapshot of the same distributions.
struct MarginalSet {
  size_t n = 0;
  Array tag;         // [n][T]
  Array head;        // [n][n+1]
  Array label;       // [n][n+1][R]
  Array arc_scores;  // [n][n+1]
};

// Encoder output: one vector per token plus one ROOT vector (row 0 of full).
struct Encoded {
  ad::Var tokens;  // [n][h]
  ad::Var full;    // [n+1][h]
};

Encoded encode(const BoundParams& bound, const ModelParams& params,
               const Sentence& s);

MarginalVars marginals(ad::Tape& tape, const BoundParams& bound,
                       const ModelParams& params, const Sentence& s);

// Convenience: fresh tape, forward only, values extracted.
MarginalSet marginal_set(const ModelParams& params, const Sentence& s);

// -log p(t, e, r | w) for a fully labeled sentence.
ad::Var nll(ad::Tape& tape, const BoundParams& bound, const ModelParams& params,
            const Sentence& s);
double nll_value(const ModelParams& params, const Sentence& s);

// Greedy tags/labels + maximum spanning arborescence heads (single root,
// ties broken by lowest index).
Sentence decode(const ModelParams& params, const Sentence& s);

// Exact single-root maximum arborescence over log-scores.
// log_scores[i][j]: arc (j -> i+1), column 0 = ROOT. Returns heads (1-based).
std::vector<int> mst_decode(const Array& log_scores);

}  // namespace esr
