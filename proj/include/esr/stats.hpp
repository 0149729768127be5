#pragma once

#include <optional>
#include <string>
#include <vector>

#include "esr/model.hpp"
#include "esr/treebank.hpp"

namespace esr::stats {

enum class Family {
  pos_unigram,
  pos_bigram,
  single_arc,
  universal_arc,
  sibling,
  grandchild,
  valency,
  entropy,
};

enum class EntropyMode { token, edge, tree };

enum class FieldKind {
  head_tag,     // T + ROOT
  child_tag,    // T
  label,        // R
  dir,          // right / left / root
  dist,         // distance bin, root arcs -> "root"
  val_bin,      // valency count bin
  tag,          // T (pos_unigram)
  bigram_left,  // T + BOS
  bigram_right  // T + EOS
};

struct FieldDef {
  std::string name;
  FieldKind kind;
  size_t extent;
};

// arc direction: 0 = right (head to the right of the child), 1 = left,
// 2 = root
inline size_t dir_of(int head, int child_pos) {
  if (head == 0) return 2;
  return head > child_pos ? 0 : 1;
}
constexpr size_t kDirCount = 3;

// distance bins {1, 2, 3, 4-6, 7-10, 11+}; root arcs get their own bin
inline size_t dist_bin_of(int head, int child_pos) {
  if (head == 0) return 6;
  const int d = head < child_pos ? child_pos - head : head - child_pos;
  if (d <= 3) return static_cast<size_t>(d - 1);
  if (d <= 6) return 3;
  if (d <= 10) return 4;
  return 5;
}
constexpr size_t kDistCount = 7;

// head valency bins {0, 1, 2, 3, 4-5, 6+}
inline size_t val_bin_of(size_t v) {
  if (v <= 3) return v;
  if (v <= 5) return 4;
  return 5;
}
constexpr size_t kValCount = 6;

// Declarative description of one statistic family instance. The sub-count
// vector gbar has dim_g entries; the aggregated statistic f has dim_f. Each
// f_j is gbar[num_idx[j]] divided by the sum of gbar over its denominator
// group (a zero denominator yields 0 and is flagged).
struct StatisticSpec {
  std::string id;
  Family family = Family::single_arc;
  EntropyMode entropy_mode = EntropyMode::token;
  std::vector<FieldDef> fields;   // active fields, canonical order
  std::vector<size_t> given;      // positions in `fields` being conditioned on
  size_t dim_g = 0;
  size_t dim_f = 0;

  std::vector<size_t> num_idx;                 // [dim_f] -> gbar slot
  std::vector<size_t> den_group;               // [dim_f] -> group id
  std::vector<std::vector<size_t>> den_members;  // group -> gbar slots

  // universal_arc only: forbidden (head_tag, child_tag, label) index triples;
  // gbar slot dim_f holds the total arc count.
  std::vector<std::array<size_t, 3>> forbidden;

  size_t event_index(const std::vector<size_t>& values) const;
  std::vector<size_t> event_tuple(size_t index) const;
  std::string event_name(size_t index, const Vocab& vocab) const;
  std::optional<size_t> event_from_name(const std::string& name,
                                        const Vocab& vocab) const;
  bool is_proportion() const { return family != Family::entropy; }
};

// --- spec factories ---
StatisticSpec make_pos_unigram(const Vocab& vocab);
StatisticSpec make_pos_bigram(const Vocab& vocab);
// fields/given use canonical names: head_tag, child_tag, label, dir, dist
StatisticSpec make_single_arc(const Vocab& vocab,
                              const std::vector<std::string>& fields,
                              const std::vector<std::string>& given = {});
StatisticSpec make_sibling(const Vocab& vocab);
StatisticSpec make_grandchild(const Vocab& vocab);
StatisticSpec make_valency(const Vocab& vocab);
StatisticSpec make_entropy(EntropyMode mode);
// forbidden-list text: one "HEAD_TAG CHILD_TAG LABEL" per line, '#' comments
StatisticSpec make_universal_arc(const Vocab& vocab, const std::string& text,
                                 std::vector<std::string>* warnings = nullptr);
StatisticSpec make_universal_arc_file(const Vocab& vocab,
                                      const std::string& path,
                                      std::vector<std::string>* warnings = nullptr);

// Named catalog (everything except universal_arc, which needs its file).
std::vector<std::string> catalog_ids();
StatisticSpec catalog_make(const Vocab& vocab, const std::string& id);

// --- concrete structures and gold counting ---
struct Structure {
  std::vector<size_t> tags;    // tag indices
  std::vector<int> heads;      // {0..n}, self excluded
  std::vector<size_t> labels;  // label indices
  size_t size() const { return tags.size(); }
};

Structure structure_of(const Vocab& vocab, const Sentence& s);

// accumulate the sub-statistic tally of one structure into gbar
void count_structure(const StatisticSpec& spec, const Structure& st, Array& gbar);
Array count_gold(const StatisticSpec& spec, const Vocab& vocab,
                 const std::vector<const Sentence*>& batch);
Array count_gold(const StatisticSpec& spec, const Vocab& vocab,
                 const Treebank& batch);

// --- exact expectations under the factorized model ---
struct SentMargs {
  size_t n = 0;
  const Array* tag = nullptr;         // [n][T]
  const Array* head = nullptr;        // [n][n+1]
  const Array* label = nullptr;       // [n][n+1][R]
  const Array* arc_scores = nullptr;  // [n][n+1], tree-mode entropy only
};
SentMargs views(const MarginalSet& ms);

Array expect_arrays(const StatisticSpec& spec, const SentMargs& m);
void expect_backward(const StatisticSpec& spec, const SentMargs& m,
                     const Array& upstream, Array* dtag, Array* dhead,
                     Array* dlabel);

// Differentiable expected counts for one sentence; parents are the marginal
// (or relaxed-indicator) vars. Entropy families route through their own
// nodes, using arc_scores for tree mode.
ad::Var expect_node(const StatisticSpec& spec, size_t n, ad::Var tag,
                    ad::Var head, ad::Var label);
ad::Var expect_node(const StatisticSpec& spec, const MarginalVars& mv);
ad::Var expect(const StatisticSpec& spec, const std::vector<MarginalVars>& batch);

// --- aggregation (Eq. 8) ---
struct StatisticVector {
  const StatisticSpec* spec = nullptr;
  Array values;                // [dim_f]
  std::vector<char> zero_den;  // flags: denominator was zero
};

StatisticVector aggregate(const StatisticSpec& spec, const Array& gbar);
ad::Var aggregate_node(const StatisticSpec& spec, ad::Var gbar);

// --- average entropies over a batch of marginal sets ---
double entropy_stat(const std::vector<MarginalSet>& batch, EntropyMode mode);

}  // namespace esr::stats
