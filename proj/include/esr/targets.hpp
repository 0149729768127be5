#pragma once

#include <string>
#include <vector>

#include "esr/stats.hpp"
#include "esr/treebank.hpp"

namespace esr::targets {

struct Entry {
  std::string event;  // event name, e.g. "NOUN,nsubj,right"
  double t = 0.0;
  double sigma = 0.0;
};

struct FamilyTargets {
  std::string family_id;
  std::vector<Entry> entries;  // sparse: absent event means t = 0, sigma = 0
};

// Statistic ids with targets and margins plus estimation metadata. Entries
// are stored sparsely by event name; universal-arc entries are kept
// explicitly (they carry the forbidden-event list itself).
struct TargetsBundle {
  int version = 1;
  size_t k = 8;
  size_t B = 1000;
  uint64_t seed = 0;
  std::string source;
  std::vector<FamilyTargets> families;

  size_t entry_count() const;
  const FamilyTargets* find(const std::string& family_id) const;

  std::string to_text() const;
  static TargetsBundle from_text(const std::string& text);
  void save(const std::string& path) const;
  static TargetsBundle load(const std::string& path);
};

struct BootstrapDefaults {
  static constexpr size_t k = 8;
  static constexpr size_t B = 1000;
};

// Draws B minibatches of k sentences uniformly with replacement, computes f
// per minibatch from gold counts, and stores mean / sample std (B-1).
TargetsBundle bootstrap(const std::vector<stats::StatisticSpec>& specs,
                        const Vocab& vocab, const Treebank& labeled, size_t k,
                        size_t B, uint64_t seed, const std::string& source = "");

// Every forbidden triple gets (t = 0, sigma = 0); no labeled data consumed.
TargetsBundle universal_targets(const stats::StatisticSpec& ua_spec,
                                const Vocab& vocab,
                                const std::string& source = "");

// Same, parsed straight from forbidden-list text ("HEAD CHILD LABEL" lines,
// '#' comments); symbols are validated later, when the bundle is bound to a
// vocabulary. Duplicates are dropped with a warning.
TargetsBundle universal_targets_from_text(const std::string& text,
                                          std::vector<std::string>* warnings,
                                          const std::string& source = "");

// Dense (t, sigma) arrays aligned with spec event indices; unknown event
// names are an error (bundle/vocab mismatch).
struct DenseTargets {
  Array t;
  Array sigma;
};
DenseTargets densify(const FamilyTargets& ft, const stats::StatisticSpec& spec,
                     const Vocab& vocab);

// Rebuilds a universal-arc spec from the entry names of a loaded bundle.
stats::StatisticSpec universal_spec_from_bundle(const FamilyTargets& ft,
                                                const Vocab& vocab);

}  // namespace esr::targets
