#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "esr/common.hpp"

namespace esr {

// One sentence. Token positions are 1-based in head indices; head 0 is ROOT.
struct Sentence {
  std::vector<std::string> words;
  std::vector<std::string> tags;         // UPOS; empty when unlabeled
  std::vector<int> heads;                // heads[i] in {0..n}, != i+1
  std::vector<std::string> labels;       // coarse deprel (subtype stripped)
  std::vector<std::string> full_labels;  // raw DEPREL, kept as metadata
  std::vector<std::string> comments;     // opaque, preserved on write
  std::string id;                        // sent_id comment or positional name

  size_t size() const { return words.size(); }
  bool labeled() const { return !tags.empty(); }
};

struct Treebank {
  std::vector<Sentence> sentences;

  size_t size() const { return sentences.size(); }
  size_t labeled_count() const;
  size_t unlabeled_count() const;
  size_t token_count() const;
};

enum class ReadMode { labeled, unlabeled };

// Strips the label subtype: "nsubj:outer" -> "nsubj".
std::string coarse_label(const std::string& deprel);

// Reads a CoNLL-U file. Multiword-token ranges and empty nodes are skipped.
// Labeled mode requires UPOS/HEAD/DEPREL and validates the tree (single root,
// acyclic, heads in range).
Treebank read_conllu(const std::string& path, ReadMode mode);
Treebank read_conllu_text(const std::string& text, ReadMode mode,
                          const std::string& origin = "<string>");

void write_conllu(const Treebank& tb, const std::string& path);
std::string to_conllu_text(const Treebank& tb);

// Uniform subsample without replacement; deterministic given seed.
Treebank subsample(const Treebank& tb, size_t size, uint64_t seed);

// Companion of the subsampling protocol: |dev| = min(100, |train|).
inline size_t dev_split_size(size_t train_size) {
  return train_size < 100 ? train_size : 100;
}

// Tag/label/word inventories. Tags and labels come from labeled sentences;
// word frequencies from everything. Construction is deterministic (sorted).
class Vocab {
 public:
  static constexpr const char* kUnkTag = "UNK-TAG";
  static constexpr const char* kRootSym = "ROOT";
  static constexpr const char* kBosSym = "BOS";
  static constexpr const char* kEosSym = "EOS";
  static constexpr const char* kUnkWord = "<unk>";
  static constexpr size_t kWordFreqCutoff = 2;

  Vocab() = default;
  static Vocab build(const std::vector<const Treebank*>& corpora);
  static Vocab build(const Treebank& tb) { return build({&tb}); }

  // tagset T; the last class is UNK-TAG
  size_t tag_count() const { return tags_.size(); }
  const std::string& tag_name(size_t i) const { return tags_.at(i); }
  size_t tag_index(const std::string& tag) const;  // unseen -> UNK-TAG
  size_t unk_tag_index() const { return tags_.size() - 1; }
  // index used for HEAD_TAG = ROOT in statistic event spaces
  size_t root_tag_index() const { return tags_.size(); }

  size_t label_count() const { return labels_.size(); }
  const std::string& label_name(size_t i) const { return labels_.at(i); }
  size_t label_index(const std::string& label) const;  // unseen -> error
  bool has_label(const std::string& label) const;

  // word ids for the encoder; 0=<unk>, 1=BOS, 2=EOS, then corpus words
  size_t word_count() const { return words_.size(); }
  size_t word_id(const std::string& surface) const;
  size_t unk_word_id() const { return 0; }
  size_t bos_word_id() const { return 1; }
  size_t eos_word_id() const { return 2; }
  const std::string& word_name(size_t i) const { return words_.at(i); }

  // checkpoint serialization
  std::vector<std::string> to_lines() const;
  static Vocab from_lines(const std::vector<std::string>& lines);

  bool operator==(const Vocab& o) const {
    return tags_ == o.tags_ && labels_ == o.labels_ && words_ == o.words_;
  }

 private:
  void index();
  std::vector<std::string> tags_;
  std::vector<std::string> labels_;
  std::vector<std::string> words_;
  std::unordered_map<std::string, size_t> tag_idx_;
  std::unordered_map<std::string, size_t> label_idx_;
  std::unordered_map<std::string, size_t> word_idx_;
};

}  // namespace esr
