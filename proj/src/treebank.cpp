#include "esr/treebank.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace esr {

size_t Treebank::labeled_count() const {
  size_t c = 0;
  for (const auto& s : sentences) c += s.labeled() ? 1 : 0;
  return c;
}

size_t Treebank::unlabeled_count() const { return size() - labeled_count(); }

size_t Treebank::token_count() const {
  size_t c = 0;
  for (const auto& s : sentences) c += s.size();
  return c;
}

std::string coarse_label(const std::string& deprel) {
  const size_t pos = deprel.find(':');
  return pos == std::string::npos ? deprel : deprel.substr(0, pos);
}

namespace {

bool is_int(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (c < '0' || c > '9') return false;
  return true;
}

struct RawToken {
  std::string form, upos, deprel;
  int head = -1;
  size_t line_no = 0;
};

void validate_tree(Sentence& s, const std::string& origin) {
  const int n = static_cast<int>(s.size());
  int roots = 0;
  for (int i = 0; i < n; ++i) {
    const int h = s.heads[i];
    if (h < 0 || h > n)
      fail(ErrorCode::validation,
           origin + ": sentence " + s.id + ": head index " + std::to_string(h) +
               " out of range 0.." + std::to_string(n));
    if (h == i + 1)
      fail(ErrorCode::validation,
           origin + ": sentence " + s.id + ": token " + std::to_string(i + 1) +
               " is its own head");
    if (h == 0) ++roots;
  }
  if (roots != 1)
    fail(ErrorCode::validation,
         origin + ": sentence " + s.id + ": " + std::to_string(roots) +
             " roots (exactly one required)");
  // cycle check: walk to ROOT from every token
  for (int i = 0; i < n; ++i) {
    int steps = 0, cur = i + 1;
    while (cur != 0) {
      cur = s.heads[cur - 1];
      if (++steps > n)
        fail(ErrorCode::validation,
             origin + ": sentence " + s.id + ": cyclic tree");
    }
  }
}

void finish_sentence(Treebank& tb, std::vector<RawToken>& toks,
                     std::vector<std::string>& comments, ReadMode mode,
                     const std::string& origin) {
  if (toks.empty()) {
    comments.clear();
    return;
  }
  Sentence s;
  s.comments = std::move(comments);
  comments = {};
  s.id = "#" + std::to_string(tb.size() + 1);
  for (const auto& c : s.comments) {
    const std::string prefix = "# sent_id = ";
    if (c.rfind(prefix, 0) == 0) s.id = trim(c.substr(prefix.size()));
  }
  for (auto& t : toks) s.words.push_back(std::move(t.form));
  if (mode == ReadMode::labeled) {
    for (auto& t : toks) {
      if (t.upos == "_" || t.deprel == "_" || t.head < 0)
        fail(ErrorCode::validation,
             origin + ":" + std::to_string(t.line_no) +
                 ": labeled mode requires UPOS, HEAD and DEPREL");
      s.tags.push_back(std::move(t.upos));
      s.heads.push_back(t.head);
      s.full_labels.push_back(t.deprel);
      s.labels.push_back(coarse_label(t.deprel));
    }
    validate_tree(s, origin);
  }
  toks.clear();
  tb.sentences.push_back(std::move(s));
}

}  // namespace

Treebank read_conllu_text(const std::string& text, ReadMode mode,
                          const std::string& origin) {
  Treebank tb;
  std::vector<RawToken> toks;
  std::vector<std::string> comments;
  std::istringstream in(text);
  std::string line;
  size_t line_no = 0;
  int expected_id = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      finish_sentence(tb, toks, comments, mode, origin);
      expected_id = 1;
      continue;
    }
    if (line[0] == '#') {
      comments.push_back(line);
      continue;
    }
    const auto cols = split(line, '\t');
    if (cols.size() != 10)
      fail(ErrorCode::parse, origin + ":" + std::to_string(line_no) + ": " +
                                 std::to_string(cols.size()) +
                                 " columns (10 required)");
    const std::string& id = cols[0];
    if (id.find('-') != std::string::npos || id.find('.') != std::string::npos)
      continue;  // multiword-token range or empty node
    if (!is_int(id) || std::stoi(id) != expected_id)
      fail(ErrorCode::parse, origin + ":" + std::to_string(line_no) +
                                 ": unexpected token id '" + id + "'");
    ++expected_id;
    RawToken t;
    t.line_no = line_no;
    t.form = cols[1];
    t.upos = cols[3];
    t.deprel = cols[7];
    if (cols[6] != "_") {
      if (!is_int(cols[6]))
        fail(ErrorCode::parse, origin + ":" + std::to_string(line_no) +
                                   ": bad HEAD '" + cols[6] + "'");
      t.head = std::stoi(cols[6]);
    }
    toks.push_back(std::move(t));
  }
  finish_sentence(tb, toks, comments, mode, origin);
  return tb;
}

Treebank read_conllu(const std::string& path, ReadMode mode) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return read_conllu_text(ss.str(), mode, path);
}

std::string to_conllu_text(const Treebank& tb) {
  std::string out;
  for (const auto& s : tb.sentences) {
    for (const auto& c : s.comments) {
      out += c;
      out += '\n';
    }
    for (size_t i = 0; i < s.size(); ++i) {
      out += std::to_string(i + 1);
      out += '\t';
      out += s.words[i];
      out += "\t_\t";
      out += s.labeled() ? s.tags[i] : std::string("_");
      out += "\t_\t_\t";
      out += s.labeled() ? std::to_string(s.heads[i]) : std::string("_");
      out += '\t';
      if (s.labeled())
        out += s.full_labels.empty() ? s.labels[i] : s.full_labels[i];
      else
        out += '_';
      out += "\t_\t_\n";
    }
    out += '\n';
  }
  return out;
}

void write_conllu(const Treebank& tb, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot open " + path + " for writing");
  out << to_conllu_text(tb);
}

Treebank subsample(const Treebank& tb, size_t size, uint64_t seed) {
  if (size > tb.size())
    fail(ErrorCode::invalid_argument,
         "subsample: size " + std::to_string(size) + " > treebank size " +
             std::to_string(tb.size()));
  std::vector<size_t> idx(tb.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  for (size_t i = 0; i < size; ++i) {
    const size_t j = i + rng.below(idx.size() - i);
    std::swap(idx[i], idx[j]);
  }
  Treebank out;
  out.sentences.reserve(size);
  for (size_t i = 0; i < size; ++i) out.sentences.push_back(tb.sentences[idx[i]]);
  return out;
}

// --- Vocab ---

size_t Vocab::tag_index(const std::string& tag) const {
  auto it = tag_idx_.find(tag);
  return it == tag_idx_.end() ? unk_tag_index() : it->second;
}

size_t Vocab::label_index(const std::string& label) const {
  auto it = label_idx_.find(label);
  if (it == label_idx_.end())
    fail(ErrorCode::validation, "label '" + label + "' not in vocabulary");
  return it->second;
}

bool Vocab::has_label(const std::string& label) const {
  return label_idx_.count(label) > 0;
}

size_t Vocab::word_id(const std::string& surface) const {
  auto it = word_idx_.find(lowercased(surface));
  return it == word_idx_.end() ? unk_word_id() : it->second;
}

Vocab Vocab::build(const std::vector<const Treebank*>& corpora) {
  std::set<std::string> tagset, labelset;
  std::map<std::string, size_t> word_freq;
  for (const Treebank* tb : corpora) {
    for (const auto& s : tb->sentences) {
      for (const auto& w : s.words) ++word_freq[lowercased(w)];
      if (!s.labeled()) continue;
      for (const auto& t : s.tags) tagset.insert(t);
      for (const auto& l : s.labels) labelset.insert(l);
    }
  }
  for (const char* reserved : {kUnkTag, kRootSym, kBosSym, kEosSym})
    if (tagset.count(reserved))
      fail(ErrorCode::validation,
           std::string("corpus tag collides with reserved symbol ") + reserved);
  Vocab v;
  v.tags_.assign(tagset.begin(), tagset.end());
  v.tags_.push_back(kUnkTag);
  v.labels_.assign(labelset.begin(), labelset.end());
  v.words_ = {kUnkWord, kBosSym, kEosSym};
  for (const auto& [w, c] : word_freq)
    if (c >= kWordFreqCutoff) v.words_.push_back(w);
  v.index();
  return v;
}

void Vocab::index() {
  tag_idx_.clear();
  label_idx_.clear();
  word_idx_.clear();
  for (size_t i = 0; i < tags_.size(); ++i) tag_idx_[tags_[i]] = i;
  for (size_t i = 0; i < labels_.size(); ++i) label_idx_[labels_[i]] = i;
  for (size_t i = 0; i < words_.size(); ++i) word_idx_[words_[i]] = i;
}

std::vector<std::string> Vocab::to_lines() const {
  std::vector<std::string> out;
  out.push_back("tags " + std::to_string(tags_.size()));
  for (const auto& t : tags_) out.push_back(t);
  out.push_back("labels " + std::to_string(labels_.size()));
  for (const auto& l : labels_) out.push_back(l);
  out.push_back("words " + std::to_string(words_.size()));
  for (const auto& w : words_) out.push_back(w);
  return out;
}

Vocab Vocab::from_lines(const std::vector<std::string>& lines) {
  Vocab v;
  size_t i = 0;
  auto read_section = [&](const char* name) {
    if (i >= lines.size())
      fail(ErrorCode::parse, "vocab: truncated at section " + std::string(name));
    auto parts = split_ws(lines[i]);
    if (parts.size() != 2 || parts[0] != name)
      fail(ErrorCode::parse, "vocab: expected '" + std::string(name) +
                                 " N', got '" + lines[i] + "'");
    const size_t count = std::stoul(parts[1]);
    ++i;
    std::vector<std::string> items;
    for (size_t k = 0; k < count; ++k) {
      if (i >= lines.size()) fail(ErrorCode::parse, "vocab: truncated list");
      items.push_back(lines[i++]);
    }
    return items;
  };
  v.tags_ = read_section("tags");
  v.labels_ = read_section("labels");
  v.words_ = read_section("words");
  if (v.tags_.empty() || v.tags_.back() != kUnkTag)
    fail(ErrorCode::parse, "vocab: tag list must end with UNK-TAG");
  v.index();
  return v;
}

}  // namespace esr
