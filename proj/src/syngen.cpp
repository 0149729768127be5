#include "esr/syngen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace esr::syngen {

namespace {

void check_distribution(const std::vector<double>& row, const std::string& what) {
  double z = 0.0;
  for (double v : row) {
    if (v < 0.0) fail(ErrorCode::validation, what + ": negative probability");
    z += v;
  }
  if (z <= 0.0) fail(ErrorCode::validation, what + ": zero total mass");
}

size_t index_of(const std::vector<std::string>& names, const std::string& name,
                const std::string& what) {
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return i;
  fail(ErrorCode::parse, what + ": unknown symbol '" + name + "'");
}

}  // namespace

Grammar Grammar::parse(const std::string& text) {
  Grammar g;
  std::istringstream in(text);
  std::string line;
  size_t line_no = 0;
  std::vector<std::tuple<std::string, std::string, std::vector<double>>> label_rows;
  std::vector<std::pair<std::string, std::vector<double>>> trans_rows;
  std::vector<std::pair<std::string, double>> root_rows;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto parts = split_ws(line);
    const std::string& key = parts[0];
    auto numbers = [&](size_t from) {
      std::vector<double> out;
      for (size_t i = from; i < parts.size(); ++i) out.push_back(std::stod(parts[i]));
      return out;
    };
    if (key == "tags") {
      g.tags.assign(parts.begin() + 1, parts.end());
    } else if (key == "labels") {
      g.labels.assign(parts.begin() + 1, parts.end());
    } else if (key == "trans") {
      if (parts.size() < 3)
        fail(ErrorCode::parse, "grammar line " + std::to_string(line_no) +
                                   ": trans needs a source and probabilities");
      trans_rows.emplace_back(parts[1], numbers(2));
    } else if (key == "label") {
      if (parts.size() < 4)
        fail(ErrorCode::parse,
             "grammar line " + std::to_string(line_no) +
                 ": label needs head tag, child tag and probabilities");
      label_rows.emplace_back(parts[1], parts[2], numbers(3));
    } else if (key == "attach_decay") {
      g.attach_decay = std::stod(parts.at(1));
    } else if (key == "root_weight") {
      if (parts.size() != 3)
        fail(ErrorCode::parse, "grammar line " + std::to_string(line_no) +
                                   ": root_weight needs a tag and a weight");
      root_rows.emplace_back(parts[1], std::stod(parts[2]));
    } else if (key == "len_min") {
      g.len_min = std::stoul(parts.at(1));
    } else if (key == "len_max") {
      g.len_max = std::stoul(parts.at(1));
    } else if (key == "words_per_tag") {
      g.words_per_tag = std::stoul(parts.at(1));
    } else if (key == "amb_prob") {
      g.amb_prob = std::stod(parts.at(1));
    } else if (key == "amb_words") {
      g.amb_words = std::stoul(parts.at(1));
    } else {
      fail(ErrorCode::parse, "grammar line " + std::to_string(line_no) +
                                 ": unknown key '" + key + "'");
    }
  }
  if (g.tags.empty()) fail(ErrorCode::validation, "grammar: no tags");
  if (g.labels.empty()) fail(ErrorCode::validation, "grammar: no labels");
  if (g.len_min < 1 || g.len_max < g.len_min)
    fail(ErrorCode::validation, "grammar: bad length range");
  if (!(g.attach_decay > 0.0) || g.attach_decay > 1.0)
    fail(ErrorCode::validation, "grammar: attach_decay must be in (0, 1]");

  const size_t T = g.tags.size();
  g.trans.assign(T + 1, {});
  std::vector<bool> have_trans(T + 1, false);
  for (auto& [src, row] : trans_rows) {
    if (row.size() != T)
      fail(ErrorCode::validation, "grammar: trans row for '" + src + "' needs " +
                                      std::to_string(T) + " probabilities");
    check_distribution(row, "trans " + src);
    const size_t idx =
        src == Vocab::kBosSym ? 0 : 1 + index_of(g.tags, src, "trans");
    g.trans[idx] = row;
    have_trans[idx] = true;
  }
  for (size_t i = 0; i <= T; ++i)
    if (!have_trans[i])
      fail(ErrorCode::validation,
           "grammar: missing trans row for " +
               (i == 0 ? std::string(Vocab::kBosSym) : g.tags[i - 1]));

  g.root_weight.assign(T, 1.0);
  for (auto& [tag, w] : root_rows) {
    if (w < 0.0) fail(ErrorCode::validation, "grammar: negative root_weight");
    g.root_weight[index_of(g.tags, tag, "root_weight")] = w;
  }
  {
    double z = 0.0;
    for (double w : g.root_weight) z += w;
    if (z <= 0.0) fail(ErrorCode::validation, "grammar: zero root mass");
  }

  const size_t R = g.labels.size();
  g.label_given.assign(T + 1, std::vector<std::vector<double>>(T));
  std::vector<std::vector<double>> fallback(T);  // head wildcard per child
  std::vector<double> global_fallback;
  for (auto& [h, c, row] : label_rows) {
    if (row.size() != R)
      fail(ErrorCode::validation, "grammar: label row (" + h + "," + c +
                                      ") needs " + std::to_string(R) +
                                      " probabilities");
    check_distribution(row, "label " + h + " " + c);
    if (h == "*" && c == "*") {
      global_fallback = row;
      continue;
    }
    if (h == "*") {
      fallback[index_of(g.tags, c, "label")] = row;
      continue;
    }
    const size_t hi =
        h == Vocab::kRootSym ? 0 : 1 + index_of(g.tags, h, "label");
    if (c == "*") {
      for (size_t ci = 0; ci < T; ++ci) g.label_given[hi][ci] = row;
      continue;
    }
    g.label_given[hi][index_of(g.tags, c, "label")] = row;
  }
  for (size_t hi = 0; hi <= T; ++hi)
    for (size_t ci = 0; ci < T; ++ci) {
      if (g.label_given[hi][ci].empty()) {
        if (!fallback[ci].empty())
          g.label_given[hi][ci] = fallback[ci];
        else if (!global_fallback.empty())
          g.label_given[hi][ci] = global_fallback;
        else
          fail(ErrorCode::validation,
               "grammar: no label distribution for head " +
                   (hi == 0 ? std::string(Vocab::kRootSym) : g.tags[hi - 1]) +
                   ", child " + g.tags[ci]);
      }
    }
  return g;
}

Grammar Grammar::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

bool Grammar::position_independent_tags() const {
  for (size_t i = 1; i < trans.size(); ++i)
    if (trans[i] != trans[0]) return false;
  return true;
}

Treebank generate(const Grammar& g, size_t size, uint64_t seed) {
  Rng rng(seed);
  Treebank tb;
  tb.sentences.reserve(size);
  for (size_t si = 0; si < size; ++si) {
    const size_t n = g.len_min + rng.below(g.len_max - g.len_min + 1);
    Sentence s;
    s.id = "syn" + std::to_string(si + 1);
    s.comments.push_back("# sent_id = " + s.id);
    std::vector<size_t> tag_idx(n);
    size_t prev = 0;  // BOS row
    for (size_t i = 0; i < n; ++i) {
      tag_idx[i] = rng.categorical(g.trans[prev]);
      prev = tag_idx[i] + 1;
      s.tags.push_back(g.tags[tag_idx[i]]);
    }
    // root position by tag affinity; every other word attaches to a
    // position strictly toward the root with geometric distance decay,
    // which keeps the tree single-rooted and acyclic by construction
    std::vector<double> rw(n);
    for (size_t i = 0; i < n; ++i) rw[i] = g.root_weight[tag_idx[i]];
    const size_t u = rng.categorical(rw);
    s.heads.assign(n, 0);
    for (size_t i = 0; i < n; ++i) {
      if (i == u) continue;
      if (i < u) {
        std::vector<double> w(u - i);
        for (size_t j = i + 1; j <= u; ++j)
          w[j - i - 1] = std::pow(g.attach_decay, static_cast<double>(j - i - 1));
        s.heads[i] = static_cast<int>(i + 1 + rng.categorical(w)) + 1;
      } else {
        std::vector<double> w(i - u);
        for (size_t j = u; j < i; ++j)
          w[i - 1 - j] = std::pow(g.attach_decay, static_cast<double>(i - j - 1));
        s.heads[i] = static_cast<int>(i - 1 - rng.categorical(w)) + 1;
      }
    }
    for (size_t i = 0; i < n; ++i) {
      const int h = s.heads[i];
      const size_t hi = h == 0 ? 0 : 1 + tag_idx[h - 1];
      const size_t lab = rng.categorical(g.label_given[hi][tag_idx[i]]);
      s.labels.push_back(g.labels[lab]);
      s.full_labels.push_back(g.labels[lab]);
    }
    for (size_t i = 0; i < n; ++i) {
      if (g.amb_prob > 0.0 && rng.real() < g.amb_prob) {
        s.words.push_back("amb_" + std::to_string(rng.below(g.amb_words)));
      } else {
        s.words.push_back(lowercased(g.tags[tag_idx[i]]) + "_" +
                          std::to_string(rng.below(g.words_per_tag)));
      }
    }
    tb.sentences.push_back(std::move(s));
  }
  return tb;
}

std::vector<std::pair<std::string, double>> analytic_cld(const Grammar& g) {
  if (!g.position_independent_tags())
    fail(ErrorCode::invalid_argument,
         "analytic CLD values require identical transition rows"
         " (position-independent tags)");
  for (double w : g.root_weight)
    if (w != g.root_weight[0])
      fail(ErrorCode::invalid_argument,
           "analytic CLD values require uniform root affinity"
           " (reflection symmetry)");
  const size_t T = g.tags.size(), R = g.labels.size();
  const std::vector<double>& raw = g.trans[0];
  double z = 0.0;
  for (double v : raw) z += v;
  std::vector<double> pi(T);
  for (size_t t = 0; t < T; ++t) pi[t] = raw[t] / z;
  auto label_p = [&](size_t hi, size_t ci, size_t r) {
    const auto& row = g.label_given[hi][ci];
    double s = 0.0;
    for (double v : row) s += v;
    return row[r] / s;
  };
  // lengths are uniform; per-arc direction is symmetric by reflection
  const double e_n = 0.5 * (static_cast<double>(g.len_min) + g.len_max);
  const double root_share = 1.0 / e_n;
  const double side_share = (e_n - 1.0) / (2.0 * e_n);
  std::vector<std::pair<std::string, double>> out;
  for (size_t c = 0; c < T; ++c) {
    for (size_t r = 0; r < R; ++r) {
      double inner = 0.0;
      for (size_t h = 0; h < T; ++h) inner += pi[h] * label_p(h + 1, c, r);
      const double root_v = pi[c] * label_p(0, c, r) * root_share;
      const double side_v = pi[c] * inner * side_share;
      out.emplace_back(g.tags[c] + "," + g.labels[r] + ",right", side_v);
      out.emplace_back(g.tags[c] + "," + g.labels[r] + ",left", side_v);
      out.emplace_back(g.tags[c] + "," + g.labels[r] + ",root", root_v);
    }
  }
  return out;
}

std::string analytic_report(const Grammar& g) {
  std::ostringstream out;
  out << "# analytic cld proportions (child_tag,label,dir value)\n";
  for (const auto& [event, value] : analytic_cld(g))
    out << event << " " << format_g17(value) << "\n";
  return out.str();
}

}  // namespace esr::syngen
