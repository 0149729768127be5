#include "esr/stats.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "esr/treemath.hpp"

namespace esr::stats {

namespace {

const char* kDirNames[kDirCount] = {"right", "left", "root"};
const char* kDistNames[kDistCount] = {"1", "2", "3", "4-6", "7-10", "11+", "root"};
const char* kValNames[kValCount] = {"0", "1", "2", "3", "4-5", "6+"};

std::string value_name(FieldKind kind, size_t v, const Vocab& vocab) {
  switch (kind) {
    case FieldKind::head_tag:
      return v == vocab.tag_count() ? Vocab::kRootSym : vocab.tag_name(v);
    case FieldKind::child_tag:
    case FieldKind::tag:
      return vocab.tag_name(v);
    case FieldKind::label:
      return vocab.label_name(v);
    case FieldKind::dir:
      return kDirNames[v];
    case FieldKind::dist:
      return kDistNames[v];
    case FieldKind::val_bin:
      return kValNames[v];
    case FieldKind::bigram_left:
      return v == vocab.tag_count() ? Vocab::kBosSym : vocab.tag_name(v);
    case FieldKind::bigram_right:
      return v == vocab.tag_count() ? Vocab::kEosSym : vocab.tag_name(v);
  }
  fail(ErrorCode::internal, "value_name: bad kind");
}

std::optional<size_t> value_from_name(FieldKind kind, const std::string& name,
                                      const Vocab& vocab, size_t extent) {
  for (size_t v = 0; v < extent; ++v)
    if (value_name(kind, v, vocab) == name) return v;
  return std::nullopt;
}

// full-joint proportion layout: identity numerators, one denominator group
void layout_proportion(StatisticSpec& spec) {
  spec.dim_g = spec.dim_f;
  spec.num_idx.resize(spec.dim_f);
  spec.den_group.assign(spec.dim_f, 0);
  spec.den_members.assign(1, {});
  for (size_t j = 0; j < spec.dim_f; ++j) {
    spec.num_idx[j] = j;
    spec.den_members[0].push_back(j);
  }
}

void layout_conditional(StatisticSpec& spec) {
  spec.dim_g = spec.dim_f;
  spec.num_idx.resize(spec.dim_f);
  size_t groups = 1;
  for (size_t pos : spec.given) groups *= spec.fields[pos].extent;
  spec.den_group.resize(spec.dim_f);
  spec.den_members.assign(groups, {});
  for (size_t j = 0; j < spec.dim_f; ++j) {
    spec.num_idx[j] = j;
    const auto tuple = spec.event_tuple(j);
    size_t g = 0;
    for (size_t pos : spec.given) g = g * spec.fields[pos].extent + tuple[pos];
    spec.den_group[j] = g;
    spec.den_members[g].push_back(j);
  }
}

size_t product_dim(const std::vector<FieldDef>& fields) {
  size_t d = 1;
  for (const auto& f : fields) d *= f.extent;
  return d;
}

}  // namespace

size_t StatisticSpec::event_index(const std::vector<size_t>& values) const {
  size_t idx = 0;
  for (size_t k = 0; k < fields.size(); ++k) idx = idx * fields[k].extent + values[k];
  return idx;
}

std::vector<size_t> StatisticSpec::event_tuple(size_t index) const {
  std::vector<size_t> tuple(fields.size());
  for (size_t k = fields.size(); k-- > 0;) {
    tuple[k] = index % fields[k].extent;
    index /= fields[k].extent;
  }
  return tuple;
}

std::string StatisticSpec::event_name(size_t index, const Vocab& vocab) const {
  if (family == Family::entropy) return "H";
  if (family == Family::universal_arc) {
    const auto& t = forbidden.at(index);
    return value_name(FieldKind::head_tag, t[0], vocab) + "," +
           value_name(FieldKind::child_tag, t[1], vocab) + "," +
           value_name(FieldKind::label, t[2], vocab);
  }
  const auto tuple = event_tuple(index);
  std::vector<std::string> parts;
  for (size_t k = 0; k < fields.size(); ++k)
    parts.push_back(value_name(fields[k].kind, tuple[k], vocab));
  return join(parts, ",");
}

std::optional<size_t> StatisticSpec::event_from_name(const std::string& name,
                                                     const Vocab& vocab) const {
  if (family == Family::entropy) return name == "H" ? std::optional<size_t>(0)
                                                    : std::nullopt;
  const auto parts = split(name, ',');
  if (family == Family::universal_arc) {
    if (parts.size() != 3) return std::nullopt;
    for (size_t k = 0; k < forbidden.size(); ++k)
      if (event_name(k, vocab) == name) return k;
    return std::nullopt;
  }
  if (parts.size() != fields.size()) return std::nullopt;
  std::vector<size_t> values(fields.size());
  for (size_t k = 0; k < fields.size(); ++k) {
    auto v = value_from_name(fields[k].kind, parts[k], vocab, fields[k].extent);
    if (!v) return std::nullopt;
    values[k] = *v;
  }
  return event_index(values);
}

// --- factories ---

namespace {

size_t vocab_tag_count_of(const StatisticSpec& spec) {
  for (const auto& f : spec.fields) {
    if (f.kind == FieldKind::child_tag || f.kind == FieldKind::tag)
      return f.extent;
    if (f.kind == FieldKind::head_tag || f.kind == FieldKind::bigram_left ||
        f.kind == FieldKind::bigram_right)
      return f.extent - 1;
  }
  return 0;
}

}  // namespace

StatisticSpec make_pos_unigram(const Vocab& vocab) {
  StatisticSpec spec;
  spec.id = "pos-unigram";
  spec.family = Family::pos_unigram;
  spec.fields = {{"tag", FieldKind::tag, vocab.tag_count()}};
  spec.dim_f = product_dim(spec.fields);
  layout_proportion(spec);
  return spec;
}

StatisticSpec make_pos_bigram(const Vocab& vocab) {
  StatisticSpec spec;
  spec.id = "pos-bigram";
  spec.family = Family::pos_bigram;
  spec.fields = {{"left", FieldKind::bigram_left, vocab.tag_count() + 1},
                 {"right", FieldKind::bigram_right, vocab.tag_count() + 1}};
  spec.dim_f = product_dim(spec.fields);
  layout_proportion(spec);
  return spec;
}

StatisticSpec make_single_arc(const Vocab& vocab,
                              const std::vector<std::string>& fields,
                              const std::vector<std::string>& given) {
  const std::vector<FieldDef> universe = {
      {"head_tag", FieldKind::head_tag, vocab.tag_count() + 1},
      {"child_tag", FieldKind::child_tag, vocab.tag_count()},
      {"label", FieldKind::label, vocab.label_count()},
      {"dir", FieldKind::dir, kDirCount},
      {"dist", FieldKind::dist, kDistCount},
  };
  StatisticSpec spec;
  spec.family = Family::single_arc;
  for (const auto& def : universe)
    if (std::find(fields.begin(), fields.end(), def.name) != fields.end())
      spec.fields.push_back(def);
  if (spec.fields.size() != fields.size())
    fail(ErrorCode::invalid_argument,
         "single_arc: unknown field in {" + join(fields, ",") + "}");
  if (spec.fields.empty())
    fail(ErrorCode::invalid_argument, "single_arc: no fields");
  for (const auto& g : given) {
    bool found = false;
    for (size_t k = 0; k < spec.fields.size(); ++k)
      if (spec.fields[k].name == g) {
        spec.given.push_back(k);
        found = true;
      }
    if (!found)
      fail(ErrorCode::invalid_argument,
           "single_arc: conditioning field '" + g + "' not among joint fields");
  }
  spec.dim_f = product_dim(spec.fields);
  std::vector<std::string> parts = fields;
  spec.id = "arc(" + join(parts, ",") +
            (given.empty() ? "" : "|" + join(given, ",")) + ")";
  if (spec.given.empty())
    layout_proportion(spec);
  else
    layout_conditional(spec);
  return spec;
}

StatisticSpec make_sibling(const Vocab& vocab) {
  StatisticSpec spec;
  spec.id = "sibling";
  spec.family = Family::sibling;
  spec.fields = {{"head_tag", FieldKind::head_tag, vocab.tag_count() + 1},
                 {"c1_tag", FieldKind::child_tag, vocab.tag_count()},
                 {"c2_tag", FieldKind::child_tag, vocab.tag_count()},
                 {"dir1", FieldKind::dir, kDirCount},
                 {"dir2", FieldKind::dir, kDirCount}};
  spec.dim_f = product_dim(spec.fields);
  layout_proportion(spec);
  return spec;
}

StatisticSpec make_grandchild(const Vocab& vocab) {
  StatisticSpec spec;
  spec.id = "grandchild";
  spec.family = Family::grandchild;
  spec.fields = {{"child_tag", FieldKind::child_tag, vocab.tag_count()},
                 {"label", FieldKind::label, vocab.label_count()},
                 {"grand_label", FieldKind::label, vocab.label_count()},
                 {"dir1", FieldKind::dir, kDirCount},
                 {"dir2", FieldKind::dir, kDirCount}};
  spec.dim_f = product_dim(spec.fields);
  layout_proportion(spec);
  return spec;
}

StatisticSpec make_valency(const Vocab& vocab) {
  StatisticSpec spec;
  spec.id = "valency";
  spec.family = Family::valency;
  spec.fields = {{"head_tag", FieldKind::head_tag, vocab.tag_count() + 1},
                 {"val_bin", FieldKind::val_bin, kValCount}};
  spec.dim_f = product_dim(spec.fields);
  layout_proportion(spec);
  return spec;
}

StatisticSpec make_entropy(EntropyMode mode) {
  StatisticSpec spec;
  spec.family = Family::entropy;
  spec.entropy_mode = mode;
  spec.id = mode == EntropyMode::token  ? "entropy-token"
            : mode == EntropyMode::edge ? "entropy-edge"
                                        : "entropy-tree";
  spec.dim_f = 1;
  spec.dim_g = 2;  // (entropy total, unit count)
  spec.num_idx = {0};
  spec.den_group = {0};
  spec.den_members = {{1}};
  return spec;
}

StatisticSpec make_universal_arc(const Vocab& vocab, const std::string& text,
                                 std::vector<std::string>* warnings) {
  StatisticSpec spec;
  spec.id = "universal-arc";
  spec.family = Family::universal_arc;
  spec.fields = {{"head_tag", FieldKind::head_tag, vocab.tag_count() + 1},
                 {"child_tag", FieldKind::child_tag, vocab.tag_count()},
                 {"label", FieldKind::label, vocab.label_count()}};
  std::istringstream in(text);
  std::string line;
  size_t line_no = 0;
  std::map<std::array<size_t, 3>, bool> seen;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto parts = split_ws(line);
    if (parts.size() != 3)
      fail(ErrorCode::parse, "forbidden list line " + std::to_string(line_no) +
                                 ": expected 'HEAD_TAG CHILD_TAG LABEL'");
    auto h = value_from_name(FieldKind::head_tag, parts[0], vocab,
                             vocab.tag_count() + 1);
    auto c = value_from_name(FieldKind::child_tag, parts[1], vocab,
                             vocab.tag_count());
    auto l = value_from_name(FieldKind::label, parts[2], vocab,
                             vocab.label_count());
    if (!h || !c || !l)
      fail(ErrorCode::parse, "forbidden list line " + std::to_string(line_no) +
                                 ": unknown symbol in '" + line + "'");
    std::array<size_t, 3> triple = {*h, *c, *l};
    if (seen.count(triple)) {
      if (warnings)
        warnings->push_back("duplicate forbidden triple '" + line +
                            "' at line " + std::to_string(line_no));
      continue;
    }
    seen[triple] = true;
    spec.forbidden.push_back(triple);
  }
  spec.dim_f = spec.forbidden.size();
  spec.dim_g = spec.dim_f + 1;  // extra slot: total arc count
  spec.num_idx.resize(spec.dim_f);
  spec.den_group.assign(spec.dim_f, 0);
  spec.den_members.assign(1, {spec.dim_f});
  for (size_t j = 0; j < spec.dim_f; ++j) spec.num_idx[j] = j;
  return spec;
}

StatisticSpec make_universal_arc_file(const Vocab& vocab,
                                      const std::string& path,
                                      std::vector<std::string>* warnings) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return make_universal_arc(vocab, ss.str(), warnings);
}

std::vector<std::string> catalog_ids() {
  return {"cld",          "hcld",          "hld",
          "ld",           "ld-dist",       "hcd",
          "hl-given-c",   "l-given-c",     "sibling",
          "grandchild",   "valency",       "pos-unigram",
          "pos-bigram",   "entropy-token", "entropy-edge",
          "entropy-tree"};
}

StatisticSpec catalog_make(const Vocab& vocab, const std::string& id) {
  StatisticSpec spec;
  if (id == "cld")
    spec = make_single_arc(vocab, {"child_tag", "label", "dir"});
  else if (id == "hcld")
    spec = make_single_arc(vocab, {"head_tag", "child_tag", "label", "dir"});
  else if (id == "hld")
    spec = make_single_arc(vocab, {"head_tag", "label", "dir"});
  else if (id == "ld")
    spec = make_single_arc(vocab, {"label", "dir"});
  else if (id == "ld-dist")
    spec = make_single_arc(vocab, {"label", "dir", "dist"});
  else if (id == "hcd")
    spec = make_single_arc(vocab, {"head_tag", "child_tag", "dir"});
  else if (id == "hl-given-c")
    spec = make_single_arc(vocab, {"head_tag", "child_tag", "label"},
                           {"child_tag"});
  else if (id == "l-given-c")
    spec = make_single_arc(vocab, {"child_tag", "label"}, {"child_tag"});
  else if (id == "sibling")
    spec = make_sibling(vocab);
  else if (id == "grandchild")
    spec = make_grandchild(vocab);
  else if (id == "valency")
    spec = make_valency(vocab);
  else if (id == "pos-unigram")
    spec = make_pos_unigram(vocab);
  else if (id == "pos-bigram")
    spec = make_pos_bigram(vocab);
  else if (id == "entropy-token")
    spec = make_entropy(EntropyMode::token);
  else if (id == "entropy-edge")
    spec = make_entropy(EntropyMode::edge);
  else if (id == "entropy-tree")
    spec = make_entropy(EntropyMode::tree);
  else if (id == "universal-arc")
    fail(ErrorCode::invalid_argument,
         "universal-arc needs a forbidden-triple file (use make_universal_arc)");
  else
    fail(ErrorCode::invalid_argument, "unknown statistic family '" + id + "'");
  spec.id = id;
  return spec;
}

// --- term visitor over the product families ---

namespace {

enum class Src : uint8_t { tag, head, label };

struct Factor {
  Src src;
  size_t idx;
};

struct FieldPos {
  int head_tag = -1, child_tag = -1, label = -1, dir = -1, dist = -1;
};

FieldPos arc_positions(const StatisticSpec& spec) {
  FieldPos p;
  for (size_t k = 0; k < spec.fields.size(); ++k) {
    const auto& name = spec.fields[k].name;
    if (name == "head_tag") p.head_tag = static_cast<int>(k);
    if (name == "child_tag") p.child_tag = static_cast<int>(k);
    if (name == "label") p.label = static_cast<int>(k);
    if (name == "dir") p.dir = static_cast<int>(k);
    if (name == "dist") p.dist = static_cast<int>(k);
  }
  return p;
}

struct SibPos {
  int head_tag = -1, c1 = -1, c2 = -1, dir1 = -1, dir2 = -1;
};

SibPos sib_positions(const StatisticSpec& spec) {
  SibPos p;
  for (size_t k = 0; k < spec.fields.size(); ++k) {
    const auto& name = spec.fields[k].name;
    if (name == "head_tag") p.head_tag = static_cast<int>(k);
    if (name == "c1_tag") p.c1 = static_cast<int>(k);
    if (name == "c2_tag") p.c2 = static_cast<int>(k);
    if (name == "dir1") p.dir1 = static_cast<int>(k);
    if (name == "dir2") p.dir2 = static_cast<int>(k);
  }
  return p;
}

struct GcPos {
  int child_tag = -1, label = -1, grand_label = -1, dir1 = -1, dir2 = -1;
};

GcPos gc_positions(const StatisticSpec& spec) {
  GcPos p;
  for (size_t k = 0; k < spec.fields.size(); ++k) {
    const auto& name = spec.fields[k].name;
    if (name == "child_tag") p.child_tag = static_cast<int>(k);
    if (name == "label") p.label = static_cast<int>(k);
    if (name == "grand_label") p.grand_label = static_cast<int>(k);
    if (name == "dir1") p.dir1 = static_cast<int>(k);
    if (name == "dir2") p.dir2 = static_cast<int>(k);
  }
  return p;
}

size_t tag_flat(size_t i, size_t t, size_t T) { return i * T + t; }
size_t head_flat(size_t i, size_t j, size_t n) { return i * (n + 1) + j; }
size_t label_flat(size_t i, size_t j, size_t r, size_t n, size_t R) {
  return (i * (n + 1) + j) * R + r;
}

// Emits every (event cell, product of marginal entries) term of the
// expectation. Emit signature: (size_t cell, const Factor*, size_t count).
template <class Emit>
void visit_terms(const StatisticSpec& spec, size_t n, size_t T, size_t R,
                 Emit&& emit) {
  Factor f[6];
  std::vector<size_t> values(spec.fields.size(), 0);
  switch (spec.family) {
    case Family::pos_unigram: {
      for (size_t i = 0; i < n; ++i)
        for (size_t t = 0; t < T; ++t) {
          f[0] = {Src::tag, tag_flat(i, t, T)};
          emit(t, f, 1);
        }
      return;
    }
    case Family::pos_bigram: {
      const size_t B = T + 1;
      for (size_t t = 0; t < T; ++t) {
        f[0] = {Src::tag, tag_flat(0, t, T)};
        emit(T * B + t, f, 1);  // (BOS, t)
        f[0] = {Src::tag, tag_flat(n - 1, t, T)};
        emit(t * B + T, f, 1);  // (t, EOS)
      }
      for (size_t i = 0; i + 1 < n; ++i)
        for (size_t a = 0; a < T; ++a)
          for (size_t b = 0; b < T; ++b) {
            f[0] = {Src::tag, tag_flat(i, a, T)};
            f[1] = {Src::tag, tag_flat(i + 1, b, T)};
            emit(a * B + b, f, 2);
          }
      return;
    }
    case Family::single_arc: {
      const FieldPos pos = arc_positions(spec);
      for (size_t i = 0; i < n; ++i) {
        const int cpos = static_cast<int>(i) + 1;
        for (size_t j = 0; j <= n; ++j) {
          if (j == i + 1) continue;
          if (pos.dir >= 0) values[pos.dir] = dir_of(static_cast<int>(j), cpos);
          if (pos.dist >= 0)
            values[pos.dist] = dist_bin_of(static_cast<int>(j), cpos);
          const size_t ht_lo = pos.head_tag >= 0 && j > 0 ? 0 : T;
          const size_t ht_hi = pos.head_tag >= 0 && j > 0 ? T : T + 1;
          for (size_t th = ht_lo; th < ht_hi; ++th) {
            // th == T encodes ROOT (j == 0) or "head tag inactive"
            for (size_t tc = 0; tc < (pos.child_tag >= 0 ? T : 1); ++tc) {
              for (size_t r = 0; r < (pos.label >= 0 ? R : 1); ++r) {
                size_t nf = 0;
                f[nf++] = {Src::head, head_flat(i, j, n)};
                if (pos.head_tag >= 0) {
                  values[pos.head_tag] = j == 0 ? T : th;
                  if (j > 0) f[nf++] = {Src::tag, tag_flat(j - 1, th, T)};
                }
                if (pos.child_tag >= 0) {
                  values[pos.child_tag] = tc;
                  f[nf++] = {Src::tag, tag_flat(i, tc, T)};
                }
                if (pos.label >= 0) {
                  values[pos.label] = r;
                  f[nf++] = {Src::label, label_flat(i, j, r, n, R)};
                }
                emit(spec.event_index(values), f, nf);
              }
            }
          }
        }
      }
      return;
    }
    case Family::universal_arc: {
      for (size_t k = 0; k < spec.forbidden.size(); ++k) {
        const auto [th, tc, r] = spec.forbidden[k];
        for (size_t i = 0; i < n; ++i) {
          if (th == T) {  // ROOT-headed triple
            const size_t j = 0;
            size_t nf = 0;
            f[nf++] = {Src::head, head_flat(i, j, n)};
            f[nf++] = {Src::tag, tag_flat(i, tc, T)};
            f[nf++] = {Src::label, label_flat(i, j, r, n, R)};
            emit(k, f, nf);
            continue;
          }
          for (size_t j = 1; j <= n; ++j) {
            if (j == i + 1) continue;
            size_t nf = 0;
            f[nf++] = {Src::head, head_flat(i, j, n)};
            f[nf++] = {Src::tag, tag_flat(j - 1, th, T)};
            f[nf++] = {Src::tag, tag_flat(i, tc, T)};
            f[nf++] = {Src::label, label_flat(i, j, r, n, R)};
            emit(k, f, nf);
          }
        }
      }
      return;
    }
    case Family::sibling: {
      const SibPos pos = sib_positions(spec);
      for (size_t h = 0; h <= n; ++h) {
        for (size_t c1 = 0; c1 < n; ++c1) {
          if (c1 + 1 == h) continue;
          for (size_t c2 = c1 + 1; c2 < n; ++c2) {
            if (c2 + 1 == h) continue;
            if (pos.dir1 >= 0)
              values[pos.dir1] =
                  dir_of(static_cast<int>(h), static_cast<int>(c1) + 1);
            if (pos.dir2 >= 0)
              values[pos.dir2] =
                  dir_of(static_cast<int>(h), static_cast<int>(c2) + 1);
            const size_t ht_lo = pos.head_tag >= 0 && h > 0 ? 0 : T;
            const size_t ht_hi = pos.head_tag >= 0 && h > 0 ? T : T + 1;
            for (size_t th = ht_lo; th < ht_hi; ++th) {
              for (size_t t1 = 0; t1 < (pos.c1 >= 0 ? T : 1); ++t1) {
                for (size_t t2 = 0; t2 < (pos.c2 >= 0 ? T : 1); ++t2) {
                  size_t nf = 0;
                  f[nf++] = {Src::head, head_flat(c1, h, n)};
                  f[nf++] = {Src::head, head_flat(c2, h, n)};
                  if (pos.head_tag >= 0) {
                    values[pos.head_tag] = h == 0 ? T : th;
                    if (h > 0) f[nf++] = {Src::tag, tag_flat(h - 1, th, T)};
                  }
                  if (pos.c1 >= 0) {
                    values[pos.c1] = t1;
                    f[nf++] = {Src::tag, tag_flat(c1, t1, T)};
                  }
                  if (pos.c2 >= 0) {
                    values[pos.c2] = t2;
                    f[nf++] = {Src::tag, tag_flat(c2, t2, T)};
                  }
                  emit(spec.event_index(values), f, nf);
                }
              }
            }
          }
        }
      }
      return;
    }
    case Family::grandchild: {
      const GcPos pos = gc_positions(spec);
      for (size_t m = 1; m <= n; ++m) {    // mid word position
        for (size_t c = 1; c <= n; ++c) {  // lower child position
          if (c == m) continue;
          for (size_t g = 0; g <= n; ++g) {  // upper head position
            if (g == m) continue;
            if (pos.dir1 >= 0)
              values[pos.dir1] = dir_of(static_cast<int>(g), static_cast<int>(m));
            if (pos.dir2 >= 0)
              values[pos.dir2] = dir_of(static_cast<int>(m), static_cast<int>(c));
            for (size_t tc = 0; tc < (pos.child_tag >= 0 ? T : 1); ++tc) {
              for (size_t rl = 0; rl < (pos.label >= 0 ? R : 1); ++rl) {
                for (size_t rg = 0; rg < (pos.grand_label >= 0 ? R : 1); ++rg) {
                  size_t nf = 0;
                  f[nf++] = {Src::head, head_flat(c - 1, m, n)};
                  f[nf++] = {Src::head, head_flat(m - 1, g, n)};
                  if (pos.child_tag >= 0) {
                    values[pos.child_tag] = tc;
                    f[nf++] = {Src::tag, tag_flat(c - 1, tc, T)};
                  }
                  if (pos.label >= 0) {
                    values[pos.label] = rl;
                    f[nf++] = {Src::label, label_flat(c - 1, m, rl, n, R)};
                  }
                  if (pos.grand_label >= 0) {
                    values[pos.grand_label] = rg;
                    f[nf++] = {Src::label, label_flat(m - 1, g, rg, n, R)};
                  }
                  emit(spec.event_index(values), f, nf);
                }
              }
            }
          }
        }
      }
      return;
    }
    case Family::valency:
    case Family::entropy:
      fail(ErrorCode::internal, "visit_terms: family handled elsewhere");
  }
}

void check_margs(const StatisticSpec& spec, const SentMargs& m) {
  if (!m.tag || !m.head || !m.label)
    fail(ErrorCode::invalid_argument, spec.id + ": missing marginals");
  const size_t T = m.tag->cols();
  const size_t R = m.label->shape().at(2);
  const size_t want_T = vocab_tag_count_of(spec);
  if (want_T && want_T != T)
    fail(ErrorCode::invalid_argument,
         spec.id + ": marginal tag count " + std::to_string(T) +
             " does not match spec (" + std::to_string(want_T) + ")");
  for (const auto& fdef : spec.fields)
    if (fdef.kind == FieldKind::label && fdef.extent != R)
      fail(ErrorCode::invalid_argument,
           spec.id + ": marginal label count " + std::to_string(R) +
               " does not match spec (" + std::to_string(fdef.extent) + ")");
}

double entry(const SentMargs& m, const Factor& f) {
  switch (f.src) {
    case Src::tag:
      return (*m.tag)[f.idx];
    case Src::head:
      return (*m.head)[f.idx];
    case Src::label:
      return (*m.label)[f.idx];
  }
  return 0.0;
}

// Poisson-binomial pmf over independent child indicators.
std::vector<double> valency_dp(const SentMargs& m, size_t h, size_t skip_child) {
  const size_t n = m.n;
  std::vector<double> q(n + 1, 0.0);
  q[0] = 1.0;
  size_t used = 0;
  for (size_t i = 0; i < n; ++i) {
    if (i == skip_child) continue;
    const double p = m.head->at(i, h);
    ++used;
    for (size_t k = used; k >= 1; --k) q[k] = q[k] * (1.0 - p) + q[k - 1] * p;
    q[0] *= 1.0 - p;
  }
  return q;
}

constexpr size_t kNoSkip = static_cast<size_t>(-1);

template <class PerHead>
void valency_heads(const StatisticSpec&, const SentMargs& m,
                   PerHead&& per_head) {
  const size_t n = m.n;
  const size_t T = m.tag->cols();
  for (size_t h = 0; h <= n; ++h) {
    std::vector<double> q = valency_dp(m, h, kNoSkip);
    std::vector<double> pbin(kValCount, 0.0);
    for (size_t k = 0; k <= n; ++k) pbin[val_bin_of(k)] += q[k];
    per_head(h, T, q, pbin);
  }
}

double entropy_of_row(const double* p, size_t k) {
  double h = 0.0;
  for (size_t j = 0; j < k; ++j)
    if (p[j] > 0.0) h -= p[j] * std::log(p[j]);
  return h;
}

}  // namespace

Structure structure_of(const Vocab& vocab, const Sentence& s) {
  if (!s.labeled())
    fail(ErrorCode::invalid_argument, "structure_of: sentence is unlabeled");
  Structure st;
  st.heads = s.heads;
  for (const auto& t : s.tags) st.tags.push_back(vocab.tag_index(t));
  for (const auto& l : s.labels) st.labels.push_back(vocab.label_index(l));
  return st;
}

void count_structure(const StatisticSpec& spec, const Structure& st, Array& gbar) {
  if (gbar.size() != spec.dim_g)
    fail(ErrorCode::invalid_argument, "count_structure: gbar size mismatch");
  const size_t n = st.size();
  std::vector<size_t> values(spec.fields.size(), 0);
  switch (spec.family) {
    case Family::pos_unigram:
      for (size_t i = 0; i < n; ++i) gbar[st.tags[i]] += 1.0;
      return;
    case Family::pos_bigram: {
      const size_t T = spec.fields[0].extent - 1;
      const size_t B = T + 1;
      gbar[T * B + st.tags[0]] += 1.0;
      for (size_t i = 0; i + 1 < n; ++i) gbar[st.tags[i] * B + st.tags[i + 1]] += 1.0;
      gbar[st.tags[n - 1] * B + T] += 1.0;
      return;
    }
    case Family::single_arc: {
      const FieldPos pos = arc_positions(spec);
      const size_t T = vocab_tag_count_of(spec);
      for (size_t i = 0; i < n; ++i) {
        const int j = st.heads[i];
        const int cpos = static_cast<int>(i) + 1;
        if (pos.head_tag >= 0)
          values[pos.head_tag] = j == 0 ? T : st.tags[j - 1];
        if (pos.child_tag >= 0) values[pos.child_tag] = st.tags[i];
        if (pos.label >= 0) values[pos.label] = st.labels[i];
        if (pos.dir >= 0) values[pos.dir] = dir_of(j, cpos);
        if (pos.dist >= 0) values[pos.dist] = dist_bin_of(j, cpos);
        gbar[spec.event_index(values)] += 1.0;
      }
      return;
    }
    case Family::universal_arc: {
      const size_t T = spec.fields[0].extent - 1;
      for (size_t i = 0; i < n; ++i) {
        const int j = st.heads[i];
        const size_t th = j == 0 ? T : st.tags[j - 1];
        const std::array<size_t, 3> key = {th, st.tags[i], st.labels[i]};
        for (size_t k = 0; k < spec.forbidden.size(); ++k)
          if (spec.forbidden[k] == key) gbar[k] += 1.0;
      }
      gbar[spec.dim_f] += static_cast<double>(n);  // total arcs
      return;
    }
    case Family::sibling: {
      const SibPos pos = sib_positions(spec);
      const size_t T = vocab_tag_count_of(spec);
      for (size_t c1 = 0; c1 < n; ++c1) {
        for (size_t c2 = c1 + 1; c2 < n; ++c2) {
          if (st.heads[c1] != st.heads[c2]) continue;
          const int h = st.heads[c1];
          if (pos.head_tag >= 0)
            values[pos.head_tag] = h == 0 ? T : st.tags[h - 1];
          if (pos.c1 >= 0) values[pos.c1] = st.tags[c1];
          if (pos.c2 >= 0) values[pos.c2] = st.tags[c2];
          if (pos.dir1 >= 0) values[pos.dir1] = dir_of(h, static_cast<int>(c1) + 1);
          if (pos.dir2 >= 0) values[pos.dir2] = dir_of(h, static_cast<int>(c2) + 1);
          gbar[spec.event_index(values)] += 1.0;
        }
      }
      return;
    }
    case Family::grandchild: {
      const GcPos pos = gc_positions(spec);
      for (size_t c = 0; c < n; ++c) {
        const int mid = st.heads[c];
        if (mid == 0) continue;
        const int g = st.heads[mid - 1];
        if (pos.child_tag >= 0) values[pos.child_tag] = st.tags[c];
        if (pos.label >= 0) values[pos.label] = st.labels[c];
        if (pos.grand_label >= 0) values[pos.grand_label] = st.labels[mid - 1];
        if (pos.dir1 >= 0) values[pos.dir1] = dir_of(g, mid);
        if (pos.dir2 >= 0) values[pos.dir2] = dir_of(mid, static_cast<int>(c) + 1);
        gbar[spec.event_index(values)] += 1.0;
      }
      return;
    }
    case Family::valency: {
      const size_t T = spec.fields[0].extent - 1;
      std::vector<size_t> kids(n + 1, 0);
      for (size_t i = 0; i < n; ++i) ++kids[st.heads[i]];
      for (size_t h = 0; h <= n; ++h) {
        values[0] = h == 0 ? T : st.tags[h - 1];
        values[1] = val_bin_of(kids[h]);
        gbar[spec.event_index(values)] += 1.0;
      }
      return;
    }
    case Family::entropy:
      // point estimates have zero entropy
      gbar[1] += spec.entropy_mode == EntropyMode::tree
                     ? 1.0
                     : static_cast<double>(n);
      return;
  }
}

Array count_gold(const StatisticSpec& spec, const Vocab& vocab,
                 const std::vector<const Sentence*>& batch) {
  Array gbar({spec.dim_g});
  for (const Sentence* s : batch)
    count_structure(spec, structure_of(vocab, *s), gbar);
  return gbar;
}

Array count_gold(const StatisticSpec& spec, const Vocab& vocab,
                 const Treebank& batch) {
  std::vector<const Sentence*> ptrs;
  ptrs.reserve(batch.size());
  for (const auto& s : batch.sentences) ptrs.push_back(&s);
  return count_gold(spec, vocab, ptrs);
}

SentMargs views(const MarginalSet& ms) {
  SentMargs m;
  m.n = ms.n;
  m.tag = &ms.tag;
  m.head = &ms.head;
  m.label = &ms.label;
  m.arc_scores = &ms.arc_scores;
  return m;
}

Array expect_arrays(const StatisticSpec& spec, const SentMargs& m) {
  Array gbar({spec.dim_g});
  const size_t n = m.n;
  if (spec.family == Family::entropy) {
    switch (spec.entropy_mode) {
      case EntropyMode::token:
        for (size_t i = 0; i < n; ++i)
          gbar[0] += entropy_of_row(m.tag->data() + i * m.tag->cols(),
                                    m.tag->cols());
        gbar[1] += static_cast<double>(n);
        return gbar;
      case EntropyMode::edge:
        for (size_t i = 0; i < n; ++i)
          gbar[0] += entropy_of_row(m.head->data() + i * (n + 1), n + 1);
        gbar[1] += static_cast<double>(n);
        return gbar;
      case EntropyMode::tree:
        if (!m.arc_scores)
          fail(ErrorCode::invalid_argument,
               "entropy-tree needs arc scores in the marginal set");
        gbar[0] +=
            treemath::tree_entropy(treemath::ArcWeights::from_scores(*m.arc_scores));
        gbar[1] += 1.0;
        return gbar;
    }
  }
  check_margs(spec, m);
  if (spec.family == Family::valency) {
    valency_heads(spec, m, [&](size_t h, size_t T,
                               const std::vector<double>&,
                               const std::vector<double>& pbin) {
      for (size_t b = 0; b < kValCount; ++b) {
        if (h == 0) {
          gbar[spec.event_index({T, b})] += pbin[b];
        } else {
          for (size_t t = 0; t < T; ++t)
            gbar[spec.event_index({t, b})] += m.tag->at(h - 1, t) * pbin[b];
        }
      }
    });
    return gbar;
  }
  const size_t T = m.tag->cols();
  const size_t R = m.label->shape().at(2);
  visit_terms(spec, n, T, R, [&](size_t cell, const Factor* f, size_t nf) {
    double prod = 1.0;
    for (size_t k = 0; k < nf; ++k) prod *= entry(m, f[k]);
    gbar[cell] += prod;
  });
  if (spec.family == Family::universal_arc)
    gbar[spec.dim_f] += static_cast<double>(n);
  return gbar;
}

void expect_backward(const StatisticSpec& spec, const SentMargs& m,
                     const Array& upstream, Array* dtag, Array* dhead,
                     Array* dlabel) {
  const size_t n = m.n;
  if (spec.family == Family::entropy) {
    const double u = upstream[0];
    if (u == 0.0) return;
    switch (spec.entropy_mode) {
      case EntropyMode::token:
        for (size_t i = 0; i < n; ++i)
          for (size_t t = 0; t < m.tag->cols(); ++t) {
            const double p = m.tag->at(i, t);
            if (p > 0.0) dtag->at(i, t) += -u * (std::log(p) + 1.0);
          }
        return;
      case EntropyMode::edge:
        for (size_t i = 0; i < n; ++i)
          for (size_t j = 0; j <= n; ++j) {
            const double p = m.head->at(i, j);
            if (p > 0.0) dhead->at(i, j) += -u * (std::log(p) + 1.0);
          }
        return;
      case EntropyMode::tree:
        fail(ErrorCode::internal,
             "entropy-tree differentiates through the tree nodes");
    }
  }
  if (spec.family == Family::valency) {
    valency_heads(spec, m, [&](size_t h, size_t T, const std::vector<double>&,
                               const std::vector<double>& pbin) {
      std::vector<double> dpbin(kValCount, 0.0);
      if (h == 0) {
        for (size_t b = 0; b < kValCount; ++b)
          dpbin[b] = upstream[spec.event_index({T, b})];
      } else {
        for (size_t b = 0; b < kValCount; ++b) {
          double acc = 0.0;
          for (size_t t = 0; t < T; ++t) {
            const double u = upstream[spec.event_index({t, b})];
            acc += u * m.tag->at(h - 1, t);
            dtag->at(h - 1, t) += u * pbin[b];
          }
          dpbin[b] = acc;
        }
      }
      bool any = false;
      for (double v : dpbin)
        if (v != 0.0) any = true;
      if (!any) return;
      for (size_t i = 0; i < n; ++i) {
        // pmf without child i; dq_k/dp_i = q_wo[k-1] - q_wo[k]
        std::vector<double> q_wo = valency_dp(m, h, i);
        double dp = 0.0;
        for (size_t k = 0; k <= n; ++k) {
          const double dq = dpbin[val_bin_of(k)];
          if (dq == 0.0) continue;
          const double lower = k > 0 ? q_wo[k - 1] : 0.0;
          dp += dq * (lower - q_wo[k]);
        }
        dhead->at(i, h) += dp;
      }
    });
    return;
  }
  const size_t T = m.tag->cols();
  const size_t R = m.label->shape().at(2);
  visit_terms(spec, n, T, R, [&](size_t cell, const Factor* f, size_t nf) {
    const double u = upstream[cell];
    if (u == 0.0) return;
    double vals[6];
    for (size_t k = 0; k < nf; ++k) vals[k] = entry(m, f[k]);
    for (size_t k = 0; k < nf; ++k) {
      double others = u;
      for (size_t l = 0; l < nf; ++l)
        if (l != k) others *= vals[l];
      switch (f[k].src) {
        case Src::tag:
          (*dtag)[f[k].idx] += others;
          break;
        case Src::head:
          (*dhead)[f[k].idx] += others;
          break;
        case Src::label:
          (*dlabel)[f[k].idx] += others;
          break;
      }
    }
  });
}

ad::Var expect_node(const StatisticSpec& spec, size_t n, ad::Var tag,
                    ad::Var head, ad::Var label) {
  if (spec.family == Family::entropy && spec.entropy_mode == EntropyMode::tree)
    fail(ErrorCode::invalid_argument,
         "entropy-tree expectation needs arc scores; use the MarginalVars form");
  ad::Tape& t = *tag.tape();
  SentMargs m;
  m.n = n;
  m.tag = &tag.value();
  m.head = &head.value();
  m.label = &label.value();
  Array gbar = expect_arrays(spec, m);
  const size_t ti = tag.id(), hi = head.id(), li = label.id();
  return ad::custom(
      t, std::move(gbar), {tag, head, label},
      [spec, n, ti, hi, li](ad::Tape& t, const Array& up) {
        SentMargs m;
        m.n = n;
        m.tag = &t.value(ti);
        m.head = &t.value(hi);
        m.label = &t.value(li);
        expect_backward(spec, m, up, &t.grad_mut(ti), &t.grad_mut(hi),
                        &t.grad_mut(li));
      });
}

ad::Var expect_node(const StatisticSpec& spec, const MarginalVars& mv) {
  if (spec.family == Family::entropy && spec.entropy_mode == EntropyMode::tree) {
    // relu clamps the tiny negative values a collapsed distribution can
    // produce; the true entropy is nonnegative
    ad::Var h = ad::relu(treemath::tree_entropy_node(mv.arc_scores));
    ad::Var one = mv.arc_scores.tape()->constant(1.0);
    return ad::stack_scalars({h, one});
  }
  return expect_node(spec, mv.n, mv.tag_prob, mv.head_prob, mv.label_prob);
}

ad::Var expect(const StatisticSpec& spec, const std::vector<MarginalVars>& batch) {
  if (batch.empty()) fail(ErrorCode::invalid_argument, "expect: empty batch");
  ad::Var total = expect_node(spec, batch[0]);
  for (size_t s = 1; s < batch.size(); ++s)
    total = ad::add(total, expect_node(spec, batch[s]));
  return total;
}

// --- aggregation ---

namespace {

void check_gbar(const StatisticSpec& spec, const Array& gbar) {
  if (gbar.size() != spec.dim_g)
    fail(ErrorCode::invalid_argument,
         spec.id + ": gbar has " + std::to_string(gbar.size()) +
             " entries, expected " + std::to_string(spec.dim_g));
  for (size_t i = 0; i < gbar.size(); ++i)
    if (gbar[i] < -1e-9)
      fail(ErrorCode::invalid_argument,
           spec.id + ": negative expected count at slot " + std::to_string(i));
}

}  // namespace

StatisticVector aggregate(const StatisticSpec& spec, const Array& gbar) {
  check_gbar(spec, gbar);
  StatisticVector out;
  out.spec = &spec;
  out.values = Array({spec.dim_f});
  out.zero_den.assign(spec.dim_f, 0);
  std::vector<double> dens(spec.den_members.size(), 0.0);
  for (size_t g = 0; g < spec.den_members.size(); ++g)
    for (size_t slot : spec.den_members[g]) dens[g] += gbar[slot];
  for (size_t j = 0; j < spec.dim_f; ++j) {
    const double den = dens[spec.den_group[j]];
    if (den <= 0.0) {
      out.values[j] = 0.0;
      out.zero_den[j] = 1;
    } else {
      out.values[j] = gbar[spec.num_idx[j]] / den;
    }
  }
  return out;
}

ad::Var aggregate_node(const StatisticSpec& spec, ad::Var gbar) {
  check_gbar(spec, gbar.value());
  const Array& gv = gbar.value();
  std::vector<double> dens(spec.den_members.size(), 0.0);
  for (size_t g = 0; g < spec.den_members.size(); ++g)
    for (size_t slot : spec.den_members[g]) dens[g] += gv[slot];
  Array f({spec.dim_f});
  for (size_t j = 0; j < spec.dim_f; ++j) {
    const double den = dens[spec.den_group[j]];
    f[j] = den <= 0.0 ? 0.0 : gv[spec.num_idx[j]] / den;
  }
  const size_t gi = gbar.id();
  return ad::custom(
      *gbar.tape(), std::move(f), {gbar},
      [spec, gi, dens = std::move(dens)](ad::Tape& t, const Array& up) {
        const Array& gv = t.value(gi);
        Array& grad = t.grad_mut(gi);
        for (size_t j = 0; j < spec.dim_f; ++j) {
          const double u = up[j];
          if (u == 0.0) continue;
          const double den = dens[spec.den_group[j]];
          if (den <= 0.0) continue;
          grad[spec.num_idx[j]] += u / den;
          const double scaled = u * gv[spec.num_idx[j]] / (den * den);
          for (size_t slot : spec.den_members[spec.den_group[j]])
            grad[slot] -= scaled;
        }
      });
}

double entropy_stat(const std::vector<MarginalSet>& batch, EntropyMode mode) {
  StatisticSpec spec = make_entropy(mode);
  Array gbar({spec.dim_g});
  for (const MarginalSet& ms : batch) {
    Array one = expect_arrays(spec, views(ms));
    for (size_t i = 0; i < gbar.size(); ++i) gbar[i] += one[i];
  }
  return aggregate(spec, gbar).values[0];
}

}  // namespace esr::stats
