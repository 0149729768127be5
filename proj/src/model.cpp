#include "esr/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace esr {

using ad::Var;

size_t arc_dist_bucket(int head, int child_pos) {
  if (head == 0) return 0;
  const int d = head - child_pos;  // positive: head to the right
  const int a = d > 0 ? d : -d;
  size_t mag;
  if (a <= 3) mag = static_cast<size_t>(a);
  else if (a <= 6) mag = 4;
  else if (a <= 10) mag = 5;
  else mag = 6;
  return d < 0 ? mag : 6 + mag;  // 1..6 leftward, 7..12 rightward
}

void ModelParams::register_array(const std::string& name, Shape shape, Rng& rng,
                                 double scale) {
  Array a(shape);
  for (size_t i = 0; i < a.size(); ++i) a[i] = rng.normal() * scale;
  names_.push_back(name);
  arrays_.push_back(std::move(a));
}

ModelParams::ModelParams(Vocab vocab, ModelConfig cfg)
    : vocab_(std::move(vocab)), cfg_(cfg) {
  Rng rng(cfg_.init_seed);
  const size_t e = cfg_.emb_dim, h = cfg_.hidden_dim, r = cfg_.rank();
  const size_t win = 2 * cfg_.window + 1;
  const size_t T = vocab_.tag_count(), R = vocab_.label_count();
  register_array("word_emb", {vocab_.word_count(), e}, rng, 1.0 / std::sqrt(e));
  register_array("enc0_w", {win * e, h}, rng, 1.0 / std::sqrt(win * e));
  register_array("enc0_b", {h}, rng, 0.0);
  for (size_t d = 1; d < cfg_.mlp_depth; ++d) {
    register_array("enc" + std::to_string(d) + "_w", {h, h}, rng,
                   1.0 / std::sqrt(h));
    register_array("enc" + std::to_string(d) + "_b", {h}, rng, 0.0);
  }
  register_array("root_vec", {1, h}, rng, 1.0 / std::sqrt(h));
  register_array("tag_w", {h, T}, rng, 1.0 / std::sqrt(h));
  register_array("tag_b", {T}, rng, 0.0);
  register_array("arc_child_w", {h, r}, rng, 1.0 / std::sqrt(h));
  register_array("arc_child_b", {r}, rng, 0.0);
  register_array("arc_head_w", {h, r}, rng, 1.0 / std::sqrt(h));
  register_array("arc_head_b", {r}, rng, 0.0);
  // (r+1) x r: the child side carries the bias row; a head-side ones
  // column would add per-child constants the softmax cannot see
  register_array("arc_U", {r + 1, r}, rng, 1.0 / std::sqrt(r + 1));
  // signed head-child distance buckets; the window encoder alone cannot
  // see relative position
  register_array("arc_dist_b", {kArcDistBuckets}, rng, 0.0);
  register_array("lab_child_w", {h, r}, rng, 1.0 / std::sqrt(h));
  register_array("lab_child_b", {r}, rng, 0.0);
  register_array("lab_head_w", {h, r}, rng, 1.0 / std::sqrt(h));
  register_array("lab_head_b", {r}, rng, 0.0);
  for (size_t k = 0; k < R; ++k)
    register_array("lab_U_" + std::to_string(k), {r + 1, r + 1}, rng,
                   1.0 / std::sqrt(r + 1));
}

size_t ModelParams::index_of(const std::string& name) const {
  for (size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  fail(ErrorCode::invalid_argument, "no parameter named " + name);
}

Array& ModelParams::array(const std::string& name) {
  return arrays_[index_of(name)];
}

const Array& ModelParams::array(const std::string& name) const {
  return arrays_[index_of(name)];
}

bool ModelParams::all_finite() const {
  for (const Array& a : arrays_)
    if (!a.all_finite()) return false;
  return true;
}

BoundParams bind(ad::Tape& tape, const ModelParams& params) {
  BoundParams b;
  b.vars.reserve(params.count());
  for (size_t i = 0; i < params.count(); ++i)
    b.vars.push_back(tape.leaf(params.array(i)));
  return b;
}

namespace {

struct ParamIdx {
  // resolved once per forward pass to avoid name lookups in loops
  size_t word_emb, enc0_w, enc0_b, root_vec, tag_w, tag_b;
  size_t arc_child_w, arc_child_b, arc_head_w, arc_head_b, arc_U, arc_dist_b;
  size_t lab_child_w, lab_child_b, lab_head_w, lab_head_b, lab_U0;
  std::vector<std::pair<size_t, size_t>> enc_extra;  // (w, b) per extra layer

  explicit ParamIdx(const ModelParams& p) {
    word_emb = p.index_of("word_emb");
    enc0_w = p.index_of("enc0_w");
    enc0_b = p.index_of("enc0_b");
    root_vec = p.index_of("root_vec");
    tag_w = p.index_of("tag_w");
    tag_b = p.index_of("tag_b");
    arc_child_w = p.index_of("arc_child_w");
    arc_child_b = p.index_of("arc_child_b");
    arc_head_w = p.index_of("arc_head_w");
    arc_head_b = p.index_of("arc_head_b");
    arc_U = p.index_of("arc_U");
    arc_dist_b = p.index_of("arc_dist_b");
    lab_child_w = p.index_of("lab_child_w");
    lab_child_b = p.index_of("lab_child_b");
    lab_head_w = p.index_of("lab_head_w");
    lab_head_b = p.index_of("lab_head_b");
    lab_U0 = p.index_of("lab_U_0");
    for (size_t d = 1; d < p.config().mlp_depth; ++d)
      enc_extra.emplace_back(p.index_of("enc" + std::to_string(d) + "_w"),
                             p.index_of("enc" + std::to_string(d) + "_b"));
  }
};

Var append_ones_col(ad::Tape& tape, Var m) {
  return ad::concat_cols({m, tape.constant(Array({m.value().rows(), 1}, 1.0))});
}

}  // namespace

Encoded encode(const BoundParams& bound, const ModelParams& params,
               const Sentence& s) {
  const ParamIdx ix(params);
  const Vocab& v = params.vocab();
  const size_t n = s.size();
  const size_t w = params.config().window;
  std::vector<size_t> padded;
  padded.reserve(n + 2 * w);
  for (size_t k = 0; k < w; ++k) padded.push_back(v.bos_word_id());
  for (const auto& word : s.words) padded.push_back(v.word_id(word));
  for (size_t k = 0; k < w; ++k) padded.push_back(v.eos_word_id());

  std::vector<Var> windows;
  for (size_t o = 0; o < 2 * w + 1; ++o) {
    std::vector<size_t> ids(padded.begin() + o, padded.begin() + o + n);
    windows.push_back(ad::gather_rows(bound[ix.word_emb], ids));
  }
  Var x = ad::concat_cols(windows);
  x = ad::tanh(ad::add_rowvec(ad::matmul(x, bound[ix.enc0_w]), bound[ix.enc0_b]));
  for (const auto& [wi, bi] : ix.enc_extra)
    x = ad::tanh(ad::add_rowvec(ad::matmul(x, bound[wi]), bound[bi]));
  Encoded enc;
  enc.tokens = x;
  enc.full = ad::concat_rows({bound[ix.root_vec], x});
  return enc;
}

MarginalVars marginals(ad::Tape& tape, const BoundParams& bound,
                       const ModelParams& params, const Sentence& s) {
  const ParamIdx ix(params);
  const size_t n = s.size();
  const size_t R = params.vocab().label_count();
  Encoded enc = encode(bound, params, s);

  MarginalVars mv;
  mv.n = n;
  Var tag_scores = ad::add_rowvec(ad::matmul(enc.tokens, bound[ix.tag_w]),
                                  bound[ix.tag_b]);
  mv.tag_logp = ad::log_softmax(tag_scores);
  mv.tag_prob = ad::exp(mv.tag_logp);

  Var child = ad::tanh(ad::add_rowvec(
      ad::matmul(enc.tokens, bound[ix.arc_child_w]), bound[ix.arc_child_b]));
  Var head = ad::tanh(ad::add_rowvec(ad::matmul(enc.full, bound[ix.arc_head_w]),
                                     bound[ix.arc_head_b]));
  Var child1 = append_ones_col(tape, child);
  Var bilinear =
      ad::matmul(ad::matmul(child1, bound[ix.arc_U]), ad::transpose(head));
  std::vector<size_t> bucket_idx;
  bucket_idx.reserve(n * (n + 1));
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j <= n; ++j)
      bucket_idx.push_back(arc_dist_bucket(static_cast<int>(j),
                                           static_cast<int>(i) + 1));
  Var dist_bias =
      ad::reshape(ad::pick(bound[ix.arc_dist_b], bucket_idx), {n, n + 1});
  mv.arc_scores = ad::add(bilinear, dist_bias);

  Array self_mask({n, n + 1}, 1.0);
  for (size_t i = 0; i < n; ++i) self_mask.at(i, i + 1) = 0.0;
  mv.head_logp = ad::masked_log_softmax(mv.arc_scores, self_mask);
  mv.head_prob = ad::exp(mv.head_logp);

  Var lchild = ad::tanh(ad::add_rowvec(
      ad::matmul(enc.tokens, bound[ix.lab_child_w]), bound[ix.lab_child_b]));
  Var lhead = ad::tanh(ad::add_rowvec(
      ad::matmul(enc.full, bound[ix.lab_head_w]), bound[ix.lab_head_b]));
  Var lchild1 = append_ones_col(tape, lchild);
  Var lhead1t = ad::transpose(append_ones_col(tape, lhead));
  std::vector<Var> per_label;
  per_label.reserve(R);
  for (size_t k = 0; k < R; ++k)
    per_label.push_back(
        ad::matmul(ad::matmul(lchild1, bound[ix.lab_U0 + k]), lhead1t));
  Var label_scores = ad::stack_last(per_label);
  mv.label_logp = ad::log_softmax(label_scores);
  mv.label_prob = ad::exp(mv.label_logp);
  return mv;
}

MarginalSet marginal_set(const ModelParams& params, const Sentence& s) {
  ad::Tape tape;
  BoundParams bound = bind(tape, params);
  MarginalVars mv = marginals(tape, bound, params, s);
  MarginalSet ms;
  ms.n = s.size();
  ms.tag = mv.tag_prob.value();
  ms.head = mv.head_prob.value();
  ms.label = mv.label_prob.value();
  ms.arc_scores = mv.arc_scores.value();
  return ms;
}

Var nll(ad::Tape& tape, const BoundParams& bound, const ModelParams& params,
        const Sentence& s) {
  if (!s.labeled())
    fail(ErrorCode::invalid_argument, "nll: sentence is unlabeled");
  const Vocab& v = params.vocab();
  const size_t n = s.size();
  const size_t T = v.tag_count(), R = v.label_count();
  MarginalVars mv = marginals(tape, bound, params, s);
  std::vector<size_t> tag_idx, head_idx, label_idx;
  for (size_t i = 0; i < n; ++i) {
    const size_t t = v.tag_index(s.tags[i]);
    const size_t e = static_cast<size_t>(s.heads[i]);
    const size_t r = v.label_index(s.labels[i]);
    tag_idx.push_back(i * T + t);
    head_idx.push_back(i * (n + 1) + e);
    label_idx.push_back((i * (n + 1) + e) * R + r);
  }
  Var logp = ad::add(ad::sum(ad::pick(mv.tag_logp, tag_idx)),
                     ad::add(ad::sum(ad::pick(mv.head_logp, head_idx)),
                             ad::sum(ad::pick(mv.label_logp, label_idx))));
  return ad::neg(logp);
}

double nll_value(const ModelParams& params, const Sentence& s) {
  ad::Tape tape;
  BoundParams bound = bind(tape, params);
  return nll(tape, bound, params, s).value().item();
}

namespace {

constexpr double kForbidden = -1e18;

// Chu-Liu-Edmonds maximum arborescence rooted at node 0.
// score[h][c]: weight of arc h -> c over nodes 0..m-1; returns parent of each
// non-root node. Ties pick the lowest head index.
std::vector<int> cle(std::vector<std::vector<double>> score) {
  const int m = static_cast<int>(score.size());
  std::vector<int> parent(m, -1);
  for (int c = 1; c < m; ++c) {
    double best = -HUGE_VAL;
    for (int h = 0; h < m; ++h) {
      if (h == c) continue;
      if (score[h][c] > best) {
        best = score[h][c];
        parent[c] = h;
      }
    }
  }
  // cycle detection over the parent function
  std::vector<int> color(m, 0);
  std::vector<int> cycle;
  for (int start = 1; start < m && cycle.empty(); ++start) {
    if (color[start]) continue;
    std::vector<int> path;
    int u = start;
    while (u != 0 && color[u] == 0) {
      color[u] = 1;
      path.push_back(u);
      u = parent[u];
    }
    if (u != 0 && color[u] == 1) {
      auto it = std::find(path.begin(), path.end(), u);
      cycle.assign(it, path.end());
    }
    for (int v : path) color[v] = 2;
  }
  if (cycle.empty()) return parent;

  std::vector<char> in_cycle(m, 0);
  for (int v : cycle) in_cycle[v] = 1;
  std::vector<int> new_id(m, -1);
  int k = 0;
  for (int v = 0; v < m; ++v)
    if (!in_cycle[v]) new_id[v] = k++;
  const int cyc = k;
  const int mm = k + 1;

  std::vector<std::vector<double>> reduced(mm, std::vector<double>(mm, kForbidden * 2));
  std::vector<int> enter_child(mm, -1);  // best cycle entry per outside head
  std::vector<int> leave_node(mm, -1);   // best cycle exit per outside child
  for (int h = 0; h < m; ++h) {
    if (in_cycle[h]) continue;
    for (int c = 0; c < m; ++c) {
      if (c == h) continue;
      if (!in_cycle[c]) {
        reduced[new_id[h]][new_id[c]] = score[h][c];
      } else {
        const double gain = score[h][c] - score[parent[c]][c];
        if (gain > reduced[new_id[h]][cyc]) {
          reduced[new_id[h]][cyc] = gain;
          enter_child[new_id[h]] = c;
        }
      }
    }
  }
  for (int c = 0; c < m; ++c) {
    if (in_cycle[c] || c == 0) continue;
    for (int v : cycle) {
      if (score[v][c] > reduced[cyc][new_id[c]]) {
        reduced[cyc][new_id[c]] = score[v][c];
        leave_node[new_id[c]] = v;
      }
    }
  }

  std::vector<int> sub = cle(std::move(reduced));

  std::vector<int> result(m, -1);
  std::vector<int> old_id(mm, -1);
  for (int v = 0; v < m; ++v)
    if (new_id[v] >= 0) old_id[new_id[v]] = v;
  for (int v : cycle) result[v] = parent[v];
  for (int c2 = 1; c2 < mm; ++c2) {
    const int h2 = sub[c2];
    if (c2 == cyc) {
      const int entry = enter_child[h2];
      result[entry] = old_id[h2];
    } else if (h2 == cyc) {
      result[old_id[c2]] = leave_node[c2];
    } else {
      result[old_id[c2]] = old_id[h2];
    }
  }
  return result;
}

}  // namespace

std::vector<int> mst_decode(const Array& log_scores) {
  const size_t n = log_scores.rows();
  if (log_scores.cols() != n + 1)
    fail(ErrorCode::invalid_argument, "mst_decode: scores must be [n][n+1]");
  if (n == 1) return {0};
  std::vector<int> best_heads;
  double best_total = -HUGE_VAL;
  // exact single-root search: force each candidate root child in turn
  for (size_t root_child = 1; root_child <= n; ++root_child) {
    std::vector<std::vector<double>> score(n + 1,
                                           std::vector<double>(n + 1, kForbidden));
    for (size_t c = 1; c <= n; ++c) {
      score[0][c] = c == root_child ? log_scores.at(c - 1, 0) : kForbidden;
      for (size_t h = 1; h <= n; ++h)
        if (h != c) score[h][c] = log_scores.at(c - 1, h);
    }
    std::vector<int> parent = cle(score);
    double total = 0.0;
    for (size_t c = 1; c <= n; ++c) total += score[parent[c]][c];
    if (total > best_total) {
      best_total = total;
      best_heads.assign(parent.begin() + 1, parent.end());
    }
  }
  return best_heads;
}

Sentence decode(const ModelParams& params, const Sentence& s) {
  const Vocab& v = params.vocab();
  MarginalSet ms = marginal_set(params, s);
  const size_t n = s.size();
  const size_t T = v.tag_count(), R = v.label_count();
  Sentence out;
  out.words = s.words;
  out.comments = s.comments;
  out.id = s.id;
  for (size_t i = 0; i < n; ++i) {
    size_t best = 0;
    for (size_t t = 1; t < T; ++t)
      if (ms.tag.at(i, t) > ms.tag.at(i, best)) best = t;
    out.tags.push_back(v.tag_name(best));
  }
  Array log_scores({n, n + 1});
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j <= n; ++j)
      log_scores.at(i, j) = std::log(std::max(ms.head.at(i, j), 1e-300));
  out.heads = mst_decode(log_scores);
  for (size_t i = 0; i < n; ++i) {
    const size_t h = static_cast<size_t>(out.heads[i]);
    size_t best = 0;
    for (size_t r = 1; r < R; ++r)
      if (ms.label.at(i, h, r) > ms.label.at(i, h, best)) best = r;
    out.labels.push_back(v.label_name(best));
  }
  out.full_labels = out.labels;
  return out;
}

// --- checkpoint io ---

void ModelParams::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot open " + path + " for writing");
  out << "esr-checkpoint v1\n";
  out << "emb_dim " << cfg_.emb_dim << "\n";
  out << "hidden_dim " << cfg_.hidden_dim << "\n";
  out << "biaffine_rank " << cfg_.biaffine_rank << "\n";
  out << "window " << cfg_.window << "\n";
  out << "mlp_depth " << cfg_.mlp_depth << "\n";
  out << "init_seed " << cfg_.init_seed << "\n";
  for (const auto& line : vocab_.to_lines()) out << line << "\n";
  out << "arrays " << arrays_.size() << "\n";
  for (size_t i = 0; i < arrays_.size(); ++i) {
    const Array& a = arrays_[i];
    out << names_[i] << " " << a.rank();
    for (size_t d : a.shape()) out << " " << d;
    out << "\n";
    for (size_t k = 0; k < a.size(); ++k) {
      if (k) out << " ";
      out << format_g17(a[k]);
    }
    out << "\n";
  }
  if (!out) fail(ErrorCode::io, "write failed: " + path);
}

ModelParams ModelParams::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path);
  std::string line;
  auto next = [&]() {
    if (!std::getline(in, line))
      fail(ErrorCode::parse, path + ": truncated checkpoint");
    return line;
  };
  if (next() != "esr-checkpoint v1")
    fail(ErrorCode::parse, path + ": not an esr checkpoint");
  ModelParams p;
  auto read_kv = [&](const char* key) {
    auto parts = split_ws(next());
    if (parts.size() != 2 || parts[0] != key)
      fail(ErrorCode::parse, path + ": expected '" + key + "', got '" + line + "'");
    return parts[1];
  };
  p.cfg_.emb_dim = std::stoul(read_kv("emb_dim"));
  p.cfg_.hidden_dim = std::stoul(read_kv("hidden_dim"));
  p.cfg_.biaffine_rank = std::stoul(read_kv("biaffine_rank"));
  p.cfg_.window = std::stoul(read_kv("window"));
  p.cfg_.mlp_depth = std::stoul(read_kv("mlp_depth"));
  p.cfg_.init_seed = std::stoull(read_kv("init_seed"));
  std::vector<std::string> vocab_lines;
  auto header = split_ws(next());
  while (!(header.size() == 2 && header[0] == "arrays")) {
    vocab_lines.push_back(line);
    header = split_ws(next());
  }
  p.vocab_ = Vocab::from_lines(vocab_lines);
  const size_t count = std::stoul(header[1]);
  for (size_t i = 0; i < count; ++i) {
    auto meta = split_ws(next());
    if (meta.size() < 2) fail(ErrorCode::parse, path + ": bad array header");
    const std::string name = meta[0];
    const size_t rank = std::stoul(meta[1]);
    if (meta.size() != 2 + rank)
      fail(ErrorCode::parse, path + ": bad array header for " + name);
    Shape shape;
    for (size_t d = 0; d < rank; ++d) shape.push_back(std::stoul(meta[2 + d]));
    Array a(shape);
    std::istringstream vals(next());
    for (size_t k = 0; k < a.size(); ++k) {
      if (!(vals >> a[k]))
        fail(ErrorCode::parse, path + ": truncated values for " + name);
    }
    p.names_.push_back(name);
    p.arrays_.push_back(std::move(a));
  }
  return p;
}

}  // namespace esr
