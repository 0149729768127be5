#include "esr/targets.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace esr::targets {

size_t TargetsBundle::entry_count() const {
  size_t c = 0;
  for (const auto& f : families) c += f.entries.size();
  return c;
}

const FamilyTargets* TargetsBundle::find(const std::string& family_id) const {
  for (const auto& f : families)
    if (f.family_id == family_id) return &f;
  return nullptr;
}

std::string TargetsBundle::to_text() const {
  std::ostringstream out;
  out << "version " << version << "\n";
  out << "k " << k << "\n";
  out << "B " << B << "\n";
  out << "seed " << seed << "\n";
  out << "source " << source << "\n";
  for (const auto& f : families)
    for (const auto& e : f.entries)
      out << f.family_id << "\t" << e.event << "\t" << format_g17(e.t) << "\t"
          << format_g17(e.sigma) << "\n";
  return out.str();
}

TargetsBundle TargetsBundle::from_text(const std::string& text) {
  TargetsBundle b;
  std::istringstream in(text);
  std::string line;
  size_t line_no = 0;
  auto header = [&](const char* key) {
    if (!std::getline(in, line))
      fail(ErrorCode::parse, "targets bundle: truncated header");
    ++line_no;
    if (line.rfind(std::string(key) + " ", 0) != 0 &&
        line != key)  // "source " may carry an empty value
      fail(ErrorCode::parse, "targets bundle line " + std::to_string(line_no) +
                                 ": expected '" + key + "'");
    return line.size() > std::string(key).size() + 1
               ? line.substr(std::string(key).size() + 1)
               : std::string();
  };
  b.version = std::stoi(header("version"));
  if (b.version != 1)
    fail(ErrorCode::parse, "targets bundle: unsupported version");
  b.k = std::stoul(header("k"));
  b.B = std::stoul(header("B"));
  b.seed = std::stoull(header("seed"));
  b.source = header("source");
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cols = split(line, '\t');
    if (cols.size() != 4)
      fail(ErrorCode::parse, "targets bundle line " + std::to_string(line_no) +
                                 ": expected 4 tab-separated fields");
    if (b.families.empty() || b.families.back().family_id != cols[0]) {
      FamilyTargets ft;
      ft.family_id = cols[0];
      b.families.push_back(std::move(ft));
    }
    Entry e;
    e.event = cols[1];
    e.t = std::stod(cols[2]);
    e.sigma = std::stod(cols[3]);
    b.families.back().entries.push_back(std::move(e));
  }
  return b;
}

void TargetsBundle::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot open " + path + " for writing");
  out << to_text();
  if (!out) fail(ErrorCode::io, "write failed: " + path);
}

TargetsBundle TargetsBundle::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

TargetsBundle bootstrap(const std::vector<stats::StatisticSpec>& specs,
                        const Vocab& vocab, const Treebank& labeled, size_t k,
                        size_t B, uint64_t seed, const std::string& source) {
  if (labeled.size() < 1)
    fail(ErrorCode::invalid_argument, "bootstrap: empty labeled treebank");
  if (k < 1) fail(ErrorCode::invalid_argument, "bootstrap: k >= 1 required");
  if (B < 2)
    fail(ErrorCode::invalid_argument,
         "bootstrap: B >= 2 required (sample std undefined)");
  for (const auto& s : labeled.sentences)
    if (!s.labeled())
      fail(ErrorCode::invalid_argument,
           "bootstrap: treebank contains unlabeled sentences");

  const size_t m = labeled.size();
  Rng rng(seed);
  std::vector<Array> sum, sumsq;
  for (const auto& spec : specs) {
    sum.emplace_back(Shape{spec.dim_f});
    sumsq.emplace_back(Shape{spec.dim_f});
  }
  std::vector<const Sentence*> mini(k);
  for (size_t b = 0; b < B; ++b) {
    for (size_t i = 0; i < k; ++i)
      mini[i] = &labeled.sentences[rng.below(m)];
    for (size_t fi = 0; fi < specs.size(); ++fi) {
      Array gbar = stats::count_gold(specs[fi], vocab, mini);
      stats::StatisticVector f = stats::aggregate(specs[fi], gbar);
      for (size_t j = 0; j < f.values.size(); ++j) {
        sum[fi][j] += f.values[j];
        sumsq[fi][j] += f.values[j] * f.values[j];
      }
    }
  }

  TargetsBundle bundle;
  bundle.k = k;
  bundle.B = B;
  bundle.seed = seed;
  bundle.source = source.empty() ? "bootstrap" : source;
  for (size_t fi = 0; fi < specs.size(); ++fi) {
    const auto& spec = specs[fi];
    FamilyTargets ft;
    ft.family_id = spec.id;
    for (size_t j = 0; j < spec.dim_f; ++j) {
      const double t = sum[fi][j] / static_cast<double>(B);
      double var = (sumsq[fi][j] - static_cast<double>(B) * t * t) /
                   static_cast<double>(B - 1);
      if (var < 0.0) var = 0.0;  // rounding
      const double sigma = std::sqrt(var);
      if (t == 0.0 && sigma == 0.0 && spec.family != stats::Family::universal_arc)
        continue;  // sparse storage
      Entry e;
      e.event = spec.event_name(j, vocab);
      e.t = t;
      e.sigma = sigma;
      ft.entries.push_back(std::move(e));
    }
    bundle.families.push_back(std::move(ft));
  }
  return bundle;
}

TargetsBundle universal_targets(const stats::StatisticSpec& ua_spec,
                                const Vocab& vocab, const std::string& source) {
  if (ua_spec.family != stats::Family::universal_arc)
    fail(ErrorCode::invalid_argument, "universal_targets: not a universal-arc spec");
  TargetsBundle bundle;
  bundle.k = 0;
  bundle.B = 0;
  bundle.seed = 0;
  bundle.source = source.empty() ? "universal" : source;
  FamilyTargets ft;
  ft.family_id = ua_spec.id;
  for (size_t j = 0; j < ua_spec.dim_f; ++j) {
    Entry e;
    e.event = ua_spec.event_name(j, vocab);
    ft.entries.push_back(std::move(e));
  }
  bundle.families.push_back(std::move(ft));
  return bundle;
}

TargetsBundle universal_targets_from_text(const std::string& text,
                                          std::vector<std::string>* warnings,
                                          const std::string& source) {
  TargetsBundle bundle;
  bundle.k = 0;
  bundle.B = 0;
  bundle.seed = 0;
  bundle.source = source.empty() ? "universal" : source;
  FamilyTargets ft;
  ft.family_id = "universal-arc";
  std::istringstream in(text);
  std::string line;
  size_t line_no = 0;
  std::vector<std::string> seen;
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
    const std::string name = parts[0] + "," + parts[1] + "," + parts[2];
    bool dup = false;
    for (const auto& s : seen)
      if (s == name) dup = true;
    if (dup) {
      if (warnings)
        warnings->push_back("duplicate forbidden triple '" + line +
                            "' at line " + std::to_string(line_no));
      continue;
    }
    seen.push_back(name);
    Entry e;
    e.event = name;
    ft.entries.push_back(std::move(e));
  }
  bundle.families.push_back(std::move(ft));
  return bundle;
}

DenseTargets densify(const FamilyTargets& ft, const stats::StatisticSpec& spec,
                     const Vocab& vocab) {
  DenseTargets d;
  d.t = Array({spec.dim_f});
  d.sigma = Array({spec.dim_f});
  for (const auto& e : ft.entries) {
    auto idx = spec.event_from_name(e.event, vocab);
    if (!idx)
      fail(ErrorCode::validation, "targets bundle: event '" + e.event +
                                      "' unknown to statistic '" + spec.id + "'");
    d.t[*idx] = e.t;
    d.sigma[*idx] = e.sigma;
  }
  return d;
}

stats::StatisticSpec universal_spec_from_bundle(const FamilyTargets& ft,
                                                const Vocab& vocab) {
  std::string text;
  for (const auto& e : ft.entries) {
    const auto parts = split(e.event, ',');
    if (parts.size() != 3)
      fail(ErrorCode::parse,
           "universal-arc bundle entry '" + e.event + "' is not a triple");
    text += parts[0] + " " + parts[1] + " " + parts[2] + "\n";
  }
  return stats::make_universal_arc(vocab, text);
}

}  // namespace esr::targets
