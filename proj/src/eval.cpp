#include "esr/eval.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace esr::eval {

Scores score(const Treebank& gold, const Treebank& pred) {
  if (gold.size() != pred.size())
    fail(ErrorCode::invalid_argument,
         "score: sentence counts differ (" + std::to_string(gold.size()) +
             " vs " + std::to_string(pred.size()) + ")");
  size_t tokens = 0, pos_ok = 0, las_ok = 0;
  for (size_t si = 0; si < gold.size(); ++si) {
    const Sentence& g = gold.sentences[si];
    const Sentence& p = pred.sentences[si];
    if (g.size() != p.size())
      fail(ErrorCode::invalid_argument,
           "score: sentence " + std::to_string(si + 1) + " length mismatch (" +
               std::to_string(g.size()) + " vs " + std::to_string(p.size()) + ")");
    if (!g.labeled() || !p.labeled())
      fail(ErrorCode::invalid_argument,
           "score: sentence " + std::to_string(si + 1) + " lacks annotations");
    for (size_t i = 0; i < g.size(); ++i) {
      ++tokens;
      if (g.tags[i] == p.tags[i]) ++pos_ok;
      if (g.heads[i] == p.heads[i] &&
          coarse_label(g.labels[i]) == coarse_label(p.labels[i]))
        ++las_ok;
    }
  }
  if (tokens == 0) fail(ErrorCode::invalid_argument, "score: no tokens");
  Scores s;
  s.pos_acc = static_cast<double>(pos_ok) / tokens;
  s.las = static_cast<double>(las_ok) / tokens;
  s.avg = 0.5 * (s.pos_acc + s.las);
  return s;
}

namespace {

Scores final_metrics(const std::string& log_text) {
  std::istringstream in(log_text);
  std::string line, result_line;
  while (std::getline(in, line))
    if (line.rfind("result ", 0) == 0) result_line = line;
  if (result_line.empty())
    fail(ErrorCode::validation, "compare_runs: log has no final result line");
  Scores s;
  bool has_pos = false, has_las = false, has_avg = false;
  for (const auto& tok : split_ws(result_line)) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = tok.substr(0, eq);
    const std::string value = tok.substr(eq + 1);
    if (key == "pos") {
      s.pos_acc = std::stod(value);
      has_pos = true;
    } else if (key == "las") {
      s.las = std::stod(value);
      has_las = true;
    } else if (key == "avg") {
      s.avg = std::stod(value);
      has_avg = true;
    }
  }
  if (!has_pos || !has_las || !has_avg)
    fail(ErrorCode::validation, "compare_runs: missing metric in result line");
  return s;
}

}  // namespace

std::string compare_runs(const std::vector<Run>& runs,
                         const std::string& baseline) {
  if (runs.empty()) fail(ErrorCode::invalid_argument, "compare_runs: no runs");
  std::vector<std::string> order;
  std::map<std::string, std::vector<Scores>> grouped;
  for (const auto& run : runs) {
    if (!grouped.count(run.method)) order.push_back(run.method);
    grouped[run.method].push_back(final_metrics(run.log_text));
  }
  if (!grouped.count(baseline))
    fail(ErrorCode::invalid_argument,
         "compare_runs: baseline method '" + baseline + "' not among runs");
  std::map<std::string, Scores> means;
  for (const auto& [method, list] : grouped) {
    Scores m;
    for (const Scores& s : list) {
      m.pos_acc += s.pos_acc;
      m.las += s.las;
      m.avg += s.avg;
    }
    m.pos_acc /= list.size();
    m.las /= list.size();
    m.avg /= list.size();
    means[method] = m;
  }
  const Scores base = means[baseline];
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-24s %5s %7s %7s %7s %8s %8s %8s\n",
                "method", "runs", "pos", "las", "avg", "d_pos", "d_las",
                "d_avg");
  out << buf;
  for (const auto& method : order) {
    const Scores& m = means[method];
    std::snprintf(buf, sizeof(buf),
                  "%-24s %5zu %7.1f %7.1f %7.1f %+8.1f %+8.1f %+8.1f\n",
                  method.c_str(), grouped[method].size(), 100.0 * m.pos_acc,
                  100.0 * m.las, 100.0 * m.avg, 100.0 * (m.pos_acc - base.pos_acc),
                  100.0 * (m.las - base.las), 100.0 * (m.avg - base.avg));
    out << buf;
  }
  out << "\n";
  for (const auto& method : order) {
    const Scores& m = means[method];
    out << method << "\t" << grouped[method].size() << "\t"
        << format_g17(m.pos_acc) << "\t" << format_g17(m.las) << "\t"
        << format_g17(m.avg) << "\t" << format_g17(m.pos_acc - base.pos_acc)
        << "\t" << format_g17(m.las - base.las) << "\t"
        << format_g17(m.avg - base.avg) << "\n";
  }
  return out.str();
}

}  // namespace esr::eval
