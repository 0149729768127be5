#include "esr.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include "esr/eval.hpp"
#include "esr/oracle.hpp"
#include "esr/stats.hpp"
#include "esr/syngen.hpp"
#include "esr/targets.hpp"
#include "esr/train.hpp"
#include "esr/treebank.hpp"

using namespace esr;

struct esr_treebank {
  Treebank tb;
};

struct esr_targets {
  targets::TargetsBundle bundle;
};

namespace {

thread_local std::string g_last_error;

esr_status status_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument:
      return ESR_ERR_INVALID_ARGUMENT;
    case ErrorCode::io:
      return ESR_ERR_IO;
    case ErrorCode::parse:
      return ESR_ERR_PARSE;
    case ErrorCode::validation:
      return ESR_ERR_VALIDATION;
    case ErrorCode::numeric:
      return ESR_ERR_NUMERIC;
    case ErrorCode::internal:
      return ESR_ERR_INTERNAL;
  }
  return ESR_ERR_INTERNAL;
}

template <class Fn>
esr_status wrap(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return ESR_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return ESR_ERR_INTERNAL;
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void require(bool ok, const char* what) {
  if (!ok) fail(ErrorCode::invalid_argument, what);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> parse_families_csv(const std::string& csv) {
  std::vector<std::string> out;
  for (const auto& part : split(csv, ',')) {
    const std::string id = trim(part);
    if (!id.empty()) out.push_back(id);
  }
  if (out.empty())
    fail(ErrorCode::invalid_argument, "no statistic families given");
  return out;
}

// ---- run orchestration (config file + overrides) ----

struct RunPaths {
  std::string train_labeled, train_unlabeled, dev, test;
  std::string targets_path, vocab_from, init_checkpoint;
  std::string checkpoint_out, log_out;
  size_t labeled_size = 0;  // 0 -> use all
  uint64_t subsample_seed = 0;
  std::vector<std::string> ablate_seeds;
};

struct RunSetup {
  train::TrainConfig cfg;
  RunPaths paths;
};

RunSetup parse_run_config(const std::string& config_path,
                          const char* overrides) {
  std::string text = read_file(config_path);
  if (overrides && *overrides) text += "\n" + std::string(overrides) + "\n";
  auto pairs = train::parse_config_text(text);
  RunSetup setup;
  std::vector<std::pair<std::string, std::string>> extra;
  setup.cfg = train::config_from_pairs(pairs, &extra);
  for (const auto& [key, value] : extra) {
    std::string k = key;
    if (k.rfind("data.", 0) == 0) k = k.substr(5);
    if (k == "train_labeled") setup.paths.train_labeled = value;
    else if (k == "train_unlabeled") setup.paths.train_unlabeled = value;
    else if (k == "dev") setup.paths.dev = value;
    else if (k == "test") setup.paths.test = value;
    else if (k == "targets") setup.paths.targets_path = value;
    else if (k == "vocab_from") setup.paths.vocab_from = value;
    else if (k == "init_checkpoint") setup.paths.init_checkpoint = value;
    else if (k == "checkpoint_out") setup.paths.checkpoint_out = value;
    else if (k == "log_out") setup.paths.log_out = value;
    else if (k == "labeled_size") setup.paths.labeled_size = std::stoul(value);
    else if (k == "subsample_seed")
      setup.paths.subsample_seed = std::stoull(value);
    else if (k == "ablate_seeds") setup.paths.ablate_seeds = split_ws(value);
    else
      fail(ErrorCode::invalid_argument, "unknown config key '" + key + "'");
  }
  return setup;
}

struct RunOutput {
  train::TrainResult result;
  eval::Scores test_scores;
  bool has_test = false;
  std::string log_text;  // training log plus optional test result line
};

RunOutput execute_run(const RunSetup& setup) {
  const RunPaths& p = setup.paths;
  Treebank labeled, unlabeled, dev;
  if (!p.train_labeled.empty())
    labeled = read_conllu(p.train_labeled, ReadMode::labeled);
  if (!p.train_unlabeled.empty())
    unlabeled = read_conllu(p.train_unlabeled, ReadMode::unlabeled);
  require(!p.dev.empty(), "config needs dev = <conllu path>");
  dev = read_conllu(p.dev, ReadMode::labeled);
  if (p.labeled_size > 0)
    labeled = subsample(labeled, p.labeled_size, p.subsample_seed);

  targets::TargetsBundle bundle;
  if (!p.targets_path.empty())
    bundle = targets::TargetsBundle::load(p.targets_path);

  ModelParams params;
  if (!p.init_checkpoint.empty()) {
    params = ModelParams::load(p.init_checkpoint);
  } else {
    std::vector<const Treebank*> corpora;
    Treebank vocab_bank;
    if (!p.vocab_from.empty()) {
      vocab_bank = read_conllu(p.vocab_from, ReadMode::labeled);
      corpora.push_back(&vocab_bank);
    }
    if (labeled.size() > 0) corpora.push_back(&labeled);
    if (unlabeled.size() > 0) corpora.push_back(&unlabeled);
    require(!corpora.empty(),
            "config needs train_labeled, vocab_from or init_checkpoint");
    params = ModelParams(Vocab::build(corpora), setup.cfg.model);
  }

  RunOutput out;
  out.result = train::train(params, labeled, unlabeled, bundle, setup.cfg, dev);
  out.log_text = out.result.log;
  if (!p.test.empty()) {
    Treebank test = read_conllu(p.test, ReadMode::labeled);
    Treebank pred;
    pred.sentences.reserve(test.size());
    for (const auto& s : test.sentences)
      pred.sentences.push_back(decode(out.result.best, s));
    out.test_scores = eval::score(test, pred);
    out.has_test = true;
    out.log_text += "test pos=" + format_g17(out.test_scores.pos_acc) +
                    " las=" + format_g17(out.test_scores.las) +
                    " avg=" + format_g17(out.test_scores.avg) + "\n";
    out.log_text += "result pos=" + format_g17(out.test_scores.pos_acc) +
                    " las=" + format_g17(out.test_scores.las) +
                    " avg=" + format_g17(out.test_scores.avg) + " split=test\n";
  }
  if (!p.checkpoint_out.empty()) out.result.best.save(p.checkpoint_out);
  if (!p.log_out.empty()) {
    std::ofstream f(p.log_out, std::ios::binary);
    if (!f) fail(ErrorCode::io, "cannot open " + p.log_out + " for writing");
    f << out.log_text;
  }
  return out;
}

std::string inspect_bundle_text(const targets::TargetsBundle& b) {
  std::ostringstream out;
  out << "targets bundle: k=" << b.k << " B=" << b.B << " seed=" << b.seed
      << " source=" << b.source << "\n";
  for (const auto& ft : b.families) {
    double sum_t = 0.0;
    for (const auto& e : ft.entries) sum_t += e.t;
    out << "\n[" << ft.family_id << "] entries=" << ft.entries.size()
        << " sum_t=" << format_g17(sum_t) << "\n";
    std::vector<const targets::Entry*> sorted;
    for (const auto& e : ft.entries) sorted.push_back(&e);
    std::sort(sorted.begin(), sorted.end(),
              [](const targets::Entry* a, const targets::Entry* b) {
                if (a->t != b->t) return a->t > b->t;
                return a->event < b->event;
              });
    for (const auto* e : sorted) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "  %-40s t=%-12.6g sigma=%-12.6g\n",
                    e->event.c_str(), e->t, e->sigma);
      out << buf;
    }
  }
  return out.str();
}

std::string inspect_treebank_text(const Treebank& tb,
                                  const std::vector<std::string>& families) {
  Vocab vocab = Vocab::build(tb);
  std::ostringstream out;
  out << "treebank: " << tb.size() << " sentences, " << tb.token_count()
      << " tokens, " << tb.labeled_count() << " labeled\n";
  for (const auto& id : families) {
    stats::StatisticSpec spec = stats::catalog_make(vocab, id);
    Array gbar = stats::count_gold(spec, vocab, tb);
    stats::StatisticVector f = stats::aggregate(spec, gbar);
    double sum = 0.0;
    for (size_t j = 0; j < spec.dim_f; ++j) sum += f.values[j];
    out << "\n[" << id << "] d_f=" << spec.dim_f << " sum_f=" << format_g17(sum)
        << "\n";
    std::vector<size_t> order;
    for (size_t j = 0; j < spec.dim_f; ++j)
      if (f.values[j] > 0.0) order.push_back(j);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return f.values[a] > f.values[b]; });
    for (size_t j : order) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "  %-40s f=%-12.6g count=%-12.6g\n",
                    spec.event_name(j, vocab).c_str(), f.values[j],
                    gbar[spec.num_idx[j]]);
      out << buf;
    }
  }
  return out.str();
}

}  // namespace

extern "C" {

const char* esr_version(void) { return "0.1.0"; }

const char* esr_last_error(void) { return g_last_error.c_str(); }

void esr_string_free(char* s) { std::free(s); }

esr_status esr_treebank_read(const char* path, int labeled, esr_treebank** out) {
  return wrap([&] {
    require(path && out, "null argument");
    auto* h = new esr_treebank{
        read_conllu(path, labeled ? ReadMode::labeled : ReadMode::unlabeled)};
    *out = h;
  });
}

esr_status esr_treebank_write(const esr_treebank* tb, const char* path) {
  return wrap([&] {
    require(tb && path, "null argument");
    write_conllu(tb->tb, path);
  });
}

esr_status esr_treebank_subsample(const esr_treebank* tb, size_t size,
                                  uint64_t seed, esr_treebank** out) {
  return wrap([&] {
    require(tb && out, "null argument");
    *out = new esr_treebank{subsample(tb->tb, size, seed)};
  });
}

size_t esr_treebank_sentences(const esr_treebank* tb) {
  return tb ? tb->tb.size() : 0;
}

size_t esr_treebank_tokens(const esr_treebank* tb) {
  return tb ? tb->tb.token_count() : 0;
}

void esr_treebank_free(esr_treebank* tb) { delete tb; }

esr_status esr_syngen(const char* grammar_path, size_t size, uint64_t seed,
                      esr_treebank** out) {
  return wrap([&] {
    require(grammar_path && out, "null argument");
    syngen::Grammar g = syngen::Grammar::load(grammar_path);
    *out = new esr_treebank{syngen::generate(g, size, seed)};
  });
}

esr_status esr_syngen_analytic(const char* grammar_path, char** report) {
  return wrap([&] {
    require(grammar_path && report, "null argument");
    syngen::Grammar g = syngen::Grammar::load(grammar_path);
    *report = dup_string(syngen::analytic_report(g));
  });
}

esr_status esr_targets_estimate(const esr_treebank* labeled,
                                const char* families_csv, size_t k, size_t B,
                                uint64_t seed, esr_targets** out) {
  return wrap([&] {
    require(labeled && families_csv && out, "null argument");
    Vocab vocab = Vocab::build(labeled->tb);
    std::vector<stats::StatisticSpec> specs;
    for (const auto& id : parse_families_csv(families_csv))
      specs.push_back(stats::catalog_make(vocab, id));
    *out = new esr_targets{
        targets::bootstrap(specs, vocab, labeled->tb, k, B, seed)};
  });
}

esr_status esr_targets_universal(const char* forbidden_path, esr_targets** out) {
  return wrap([&] {
    require(forbidden_path && out, "null argument");
    std::vector<std::string> warnings;
    *out = new esr_targets{targets::universal_targets_from_text(
        read_file(forbidden_path), &warnings, forbidden_path)};
  });
}

esr_status esr_targets_load(const char* path, esr_targets** out) {
  return wrap([&] {
    require(path && out, "null argument");
    *out = new esr_targets{targets::TargetsBundle::load(path)};
  });
}

esr_status esr_targets_save(const esr_targets* t, const char* path) {
  return wrap([&] {
    require(t && path, "null argument");
    t->bundle.save(path);
  });
}

size_t esr_targets_entries(const esr_targets* t) {
  return t ? t->bundle.entry_count() : 0;
}

void esr_targets_free(esr_targets* t) { delete t; }

esr_status esr_inspect_targets(const esr_targets* t, char** report) {
  return wrap([&] {
    require(t && report, "null argument");
    *report = dup_string(inspect_bundle_text(t->bundle));
  });
}

esr_status esr_inspect_treebank(const esr_treebank* tb,
                                const char* families_csv, char** report) {
  return wrap([&] {
    require(tb && families_csv && report, "null argument");
    *report =
        dup_string(inspect_treebank_text(tb->tb, parse_families_csv(families_csv)));
  });
}

esr_status esr_train_run(const char* config_path, const char* overrides,
                         char** summary) {
  return wrap([&] {
    require(config_path, "null argument");
    RunSetup setup = parse_run_config(config_path, overrides);
    RunOutput out = execute_run(setup);
    if (summary) {
      std::ostringstream ss;
      ss << "best_epoch=" << out.result.best_epoch
         << " dev_avg=" << format_g17(out.result.best_dev_avg);
      if (out.has_test)
        ss << " test_pos=" << format_g17(out.test_scores.pos_acc)
           << " test_las=" << format_g17(out.test_scores.las)
           << " test_avg=" << format_g17(out.test_scores.avg);
      if (!setup.paths.checkpoint_out.empty())
        ss << " checkpoint=" << setup.paths.checkpoint_out;
      if (!setup.paths.log_out.empty()) ss << " log=" << setup.paths.log_out;
      ss << "\n";
      *summary = dup_string(ss.str());
    }
  });
}

esr_status esr_evaluate(const char* checkpoint_path, const char* gold_path,
                        double* pos, double* las, double* avg) {
  return wrap([&] {
    require(checkpoint_path && gold_path, "null argument");
    ModelParams params = ModelParams::load(checkpoint_path);
    Treebank gold = read_conllu(gold_path, ReadMode::labeled);
    Treebank pred;
    pred.sentences.reserve(gold.size());
    for (const auto& s : gold.sentences)
      pred.sentences.push_back(decode(params, s));
    eval::Scores sc = eval::score(gold, pred);
    if (pos) *pos = sc.pos_acc;
    if (las) *las = sc.las;
    if (avg) *avg = sc.avg;
  });
}

esr_status esr_ablate(const char* kind, const char* config_path,
                      const char* overrides, char** report) {
  return wrap([&] {
    require(kind && config_path && report, "null argument");
    const std::string kind_s = kind;
    std::vector<std::pair<std::string, std::string>> methods;  // name, override
    std::string baseline;
    if (kind_s == "loss-variant") {
      methods = {{"smooth_l1", "distance = smooth_l1"},
                 {"l1", "distance = l1"},
                 {"l2", "distance = l2"},
                 {"hard_l1", "distance = hard_l1"}};
      baseline = "smooth_l1";
    } else if (kind_s == "aggregation") {
      methods = {{"per_batch", "aggregation = per_batch"},
                 {"per_sentence", "aggregation = per_sentence"}};
      baseline = "per_batch";
    } else {
      fail(ErrorCode::invalid_argument,
           "unknown ablation '" + kind_s + "' (loss-variant | aggregation)");
    }
    RunSetup probe = parse_run_config(config_path, overrides);
    std::vector<std::string> seeds = probe.paths.ablate_seeds;
    if (seeds.empty()) seeds = {"1", "2", "3"};
    std::vector<eval::Run> runs;
    for (const auto& [name, extra] : methods) {
      for (const auto& seed : seeds) {
        std::string o = overrides ? std::string(overrides) + "\n" : "";
        o += extra + "\nseed = " + seed + "\n";
        RunSetup setup = parse_run_config(config_path, o.c_str());
        setup.paths.checkpoint_out.clear();  // ablation runs keep no artifacts
        setup.paths.log_out.clear();
        RunOutput out = execute_run(setup);
        runs.push_back({name, out.log_text});
      }
    }
    *report = dup_string(eval::compare_runs(runs, baseline));
  });
}

esr_status esr_oracle_check(size_t instances, uint64_t seed, char** report) {
  oracle::SuiteResult res;
  const esr_status st = wrap([&] {
    res = oracle::run_suite(instances ? instances : 200, seed ? seed : 12345);
  });
  if (st != ESR_OK) return st;
  if (report) *report = dup_string(res.report);
  if (!res.pass) {
    g_last_error = "oracle suite failed (max err " + format_g17(res.max_err) + ")";
    return ESR_ERR_VALIDATION;
  }
  return ESR_OK;
}

}  // extern "C"
