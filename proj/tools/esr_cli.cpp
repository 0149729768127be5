// esr command line: wires the shared library's C API into reproducible
// experiments. Exit codes: 0 success, 1 validation/runtime error, 2 usage.
#include <cstdio>
#include <cstdint>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "esr.h"

namespace {

int fail_with_api_error(const char* what) {
  std::fprintf(stderr, "esr %s: error: %s\n", what, esr_last_error());
  return 1;
}

void print_owned(char* s) {
  if (!s) return;
  std::fputs(s, stdout);
  esr_string_free(s);
}

std::string join_overrides(const std::vector<std::string>& sets) {
  std::string out;
  for (const auto& s : sets) out += s + "\n";
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"expected-statistic-regularized tagger-parser toolkit"};
  app.require_subcommand(1);

  // estimate-targets
  std::string et_labeled, et_families = "cld", et_out;
  size_t et_k = 8, et_b = 1000;
  uint64_t et_seed = 1;
  auto* et = app.add_subcommand("estimate-targets",
                                "bootstrap statistic targets from labeled data");
  et->add_option("--labeled", et_labeled, "labeled CoNLL-U file")->required();
  et->add_option("--families", et_families, "comma-separated catalog ids");
  et->add_option("--k", et_k, "bootstrap minibatch size");
  et->add_option("--B", et_b, "bootstrap sample count");
  et->add_option("--seed", et_seed, "rng seed");
  et->add_option("--out", et_out, "bundle output path")->required();

  // universal-targets
  std::string ut_forbidden, ut_out;
  auto* ut = app.add_subcommand("universal-targets",
                                "bundle with t=0, sigma=0 for forbidden arcs");
  ut->add_option("--forbidden", ut_forbidden, "forbidden triple list file")
      ->required();
  ut->add_option("--out", ut_out, "bundle output path")->required();

  // inspect-stats
  std::string is_bundle, is_treebank, is_families = "cld";
  auto* is = app.add_subcommand("inspect-stats",
                                "print statistics of a bundle or treebank");
  is->add_option("--bundle", is_bundle, "targets bundle file");
  is->add_option("--treebank", is_treebank, "labeled CoNLL-U file");
  is->add_option("--families", is_families, "families for --treebank mode");

  // train
  std::string tr_config;
  std::vector<std::string> tr_sets;
  auto* tr = app.add_subcommand("train", "run semi-supervised training");
  tr->add_option("--config", tr_config, "key=value config file")->required();
  tr->add_option("--set", tr_sets, "override, e.g. --set alpha=0.1");

  // evaluate
  std::string ev_checkpoint, ev_gold;
  auto* ev = app.add_subcommand("evaluate", "score a checkpoint on gold data");
  ev->add_option("--checkpoint", ev_checkpoint, "model checkpoint")->required();
  ev->add_option("--gold", ev_gold, "labeled CoNLL-U file")->required();

  // ablate
  std::string ab_kind, ab_config;
  std::vector<std::string> ab_sets;
  auto* ab = app.add_subcommand("ablate",
                                "multi-run comparison (loss-variant | aggregation)");
  ab->add_option("--kind", ab_kind, "loss-variant or aggregation")->required();
  ab->add_option("--config", ab_config, "key=value config file")->required();
  ab->add_option("--set", ab_sets, "override applied to every run");

  // syngen
  std::string sg_grammar, sg_out;
  size_t sg_size = 1000;
  uint64_t sg_seed = 1;
  bool sg_analytic = false;
  auto* sg = app.add_subcommand("syngen", "generate a synthetic treebank");
  sg->add_option("--grammar", sg_grammar, "grammar config file")->required();
  sg->add_option("--size", sg_size, "sentence count");
  sg->add_option("--seed", sg_seed, "rng seed");
  sg->add_option("--out", sg_out, "CoNLL-U output path");
  sg->add_flag("--analytic", sg_analytic, "print analytic statistic values");

  // oracle-check
  size_t oc_instances = 200;
  uint64_t oc_seed = 12345;
  auto* oc = app.add_subcommand("oracle-check", "run the full oracle suite");
  oc->add_option("--instances", oc_instances, "instances per family");
  oc->add_option("--seed", oc_seed, "rng seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 2;
  }

  if (et->parsed()) {
    esr_treebank* tb = nullptr;
    if (esr_treebank_read(et_labeled.c_str(), 1, &tb) != ESR_OK)
      return fail_with_api_error("estimate-targets");
    esr_targets* t = nullptr;
    if (esr_targets_estimate(tb, et_families.c_str(), et_k, et_b, et_seed, &t) !=
        ESR_OK) {
      esr_treebank_free(tb);
      return fail_with_api_error("estimate-targets");
    }
    const esr_status st = esr_targets_save(t, et_out.c_str());
    std::printf("wrote %zu entries to %s (k=%zu B=%zu seed=%llu)\n",
                esr_targets_entries(t), et_out.c_str(), et_k, et_b,
                static_cast<unsigned long long>(et_seed));
    esr_targets_free(t);
    esr_treebank_free(tb);
    return st == ESR_OK ? 0 : fail_with_api_error("estimate-targets");
  }

  if (ut->parsed()) {
    esr_targets* t = nullptr;
    if (esr_targets_universal(ut_forbidden.c_str(), &t) != ESR_OK)
      return fail_with_api_error("universal-targets");
    const esr_status st = esr_targets_save(t, ut_out.c_str());
    std::printf("wrote %zu universal-arc entries to %s\n",
                esr_targets_entries(t), ut_out.c_str());
    esr_targets_free(t);
    return st == ESR_OK ? 0 : fail_with_api_error("universal-targets");
  }

  if (is->parsed()) {
    if (is_bundle.empty() == is_treebank.empty()) {
      std::fprintf(stderr,
                   "esr inspect-stats: give exactly one of --bundle/--treebank\n");
      return 2;
    }
    char* report = nullptr;
    if (!is_bundle.empty()) {
      esr_targets* t = nullptr;
      if (esr_targets_load(is_bundle.c_str(), &t) != ESR_OK)
        return fail_with_api_error("inspect-stats");
      const esr_status st = esr_inspect_targets(t, &report);
      esr_targets_free(t);
      if (st != ESR_OK) return fail_with_api_error("inspect-stats");
    } else {
      esr_treebank* tb = nullptr;
      if (esr_treebank_read(is_treebank.c_str(), 1, &tb) != ESR_OK)
        return fail_with_api_error("inspect-stats");
      const esr_status st = esr_inspect_treebank(tb, is_families.c_str(), &report);
      esr_treebank_free(tb);
      if (st != ESR_OK) return fail_with_api_error("inspect-stats");
    }
    print_owned(report);
    return 0;
  }

  if (tr->parsed()) {
    char* summary = nullptr;
    const std::string overrides = join_overrides(tr_sets);
    if (esr_train_run(tr_config.c_str(), overrides.c_str(), &summary) != ESR_OK)
      return fail_with_api_error("train");
    print_owned(summary);
    return 0;
  }

  if (ev->parsed()) {
    double pos = 0, las = 0, avg = 0;
    if (esr_evaluate(ev_checkpoint.c_str(), ev_gold.c_str(), &pos, &las, &avg) !=
        ESR_OK)
      return fail_with_api_error("evaluate");
    std::printf("pos=%.6f las=%.6f avg=%.6f\n", pos, las, avg);
    return 0;
  }

  if (ab->parsed()) {
    char* report = nullptr;
    const std::string overrides = join_overrides(ab_sets);
    if (esr_ablate(ab_kind.c_str(), ab_config.c_str(), overrides.c_str(),
                   &report) != ESR_OK)
      return fail_with_api_error("ablate");
    print_owned(report);
    return 0;
  }

  if (sg->parsed()) {
    if (sg_analytic) {
      char* report = nullptr;
      if (esr_syngen_analytic(sg_grammar.c_str(), &report) != ESR_OK)
        return fail_with_api_error("syngen");
      print_owned(report);
    }
    if (!sg_out.empty()) {
      esr_treebank* tb = nullptr;
      if (esr_syngen(sg_grammar.c_str(), sg_size, sg_seed, &tb) != ESR_OK)
        return fail_with_api_error("syngen");
      const esr_status st = esr_treebank_write(tb, sg_out.c_str());
      std::printf("wrote %zu sentences (%zu tokens) to %s (seed=%llu)\n",
                  esr_treebank_sentences(tb), esr_treebank_tokens(tb),
                  sg_out.c_str(), static_cast<unsigned long long>(sg_seed));
      esr_treebank_free(tb);
      if (st != ESR_OK) return fail_with_api_error("syngen");
    } else if (!sg_analytic) {
      std::fprintf(stderr, "esr syngen: nothing to do (need --out or --analytic)\n");
      return 2;
    }
    return 0;
  }

  if (oc->parsed()) {
    char* report = nullptr;
    const esr_status st = esr_oracle_check(oc_instances, oc_seed, &report);
    print_owned(report);
    if (st != ESR_OK) return fail_with_api_error("oracle-check");
    std::printf("oracle suite: all checks passed\n");
    return 0;
  }

  return 2;
}
