// Exercises the shared library's extern "C" surface only.
#include <cstdio>
#include <fstream>
#include <string>

#include "doctest.h"
#include "esr.h"

TEST_SUITE_BEGIN("capi");

namespace {

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
}

const char* kConllu =
    "1\tthe\t_\tD\t_\t_\t2\tdet\t_\t_\n"
    "2\tcat\t_\tN\t_\t_\t3\tnsubj\t_\t_\n"
    "3\tsat\t_\tV\t_\t_\t0\troot\t_\t_\n"
    "\n"
    "1\tthe\t_\tD\t_\t_\t2\tdet\t_\t_\n"
    "2\tdog\t_\tN\t_\t_\t3\tnsubj\t_\t_\n"
    "3\tran\t_\tV\t_\t_\t0\troot\t_\t_\n"
    "\n"
    "1\tcats\t_\tN\t_\t_\t2\tnsubj\t_\t_\n"
    "2\tsleep\t_\tV\t_\t_\t0\troot\t_\t_\n"
    "\n";

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& p, const std::string& text) : path(p) {
    write_file(path, text);
  }
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("treebank read / counts / subsample / write") {
  TempFile f("capi_bank.conllu", kConllu);
  esr_treebank* tb = nullptr;
  REQUIRE(esr_treebank_read(f.path.c_str(), 1, &tb) == ESR_OK);
  CHECK(esr_treebank_sentences(tb) == 3);
  CHECK(esr_treebank_tokens(tb) == 8);
  esr_treebank* sub = nullptr;
  REQUIRE(esr_treebank_subsample(tb, 2, 7, &sub) == ESR_OK);
  CHECK(esr_treebank_sentences(sub) == 2);
  CHECK(esr_treebank_write(sub, "capi_sub.conllu") == ESR_OK);
  std::remove("capi_sub.conllu");
  // oversized subsample fails with a message
  esr_treebank* bad = nullptr;
  CHECK(esr_treebank_subsample(tb, 10, 7, &bad) == ESR_ERR_INVALID_ARGUMENT);
  CHECK(std::string(esr_last_error()).find("subsample") != std::string::npos);
  esr_treebank_free(sub);
  esr_treebank_free(tb);
}

TEST_CASE("error paths: missing file, null arguments") {
  esr_treebank* tb = nullptr;
  CHECK(esr_treebank_read("no_such_file.conllu", 1, &tb) == ESR_ERR_IO);
  CHECK(std::string(esr_last_error()).find("no_such_file") != std::string::npos);
  CHECK(esr_treebank_read(nullptr, 1, &tb) == ESR_ERR_INVALID_ARGUMENT);
  CHECK(esr_targets_load("missing.tsv", nullptr) == ESR_ERR_INVALID_ARGUMENT);
}

TEST_CASE("targets: estimate, save, load, inspect") {
  TempFile f("capi_bank2.conllu", kConllu);
  esr_treebank* tb = nullptr;
  REQUIRE(esr_treebank_read(f.path.c_str(), 1, &tb) == ESR_OK);
  esr_targets* t = nullptr;
  REQUIRE(esr_targets_estimate(tb, "cld,pos-unigram", 2, 100, 5, &t) == ESR_OK);
  CHECK(esr_targets_entries(t) > 0);
  REQUIRE(esr_targets_save(t, "capi_targets.tsv") == ESR_OK);
  esr_targets* t2 = nullptr;
  REQUIRE(esr_targets_load("capi_targets.tsv", &t2) == ESR_OK);
  CHECK(esr_targets_entries(t2) == esr_targets_entries(t));
  char* report = nullptr;
  REQUIRE(esr_inspect_targets(t2, &report) == ESR_OK);
  std::string rep(report);
  esr_string_free(report);
  CHECK(rep.find("[cld]") != std::string::npos);
  CHECK(rep.find("sum_t=") != std::string::npos);
  // unknown family id errors
  esr_targets* t3 = nullptr;
  CHECK(esr_targets_estimate(tb, "bogus-family", 2, 10, 5, &t3) ==
        ESR_ERR_INVALID_ARGUMENT);
  std::remove("capi_targets.tsv");
  esr_targets_free(t2);
  esr_targets_free(t);
  esr_treebank_free(tb);
}

TEST_CASE("universal targets from a forbidden list") {
  TempFile f("capi_forbidden.txt", "N N root\nV N root\n# comment\n");
  esr_targets* t = nullptr;
  REQUIRE(esr_targets_universal(f.path.c_str(), &t) == ESR_OK);
  CHECK(esr_targets_entries(t) == 2);
  esr_targets_free(t);
}

TEST_CASE("inspect-treebank proportions sum to 1 per family") {
  TempFile f("capi_bank3.conllu", kConllu);
  esr_treebank* tb = nullptr;
  REQUIRE(esr_treebank_read(f.path.c_str(), 1, &tb) == ESR_OK);
  char* report = nullptr;
  REQUIRE(esr_inspect_treebank(tb, "cld", &report) == ESR_OK);
  std::string rep(report);
  esr_string_free(report);
  CHECK(rep.find("sum_f=1\n") != std::string::npos);
  esr_treebank_free(tb);
}

TEST_CASE("syngen and analytic report") {
  TempFile g("capi_grammar.txt",
             "tags N V\n"
             "labels root subj\n"
             "trans BOS 0.5 0.5\n"
             "trans N 0.5 0.5\n"
             "trans V 0.5 0.5\n"
             "label ROOT * 1.0 0.0\n"
             "label N * 0.0 1.0\n"
             "label V * 0.0 1.0\n"
             "attach_decay 0.5\n"
             "len_min 2\n"
             "len_max 4\n");
  esr_treebank* tb = nullptr;
  REQUIRE(esr_syngen(g.path.c_str(), 25, 3, &tb) == ESR_OK);
  CHECK(esr_treebank_sentences(tb) == 25);
  esr_treebank_free(tb);
  char* report = nullptr;
  REQUIRE(esr_syngen_analytic(g.path.c_str(), &report) == ESR_OK);
  std::string rep(report);
  esr_string_free(report);
  CHECK(rep.find("N,subj,right") != std::string::npos);
}

TEST_CASE("train + evaluate through config files") {
  TempFile g("capi_grammar2.txt",
             "tags N V\n"
             "labels root subj\n"
             "trans BOS 0.6 0.4\n"
             "trans N 0.4 0.6\n"
             "trans V 0.7 0.3\n"
             "label ROOT * 1.0 0.0\n"
             "label N * 0.0 1.0\n"
             "label V * 0.0 1.0\n"
             "attach_decay 0.6\n"
             "len_min 2\n"
             "len_max 4\n"
             "words_per_tag 3\n");
  esr_treebank* big = nullptr;
  REQUIRE(esr_syngen(g.path.c_str(), 40, 11, &big) == ESR_OK);
  REQUIRE(esr_treebank_write(big, "capi_train.conllu") == ESR_OK);
  esr_treebank* devb = nullptr;
  REQUIRE(esr_syngen(g.path.c_str(), 6, 12, &devb) == ESR_OK);
  REQUIRE(esr_treebank_write(devb, "capi_dev.conllu") == ESR_OK);
  esr_treebank_free(big);
  esr_treebank_free(devb);

  TempFile cfg("capi_train.cfg",
               "train_labeled = capi_train.conllu\n"
               "dev = capi_dev.conllu\n"
               "test = capi_dev.conllu\n"
               "checkpoint_out = capi_model.ckpt\n"
               "log_out = capi_train.log\n"
               "alpha = 0\n"
               "epochs = 2\n"
               "steps_per_epoch = 6\n"
               "batch_size = 3\n"
               "warmup = 3\n"
               "lr = 0.005\n"
               "emb_dim = 4\n"
               "hidden_dim = 6\n"
               "biaffine_rank = 4\n"
               "seed = 2\n");
  char* summary = nullptr;
  REQUIRE_MESSAGE(esr_train_run(cfg.path.c_str(), "", &summary) == ESR_OK,
                  esr_last_error());
  std::string sum(summary);
  esr_string_free(summary);
  CHECK(sum.find("best_epoch=") != std::string::npos);
  CHECK(sum.find("test_las=") != std::string::npos);

  double pos = 0, las = 0, avg = 0;
  REQUIRE(esr_evaluate("capi_model.ckpt", "capi_dev.conllu", &pos, &las, &avg) ==
          ESR_OK);
  CHECK(pos >= 0.0);
  CHECK(pos <= 1.0);
  CHECK(avg == doctest::Approx(0.5 * (pos + las)));

  // reproducibility: the primary outputs are byte-identical across runs
  std::ifstream l1("capi_train.log", std::ios::binary);
  std::string log1((std::istreambuf_iterator<char>(l1)),
                   std::istreambuf_iterator<char>());
  REQUIRE(esr_train_run(cfg.path.c_str(), "", nullptr) == ESR_OK);
  std::ifstream l2("capi_train.log", std::ios::binary);
  std::string log2((std::istreambuf_iterator<char>(l2)),
                   std::istreambuf_iterator<char>());
  CHECK(log1 == log2);
  CHECK(log1.find("config_hash=") != std::string::npos);

  std::remove("capi_train.conllu");
  std::remove("capi_dev.conllu");
  std::remove("capi_model.ckpt");
  std::remove("capi_train.log");
}

TEST_CASE("oracle-check returns OK and a report") {
  char* report = nullptr;
  REQUIRE(esr_oracle_check(3, 555, &report) == ESR_OK);
  std::string rep(report);
  esr_string_free(report);
  CHECK(rep.find("matrix-tree") != std::string::npos);
  CHECK(rep.find("FAIL") == std::string::npos);
}

TEST_SUITE_END();
