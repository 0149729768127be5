#include <cmath>
#include <sstream>

#include "doctest.h"
#include "esr/syngen.hpp"
#include "esr/train.hpp"

using namespace esr;
using namespace esr::train;

TEST_SUITE_BEGIN("train");

TEST_CASE("slanted triangular schedule") {
  CHECK(schedule(0, 1000, 100) == 0.0);
  CHECK(schedule(100, 1000, 100) == 1.0);
  CHECK(schedule(550, 1000, 100) == doctest::Approx(0.5));
  CHECK(schedule(1000, 1000, 100) == 0.0);
  CHECK(schedule(50, 1000, 100) == doctest::Approx(0.5));
  CHECK_THROWS_AS(schedule(0, 10, 20), Error);
}

namespace {

const char* kGrammar =
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
    "len_max 5\n"
    "words_per_tag 4\n";

struct Tiny {
  Treebank labeled, unlabeled, dev;
  Vocab vocab;
  targets::TargetsBundle bundle;
  TrainConfig cfg;
};

Tiny make_tiny(uint64_t seed = 1) {
  syngen::Grammar g = syngen::Grammar::parse(kGrammar);
  Tiny t;
  t.labeled = syngen::generate(g, 12, 100 + seed);
  t.unlabeled = syngen::generate(g, 30, 200 + seed);
  for (auto& s : t.unlabeled.sentences) {
    s.tags.clear();
    s.heads.clear();
    s.labels.clear();
    s.full_labels.clear();
  }
  t.dev = syngen::generate(g, 8, 300 + seed);
  t.vocab = Vocab::build({&t.labeled, &t.unlabeled});
  std::vector<stats::StatisticSpec> specs = {
      stats::catalog_make(t.vocab, "cld")};
  t.bundle = targets::bootstrap(specs, t.vocab, t.labeled, 4, 50, 9);
  t.cfg.alpha = 0.05;
  t.cfg.lr = 3e-3;
  t.cfg.batch_size = 3;
  t.cfg.epochs = 2;
  t.cfg.steps_per_epoch = 10;
  t.cfg.warmup = 5;
  t.cfg.seed = seed;
  t.cfg.model.emb_dim = 4;
  t.cfg.model.hidden_dim = 6;
  t.cfg.model.biaffine_rank = 4;
  t.cfg.model.init_seed = 3;
  return t;
}

}  // namespace

TEST_CASE("alpha = 0 with no unlabeled data reduces to supervised training") {
  Tiny t = make_tiny();
  t.cfg.alpha = 0.0;
  Treebank empty;
  targets::TargetsBundle no_targets;
  ModelParams init(t.vocab, t.cfg.model);
  TrainResult res = esr::train::train(init, t.labeled, empty, no_targets, t.cfg, t.dev);
  std::istringstream in(res.log);
  std::string line;
  size_t sup_steps = 0;
  while (std::getline(in, line)) {
    if (line.rfind("step=", 0) != 0) continue;
    CHECK(line.find("kind=sup") != std::string::npos);
    CHECK(line.find(" C=0") != std::string::npos);
    ++sup_steps;
  }
  CHECK(sup_steps == 20);
}

TEST_CASE("plain-gradient step moves a parameter by lr times its gradient") {
  Tiny t = make_tiny();
  t.cfg.alpha = 0.0;
  t.cfg.optimizer = "sgd";
  t.cfg.epochs = 1;
  t.cfg.steps_per_epoch = 1;
  t.cfg.warmup = 0;  // multiplier 1 at step 1... (step 1 of 1: decay edge)
  t.cfg.clip_norm = 0.0;
  t.cfg.lr = 0.5;
  Treebank empty;
  targets::TargetsBundle no_targets;
  ModelParams init(t.vocab, t.cfg.model);
  // recompute the expected update by hand
  ad::Tape tape;
  BoundParams bound = bind(tape, init);
  ad::Var total;
  {
    Rng rng(t.cfg.seed);
    std::vector<const Sentence*> batch;
    for (size_t i = 0; i < t.cfg.batch_size; ++i)
      batch.push_back(&t.labeled.sentences[rng.below(t.labeled.size())]);
    for (size_t i = 0; i < batch.size(); ++i) {
      ad::Var one = nll(tape, bound, init, *batch[i]);
      total = i == 0 ? one : ad::add(total, one);
    }
    total = ad::scale(total, 1.0 / t.cfg.batch_size);
  }
  tape.backward(total);
  // step 1 of total 1 with warmup 0: schedule(1,1,0) = 1 - wait, warmup==total
  const double mult = schedule(1, 1, 0);
  TrainResult res = esr::train::train(init, t.labeled, empty, no_targets, t.cfg, t.dev);
  const Array& g = bound[0].grad();
  const Array& before = init.array(0);
  // the trained params we can inspect: best checkpoint == after 1 step
  const Array& after = res.best.array(0);
  for (size_t i = 0; i < g.size(); ++i)
    CHECK(after[i] ==
          doctest::Approx(before[i] - t.cfg.lr * mult * g[i]).epsilon(1e-9));
}

TEST_CASE("training logs are deterministic given the seed") {
  Tiny a = make_tiny(7);
  ModelParams init(a.vocab, a.cfg.model);
  TrainResult r1 = esr::train::train(init, a.labeled, a.unlabeled, a.bundle, a.cfg, a.dev);
  TrainResult r2 = esr::train::train(init, a.labeled, a.unlabeled, a.bundle, a.cfg, a.dev);
  CHECK(r1.log == r2.log);
}

TEST_CASE("per-step telescoping: total = L + alpha * C from the logged parts") {
  Tiny t = make_tiny(5);
  ModelParams init(t.vocab, t.cfg.model);
  TrainResult res = esr::train::train(init, t.labeled, t.unlabeled, t.bundle, t.cfg, t.dev);
  std::istringstream in(res.log);
  std::string line;
  size_t sup = 0, unsup = 0;
  while (std::getline(in, line)) {
    if (line.rfind("step=", 0) != 0) continue;
    double total = NAN, l = NAN, c = NAN;
    for (const auto& tok : split_ws(line)) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = tok.substr(0, eq);
      if (key == "total") total = std::stod(tok.substr(eq + 1));
      if (key == "L") l = std::stod(tok.substr(eq + 1));
      if (key == "C") c = std::stod(tok.substr(eq + 1));
    }
    REQUIRE(std::isfinite(total));
    CHECK(total == doctest::Approx(l + t.cfg.alpha * c).epsilon(1e-9));
    if (line.find("kind=sup") != std::string::npos)
      ++sup;
    else
      ++unsup;
  }
  // 1:4 mixing over 20 steps
  CHECK(sup == 4);
  CHECK(unsup == 16);
}

TEST_CASE("early stopping keeps the best epoch, ties to the earliest") {
  Tiny t = make_tiny(3);
  ModelParams init(t.vocab, t.cfg.model);
  t.cfg.epochs = 3;
  TrainResult res = esr::train::train(init, t.labeled, t.unlabeled, t.bundle, t.cfg, t.dev);
  // parse per-epoch dev metrics; best_epoch must be the argmax (first max)
  std::istringstream in(res.log);
  std::string line;
  std::vector<double> avgs;
  while (std::getline(in, line)) {
    if (line.rfind("epoch=", 0) != 0) continue;
    for (const auto& tok : split_ws(line)) {
      if (tok.rfind("dev_avg=", 0) == 0) avgs.push_back(std::stod(tok.substr(8)));
    }
  }
  REQUIRE(avgs.size() == 3);
  size_t best = 0;
  for (size_t e = 1; e < avgs.size(); ++e)
    if (avgs[e] > avgs[best]) best = e;
  CHECK(res.best_epoch == best + 1);
  CHECK(res.best_dev_avg == doctest::Approx(avgs[best]));
}

TEST_CASE("alpha > 0 with targets but no unlabeled data is an error") {
  Tiny t = make_tiny();
  Treebank empty;
  ModelParams init(t.vocab, t.cfg.model);
  CHECK_THROWS_AS(esr::train::train(init, t.labeled, empty, t.bundle, t.cfg, t.dev), Error);
}

TEST_CASE("unsupervised-only mode drops the L term") {
  Tiny t = make_tiny(9);
  Treebank no_labeled;
  ModelParams init(t.vocab, t.cfg.model);
  TrainResult res = esr::train::train(init, no_labeled, t.unlabeled, t.bundle, t.cfg, t.dev);
  std::istringstream in(res.log);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("step=", 0) != 0) continue;
    CHECK(line.find("kind=unsup") != std::string::npos);
    CHECK(line.find(" L=0") != std::string::npos);
  }
}

TEST_CASE("universal targets on a model with zero forbidden mass: zero loss and gradient") {
  // craft a bundle forbidding a triple whose head tag never occurs: the
  // model cannot put mass there only if the tag itself is impossible, so
  // instead verify via the loss machinery on synthetic one-hot marginals
  Tiny t = make_tiny();
  targets::TargetsBundle ub =
      targets::universal_targets_from_text("N N subj\n", nullptr);
  loss::LossConfig lcfg;
  lcfg.entropy_token_weight = 0.0;
  lcfg.entropy_edge_weight = 0.0;
  lcfg.entropy_tree_weight = 0.0;
  auto families = loss::bind_bundle(ub, t.vocab, lcfg);
  REQUIRE(families.size() == 1);
  // one-hot marginals on a structure avoiding the forbidden triple
  Sentence s;
  s.words = {"u", "v"};
  s.tags = {"V", "N"};
  s.heads = {0, 1};
  s.labels = {"root", "subj"};
  stats::Structure st = stats::structure_of(t.vocab, s);
  ad::Tape tape;
  MarginalVars mv;
  mv.n = 2;
  Array tag({2, t.vocab.tag_count()}), head({2, 3}),
      label({2, 3, t.vocab.label_count()});
  for (size_t i = 0; i < 2; ++i) {
    tag.at(i, st.tags[i]) = 1.0;
    head.at(i, static_cast<size_t>(st.heads[i])) = 1.0;
    for (size_t j = 0; j <= 2; ++j) label.at(i, j, st.labels[i]) = 1.0;
  }
  mv.tag_prob = tape.leaf(tag);
  mv.head_prob = tape.leaf(head);
  mv.label_prob = tape.leaf(label);
  mv.arc_scores = tape.leaf(Array({2, 3}));
  loss::CTerm c = loss::batch_loss(families, {mv}, lcfg);
  CHECK(c.value.value().item() == 0.0);
  tape.backward(c.value);
  for (size_t i = 0; i < tag.size(); ++i) CHECK(mv.tag_prob.grad()[i] == 0.0);
  for (size_t i = 0; i < head.size(); ++i) CHECK(mv.head_prob.grad()[i] == 0.0);
}

TEST_CASE("config parsing: sections, overrides, unknown keys") {
  auto pairs = parse_config_text(
      "# comment\n"
      "alpha = 0.5\n"
      "[model]\n"
      "emb_dim = 12\n"
      "[train]\n"
      "epochs = 7\n");
  std::vector<std::pair<std::string, std::string>> unused;
  TrainConfig cfg = config_from_pairs(pairs, &unused);
  CHECK(cfg.alpha == 0.5);
  CHECK(cfg.model.emb_dim == 12);
  CHECK(cfg.epochs == 7);
  CHECK(unused.empty());
  CHECK_THROWS_AS(config_from_pairs({{"bogus", "1"}}), Error);
}

TEST_SUITE_END();
