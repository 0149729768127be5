#include <set>

#include "doctest.h"
#include "esr/treebank.hpp"

using namespace esr;

TEST_SUITE_BEGIN("treebank");

namespace {

const char* kTwoTok =
    "# sent_id = s1\n"
    "1\tBirds\t_\tNOUN\t_\t_\t2\tnsubj:outer\t_\t_\n"
    "2\tfly\t_\tVERB\t_\t_\t0\troot\t_\t_\n"
    "\n";

std::string four_col_sentence(std::vector<std::pair<int, const char*>> toks) {
  std::string out;
  int i = 1;
  for (auto& [head, deprel] : toks) {
    out += std::to_string(i++) + "\tw\t_\tNOUN\t_\t_\t" + std::to_string(head) +
           "\t" + deprel + "\t_\t_\n";
  }
  return out + "\n";
}

}  // namespace

TEST_CASE("labeled read coarsens the deprel subtype") {
  Treebank tb = read_conllu_text(kTwoTok, ReadMode::labeled);
  REQUIRE(tb.size() == 1);
  const Sentence& s = tb.sentences[0];
  CHECK(s.id == "s1");
  CHECK(s.size() == 2);
  CHECK(s.heads == std::vector<int>{2, 0});
  CHECK(s.labels == std::vector<std::string>{"nsubj", "root"});
  CHECK(s.full_labels[0] == "nsubj:outer");
}

TEST_CASE("unlabeled mode keeps words only") {
  Treebank tb = read_conllu_text(kTwoTok, ReadMode::unlabeled);
  REQUIRE(tb.size() == 1);
  CHECK(tb.sentences[0].size() == 2);
  CHECK_FALSE(tb.sentences[0].labeled());
  CHECK(tb.sentences[0].heads.empty());
}

TEST_CASE("cyclic gold tree is rejected with the sentence id") {
  std::string text = four_col_sentence({{2, "dep"}, {3, "dep"}, {1, "root"}});
  CHECK_THROWS_WITH_AS(read_conllu_text(text, ReadMode::labeled),
                       doctest::Contains("#1"), Error);
}

TEST_CASE("multi-root gold tree is rejected") {
  std::string text = four_col_sentence({{0, "root"}, {0, "root"}});
  CHECK_THROWS_AS(read_conllu_text(text, ReadMode::labeled), Error);
}

TEST_CASE("self-head is rejected") {
  std::string text = four_col_sentence({{1, "dep"}, {0, "root"}});
  CHECK_THROWS_AS(read_conllu_text(text, ReadMode::labeled), Error);
}

TEST_CASE("malformed line reports its number") {
  std::string text = "1\tonly\tthree\n";
  CHECK_THROWS_WITH_AS(read_conllu_text(text, ReadMode::labeled),
                       doctest::Contains(":1:"), Error);
}

TEST_CASE("multiword ranges and empty nodes are skipped") {
  std::string text =
      "1-2\tcannot\t_\t_\t_\t_\t_\t_\t_\t_\n"
      "1\tcan\t_\tAUX\t_\t_\t0\troot\t_\t_\n"
      "2\tnot\t_\tPART\t_\t_\t1\tadvmod\t_\t_\n"
      "2.1\tghost\t_\tX\t_\t_\t_\t_\t_\t_\n"
      "\n";
  Treebank tb = read_conllu_text(text, ReadMode::labeled);
  REQUIRE(tb.size() == 1);
  CHECK(tb.sentences[0].size() == 2);
  CHECK(tb.sentences[0].words[0] == "can");
}

TEST_CASE("round-trip preserves in-scope fields and comments") {
  std::string text = std::string(kTwoTok) +
                     "# a comment\n"
                     "1\tSleep\t_\tVERB\t_\t_\t0\troot\t_\t_\n"
                     "\n";
  Treebank tb = read_conllu_text(text, ReadMode::labeled);
  Treebank again = read_conllu_text(to_conllu_text(tb), ReadMode::labeled);
  REQUIRE(again.size() == tb.size());
  for (size_t i = 0; i < tb.size(); ++i) {
    CHECK(again.sentences[i].words == tb.sentences[i].words);
    CHECK(again.sentences[i].tags == tb.sentences[i].tags);
    CHECK(again.sentences[i].heads == tb.sentences[i].heads);
    CHECK(again.sentences[i].labels == tb.sentences[i].labels);
    CHECK(again.sentences[i].comments == tb.sentences[i].comments);
  }
}

namespace {

Treebank numbered_bank(size_t n) {
  Treebank tb;
  for (size_t i = 0; i < n; ++i) {
    Sentence s;
    s.words = {"w" + std::to_string(i)};
    s.tags = {"NOUN"};
    s.heads = {0};
    s.labels = {"root"};
    s.full_labels = {"root"};
    s.id = std::to_string(i);
    tb.sentences.push_back(s);
  }
  return tb;
}

}  // namespace

TEST_CASE("subsample at full size returns the same content set") {
  Treebank tb = numbered_bank(20);
  Treebank sub = subsample(tb, 20, 7);
  std::set<std::string> a, b;
  for (const auto& s : tb.sentences) a.insert(s.words[0]);
  for (const auto& s : sub.sentences) b.insert(s.words[0]);
  CHECK(a == b);
}

TEST_CASE("subsample is deterministic and size-checked") {
  Treebank tb = numbered_bank(50);
  Treebank s1 = subsample(tb, 10, 42);
  Treebank s2 = subsample(tb, 10, 42);
  REQUIRE(s1.size() == 10);
  for (size_t i = 0; i < 10; ++i)
    CHECK(s1.sentences[i].words[0] == s2.sentences[i].words[0]);
  CHECK_THROWS_AS(subsample(tb, 51, 0), Error);
}

TEST_CASE("dev split rule") {
  CHECK(dev_split_size(50) == 50);
  CHECK(dev_split_size(100) == 100);
  CHECK(dev_split_size(500) == 100);
  CHECK(dev_split_size(1000) == 100);
}

TEST_CASE("vocab is a pure function of the corpus") {
  std::string text =
      "1\tThe\t_\tDET\t_\t_\t2\tdet\t_\t_\n"
      "2\tcat\t_\tNOUN\t_\t_\t3\tnsubj\t_\t_\n"
      "3\tsat\t_\tVERB\t_\t_\t0\troot\t_\t_\n"
      "\n"
      "1\tthe\t_\tDET\t_\t_\t2\tdet\t_\t_\n"
      "2\tdog\t_\tNOUN\t_\t_\t3\tnsubj\t_\t_\n"
      "3\tran\t_\tVERB\t_\t_\t0\troot\t_\t_\n"
      "\n";
  Treebank tb = read_conllu_text(text, ReadMode::labeled);
  Vocab v1 = Vocab::build(tb);
  Vocab v2 = Vocab::build(tb);
  CHECK(v1 == v2);
  // DET, NOUN, VERB + UNK-TAG
  CHECK(v1.tag_count() == 4);
  CHECK(v1.tag_name(v1.unk_tag_index()) == Vocab::kUnkTag);
  CHECK(v1.label_count() == 3);
  // only "the" (lowercased, freq 2) clears the cutoff
  CHECK(v1.word_count() == 4);
  CHECK(v1.word_id("THE") == v1.word_id("the"));
  CHECK(v1.word_id("cat") == v1.unk_word_id());
  CHECK(v1.tag_index("ADJ") == v1.unk_tag_index());
  CHECK_THROWS_AS(v1.label_index("obl"), Error);
}

TEST_CASE("vocab round-trips through its line format") {
  Treebank tb = read_conllu_text(kTwoTok, ReadMode::labeled);
  Vocab v = Vocab::build(tb);
  Vocab w = Vocab::from_lines(v.to_lines());
  CHECK(v == w);
}

TEST_SUITE_END();
