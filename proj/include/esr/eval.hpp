#pragma once

#include <string>
#include <vector>

#include "esr/treebank.hpp"

namespace esr::eval {

struct Scores {
  double pos_acc = 0.0;
  double las = 0.0;
  double avg = 0.0;
};

// POS accuracy, coarse LAS (correct head AND coarse label) and their
// average over all tokens. No punctuation exclusion.
Scores score(const Treebank& gold, const Treebank& pred);

struct Run {
  std::string method;
  std::string log_text;  // training log; final "result ..." line is read
};

// Per-method means of the final metrics with deltas against a baseline
// method. Returns an aligned text table followed by tab-delimited records.
std::string compare_runs(const std::vector<Run>& runs,
                         const std::string& baseline);

}  // namespace esr::eval
