#pragma once

#include <string>
#include <vector>

#include "esr/model.hpp"
#include "esr/stats.hpp"
#include "esr/targets.hpp"

namespace esr::loss {

// Outside-margin branch of the smoothed hinge: `continuous` uses |d| - s/2
// (both branches meet at s/2); `as_written` uses |d| - s and jumps by s/2 at
// the boundary.
enum class Variant { continuous, as_written };

enum class Kind { smooth_l1, l1, l2, hard_l1 };
enum class Aggregation { per_batch, per_sentence };

Kind kind_from_name(const std::string& name);
Variant variant_from_name(const std::string& name);
Aggregation aggregation_from_name(const std::string& name);

// sigma-adaptive smoothed hinge; sigma = 0 reduces to plain L1
double smooth_l1(double t, double sigma, double fbar,
                 Variant variant = Variant::continuous);
// l1/l2 ignore sigma; hard_l1 is the max-margin hinge max{0, |d| - sigma}
double alt_distance(double t, double sigma, double fbar, Kind kind);

double distance(Kind kind, Variant variant, double t, double sigma, double fbar);
double distance_dfbar(Kind kind, Variant variant, double t, double sigma,
                      double fbar);

// sum_i l(t_i, sigma_i, f_i) as a differentiable node over f
ad::Var penalty_node(ad::Var f, const Array& t, const Array& sigma, Kind kind,
                     Variant variant);

struct LossConfig {
  Kind kind = Kind::smooth_l1;
  Variant variant = Variant::continuous;
  Aggregation aggregation = Aggregation::per_batch;
  double entropy_token_weight = 1.0;
  double entropy_edge_weight = 1.0;
  double entropy_tree_weight = 1.0;
};

struct FamilyBinding {
  stats::StatisticSpec spec;
  Array t;      // [dim_f]
  Array sigma;  // [dim_f]
  double weight = 1.0;
};

// Resolves a bundle against the catalog/vocab into dense per-family targets.
// Entropy statistics are appended as additive penalty terms (t = sigma = 0)
// with the configured weights unless already present in the bundle.
std::vector<FamilyBinding> bind_bundle(const targets::TargetsBundle& bundle,
                                       const Vocab& vocab,
                                       const LossConfig& cfg);

struct CTerm {
  ad::Var value;  // scalar C
  std::vector<std::pair<std::string, double>> components;  // per family
};

// Eq.-4-style unsupervised term over one minibatch. per_batch aggregates the
// statistic over the whole batch before the distance; per_sentence applies
// the distance per sentence and sums.
CTerm batch_loss(const std::vector<FamilyBinding>& families,
                 const std::vector<MarginalVars>& batch, const LossConfig& cfg);

}  // namespace esr::loss
