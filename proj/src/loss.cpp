#include "esr/loss.hpp"

#include <cmath>

namespace esr::loss {

Kind kind_from_name(const std::string& name) {
  if (name == "smooth_l1") return Kind::smooth_l1;
  if (name == "l1") return Kind::l1;
  if (name == "l2") return Kind::l2;
  if (name == "hard_l1") return Kind::hard_l1;
  fail(ErrorCode::invalid_argument, "unknown distance '" + name + "'");
}

Variant variant_from_name(const std::string& name) {
  if (name == "continuous") return Variant::continuous;
  if (name == "as_written") return Variant::as_written;
  fail(ErrorCode::invalid_argument, "unknown smooth-l1 variant '" + name + "'");
}

Aggregation aggregation_from_name(const std::string& name) {
  if (name == "per_batch") return Aggregation::per_batch;
  if (name == "per_sentence") return Aggregation::per_sentence;
  fail(ErrorCode::invalid_argument, "unknown aggregation '" + name + "'");
}

double smooth_l1(double t, double sigma, double fbar, Variant variant) {
  if (sigma < 0.0)
    fail(ErrorCode::invalid_argument, "smooth_l1: sigma must be >= 0");
  const double d = fbar - t;
  const double ad = std::fabs(d);
  if (sigma == 0.0) return ad;
  if (ad < sigma) return d * d / (2.0 * sigma);
  return variant == Variant::continuous ? ad - sigma / 2.0 : ad - sigma;
}

double alt_distance(double t, double sigma, double fbar, Kind kind) {
  const double d = fbar - t;
  switch (kind) {
    case Kind::l1:
      return std::fabs(d);
    case Kind::l2:
      return d * d;
    case Kind::hard_l1:
      return std::max(0.0, std::fabs(d) - sigma);
    case Kind::smooth_l1:
      return smooth_l1(t, sigma, fbar);
  }
  fail(ErrorCode::internal, "alt_distance: bad kind");
}

double distance(Kind kind, Variant variant, double t, double sigma, double fbar) {
  if (kind == Kind::smooth_l1) return smooth_l1(t, sigma, fbar, variant);
  return alt_distance(t, sigma, fbar, kind);
}

double distance_dfbar(Kind kind, Variant variant, double t, double sigma,
                      double fbar) {
  (void)variant;  // both branches share the outside slope
  const double d = fbar - t;
  const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
  switch (kind) {
    case Kind::smooth_l1:
      if (sigma < 0.0)
        fail(ErrorCode::invalid_argument, "smooth_l1: sigma must be >= 0");
      if (sigma == 0.0) return sign;
      if (std::fabs(d) < sigma) return d / sigma;
      return sign;
    case Kind::l1:
      return sign;
    case Kind::l2:
      return 2.0 * d;
    case Kind::hard_l1:
      return std::fabs(d) > sigma ? sign : 0.0;
  }
  fail(ErrorCode::internal, "distance_dfbar: bad kind");
}

ad::Var penalty_node(ad::Var f, const Array& t, const Array& sigma, Kind kind,
                     Variant variant) {
  const Array& fv = f.value();
  if (!fv.same_shape(t) || !fv.same_shape(sigma))
    fail(ErrorCode::invalid_argument, "penalty_node: target shape mismatch");
  for (size_t i = 0; i < sigma.size(); ++i)
    if (sigma[i] < 0.0)
      fail(ErrorCode::invalid_argument, "penalty_node: negative sigma");
  double total = 0.0;
  for (size_t i = 0; i < fv.size(); ++i)
    total += distance(kind, variant, t[i], sigma[i], fv[i]);
  const size_t fi = f.id();
  Array t_c = t, s_c = sigma;
  return ad::custom(*f.tape(), Array::scalar(total), {f},
                    [fi, kind, variant, t = std::move(t_c),
                     s = std::move(s_c)](ad::Tape& tape, const Array& up) {
                      Array& g = tape.grad_mut(fi);
                      const Array& fv = tape.value(fi);
                      for (size_t i = 0; i < fv.size(); ++i)
                        g[i] += up[0] * distance_dfbar(kind, variant, t[i],
                                                       s[i], fv[i]);
                    });
}

std::vector<FamilyBinding> bind_bundle(const targets::TargetsBundle& bundle,
                                       const Vocab& vocab,
                                       const LossConfig& cfg) {
  std::vector<FamilyBinding> out;
  bool has_tok = false, has_edge = false, has_tree = false;
  for (const auto& ft : bundle.families) {
    FamilyBinding fb;
    if (ft.family_id == "universal-arc") {
      fb.spec = targets::universal_spec_from_bundle(ft, vocab);
    } else {
      fb.spec = stats::catalog_make(vocab, ft.family_id);
    }
    targets::DenseTargets d = targets::densify(ft, fb.spec, vocab);
    fb.t = std::move(d.t);
    fb.sigma = std::move(d.sigma);
    if (ft.family_id == "entropy-token") {
      fb.weight = cfg.entropy_token_weight;
      has_tok = true;
    } else if (ft.family_id == "entropy-edge") {
      fb.weight = cfg.entropy_edge_weight;
      has_edge = true;
    } else if (ft.family_id == "entropy-tree") {
      fb.weight = cfg.entropy_tree_weight;
      has_tree = true;
    }
    out.push_back(std::move(fb));
  }
  auto add_entropy = [&](const char* id, double weight) {
    if (weight == 0.0) return;
    FamilyBinding fb;
    fb.spec = stats::catalog_make(vocab, id);
    fb.t = Array({1});
    fb.sigma = Array({1});
    fb.weight = weight;
    out.push_back(std::move(fb));
  };
  if (!has_tok) add_entropy("entropy-token", cfg.entropy_token_weight);
  if (!has_edge) add_entropy("entropy-edge", cfg.entropy_edge_weight);
  if (!has_tree) add_entropy("entropy-tree", cfg.entropy_tree_weight);
  return out;
}

CTerm batch_loss(const std::vector<FamilyBinding>& families,
                 const std::vector<MarginalVars>& batch, const LossConfig& cfg) {
  if (batch.empty()) fail(ErrorCode::invalid_argument, "batch_loss: empty batch");
  CTerm out;
  bool first = true;
  for (const auto& fb : families) {
    ad::Var term;
    if (cfg.aggregation == Aggregation::per_batch) {
      ad::Var f = stats::aggregate_node(fb.spec, stats::expect(fb.spec, batch));
      term = penalty_node(f, fb.t, fb.sigma, cfg.kind, cfg.variant);
    } else {
      bool t_first = true;
      for (const auto& mv : batch) {
        ad::Var f = stats::aggregate_node(fb.spec,
                                          stats::expect_node(fb.spec, mv));
        ad::Var p = penalty_node(f, fb.t, fb.sigma, cfg.kind, cfg.variant);
        term = t_first ? p : ad::add(term, p);
        t_first = false;
      }
    }
    if (fb.weight != 1.0) term = ad::scale(term, fb.weight);
    out.components.emplace_back(fb.spec.id, term.value().item());
    out.value = first ? term : ad::add(out.value, term);
    first = false;
  }
  if (first)
    fail(ErrorCode::invalid_argument, "batch_loss: no statistic families bound");
  return out;
}

}  // namespace esr::loss
