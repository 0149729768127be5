#include "esr/train.hpp"

#include <cmath>
#include <sstream>

#include "esr/eval.hpp"
#include "esr/relaxed.hpp"

namespace esr::train {

double schedule(size_t step, size_t total, size_t warmup) {
  if (warmup > total)
    fail(ErrorCode::invalid_argument, "schedule: warmup exceeds total steps");
  if (step > total)
    fail(ErrorCode::invalid_argument, "schedule: step exceeds total");
  if (step <= warmup)
    return warmup == 0 ? 1.0
                       : static_cast<double>(step) / static_cast<double>(warmup);
  if (total == warmup) return 1.0;
  return static_cast<double>(total - step) /
         static_cast<double>(total - warmup);
}

namespace {

struct AdamState {
  std::vector<Array> m, v;
  size_t t = 0;
};

double global_grad_norm(const std::vector<Array>& grads) {
  double sq = 0.0;
  for (const Array& g : grads)
    for (size_t i = 0; i < g.size(); ++i) sq += g[i] * g[i];
  return std::sqrt(sq);
}

void apply_update(ModelParams& params, std::vector<Array>& grads,
                  AdamState& state, const TrainConfig& cfg, double lr) {
  if (cfg.clip_norm > 0.0) {
    const double norm = global_grad_norm(grads);
    if (norm > cfg.clip_norm) {
      const double s = cfg.clip_norm / norm;
      for (Array& g : grads)
        for (size_t i = 0; i < g.size(); ++i) g[i] *= s;
    }
  }
  if (cfg.optimizer == "sgd") {
    for (size_t p = 0; p < params.count(); ++p) {
      Array& w = params.array(p);
      for (size_t i = 0; i < w.size(); ++i) w[i] -= lr * grads[p][i];
    }
    return;
  }
  if (cfg.optimizer != "adamw")
    fail(ErrorCode::invalid_argument, "unknown optimizer '" + cfg.optimizer + "'");
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (size_t p = 0; p < params.count(); ++p) {
    Array& w = params.array(p);
    Array& m = state.m[p];
    Array& v = state.v[p];
    for (size_t i = 0; i < w.size(); ++i) {
      const double g = grads[p][i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) +
                    cfg.weight_decay * w[i]);
    }
  }
}

std::vector<const Sentence*> draw_batch(const Treebank& tb, size_t k, Rng& rng) {
  std::vector<const Sentence*> out(k);
  for (size_t i = 0; i < k; ++i)
    out[i] = &tb.sentences[rng.below(tb.size())];
  return out;
}

}  // namespace

TrainResult train(const ModelParams& init, const Treebank& labeled,
                  const Treebank& unlabeled, const targets::TargetsBundle& bundle,
                  const TrainConfig& cfg, const Treebank& dev) {
  const bool have_labeled = labeled.size() > 0;
  const bool want_unsup = cfg.alpha > 0.0 && !bundle.families.empty();
  if (want_unsup && unlabeled.size() == 0)
    fail(ErrorCode::invalid_argument,
         "train: alpha > 0 with statistic targets but no unlabeled data");
  if (!have_labeled && !want_unsup)
    fail(ErrorCode::invalid_argument, "train: nothing to optimize");
  for (const auto& s : dev.sentences)
    if (!s.labeled())
      fail(ErrorCode::invalid_argument, "train: dev sentences must be labeled");

  ModelParams params = init;
  const Vocab& vocab = params.vocab();
  std::vector<loss::FamilyBinding> families;
  if (want_unsup) families = loss::bind_bundle(bundle, vocab, cfg.loss);

  AdamState state;
  for (size_t p = 0; p < params.count(); ++p) {
    state.m.emplace_back(params.array(p).shape());
    state.v.emplace_back(params.array(p).shape());
  }

  std::ostringstream log;
  log << "# esr training log\n";
  log << "config_hash=" << fnv1a(std::to_string(cfg.alpha) + "|" +
                                 std::to_string(cfg.lr) + "|" +
                                 std::to_string(cfg.epochs) + "|" +
                                 std::to_string(cfg.steps_per_epoch) + "|" +
                                 std::to_string(cfg.seed))
      << " seed=" << cfg.seed << "\n";

  Rng rng(cfg.seed);
  const size_t total_steps = cfg.epochs * cfg.steps_per_epoch;
  const size_t cycle = cfg.mix_supervised + cfg.mix_unsupervised;
  if (cycle == 0)
    fail(ErrorCode::invalid_argument, "train: mixing ratio cannot be 0:0");

  TrainResult result;
  result.best = params;
  result.best_dev_avg = -1.0;
  result.best_epoch = 0;

  size_t step = 0;
  for (size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (size_t es = 0; es < cfg.steps_per_epoch; ++es) {
      ++step;
      bool supervised = have_labeled;
      if (have_labeled && want_unsup)
        supervised = (step - 1) % cycle < cfg.mix_supervised;
      const double lr = cfg.lr * schedule(step, total_steps, cfg.warmup);

      ad::Tape tape;
      BoundParams bound = bind(tape, params);
      double l_value = 0.0, c_value = 0.0;
      std::vector<std::pair<std::string, double>> components;
      ad::Var objective;
      if (supervised) {
        auto batch = draw_batch(labeled, cfg.batch_size, rng);
        ad::Var total;
        for (size_t i = 0; i < batch.size(); ++i) {
          ad::Var one = nll(tape, bound, params, *batch[i]);
          total = i == 0 ? one : ad::add(total, one);
        }
        objective = ad::scale(total, 1.0 / static_cast<double>(batch.size()));
        l_value = objective.value().item();
      } else {
        auto batch = draw_batch(unlabeled, cfg.batch_size, rng);
        std::vector<MarginalVars> margs;
        margs.reserve(batch.size());
        for (const Sentence* s : batch)
          margs.push_back(marginals(tape, bound, params, *s));
        if (cfg.use_relaxed) {
          // relaxed estimator for the counting families; entropy terms stay
          double tau = cfg.relaxed_temperature;
          if (cfg.relaxed_temperature_end > 0.0)
            tau += (cfg.relaxed_temperature_end - cfg.relaxed_temperature) *
                   (static_cast<double>(step) / total_steps);
          ad::Var c_total;
          bool first = true;
          for (const auto& fb : families) {
            ad::Var term;
            if (fb.spec.family == stats::Family::entropy) {
              term = loss::penalty_node(
                  stats::aggregate_node(fb.spec, stats::expect(fb.spec, margs)),
                  fb.t, fb.sigma, cfg.loss.kind, cfg.loss.variant);
            } else {
              ad::Var f = relaxed::relaxed_estimate(
                  fb.spec, margs, cfg.relaxed_samples, tau,
                  rng.u64());
              term = loss::penalty_node(f, fb.t, fb.sigma, cfg.loss.kind,
                                        cfg.loss.variant);
            }
            if (fb.weight != 1.0) term = ad::scale(term, fb.weight);
            components.emplace_back(fb.spec.id, term.value().item());
            c_total = first ? term : ad::add(c_total, term);
            first = false;
          }
          objective = ad::scale(c_total, cfg.alpha);
          c_value = c_total.value().item();
        } else {
          loss::CTerm c = loss::batch_loss(families, margs, cfg.loss);
          components = c.components;
          c_value = c.value.value().item();
          objective = ad::scale(c.value, cfg.alpha);
        }
      }

      const double total_value = objective.value().item();
      if (!std::isfinite(total_value)) {
        std::string offender = supervised ? "nll" : "unknown";
        for (const auto& [name, value] : components)
          if (!std::isfinite(value)) offender = name;
        fail(ErrorCode::numeric, "train: non-finite loss at step " +
                                     std::to_string(step) + " (component " +
                                     offender + ")");
      }

      tape.backward(objective);
      std::vector<Array> grads;
      grads.reserve(params.count());
      for (size_t p = 0; p < params.count(); ++p)
        grads.push_back(bound[p].grad());
      apply_update(params, grads, state, cfg, lr);

      log << "step=" << step << " kind=" << (supervised ? "sup" : "unsup")
          << " lr=" << format_g17(lr)
          << " total=" << format_g17(supervised ? l_value : cfg.alpha * c_value)
          << " L=" << format_g17(supervised ? l_value : 0.0)
          << " C=" << format_g17(supervised ? 0.0 : c_value);
      for (const auto& [name, value] : components)
        log << " C." << name << "=" << format_g17(value);
      log << "\n";
    }

    // dev evaluation and best-checkpoint selection
    Treebank pred;
    pred.sentences.reserve(dev.size());
    for (const auto& s : dev.sentences) pred.sentences.push_back(decode(params, s));
    eval::Scores sc = eval::score(dev, pred);
    const bool is_best = sc.avg > result.best_dev_avg;
    if (is_best) {
      result.best = params;
      result.best_dev_avg = sc.avg;
      result.best_epoch = epoch;
    }
    log << "epoch=" << epoch << " dev_pos=" << format_g17(sc.pos_acc)
        << " dev_las=" << format_g17(sc.las)
        << " dev_avg=" << format_g17(sc.avg) << " best=" << (is_best ? 1 : 0)
        << "\n";
  }

  {
    Treebank pred;
    for (const auto& s : dev.sentences)
      pred.sentences.push_back(decode(result.best, s));
    eval::Scores sc = eval::score(dev, pred);
    log << "result pos=" << format_g17(sc.pos_acc)
        << " las=" << format_g17(sc.las) << " avg=" << format_g17(sc.avg)
        << " best_epoch=" << result.best_epoch << "\n";
  }
  result.log = log.str();
  return result;
}

std::vector<std::pair<std::string, std::string>> parse_config_text(
    const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line, section;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorCode::parse,
           "config line " + std::to_string(line_no) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    if (!section.empty()) key = section + "." + key;
    out.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return out;
}

TrainConfig config_from_pairs(
    const std::vector<std::pair<std::string, std::string>>& pairs,
    std::vector<std::pair<std::string, std::string>>* unused) {
  TrainConfig cfg;
  for (const auto& [key, value] : pairs) {
    std::string k = key;
    // accept both flat keys and [train]/[model]/[loss] sections
    for (const char* prefix : {"train.", "model.", "loss."}) {
      if (k.rfind(prefix, 0) == 0) {
        k = k.substr(std::string(prefix).size());
        break;
      }
    }
    if (k == "alpha") cfg.alpha = std::stod(value);
    else if (k == "lr") cfg.lr = std::stod(value);
    else if (k == "batch_size") cfg.batch_size = std::stoul(value);
    else if (k == "epochs") cfg.epochs = std::stoul(value);
    else if (k == "steps_per_epoch") cfg.steps_per_epoch = std::stoul(value);
    else if (k == "mix_supervised") cfg.mix_supervised = std::stoul(value);
    else if (k == "mix_unsupervised") cfg.mix_unsupervised = std::stoul(value);
    else if (k == "warmup") cfg.warmup = std::stoul(value);
    else if (k == "seed") cfg.seed = std::stoull(value);
    else if (k == "optimizer") cfg.optimizer = value;
    else if (k == "beta1") cfg.beta1 = std::stod(value);
    else if (k == "beta2") cfg.beta2 = std::stod(value);
    else if (k == "adam_eps") cfg.adam_eps = std::stod(value);
    else if (k == "weight_decay") cfg.weight_decay = std::stod(value);
    else if (k == "clip_norm") cfg.clip_norm = std::stod(value);
    else if (k == "use_relaxed") cfg.use_relaxed = value == "1" || value == "true";
    else if (k == "relaxed_samples") cfg.relaxed_samples = std::stoul(value);
    else if (k == "relaxed_temperature") cfg.relaxed_temperature = std::stod(value);
    else if (k == "relaxed_temperature_end")
      cfg.relaxed_temperature_end = std::stod(value);
    else if (k == "distance") cfg.loss.kind = loss::kind_from_name(value);
    else if (k == "smooth_variant") cfg.loss.variant = loss::variant_from_name(value);
    else if (k == "aggregation")
      cfg.loss.aggregation = loss::aggregation_from_name(value);
    else if (k == "entropy_token_weight")
      cfg.loss.entropy_token_weight = std::stod(value);
    else if (k == "entropy_edge_weight")
      cfg.loss.entropy_edge_weight = std::stod(value);
    else if (k == "entropy_tree_weight")
      cfg.loss.entropy_tree_weight = std::stod(value);
    else if (k == "emb_dim") cfg.model.emb_dim = std::stoul(value);
    else if (k == "hidden_dim") cfg.model.hidden_dim = std::stoul(value);
    else if (k == "biaffine_rank") cfg.model.biaffine_rank = std::stoul(value);
    else if (k == "window") cfg.model.window = std::stoul(value);
    else if (k == "mlp_depth") cfg.model.mlp_depth = std::stoul(value);
    else if (k == "init_seed") cfg.model.init_seed = std::stoull(value);
    else if (unused) unused->emplace_back(key, value);
    else
      fail(ErrorCode::invalid_argument, "unknown config key '" + key + "'");
  }
  return cfg;
}

}  // namespace esr::train
