#pragma once

// Analytic gradients of the batch loss against central finite differences on
// seeded random instances.
//
//   rel(a, n) = |a - n| / max(|a|, |n|, floor)
//
// At tau = 0.02 and h = 1e-5 the differences carry ~1e-9 of rounding noise
// (the scaled similarities are ~50, so each loss evaluation is only good to
// ~1e-14). The floor of 1e-5 keeps that noise below 1e-4 on components too
// small to measure relatively; larger components are held to full relative
// accuracy. Instances are redrawn until every ReLU pre-activation and
// every max-aggregation winner is at least `kink_margin` away from a kink, so
// no +-h probe crosses a point of non-differentiability.

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "lexsem/bridge.hpp"
#include "lexsem/random.hpp"
#include "lexsem/training.hpp"

namespace lexsem {

struct GradCheckOptions {
  std::size_t dim = 16;
  std::size_t vocab_size = 64;
  std::size_t batch = 4;
  std::size_t group = 4;
  std::size_t length = 4;  // tokens per text
  Strategy strategy = Strategy::clr;
  HeadMode head_mode = HeadMode::query_only;
  bool separate_passage_head = false;
  LlrAggregation aggregation = LlrAggregation::max;
  double temperature = 0.02;
  double step = 1e-5;
  double floor = 1e-5;
  double param_scale = 4.0;
  double kink_margin = 1e-4;  // > step * max |h|, so probes never cross a kink
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t redraws = 0;
  std::string worst;  // "<array>[<index>]"
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckInstance {
  BridgeModel model;
  std::vector<TrainingExample> batch;
};

namespace detail {

/// Dense vectors share a mean direction (as real encoder outputs do) so that
/// cosines sit in a narrow band and the loss at tau = 0.02 stays O(1). A large
/// loss would put O(eps * loss / h) rounding noise into the differences.
inline SideFeatures random_side(Rng& rng, const GradCheckOptions& o, std::span<const double> mean,
                                std::span<const double> near = {}) {
  SideFeatures f;
  f.dense.resize(o.dim);
  for (std::size_t i = 0; i < o.dim; ++i) {
    const double noise = standard_normal(rng);
    f.dense[i] = near.empty() ? mean[i] + noise : 0.8 * near[i] + 0.2 * mean[i] + 0.6 * noise;
  }
  Matrix<double> rows(o.length, o.dim);
  for (auto& v : rows.values()) v = standard_normal(rng);
  Vector cls(o.dim);
  for (auto& v : cls) v = standard_normal(rng);
  f.hidden.emplace(std::move(rows), std::move(cls));
  for (std::size_t j = 0; j < o.length; ++j) f.tokens.push_back(static_cast<TokenId>(uniform_index(rng, o.vocab_size)));
  Vector logits(o.vocab_size);
  for (auto& v : logits) v = 2.0 * standard_normal(rng);
  f.cls_probs = softmax(logits);
  return f;
}

/// True when no LLR activation sits within `margin` of a ReLU or max kink.
inline bool clear_of_kinks(const SideFeatures& f, const BridgeParameters& p, LlrAggregation agg, double margin) {
  const auto act = llr_activations(*f.hidden, p, agg);
  const auto& pre = act.pre_activation;
  for (std::size_t t = 0; t < pre.cols(); ++t) {
    double first = -std::numeric_limits<double>::infinity();
    double second = first;
    for (std::size_t j = 0; j < pre.rows(); ++j) {
      const double v = pre(j, t);
      if (std::abs(v) < margin) return false;
      if (v > first) {
        second = first;
        first = v;
      } else if (v > second) {
        second = v;
      }
    }
    if (agg == LlrAggregation::max && first > 0.0 && first - second < margin) return false;
  }
  return true;
}

}  // namespace detail

inline GradCheckInstance make_gradcheck_instance(const GradCheckOptions& o, std::size_t* redraws = nullptr) {
  require(o.dim >= 2 && o.vocab_size >= 2 && o.batch >= 1 && o.group >= 2 && o.length >= 1,
          ErrorKind::invalid_argument, "grad-check dimensions too small");
  require(o.strategy != Strategy::baseline, ErrorKind::invalid_argument, "baseline has no parameters to check");
  Rng rng(derive_seed(o.seed, 0x67c));
  for (std::size_t attempt = 0;; ++attempt) {
    GradCheckInstance inst{init_bridge(o.strategy, o.head_mode, o.dim, o.vocab_size, o.seed,
                                       o.separate_passage_head, o.aggregation),
                           {}};
    // Initialization bounds stretched by param_scale, so q_lex is far from
    // uniform but the softmax does not saturate. b is drawn too (it starts at 0).
    const double w_bound = o.param_scale / std::sqrt(static_cast<double>(o.vocab_size));
    const double u_bound = o.param_scale / std::sqrt(static_cast<double>(o.dim));
    for (BridgeParameters* head : {&inst.model.query_head, inst.model.passage_head ? &*inst.model.passage_head : nullptr}) {
      if (!head) continue;
      for (auto& v : head->projection.values()) v = uniform_real(rng, -w_bound, w_bound);
      if (head->has_llr()) {
        for (auto& v : head->llr_projection->values()) v = uniform_real(rng, -u_bound, u_bound);
        for (auto& v : *head->llr_bias) v = uniform_real(rng, -u_bound, u_bound);
      }
    }
    bool ok = true;
    Vector mean(o.dim);
    for (auto& v : mean) v = 3.0 * standard_normal(rng);
    for (std::size_t b = 0; b < o.batch; ++b) {
      TrainingExample ex;
      ex.query = detail::random_side(rng, o, mean);
      for (std::size_t g = 0; g < o.group; ++g) {
        ex.passages.push_back(std::make_shared<const SideFeatures>(
            g == 0 ? detail::random_side(rng, o, mean, ex.query.dense) : detail::random_side(rng, o, mean)));
      }
      inst.batch.push_back(std::move(ex));
    }
    if (o.strategy == Strategy::llr) {
      for (const auto& ex : inst.batch) {
        const auto qf = fusion_for(Side::query, o.strategy, o.head_mode);
        const auto pf = fusion_for(Side::passage, o.strategy, o.head_mode);
        if (qf != Fusion::dense) {
          ok = ok && detail::clear_of_kinks(ex.query, inst.model.head_for(Side::query), o.aggregation, o.kink_margin);
        }
        if (pf != Fusion::dense) {
          for (const auto& p : ex.passages) {
            ok = ok && detail::clear_of_kinks(*p, inst.model.head_for(Side::passage), o.aggregation, o.kink_margin);
          }
        }
      }
    }
    if (ok) {
      if (redraws) *redraws = attempt;
      return inst;
    }
    require(attempt < 1000, ErrorKind::invalid_argument, "could not draw a kink-free grad-check instance");
  }
}

inline GradCheckReport run_gradcheck(const GradCheckOptions& o) {
  GradCheckReport report;
  auto inst = make_gradcheck_instance(o, &report.redraws);
  auto analytic = loss_gradients(inst.batch, inst.model, o.temperature);
  auto grads = parameter_views(analytic.gradients);
  auto params = parameter_views(inst.model);

  std::vector<std::string> names{"W", "U", "b"};
  const std::size_t per_head = inst.model.query_head.has_llr() ? 3 : 1;
  for (std::size_t a = 0; a < params.size(); ++a) {
    const std::string name = (a >= per_head ? "passage_" : "") + names[a % per_head];
    for (std::size_t i = 0; i < params[a].size(); ++i) {
      const double x = params[a][i];
      params[a][i] = x + o.step;
      const double up = batch_loss(inst.batch, inst.model, o.temperature);
      params[a][i] = x - o.step;
      const double down = batch_loss(inst.batch, inst.model, o.temperature);
      params[a][i] = x;
      const double numeric = (up - down) / (2.0 * o.step);
      const double a_val = grads[a][i];
      const double denom = std::max({std::abs(a_val), std::abs(numeric), o.floor});
      const double rel = std::abs(a_val - numeric) / denom;
      ++report.coordinates;
      if (rel >= report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst = name + "[" + std::to_string(i) + "]";
        report.worst_analytic = a_val;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace lexsem
