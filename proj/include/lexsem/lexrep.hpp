#pragma once

// Vocabulary-level importance vectors.
//
//   SLR  w_t = log1p(max_j 1[t == t_j])
//   LLR  w_t = log1p(agg_j ReLU(h_j . U[:,t] + b_t)),  agg = max (default) or sum
//   CLR  w_t = log1p(p_t), p = MLM-head distribution at the [CLS] state
//
// All three are non-negative by construction.

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "lexsem/core.hpp"

namespace lexsem {

using ImportanceVector = Vector;

enum class LlrAggregation { max, sum };

inline const char* to_string(LlrAggregation a) { return a == LlrAggregation::max ? "max" : "sum"; }

inline LlrAggregation parse_llr_aggregation(std::string_view s) {
  if (s == "max") return LlrAggregation::max;
  if (s == "sum") return LlrAggregation::sum;
  throw Error(ErrorKind::invalid_argument, "unknown LLR aggregation: " + std::string(s));
}

inline ImportanceVector slr_weights(std::span<const TokenId> tokens, const Vocabulary& vocab) {
  ImportanceVector w(vocab.size(), 0.0);
  for (TokenId t : tokens) {
    require(t < vocab.size(), ErrorKind::out_of_range,
            "token id " + std::to_string(t) + " outside vocabulary");
    w[t] = std::numbers::ln2;
  }
  return w;
}

inline ImportanceVector slr_weights(const TokenSequence& tokens, const Vocabulary& vocab) {
  return slr_weights(tokens.ids(), vocab);
}

/// Per-entry pre-activations aggregated over positions. `winner` receives the
/// arg-max position per vocabulary entry (max mode) for use in backprop.
struct LlrActivations {
  Vector aggregated;                 // agg_j ReLU(.) per vocabulary entry
  std::vector<std::size_t> winner;   // max mode only
  Matrix<double> pre_activation;     // L x |V|
};

inline LlrActivations llr_activations(const HiddenStateMatrix& hidden, const BridgeParameters& params,
                                      LlrAggregation aggregation = LlrAggregation::max) {
  require(params.has_llr(), ErrorKind::invalid_argument, "LLR parameters U and b are missing");
  require(hidden.length() >= 1, ErrorKind::invalid_argument, "LLR needs at least one hidden state");
  const auto& U = *params.llr_projection;
  const auto& b = *params.llr_bias;
  require(hidden.dim() == U.rows(), ErrorKind::dimension_mismatch,
          "hidden dimension " + std::to_string(hidden.dim()) + " does not match U rows " +
              std::to_string(U.rows()));

  const std::size_t L = hidden.length();
  const std::size_t V = U.cols();
  LlrActivations act{Vector(V, 0.0), std::vector<std::size_t>(V, 0), Matrix<double>(L, V)};
  for (std::size_t j = 0; j < L; ++j) {
    auto pre = act.pre_activation.row(j);
    std::copy(b.begin(), b.end(), pre.begin());
    const auto h = hidden.row(j);
    for (std::size_t k = 0; k < h.size(); ++k) {
      const double hk = h[k];
      const auto u_row = U.row(k);
      for (std::size_t t = 0; t < V; ++t) pre[t] += hk * u_row[t];
    }
  }
  for (std::size_t t = 0; t < V; ++t) {
    double agg = 0.0;
    std::size_t best = 0;
    double best_pre = -INFINITY;
    for (std::size_t j = 0; j < L; ++j) {
      const double pre = act.pre_activation(j, t);
      const double relu = pre > 0.0 ? pre : 0.0;
      if (aggregation == LlrAggregation::sum) {
        agg += relu;
      } else if (pre > best_pre) {
        best_pre = pre;
        best = j;
      }
    }
    if (aggregation == LlrAggregation::max) agg = best_pre > 0.0 ? best_pre : 0.0;
    act.aggregated[t] = agg;
    act.winner[t] = best;
  }
  return act;
}

inline ImportanceVector llr_weights(const HiddenStateMatrix& hidden, const BridgeParameters& params,
                                    LlrAggregation aggregation = LlrAggregation::max) {
  auto act = llr_activations(hidden, params, aggregation);
  for (auto& v : act.aggregated) v = std::log1p(v);
  return std::move(act.aggregated);
}

inline constexpr double kProbabilitySumTolerance = 1e-5;

inline ImportanceVector clr_weights(std::span<const double> cls_probs) {
  double total = 0.0;
  for (double p : cls_probs) {
    require(std::isfinite(p), ErrorKind::non_finite, "CLR input contains a non-finite entry");
    require(p >= 0.0, ErrorKind::invalid_argument, "CLR input has a negative probability");
    total += p;
  }
  require(std::abs(total - 1.0) <= kProbabilitySumTolerance, ErrorKind::invalid_argument,
          "CLR input must be a softmax distribution (sum = " + std::to_string(total) + ")");
  ImportanceVector w(cls_probs.size());
  for (std::size_t t = 0; t < w.size(); ++t) w[t] = std::log1p(cls_probs[t]);
  return w;
}

/// MLM prediction head: softmax_i(v_i . LayerNorm(W h + b)).
struct MlmHead {
  Matrix<double> transform;        // d x d
  Vector transform_bias;           // d
  Vector norm_gain;                // d
  Vector norm_bias;                // d
  Matrix<double> output_embeddings;  // |V| x d, row i = v_i
  double norm_epsilon = 1e-12;

  std::size_t dim() const noexcept { return transform.rows(); }
  std::size_t vocab_size() const noexcept { return output_embeddings.rows(); }
};

inline Vector layer_norm(std::span<const double> x, std::span<const double> gain,
                         std::span<const double> bias, double epsilon) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  const double inv = 1.0 / std::sqrt(var + epsilon);
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) * inv * gain[i] + bias[i];
  return out;
}

inline Vector mlm_head(std::span<const double> cls_state, const MlmHead& head) {
  const std::size_t d = head.dim();
  require(cls_state.size() == d && head.transform.cols() == d && head.transform_bias.size() == d &&
              head.norm_gain.size() == d && head.norm_bias.size() == d &&
              head.output_embeddings.cols() == d,
          ErrorKind::dimension_mismatch, "MLM head parameters are dimensionally inconsistent");
  Vector pre(d);
  for (std::size_t r = 0; r < d; ++r) pre[r] = dot(head.transform.row(r), cls_state) + head.transform_bias[r];
  const Vector g = layer_norm(pre, head.norm_gain, head.norm_bias, head.norm_epsilon);
  Vector logits(head.vocab_size());
  for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = dot(head.output_embeddings.row(i), g);
  return softmax(logits);
}

}  // namespace lexsem
