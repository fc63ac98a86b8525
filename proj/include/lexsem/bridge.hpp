#pragma once

// Importance vector -> enhancement vector -> modulated embedding.
//
//   q_lex = softmax(W . w)
//   q_out = q_dense (*) q_lex        (element-wise)
//
// The same math covers image patches: w is a patch-importance vector and W
// has one column per patch.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "lexsem/core.hpp"
#include "lexsem/lexrep.hpp"
#include "lexsem/random.hpp"
#include "lexsem/tensor_io.hpp"

namespace lexsem {

enum class Strategy { baseline, slr, llr, clr };

inline const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::baseline: return "baseline";
    case Strategy::slr: return "slr";
    case Strategy::llr: return "llr";
    case Strategy::clr: return "clr";
  }
  return "unknown";
}

inline Strategy parse_strategy(std::string_view s) {
  if (s == "baseline") return Strategy::baseline;
  if (s == "slr") return Strategy::slr;
  if (s == "llr") return Strategy::llr;
  if (s == "clr") return Strategy::clr;
  throw Error(ErrorKind::invalid_argument, "unknown strategy: " + std::string(s));
}

enum class HeadMode { query_only, passage_only, both, lexical_only };

inline const char* to_string(HeadMode m) {
  switch (m) {
    case HeadMode::query_only: return "query_only";
    case HeadMode::passage_only: return "passage_only";
    case HeadMode::both: return "both";
    case HeadMode::lexical_only: return "lexical_only";
  }
  return "unknown";
}

inline HeadMode parse_head_mode(std::string_view s) {
  if (s == "query_only") return HeadMode::query_only;
  if (s == "passage_only") return HeadMode::passage_only;
  if (s == "both") return HeadMode::both;
  if (s == "lexical_only") return HeadMode::lexical_only;
  throw Error(ErrorKind::invalid_argument, "unknown head mode: " + std::string(s));
}

enum class Side { query, passage };

/// How a side's final vector is formed under a head mode.
enum class Fusion { dense, modulated, lexical };

inline Fusion fusion_for(Side side, Strategy strategy, HeadMode mode) {
  if (strategy == Strategy::baseline) return Fusion::dense;
  if (side == Side::query) {
    switch (mode) {
      case HeadMode::query_only:
      case HeadMode::both: return Fusion::modulated;
      case HeadMode::lexical_only: return Fusion::lexical;
      case HeadMode::passage_only: return Fusion::dense;
    }
  }
  return (mode == HeadMode::passage_only || mode == HeadMode::both) ? Fusion::modulated
                                                                    : Fusion::dense;
}

/// Enhancement vector q_lex = softmax(W . w).
inline Vector project_and_normalize(std::span<const double> importance, const BridgeParameters& params) {
  const auto& W = params.projection;
  require(W.cols() == importance.size(), ErrorKind::dimension_mismatch,
          "projection has " + std::to_string(W.cols()) + " columns, importance vector has " +
              std::to_string(importance.size()) + " entries");
  Vector logits(W.rows(), 0.0);
  for (std::size_t i = 0; i < W.rows(); ++i) {
    const auto row = W.row(i);
    double acc = 0.0;
    for (std::size_t t = 0; t < importance.size(); ++t) {
      if (importance[t] != 0.0) acc += row[t] * importance[t];
    }
    logits[i] = acc;
  }
  require(all_finite(logits), ErrorKind::non_finite, "projected logits are non-finite");
  return softmax(logits);
}

inline Vector modulate(std::span<const double> dense, std::span<const double> enhancement) {
  require(dense.size() == enhancement.size(), ErrorKind::dimension_mismatch,
          "dense embedding and enhancement vector differ in dimension");
  Vector out(dense.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dense[i] * enhancement[i];
  return out;
}

/// Patch-aware modulation: identical math with one column of W per patch.
inline Vector patch_modulate(std::span<const double> patch_importance, const BridgeParameters& patch_params,
                             std::span<const double> image_dense) {
  return modulate(image_dense, project_and_normalize(patch_importance, patch_params));
}

/// Lexical features for one text. Which fields are needed depends on the strategy.
struct LexicalInputs {
  std::optional<std::span<const TokenId>> tokens;
  const HiddenStateMatrix* hidden = nullptr;
  std::optional<std::span<const double>> cls_probs;
};

inline ImportanceVector importance_for(Strategy strategy, const LexicalInputs& in,
                                       const BridgeParameters& params, std::size_t vocab_size,
                                       LlrAggregation aggregation = LlrAggregation::max) {
  switch (strategy) {
    case Strategy::slr:
      require(in.tokens.has_value(), ErrorKind::invalid_argument, "slr requires token ids");
      return slr_weights(*in.tokens, Vocabulary(vocab_size));
    case Strategy::llr:
      require(in.hidden != nullptr, ErrorKind::invalid_argument, "llr requires hidden states");
      return llr_weights(*in.hidden, params, aggregation);
    case Strategy::clr:
      require(in.cls_probs.has_value(), ErrorKind::invalid_argument,
              "clr requires MLM probabilities");
      return clr_weights(*in.cls_probs);
    case Strategy::baseline: break;
  }
  throw Error(ErrorKind::invalid_argument, "baseline has no importance vector");
}

/// The learned bridge for one configuration. A separate passage head is only
/// present when head parameters are not shared.
struct BridgeModel {
  Strategy strategy = Strategy::baseline;
  HeadMode head_mode = HeadMode::query_only;
  LlrAggregation aggregation = LlrAggregation::max;
  std::size_t vocab_size = 0;
  BridgeParameters query_head;
  std::optional<BridgeParameters> passage_head;

  const BridgeParameters& head_for(Side side) const {
    return side == Side::passage && passage_head ? *passage_head : query_head;
  }
  BridgeParameters& head_for(Side side) {
    return side == Side::passage && passage_head ? *passage_head : query_head;
  }

  bool operator==(const BridgeModel&) const = default;
};

/// W ~ U[-1/sqrt(m), 1/sqrt(m)] (fan-in of the projection), U ~ U[-1/sqrt(d), 1/sqrt(d)], b = 0.
/// With the fan-in bound the initial q_lex is close to uniform.
inline BridgeParameters init_bridge_parameters(Strategy strategy, std::size_t dim, std::size_t vocab_size,
                                               Rng& rng) {
  const double w_bound = 1.0 / std::sqrt(static_cast<double>(vocab_size));
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  BridgeParameters p{Matrix<double>(dim, vocab_size), std::nullopt, std::nullopt};
  for (auto& v : p.projection.values()) v = uniform_real(rng, -w_bound, w_bound);
  if (strategy == Strategy::llr) {
    Matrix<double> U(dim, vocab_size);
    for (auto& v : U.values()) v = uniform_real(rng, -bound, bound);
    p.llr_projection = std::move(U);
    p.llr_bias = Vector(vocab_size, 0.0);
  }
  return p;
}

inline BridgeModel init_bridge(Strategy strategy, HeadMode mode, std::size_t dim, std::size_t vocab_size,
                               std::uint64_t seed, bool separate_passage_head = false,
                               LlrAggregation aggregation = LlrAggregation::max) {
  Rng rng(seed);
  BridgeModel model{strategy, mode, aggregation, vocab_size,
                    init_bridge_parameters(strategy, dim, vocab_size, rng), std::nullopt};
  if (separate_passage_head && mode == HeadMode::both) {
    model.passage_head = init_bridge_parameters(strategy, dim, vocab_size, rng);
  }
  return model;
}

/// Final vector for one side (query or passage) under the model's strategy and head mode.
inline Vector encode_side(Side side, std::span<const double> dense, const LexicalInputs& lexical,
                          const BridgeModel& model) {
  const Fusion fusion = fusion_for(side, model.strategy, model.head_mode);
  if (fusion == Fusion::dense) return Vector(dense.begin(), dense.end());
  const auto& params = model.head_for(side);
  const auto w = importance_for(model.strategy, lexical, params, model.vocab_size, model.aggregation);
  auto q_lex = project_and_normalize(w, params);
  if (fusion == Fusion::lexical) return q_lex;
  return modulate(dense, q_lex);
}

inline Vector encode_query(std::span<const double> dense, const LexicalInputs& lexical,
                           const BridgeModel& model) {
  return encode_side(Side::query, dense, lexical, model);
}

// Persistence: <dir>/manifest.json plus W/U/b TensorFiles (f64, so a
// reloaded model reproduces training state exactly).

namespace detail {

inline void save_head(const std::filesystem::path& dir, const std::string& prefix,
                      const BridgeParameters& p) {
  write_tensor(dir / (prefix + "W.lxsb"), p.projection, DType::f64);
  if (p.has_llr()) {
    write_tensor(dir / (prefix + "U.lxsb"), *p.llr_projection, DType::f64);
    write_tensor(dir / (prefix + "b.lxsb"), to_tensor(*p.llr_bias, DType::f64));
  }
}

inline BridgeParameters load_head(const std::filesystem::path& dir, const std::string& prefix,
                                  bool llr) {
  BridgeParameters p{to_matrix(read_tensor(dir / (prefix + "W.lxsb"))), std::nullopt, std::nullopt};
  if (llr) {
    p.llr_projection = to_matrix(read_tensor(dir / (prefix + "U.lxsb")));
    p.llr_bias = read_tensor(dir / (prefix + "b.lxsb")).values;
  }
  p.validate();
  return p;
}

}  // namespace detail

inline void save_bridge(const std::filesystem::path& dir, const BridgeModel& model) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest{
      {"strategy", to_string(model.strategy)},
      {"head_mode", to_string(model.head_mode)},
      {"d", model.query_head.dim()},
      {"m", model.query_head.input_size()},
      {"vocab_size", model.vocab_size},
      {"llr_aggregation", to_string(model.aggregation)},
      {"separate_passage_head", model.passage_head.has_value()},
  };
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  require(out.good(), ErrorKind::io, "cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
  if (model.strategy == Strategy::baseline) return;
  detail::save_head(dir, "", model.query_head);
  if (model.passage_head) detail::save_head(dir, "passage_", *model.passage_head);
}

inline BridgeModel load_bridge(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  require(in.good(), ErrorKind::io, "cannot open " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::malformed, "bridge manifest: " + std::string(e.what()));
  }
  BridgeModel model;
  try {
    model.strategy = parse_strategy(manifest.at("strategy").get<std::string>());
    model.head_mode = parse_head_mode(manifest.at("head_mode").get<std::string>());
    model.aggregation = parse_llr_aggregation(manifest.value("llr_aggregation", "max"));
    model.vocab_size = manifest.at("vocab_size").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::missing_field, "bridge manifest: " + std::string(e.what()));
  }
  if (model.strategy == Strategy::baseline) return model;
  const bool llr = model.strategy == Strategy::llr;
  model.query_head = detail::load_head(dir, "", llr);
  if (manifest.value("separate_passage_head", false)) {
    model.passage_head = detail::load_head(dir, "passage_", llr);
  }
  require(model.query_head.dim() == manifest.at("d").get<std::size_t>() &&
              model.query_head.input_size() == manifest.at("m").get<std::size_t>(),
          ErrorKind::dimension_mismatch, "bridge tensors disagree with manifest shape");
  return model;
}

}  // namespace lexsem
