#pragma once

// Contrastive training of the bridge over frozen, precomputed features.
//
// Per query i with group p_{i,0} (positive), p_{i,1..G-1} (negatives):
//
//   L = -(1/B) sum_i log( exp(s_{i,0}/tau) / sum_j exp(s_{i,j}/tau) ),
//   s_{i,j} = cos(q_i, p_{i,j})
//
// Gradients are analytic, back through cosine, modulation, softmax, the
// W projection and (LLR) log1p o ReLU, with ReLU'(0) = 0.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lexsem/bridge.hpp"
#include "lexsem/core.hpp"
#include "lexsem/random.hpp"
#include "lexsem/retrieval.hpp"

namespace lexsem {

enum class OptimizerKind { sgd, adam };

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw Error(ErrorKind::invalid_argument, "unknown optimizer: " + std::string(s));
}

inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

struct TrainingConfig {
  double temperature = 0.02;
  std::size_t batch_size = 64;
  std::size_t group_size = 16;  // 1 positive + 15 negatives
  std::size_t epochs = 10;
  double learning_rate = 1e-5;
  std::uint64_t seed = 0;
  Strategy strategy = Strategy::clr;
  HeadMode head_mode = HeadMode::query_only;
  OptimizerKind optimizer = OptimizerKind::sgd;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  bool separate_passage_head = false;
  LlrAggregation llr_aggregation = LlrAggregation::max;
  std::size_t checkpoint_every = 5000;

  void validate() const {
    require(temperature > 0.0 && std::isfinite(temperature), ErrorKind::invalid_argument,
            "temperature must be > 0");
    require(group_size >= 2, ErrorKind::invalid_argument, "group size must be >= 2");
    require(batch_size >= 1, ErrorKind::invalid_argument, "batch size must be >= 1");
    require(learning_rate > 0.0, ErrorKind::invalid_argument, "learning rate must be > 0");
  }
};

inline nlohmann::json to_json(const TrainingConfig& c) {
  return {{"temperature", c.temperature},
          {"batch_size", c.batch_size},
          {"group_size", c.group_size},
          {"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"seed", c.seed},
          {"strategy", to_string(c.strategy)},
          {"head_mode", to_string(c.head_mode)},
          {"optimizer", to_string(c.optimizer)},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_epsilon", c.adam_epsilon},
          {"separate_passage_head", c.separate_passage_head},
          {"llr_aggregation", to_string(c.llr_aggregation)},
          {"checkpoint_every", c.checkpoint_every}};
}

/// Missing keys keep their defaults.
inline TrainingConfig training_config_from_json(const nlohmann::json& j) {
  TrainingConfig c;
  try {
    c.temperature = j.value("temperature", c.temperature);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.group_size = j.value("group_size", c.group_size);
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.seed = j.value("seed", c.seed);
    if (j.contains("strategy")) c.strategy = parse_strategy(j.at("strategy").get<std::string>());
    if (j.contains("head_mode")) c.head_mode = parse_head_mode(j.at("head_mode").get<std::string>());
    if (j.contains("optimizer")) c.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
    c.separate_passage_head = j.value("separate_passage_head", c.separate_passage_head);
    if (j.contains("llr_aggregation")) {
      c.llr_aggregation = parse_llr_aggregation(j.at("llr_aggregation").get<std::string>());
    }
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::malformed, "training config: " + std::string(e.what()));
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Loss

/// log(sum_j exp(x_j)) - x_0 without cancellation. When x_0 is the maximum
/// the result is log1p of the remaining mass, so tiny losses keep full
/// relative precision instead of rounding to 0.
inline double nce_term(std::span<const double> x) {
  double peak = 0.0;  // max_j (x_j - x_0), x_0 included
  for (double v : x) peak = std::max(peak, v - x[0]);
  double rest = 0.0;
  for (std::size_t j = 1; j < x.size(); ++j) rest += std::exp(x[j] - x[0] - peak);
  if (peak == 0.0) return std::log1p(rest);
  return peak + std::log(std::exp(-peak) + rest);
}

inline double contrastive_loss(const Matrix<double>& similarities, double temperature) {
  require(temperature > 0.0, ErrorKind::invalid_argument, "temperature must be > 0");
  require(similarities.rows() >= 1 && similarities.cols() >= 1, ErrorKind::empty_input,
          "similarity matrix is empty");
  require(all_finite(similarities.values()), ErrorKind::non_finite, "similarities are non-finite");
  double total = 0.0;
  Vector scaled(similarities.cols());
  for (std::size_t i = 0; i < similarities.rows(); ++i) {
    const auto row = similarities.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) scaled[j] = row[j] / temperature;
    total += nce_term(scaled);
  }
  return total / static_cast<double>(similarities.rows());
}

// ---------------------------------------------------------------------------
// Features and examples

/// Frozen backbone outputs for one text.
struct SideFeatures {
  Vector dense;
  std::vector<TokenId> tokens;
  std::optional<HiddenStateMatrix> hidden;
  Vector cls_probs;  // empty when unavailable

  LexicalInputs lexical() const {
    LexicalInputs in;
    in.tokens = std::span<const TokenId>(tokens);
    if (hidden) in.hidden = &*hidden;
    if (!cls_probs.empty()) in.cls_probs = std::span<const double>(cls_probs);
    return in;
  }
};

using SharedFeatures = std::shared_ptr<const SideFeatures>;

/// One query with its passage group; passages[0] is the positive.
struct TrainingExample {
  SideFeatures query;
  std::vector<SharedFeatures> passages;
};

/// Gradient accumulator with the same layout as a BridgeModel's heads.
struct BridgeGradients {
  BridgeParameters query_head;
  std::optional<BridgeParameters> passage_head;

  explicit BridgeGradients(const BridgeModel& model)
      : query_head(model.query_head.zeros_like()) {
    if (model.passage_head) passage_head = model.passage_head->zeros_like();
  }

  BridgeParameters& head_for(Side side) {
    return side == Side::passage && passage_head ? *passage_head : query_head;
  }
};

/// Flat views over every trainable array, in a fixed order.
inline std::vector<std::span<double>> parameter_views(BridgeParameters& p) {
  std::vector<std::span<double>> views{p.projection.values()};
  if (p.has_llr()) {
    views.push_back(p.llr_projection->values());
    views.push_back(std::span<double>(*p.llr_bias));
  }
  return views;
}

inline std::vector<std::span<double>> parameter_views(BridgeModel& m) {
  auto views = parameter_views(m.query_head);
  if (m.passage_head) {
    auto extra = parameter_views(*m.passage_head);
    views.insert(views.end(), extra.begin(), extra.end());
  }
  return views;
}

inline std::vector<std::span<double>> parameter_views(BridgeGradients& g) {
  auto views = parameter_views(g.query_head);
  if (g.passage_head) {
    auto extra = parameter_views(*g.passage_head);
    views.insert(views.end(), extra.begin(), extra.end());
  }
  return views;
}

// ---------------------------------------------------------------------------
// Forward / backward for one side

namespace detail {

struct SideTape {
  Side side = Side::query;
  Fusion fusion = Fusion::dense;
  const SideFeatures* features = nullptr;
  Vector importance;
  Vector enhancement;  // q_lex
  Vector out;
  std::optional<LlrActivations> llr;
};

inline SideTape forward_side(Side side, const SideFeatures& f, const BridgeModel& model) {
  SideTape tape;
  tape.side = side;
  tape.features = &f;
  tape.fusion = fusion_for(side, model.strategy, model.head_mode);
  if (tape.fusion == Fusion::dense) {
    tape.out = f.dense;
    return tape;
  }
  const auto& params = model.head_for(side);
  if (model.strategy == Strategy::llr) {
    require(f.hidden.has_value(), ErrorKind::invalid_argument, "llr requires hidden states");
    tape.llr = llr_activations(*f.hidden, params, model.aggregation);
    tape.importance.resize(tape.llr->aggregated.size());
    for (std::size_t t = 0; t < tape.importance.size(); ++t) tape.importance[t] = std::log1p(tape.llr->aggregated[t]);
  } else {
    tape.importance = importance_for(model.strategy, f.lexical(), params, model.vocab_size, model.aggregation);
  }
  tape.enhancement = project_and_normalize(tape.importance, params);
  tape.out = tape.fusion == Fusion::lexical ? tape.enhancement : modulate(f.dense, tape.enhancement);
  return tape;
}

inline void backward_side(const SideTape& tape, std::span<const double> g_out, const BridgeModel& model,
                          BridgeGradients& grads) {
  if (tape.fusion == Fusion::dense) return;
  const auto& params = model.head_for(tape.side);
  auto& g = grads.head_for(tape.side);
  const std::size_t d = tape.enhancement.size();

  // d out / d q_lex
  Vector g_lex(d);
  for (std::size_t i = 0; i < d; ++i) {
    g_lex[i] = tape.fusion == Fusion::lexical ? g_out[i] : g_out[i] * tape.features->dense[i];
  }
  // softmax backward
  double inner = 0.0;
  for (std::size_t i = 0; i < d; ++i) inner += tape.enhancement[i] * g_lex[i];
  Vector g_logits(d);
  for (std::size_t i = 0; i < d; ++i) g_logits[i] = tape.enhancement[i] * (g_lex[i] - inner);

  // logits = W w
  const auto& w = tape.importance;
  for (std::size_t i = 0; i < d; ++i) {
    if (g_logits[i] == 0.0) continue;
    auto row = g.projection.row(i);
    for (std::size_t t = 0; t < w.size(); ++t) {
      if (w[t] != 0.0) row[t] += g_logits[i] * w[t];
    }
  }
  if (model.strategy != Strategy::llr) return;

  // w_t = log1p(agg_t), agg over ReLU(h_j . U[:,t] + b_t)
  const auto& act = *tape.llr;
  const auto& hidden = *tape.features->hidden;
  const auto& W = params.projection;
  const std::size_t V = w.size();
  Vector g_agg(V, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    const auto row = W.row(i);
    for (std::size_t t = 0; t < V; ++t) g_agg[t] += g_logits[i] * row[t];
  }
  for (std::size_t t = 0; t < V; ++t) g_agg[t] /= 1.0 + act.aggregated[t];

  auto& dU = *g.llr_projection;
  auto& db = *g.llr_bias;
  if (model.aggregation == LlrAggregation::max) {
    for (std::size_t t = 0; t < V; ++t) {
      const std::size_t j = act.winner[t];
      if (!(act.pre_activation(j, t) > 0.0)) continue;
      const auto h = hidden.row(j);
      for (std::size_t k = 0; k < h.size(); ++k) dU(k, t) += g_agg[t] * h[k];
      db[t] += g_agg[t];
    }
  } else {
    Vector g_pre(V);
    for (std::size_t j = 0; j < hidden.length(); ++j) {
      const auto pre = act.pre_activation.row(j);
      for (std::size_t t = 0; t < V; ++t) g_pre[t] = pre[t] > 0.0 ? g_agg[t] : 0.0;
      const auto h = hidden.row(j);
      for (std::size_t k = 0; k < h.size(); ++k) {
        auto du = dU.row(k);
        for (std::size_t t = 0; t < V; ++t) du[t] += h[k] * g_pre[t];
      }
      for (std::size_t t = 0; t < V; ++t) db[t] += g_pre[t];
    }
  }
}

/// d cos(a, b) / d a
inline void cosine_grad(std::span<const double> a, std::span<const double> b, double scale, std::span<double> out) {
  const double na = norm(a);
  const double nb = norm(b);
  const double c = dot(a, b) / (na * nb);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] += scale * (b[i] / (na * nb) - c * a[i] / (na * na));
}

}  // namespace detail

struct LossAndGradients {
  double loss = 0.0;
  BridgeGradients gradients;
};

inline void check_group(const TrainingExample& ex) {
  require(ex.passages.size() >= 2, ErrorKind::invalid_argument, "each example needs a positive and a negative");
  for (const auto& p : ex.passages) {
    require(p && p->dense.size() == ex.query.dense.size(), ErrorKind::dimension_mismatch,
            "passage and query embeddings differ in dimension");
  }
}

/// Similarity matrix (B x G) for a batch under the current model.
inline Matrix<double> batch_similarities(std::span<const TrainingExample> batch, const BridgeModel& model) {
  require(!batch.empty(), ErrorKind::empty_input, "empty batch");
  const std::size_t G = batch.front().passages.size();
  Matrix<double> sims(batch.size(), G);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    check_group(batch[i]);
    require(batch[i].passages.size() == G, ErrorKind::dimension_mismatch, "ragged passage groups in batch");
    const auto q = detail::forward_side(Side::query, batch[i].query, model);
    for (std::size_t j = 0; j < G; ++j) {
      const auto p = detail::forward_side(Side::passage, *batch[i].passages[j], model);
      sims(i, j) = cosine(q.out, p.out);
    }
  }
  return sims;
}

inline double batch_loss(std::span<const TrainingExample> batch, const BridgeModel& model, double temperature) {
  return contrastive_loss(batch_similarities(batch, model), temperature);
}

inline LossAndGradients loss_gradients(std::span<const TrainingExample> batch, const BridgeModel& model,
                                       double temperature) {
  require(!batch.empty(), ErrorKind::empty_input, "empty batch");
  require(temperature > 0.0, ErrorKind::invalid_argument, "temperature must be > 0");
  LossAndGradients result{0.0, BridgeGradients(model)};
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    check_group(ex);
    const std::size_t G = ex.passages.size();
    const auto q = detail::forward_side(Side::query, ex.query, model);
    std::vector<detail::SideTape> ps;
    ps.reserve(G);
    Vector scaled(G);
    for (std::size_t j = 0; j < G; ++j) {
      ps.push_back(detail::forward_side(Side::passage, *ex.passages[j], model));
      scaled[j] = cosine(q.out, ps[j].out) / temperature;
    }
    require(all_finite(scaled), ErrorKind::non_finite, "non-finite similarity");
    result.loss += nce_term(scaled) * inv_b;
    const auto probs = softmax(scaled);

    Vector g_q(q.out.size(), 0.0);
    for (std::size_t j = 0; j < G; ++j) {
      // dL/ds_j = (softmax_j - [j == 0]) / (tau B)
      const double g_s = (probs[j] - (j == 0 ? 1.0 : 0.0)) * inv_b / temperature;
      if (g_s == 0.0) continue;
      detail::cosine_grad(q.out, ps[j].out, g_s, g_q);
      if (ps[j].fusion != Fusion::dense) {
        Vector g_p(ps[j].out.size(), 0.0);
        detail::cosine_grad(ps[j].out, q.out, g_s, g_p);
        detail::backward_side(ps[j], g_p, model, result.gradients);
      }
    }
    detail::backward_side(q, g_q, model, result.gradients);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Hard negatives

inline constexpr std::size_t kHardNegativeFirstRank = 20;
inline constexpr std::size_t kHardNegativeLastRank = 200;

/// Uniform sample without replacement from 1-based ranks [20, 200] of an
/// auxiliary ranking, never returning the positive. Shorter lists fall back to
/// ranks [20, n].
inline std::vector<std::string> mine_hard_negatives(std::span<const std::string> ranked_ids,
                                                    const std::string& positive_id, std::size_t k,
                                                    std::uint64_t seed) {
  std::vector<std::string> pool;
  const std::size_t last = std::min(ranked_ids.size(), kHardNegativeLastRank);
  for (std::size_t rank = kHardNegativeFirstRank; rank <= last; ++rank) {
    if (ranked_ids[rank - 1] != positive_id) pool.push_back(ranked_ids[rank - 1]);
  }
  require(pool.size() >= k, ErrorKind::insufficient_candidates,
          "only " + std::to_string(pool.size()) + " candidates in ranks 20..200, need " + std::to_string(k));
  Rng rng(seed);
  for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
  pool.resize(k);
  return pool;
}

// ---------------------------------------------------------------------------
// Optimizer

class Optimizer {
 public:
  Optimizer(const TrainingConfig& config, const BridgeModel& model) : config_(config) {
    if (config.optimizer == OptimizerKind::adam) {
      BridgeModel shape = model;
      for (auto view : parameter_views(shape)) {
        first_.emplace_back(view.size(), 0.0);
        second_.emplace_back(view.size(), 0.0);
      }
    }
  }

  void step(BridgeModel& model, BridgeGradients& grads) {
    auto params = parameter_views(model);
    auto gs = parameter_views(grads);
    require(params.size() == gs.size(), ErrorKind::dimension_mismatch, "gradient layout mismatch");
    const double lr = config_.learning_rate;
    if (config_.optimizer == OptimizerKind::sgd) {
      for (std::size_t a = 0; a < params.size(); ++a) {
        for (std::size_t i = 0; i < params[a].size(); ++i) params[a][i] -= lr * gs[a][i];
      }
      return;
    }
    ++t_;
    const double b1 = config_.adam_beta1;
    const double b2 = config_.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t a = 0; a < params.size(); ++a) {
      auto& m = first_[a];
      auto& v = second_[a];
      for (std::size_t i = 0; i < params[a].size(); ++i) {
        const double g = gs[a][i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        params[a][i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.adam_epsilon);
      }
    }
  }

 private:
  TrainingConfig config_;
  std::vector<Vector> first_;
  std::vector<Vector> second_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Training loop

struct LossRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
};

struct TrainingResult {
  BridgeModel model;
  std::vector<LossRecord> log;
  std::vector<double> epoch_mean_loss;
};

using CheckpointFn = std::function<void(std::size_t step, const BridgeModel&)>;

/// Mini-batch training. Single-threaded and deterministic for a given seed.
/// Under the baseline strategy the loss is logged but nothing is updated.
inline TrainingResult train_bridge(const std::vector<TrainingExample>& dataset, const TrainingConfig& config,
                                   BridgeModel initial, const CheckpointFn& checkpoint = {}) {
  config.validate();
  require(!dataset.empty(), ErrorKind::empty_input, "training dataset is empty");
  for (const auto& ex : dataset) {
    require(ex.passages.size() == config.group_size, ErrorKind::dimension_mismatch,
            "example group has " + std::to_string(ex.passages.size()) + " passages, config expects " +
                std::to_string(config.group_size));
  }
  TrainingResult result{std::move(initial), {}, {}};
  Optimizer optimizer(config, result.model);
  const bool trainable = result.model.strategy != Strategy::baseline;

  std::vector<std::size_t> order(dataset.size());
  std::vector<TrainingExample> batch;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(config.seed, epoch));
    shuffle(order, rng);
    double epoch_total = 0.0;
    std::size_t epoch_steps = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(dataset[order[i]]);
      double loss = 0.0;
      if (trainable) {
        auto lg = loss_gradients(batch, result.model, config.temperature);
        loss = lg.loss;
        require(std::isfinite(loss), ErrorKind::non_finite,
                "non-finite loss at step " + std::to_string(step + 1));
        optimizer.step(result.model, lg.gradients);
      } else {
        loss = batch_loss(batch, result.model, config.temperature);
      }
      ++step;
      result.log.push_back({step, epoch + 1, loss});
      epoch_total += loss;
      ++epoch_steps;
      if (checkpoint && config.checkpoint_every > 0 && step % config.checkpoint_every == 0) {
        checkpoint(step, result.model);
      }
    }
    result.epoch_mean_loss.push_back(epoch_total / static_cast<double>(epoch_steps));
  }
  return result;
}

inline void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& log) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorKind::io, "cannot open " + path.string() + " for writing");
  out << "step,loss\n";
  char buf[64];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.loss);
    out << r.step << ',' << buf << '\n';
  }
  require(!out.fail(), ErrorKind::io, "write failed for " + path.string());
}

}  // namespace lexsem
