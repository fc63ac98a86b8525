#pragma once

// Feature sets and the glue between modules: featurize texts, persist the
// features, assemble training groups with mined hard negatives, and run
// bridge-encoded queries against a dense index.
//
// Feature directory layout (one prefix per side, "query_" or "passage_"):
//
//   manifest.json           {encoder, d, vocab_size, query_count, passage_count, ...}
//   <p>ids.txt              one id per line
//   <p>emb.lxsb             n x d pooled embeddings
//   <p>cls.lxsb             n x d [CLS] states
//   <p>offsets.lxsb         n + 1 token offsets into the ragged arrays
//   <p>tokens.lxsb          total token ids (f64, exact)
//   <p>hidden.lxsb          total x d per-position hidden states
//   <p>mlm.lxsb             n x |V| MLM distributions (optional)

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "lexsem/bridge.hpp"
#include "lexsem/corpus.hpp"
#include "lexsem/retrieval.hpp"
#include "lexsem/tensor_io.hpp"
#include "lexsem/toyenc.hpp"
#include "lexsem/training.hpp"

namespace lexsem {

struct FeatureSet {
  std::vector<std::string> ids;
  Matrix<double> dense;                    // n x d
  std::vector<std::vector<TokenId>> tokens;
  std::vector<HiddenStateMatrix> hidden;   // empty when lexical features were not kept
  Matrix<double> mlm;                      // n x |V|, or 0 x 0

  std::size_t size() const noexcept { return ids.size(); }
  std::size_t dim() const noexcept { return dense.cols(); }
  bool has_lexical() const noexcept { return !hidden.empty(); }
  bool has_mlm() const noexcept { return mlm.rows() > 0; }

  SideFeatures side(std::size_t i) const {
    SideFeatures f;
    f.dense.assign(dense.row(i).begin(), dense.row(i).end());
    if (!tokens.empty()) f.tokens = tokens[i];
    if (has_lexical()) f.hidden = hidden[i];
    if (has_mlm()) f.cls_probs.assign(mlm.row(i).begin(), mlm.row(i).end());
    return f;
  }
};

struct FeaturizeOptions {
  bool lexical = true;  // keep tokens and hidden states
  bool mlm = true;      // keep MLM distributions
};

inline FeatureSet featurize_toy(const std::vector<std::string>& ids, const std::vector<std::string>& texts,
                                const WordTokenizer& tokenizer, const ToyEncoder& encoder,
                                FeaturizeOptions options = {}) {
  require(ids.size() == texts.size(), ErrorKind::dimension_mismatch, "ids and texts differ in length");
  require(tokenizer.size() == encoder.vocab_size(), ErrorKind::dimension_mismatch,
          "tokenizer and encoder vocabularies differ");
  FeatureSet fs;
  fs.ids = ids;
  fs.dense = Matrix<double>(ids.size(), encoder.dim());
  if (options.mlm) fs.mlm = Matrix<double>(ids.size(), encoder.vocab_size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto tokens = tokenizer.tokenize(texts[i]);
    require(!tokens.empty(), ErrorKind::empty_input, "text " + ids[i] + " has no tokens");
    auto enc = encoder.encode(tokens);
    std::copy(enc.pooled.begin(), enc.pooled.end(), fs.dense.row(i).begin());
    if (options.mlm) {
      const auto probs = encoder.mlm_probs(enc.hidden.cls_state());
      std::copy(probs.begin(), probs.end(), fs.mlm.row(i).begin());
    }
    if (options.lexical) {
      fs.tokens.push_back(std::move(tokens));
      fs.hidden.push_back(std::move(enc.hidden));
    }
  }
  return fs;
}

// ---------------------------------------------------------------------------
// Persistence

namespace detail {

inline Tensor index_tensor(const std::vector<double>& values) { return Tensor{DType::f64, {values.size()}, values}; }

}  // namespace detail

inline void save_feature_set(const std::filesystem::path& dir, const std::string& prefix, const FeatureSet& fs) {
  std::filesystem::create_directories(dir);
  write_id_list(dir / (prefix + "ids.txt"), fs.ids);
  write_tensor(dir / (prefix + "emb.lxsb"), fs.dense);
  if (fs.has_lexical()) {
    Matrix<double> cls(fs.size(), fs.dim());
    std::vector<double> offsets{0.0};
    std::vector<double> token_values;
    std::vector<double> hidden_values;
    for (std::size_t i = 0; i < fs.size(); ++i) {
      const auto& h = fs.hidden[i];
      std::copy(h.cls_state().begin(), h.cls_state().end(), cls.row(i).begin());
      for (TokenId t : fs.tokens[i]) token_values.push_back(t);
      hidden_values.insert(hidden_values.end(), h.rows().values().begin(), h.rows().values().end());
      offsets.push_back(static_cast<double>(token_values.size()));
    }
    write_tensor(dir / (prefix + "cls.lxsb"), cls);
    write_tensor(dir / (prefix + "offsets.lxsb"), detail::index_tensor(offsets));
    write_tensor(dir / (prefix + "tokens.lxsb"), detail::index_tensor(token_values));
    write_tensor(dir / (prefix + "hidden.lxsb"),
                 Tensor{DType::f32, {token_values.size(), fs.dim()}, std::move(hidden_values)});
  }
  if (fs.has_mlm()) write_tensor(dir / (prefix + "mlm.lxsb"), fs.mlm);
}

inline FeatureSet load_feature_set(const std::filesystem::path& dir, const std::string& prefix,
                                   std::size_t vocab_size) {
  FeatureSet fs;
  fs.ids = read_id_list(dir / (prefix + "ids.txt"));
  fs.dense = to_matrix(read_tensor(dir / (prefix + "emb.lxsb")));
  require(fs.dense.rows() == fs.ids.size(), ErrorKind::dimension_mismatch,
          prefix + "emb.lxsb rows do not match " + prefix + "ids.txt");
  const std::size_t d = fs.dense.cols();
  if (std::filesystem::exists(dir / (prefix + "hidden.lxsb"))) {
    const auto cls = to_matrix(read_tensor(dir / (prefix + "cls.lxsb")));
    const auto offsets = read_tensor(dir / (prefix + "offsets.lxsb")).values;
    const auto tokens = read_tensor(dir / (prefix + "tokens.lxsb")).values;
    const auto hidden = to_matrix(read_tensor(dir / (prefix + "hidden.lxsb")));
    require(cls.rows() == fs.size() && cls.cols() == d && offsets.size() == fs.size() + 1 &&
                hidden.rows() == tokens.size() && hidden.cols() == d && offsets.back() == static_cast<double>(tokens.size()),
            ErrorKind::dimension_mismatch, prefix + "lexical feature tensors have inconsistent shapes");
    for (std::size_t i = 0; i < fs.size(); ++i) {
      const auto begin = static_cast<std::size_t>(offsets[i]);
      const auto end = static_cast<std::size_t>(offsets[i + 1]);
      require(begin <= end && end <= tokens.size(), ErrorKind::malformed, prefix + "offsets are not monotone");
      std::vector<TokenId> ids;
      Matrix<double> rows(end - begin, d);
      for (std::size_t j = begin; j < end; ++j) {
        require(tokens[j] >= 0 && tokens[j] < static_cast<double>(vocab_size), ErrorKind::out_of_range,
                prefix + "token id outside vocabulary");
        ids.push_back(static_cast<TokenId>(tokens[j]));
        std::copy(hidden.row(j).begin(), hidden.row(j).end(), rows.row(j - begin).begin());
      }
      fs.tokens.push_back(std::move(ids));
      fs.hidden.emplace_back(std::move(rows), Vector(cls.row(i).begin(), cls.row(i).end()));
    }
  }
  if (std::filesystem::exists(dir / (prefix + "mlm.lxsb"))) {
    fs.mlm = to_matrix(read_tensor(dir / (prefix + "mlm.lxsb")));
    require(fs.mlm.rows() == fs.size() && fs.mlm.cols() == vocab_size, ErrorKind::dimension_mismatch,
            prefix + "mlm.lxsb shape does not match ids and vocabulary");
  }
  return fs;
}

struct FeatureManifest {
  std::string encoder = "toy";
  std::size_t dim = 0;
  std::size_t vocab_size = 0;
  std::size_t query_count = 0;
  std::size_t passage_count = 0;
  bool passage_lexical = false;
  std::uint64_t seed = 0;
};

inline void save_feature_manifest(const std::filesystem::path& dir, const FeatureManifest& m) {
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  require(out.good(), ErrorKind::io, "cannot write " + (dir / "manifest.json").string());
  out << nlohmann::json{{"encoder", m.encoder},
                        {"d", m.dim},
                        {"vocab_size", m.vocab_size},
                        {"query_count", m.query_count},
                        {"passage_count", m.passage_count},
                        {"passage_lexical", m.passage_lexical},
                        {"seed", m.seed}}
             .dump(2)
      << '\n';
}

inline FeatureManifest load_feature_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  require(in.good(), ErrorKind::io, "cannot open " + (dir / "manifest.json").string());
  FeatureManifest m;
  try {
    const auto j = nlohmann::json::parse(in);
    m.encoder = j.value("encoder", m.encoder);
    m.dim = j.at("d").get<std::size_t>();
    m.vocab_size = j.at("vocab_size").get<std::size_t>();
    m.query_count = j.value("query_count", std::size_t{0});
    m.passage_count = j.value("passage_count", std::size_t{0});
    m.passage_lexical = j.value("passage_lexical", false);
    m.seed = j.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::malformed, "feature manifest: " + std::string(e.what()));
  }
  return m;
}

/// Checks an externally produced feature directory (same layout) against its
/// manifest: shapes, TensorFile validity, and MLM rows summing to 1 +- 1e-4.
inline void validate_feature_dir(const std::filesystem::path& dir) {
  const auto m = load_feature_manifest(dir);
  for (const char* prefix : {"query_", "passage_"}) {
    if (!std::filesystem::exists(dir / (std::string(prefix) + "ids.txt"))) continue;
    const auto fs = load_feature_set(dir, prefix, m.vocab_size);
    require(fs.dim() == m.dim, ErrorKind::dimension_mismatch, std::string(prefix) + "emb.lxsb width != manifest d");
    for (std::size_t i = 0; i < fs.mlm.rows(); ++i) {
      double total = 0.0;
      for (double p : fs.mlm.row(i)) {
        require(p >= 0.0, ErrorKind::invalid_argument, "negative MLM probability");
        total += p;
      }
      require(std::abs(total - 1.0) <= 1e-4, ErrorKind::invalid_argument,
              std::string(prefix) + "mlm row " + std::to_string(i) + " does not sum to 1");
    }
  }
}

// ---------------------------------------------------------------------------
// Training data assembly

struct TrainingSet {
  std::vector<TrainingExample> examples;
  std::size_t skipped = 0;  // queries without qrels or with too few candidates
};

/// For each query: positive from qrels, G - 1 negatives mined from ranks
/// 20..200 of a baseline dense search over the passages.
inline TrainingSet assemble_training_set(const FeatureSet& queries, const FeatureSet& passages, const Qrels& qrels,
                                         std::size_t group_size, std::uint64_t seed, std::size_t threads = 1) {
  require(group_size >= 2, ErrorKind::invalid_argument, "group size must be >= 2");
  const auto index = build_index(passages.ids, passages.dense);
  std::unordered_map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < passages.size(); ++i) row_of.emplace(passages.ids[i], i);

  std::vector<SharedFeatures> shared(passages.size());
  auto passage_features = [&](std::size_t row) {
    if (!shared[row]) shared[row] = std::make_shared<const SideFeatures>(passages.side(row));
    return shared[row];
  };

  TrainingSet out;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto& qid = queries.ids[q];
    auto rel = qrels.find(qid);
    if (rel == qrels.end() || rel->second.empty() || !row_of.count(*rel->second.begin())) {
      ++out.skipped;
      continue;
    }
    const auto& positive = *rel->second.begin();
    const auto hits = search_topk(index, queries.dense.row(q), kHardNegativeLastRank, threads);
    std::vector<std::string> ranked;
    for (const auto& h : hits) ranked.push_back(h.id);
    std::vector<std::string> negatives;
    try {
      negatives = mine_hard_negatives(ranked, positive, group_size - 1, derive_seed(seed, fnv1a(qid)));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::insufficient_candidates) throw;
      ++out.skipped;
      continue;
    }
    TrainingExample ex;
    ex.query = queries.side(q);
    ex.passages.push_back(passage_features(row_of.at(positive)));
    for (const auto& n : negatives) ex.passages.push_back(passage_features(row_of.at(n)));
    out.examples.push_back(std::move(ex));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Search

/// Passage vectors as the index should hold them under a bridge model.
inline Matrix<double> encode_passages(const FeatureSet& passages, const BridgeModel& model) {
  if (fusion_for(Side::passage, model.strategy, model.head_mode) == Fusion::dense) return passages.dense;
  Matrix<double> out(passages.size(), passages.dim());
  for (std::size_t i = 0; i < passages.size(); ++i) {
    const auto f = passages.side(i);
    const auto v = encode_side(Side::passage, f.dense, f.lexical(), model);
    std::copy(v.begin(), v.end(), out.row(i).begin());
  }
  return out;
}

inline RetrievalRun search_queries(const DenseIndex& index, const FeatureSet& queries, const BridgeModel& model,
                                   std::size_t k, std::size_t threads = 1) {
  RetrievalRun run;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto f = queries.side(q);
    const auto v = encode_query(f.dense, f.lexical(), model);
    run[queries.ids[q]] = search_topk(index, v, k, threads);
  }
  return run;
}

inline BridgeModel baseline_model() { return BridgeModel{}; }

}  // namespace lexsem
