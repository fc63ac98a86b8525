#pragma once

// Seeded surrogate backbone. Bag-of-tokens plus positional offsets, no
// attention; it reproduces the shapes of a dual encoder (hidden states,
// pooled embedding, [CLS] state, MLM distribution), not its quality.
//
//   h_j   = E[t_j] + pos(j)
//   e     = mean_j h_j          (also used as the [CLS] state)
//   P(t)  = softmax_t(E[t] . h_0)
//
// The table is built so that dimensions differ in what they carry, the way
// real encoders' dimensions do. Token ids are frequency ranks (see
// WordTokenizer), and with rarity r = id / (|V| - 1):
//
//   semantic dims  N(0, 1) for every token
//   lexical dims   N(0, (lexical_gain * r)^2), so frequent tokens barely touch them
//   rogue dims     optional offset shared by all rows (anisotropy, off by default)
//
// A per-dimension bridge can learn to favour the lexical dimensions.
// Positional offsets and anisotropy default to 0: both add a component every
// text shares, which only lowers the baseline.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "lexsem/core.hpp"
#include "lexsem/corpus.hpp"
#include "lexsem/random.hpp"

namespace lexsem {

struct ToyEncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t dim = 32;
  std::uint64_t seed = 0;
  double position_scale = 0.0;  // 0 disables positional offsets
  double anisotropy = 0.0;      // magnitude of the shared offset on rogue dimensions
  std::size_t rogue_dims = 4;
  double lexical_fraction = 0.5;  // share of dimensions that are lexical
  double lexical_gain = 2.0;

  void validate() const {
    require(vocab_size >= 2, ErrorKind::invalid_argument, "toy encoder vocabulary must be >= 2");
    require(dim >= 2, ErrorKind::invalid_argument, "toy encoder dimension must be >= 2");
    require(rogue_dims <= dim, ErrorKind::invalid_argument, "more rogue dimensions than dimensions");
    require(lexical_fraction >= 0.0 && lexical_fraction <= 1.0, ErrorKind::invalid_argument,
            "lexical fraction must be in [0, 1]");
  }
};

struct EncodedText {
  HiddenStateMatrix hidden;
  Vector pooled;
};

class ToyEncoder {
 public:
  explicit ToyEncoder(ToyEncoderConfig config) : config_(config) {
    config_.validate();
    const std::size_t d = config_.dim;
    Rng rng(derive_seed(config_.seed, 0x7e11));
    Vector offset(d, 0.0);
    std::vector<std::size_t> dims(d);
    for (std::size_t i = 0; i < d; ++i) dims[i] = i;
    shuffle(dims, rng);
    for (std::size_t r = 0; r < config_.rogue_dims; ++r) {
      offset[dims[r]] = config_.anisotropy * (uniform_unit(rng) < 0.5 ? -1.0 : 1.0);
    }
    const auto lexical = static_cast<std::size_t>(std::round(config_.lexical_fraction * static_cast<double>(d)));
    std::vector<bool> is_lexical(d, false);
    for (std::size_t r = 0; r < lexical; ++r) is_lexical[dims[d - 1 - r]] = true;
    table_ = Matrix<double>(config_.vocab_size, d);
    const double last = static_cast<double>(config_.vocab_size - 1);
    for (std::size_t t = 0; t < config_.vocab_size; ++t) {
      const double scale = config_.lexical_gain * static_cast<double>(t) / last;
      auto row = table_.row(t);
      for (std::size_t i = 0; i < d; ++i) row[i] = offset[i] + standard_normal(rng) * (is_lexical[i] ? scale : 1.0);
    }
  }

  const ToyEncoderConfig& config() const noexcept { return config_; }
  std::size_t dim() const noexcept { return config_.dim; }
  std::size_t vocab_size() const noexcept { return config_.vocab_size; }
  const Matrix<double>& embedding_table() const noexcept { return table_; }

  /// Sinusoidal offset for position j (0-based).
  Vector position_offset(std::size_t j) const {
    Vector out(config_.dim, 0.0);
    if (config_.position_scale == 0.0) return out;
    const double d = static_cast<double>(config_.dim);
    for (std::size_t i = 0; i < config_.dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / d);
      const double angle = static_cast<double>(j) * freq;
      out[i] = config_.position_scale * (i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
    return out;
  }

  EncodedText encode(std::span<const TokenId> tokens) const {
    require(!tokens.empty(), ErrorKind::empty_input, "cannot encode an empty token sequence");
    const std::size_t d = config_.dim;
    Matrix<double> rows(tokens.size(), d);
    Vector pooled(d, 0.0);
    for (std::size_t j = 0; j < tokens.size(); ++j) {
      require(tokens[j] < config_.vocab_size, ErrorKind::out_of_range,
              "token id " + std::to_string(tokens[j]) + " outside toy vocabulary");
      const auto e = table_.row(tokens[j]);
      const auto pos = position_offset(j);
      auto h = rows.row(j);
      for (std::size_t i = 0; i < d; ++i) {
        h[i] = e[i] + pos[i];
        pooled[i] += h[i];
      }
    }
    for (auto& v : pooled) v /= static_cast<double>(tokens.size());
    return {HiddenStateMatrix(std::move(rows), pooled), pooled};
  }

  Vector mlm_probs(std::span<const double> cls_state) const {
    require(cls_state.size() == config_.dim, ErrorKind::dimension_mismatch,
            "cls state dimension does not match the toy encoder");
    Vector logits(config_.vocab_size);
    for (std::size_t t = 0; t < logits.size(); ++t) logits[t] = dot(table_.row(t), cls_state);
    return softmax(logits);
  }

 private:
  ToyEncoderConfig config_;
  Matrix<double> table_;
};

inline EncodedText toy_encode(const TokenSequence& tokens, const ToyEncoder& encoder) {
  return encoder.encode(tokens.ids());
}

inline Vector toy_mlm_probs(std::span<const double> cls_state, const ToyEncoder& encoder) {
  return encoder.mlm_probs(cls_state);
}

// ---------------------------------------------------------------------------
// Word-level tokenizer: lowercase whitespace words, id 0 = [UNK].

class WordTokenizer {
 public:
  static constexpr TokenId kUnknown = 0;

  explicit WordTokenizer(std::vector<std::string> terms) : terms_(std::move(terms)) {
    Vocabulary check(terms_);
    for (std::size_t i = 0; i < terms_.size(); ++i) index_.emplace(terms_[i], static_cast<TokenId>(i));
  }

  /// Vocabulary = [UNK] followed by the corpus's distinct lowercase words by
  /// descending frequency (ties alphabetical), so ids are frequency ranks.
  static WordTokenizer from_corpus(const std::vector<Passage>& corpus) {
    std::map<std::string, std::size_t> counts;
    for (const auto& p : corpus) {
      for (const auto& w : split_whitespace(p.text)) ++counts[to_lower_ascii(w)];
    }
    counts.erase("[unk]");
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> words{"[UNK]"};
    for (auto& [w, c] : ranked) words.push_back(std::move(w));
    if (words.size() < 2) words.push_back("[PAD]");
    return WordTokenizer(std::move(words));
  }

  std::vector<TokenId> tokenize(std::string_view text) const {
    std::vector<TokenId> ids;
    for (const auto& w : split_whitespace(text)) {
      auto it = index_.find(to_lower_ascii(w));
      ids.push_back(it == index_.end() ? kUnknown : it->second);
    }
    return ids;
  }

  std::size_t size() const noexcept { return terms_.size(); }
  const std::vector<std::string>& terms() const noexcept { return terms_; }

 private:
  std::vector<std::string> terms_;
  std::unordered_map<std::string, TokenId> index_;
};

// ---------------------------------------------------------------------------
// Synthetic corpus with topical overlap.
//
// Every passage belongs to one topic. Each word is drawn from a Zipfian pool
// of corpus-wide common words, from its topic's Zipfian pool, or uniformly
// from the rare tail. Passages that share a topic share much of their
// vocabulary, so keyword and span queries have plausible confusers.

struct SyntheticCorpusConfig {
  std::size_t n_passages = 2000;
  std::size_t words_per_passage = 32;
  std::size_t common_words = 300;
  std::size_t topics = 40;
  std::size_t words_per_topic = 100;
  std::size_t rare_words = 1500;
  double common_fraction = 0.45;
  double topic_fraction = 0.4;  // remainder is rare
  double zipf_exponent = 1.0;
  std::uint64_t seed = 0;
};

struct SyntheticCorpus {
  std::vector<Passage> passages;
  std::vector<std::size_t> topic_of;
};

namespace detail {

class ZipfSampler {
 public:
  ZipfSampler(std::size_t n, double exponent) : cdf_(n) {
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      total += 1.0 / std::pow(static_cast<double>(r + 1), exponent);
      cdf_[r] = total;
    }
    for (auto& c : cdf_) c /= total;
  }
  std::size_t operator()(Rng& rng) const {
    const double u = uniform_unit(rng);
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
  }

 private:
  std::vector<double> cdf_;
};

}  // namespace detail

inline SyntheticCorpus make_synthetic_corpus(const SyntheticCorpusConfig& config) {
  require(config.n_passages >= 1, ErrorKind::invalid_argument, "n_passages must be >= 1");
  require(config.words_per_passage >= 1, ErrorKind::invalid_argument, "words_per_passage must be >= 1");
  require(config.common_words >= 1 && config.topics >= 1 && config.words_per_topic >= 1 && config.rare_words >= 1,
          ErrorKind::invalid_argument, "synthetic vocabulary pools must be non-empty");
  require(config.common_fraction >= 0.0 && config.topic_fraction >= 0.0 &&
              config.common_fraction + config.topic_fraction <= 1.0,
          ErrorKind::invalid_argument, "word-source fractions must be in [0, 1] and sum to <= 1");

  Rng rng(derive_seed(config.seed, 0xc0de));
  const detail::ZipfSampler common(config.common_words, config.zipf_exponent);
  const detail::ZipfSampler topical(config.words_per_topic, config.zipf_exponent);

  SyntheticCorpus out;
  out.passages.reserve(config.n_passages);
  const std::size_t id_width = std::to_string(config.n_passages - 1).size();
  for (std::size_t n = 0; n < config.n_passages; ++n) {
    const std::size_t topic = uniform_index(rng, config.topics);
    std::string text;
    for (std::size_t w = 0; w < config.words_per_passage; ++w) {
      const double u = uniform_unit(rng);
      std::string word;
      if (u < config.common_fraction) {
        word = "c" + std::to_string(common(rng));
      } else if (u < config.common_fraction + config.topic_fraction) {
        word = "t" + std::to_string(topic) + "w" + std::to_string(topical(rng));
      } else {
        word = "r" + std::to_string(uniform_index(rng, config.rare_words));
      }
      if (w) text += ' ';
      text += word;
    }
    std::string id = std::to_string(n);
    id.insert(0, id_width - id.size(), '0');
    out.passages.emplace_back("p" + id, std::move(text));
    out.topic_of.push_back(topic);
  }
  return out;
}

}  // namespace lexsem
