#pragma once

// Diagnostic retrieval tasks derived from a corpus. Each generated query has
// exactly one relevant passage: the one it was cut from.
//
//   P-o-P    contiguous span of s whitespace words, seeded start offset
//   keyword  3..8 passage words ranked by tf-idf (tf = raw count,
//            idf = ln(n / df), lowercase), or imported from a file

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "lexsem/corpus.hpp"
#include "lexsem/random.hpp"

namespace lexsem {

struct TaskSet {
  std::vector<QueryRecord> queries;
  std::map<std::size_t, std::size_t> skipped_by_span;  // P-o-P: span length -> passages too short
  std::size_t skipped = 0;                             // total skipped (passage, query) slots
};

namespace detail {

inline std::vector<const Passage*> sorted_by_id(const std::vector<Passage>& corpus) {
  std::vector<const Passage*> order;
  order.reserve(corpus.size());
  for (const auto& p : corpus) order.push_back(&p);
  std::sort(order.begin(), order.end(), [](const Passage* a, const Passage* b) { return a->id < b->id; });
  return order;
}

}  // namespace detail

inline TaskSet gen_pop_queries(const std::vector<Passage>& corpus, std::vector<std::size_t> span_lengths,
                               std::uint64_t seed) {
  require(!span_lengths.empty(), ErrorKind::invalid_argument, "no span lengths requested");
  for (std::size_t s : span_lengths) {
    require(is_valid_span_length(s), ErrorKind::invalid_argument,
            "span length " + std::to_string(s) + " is not one of 16/32/64/128/256");
  }
  std::sort(span_lengths.begin(), span_lengths.end());
  span_lengths.erase(std::unique(span_lengths.begin(), span_lengths.end()), span_lengths.end());

  TaskSet out;
  for (const Passage* p : detail::sorted_by_id(corpus)) {
    const auto words = split_whitespace(p->text);
    for (std::size_t s : span_lengths) {
      if (words.size() < s) {
        ++out.skipped_by_span[s];
        ++out.skipped;
        continue;
      }
      Rng rng(derive_seed(seed, fnv1a(p->id) ^ (s * 0x9e3779b97f4a7c15ULL)));
      const std::size_t start = uniform_index(rng, words.size() - s + 1);
      QueryRecord q;
      q.id = "pop" + std::to_string(s) + "-" + p->id;
      q.text = join(words, start, start + s);
      q.task = Task::pop;
      q.span_length = s;
      q.start = start;
      q.relevant_ids = {p->id};
      out.queries.push_back(std::move(q));
    }
  }
  return out;
}

/// Lowercased word -> tf-idf, plus the first surface form seen for each word.
struct KeywordCandidates {
  std::vector<std::pair<std::string, double>> ranked;  // (lowercase word, score), best first
  std::unordered_map<std::string, std::string> surface;
};

inline std::unordered_map<std::string, std::size_t> document_frequencies(const std::vector<Passage>& corpus) {
  std::unordered_map<std::string, std::size_t> df;
  for (const auto& p : corpus) {
    std::vector<std::string> folded;
    for (const auto& w : split_whitespace(p.text)) folded.push_back(to_lower_ascii(w));
    std::sort(folded.begin(), folded.end());
    folded.erase(std::unique(folded.begin(), folded.end()), folded.end());
    for (const auto& w : folded) ++df[w];
  }
  return df;
}

inline KeywordCandidates rank_keywords(const Passage& passage,
                                       const std::unordered_map<std::string, std::size_t>& df,
                                       std::size_t corpus_size) {
  KeywordCandidates c;
  std::map<std::string, std::size_t> tf;
  for (const auto& w : split_whitespace(passage.text)) {
    auto folded = to_lower_ascii(w);
    c.surface.try_emplace(folded, w);
    ++tf[folded];
  }
  for (const auto& [word, count] : tf) {
    auto it = df.find(word);
    const double n_docs = static_cast<double>(it == df.end() ? 1 : it->second);
    const double idf = std::log(static_cast<double>(corpus_size) / n_docs);
    c.ranked.emplace_back(word, static_cast<double>(count) * idf);
  }
  std::sort(c.ranked.begin(), c.ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return c;
}

inline TaskSet gen_keyword_queries(const std::vector<Passage>& corpus, std::size_t k_min, std::size_t k_max,
                                   std::uint64_t seed) {
  require(k_min >= 1 && k_min <= k_max, ErrorKind::invalid_argument, "invalid keyword count range");
  const auto df = document_frequencies(corpus);
  TaskSet out;
  for (const Passage* p : detail::sorted_by_id(corpus)) {
    auto candidates = rank_keywords(*p, df, corpus.size());
    if (candidates.ranked.size() < k_min) {
      ++out.skipped;
      continue;
    }
    Rng rng(derive_seed(seed, fnv1a(p->id)));
    const std::size_t k = k_min + uniform_index(rng, k_max - k_min + 1);
    const std::size_t take = std::min(k, candidates.ranked.size());
    std::vector<std::string> keywords;
    for (std::size_t i = 0; i < take; ++i) keywords.push_back(candidates.surface.at(candidates.ranked[i].first));
    QueryRecord q;
    q.id = "kw-" + p->id;
    q.text = join(keywords, 0, keywords.size());
    q.task = Task::keyword;
    q.relevant_ids = {p->id};
    out.queries.push_back(std::move(q));
  }
  return out;
}

inline TaskSet gen_keyword_queries(const std::vector<Passage>& corpus, std::uint64_t seed) {
  return gen_keyword_queries(corpus, 3, 8, seed);
}

/// Externally extracted keywords: `passage_id<TAB>kw1 kw2 ...` per line.
inline TaskSet import_keyword_queries(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::io, "cannot open " + path.string());
  TaskSet out;
  std::map<std::string, std::size_t> per_passage;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (split_whitespace(line).empty()) continue;
    const auto tab = line.find('\t');
    const auto where = path.string() + ":" + std::to_string(line_no);
    require(tab != std::string::npos && tab > 0, ErrorKind::malformed,
            where + ": expected passage_id<TAB>keywords");
    const auto pid = line.substr(0, tab);
    const auto words = split_whitespace(std::string_view(line).substr(tab + 1));
    require(!words.empty(), ErrorKind::malformed, where + ": no keywords");
    const std::size_t n = ++per_passage[pid];
    QueryRecord q;
    q.id = "kw-" + pid + (n > 1 ? "-" + std::to_string(n) : "");
    q.text = join(words, 0, words.size());
    q.task = Task::keyword;
    q.relevant_ids = {pid};
    out.queries.push_back(std::move(q));
  }
  return out;
}

}  // namespace lexsem
