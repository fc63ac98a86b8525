#pragma once

// Binary-relevance ranking metrics, BEIR/pytrec_eval conventions:
// 1-based ranks, log2(rank + 1) discount, IDCG over min(|rel|, k) ideal hits.

#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lexsem/corpus.hpp"
#include "lexsem/retrieval.hpp"

namespace lexsem {

using RelevantSet = std::set<std::string>;

namespace detail {

inline void check_metric_args(const RelevantSet& relevant, std::size_t k) {
  require(k >= 1, ErrorKind::invalid_argument, "metric cutoff k must be >= 1");
  require(!relevant.empty(), ErrorKind::empty_input, "relevant set is empty");
}

}  // namespace detail

inline double ndcg_at_k(const std::vector<std::string>& ranked, const RelevantSet& relevant, std::size_t k) {
  detail::check_metric_args(relevant, k);
  double dcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) {
    if (relevant.count(ranked[r])) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  }
  double idcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, relevant.size()); ++r) {
    idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  }
  return dcg / idcg;
}

inline double mrr_at_k(const std::vector<std::string>& ranked, const RelevantSet& relevant, std::size_t k) {
  detail::check_metric_args(relevant, k);
  for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) {
    if (relevant.count(ranked[r])) return 1.0 / static_cast<double>(r + 1);
  }
  return 0.0;
}

inline double recall_at_k(const std::vector<std::string>& ranked, const RelevantSet& relevant, std::size_t k) {
  detail::check_metric_args(relevant, k);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) hits += relevant.count(ranked[r]);
  return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

/// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      carry_ += (sum_ - t) + x;
    } else {
      carry_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + carry_; }

 private:
  double sum_ = 0.0;
  double carry_ = 0.0;
};

struct MetricReport {
  std::map<std::string, double> means;  // "ndcg@10" -> mean over scored queries
  std::size_t query_count = 0;          // queries contributing to the means
  std::size_t empty_relevance = 0;      // in qrels with no relevant passage; excluded
  std::size_t unmatched = 0;            // in the run but absent from qrels
  std::size_t missing = 0;              // in qrels but absent from the run

  double at(const std::string& name) const {
    auto it = means.find(name);
    require(it != means.end(), ErrorKind::missing_field, "metric not in report: " + name);
    return it->second;
  }
};

inline std::string metric_name(const char* metric, std::size_t k) {
  return std::string(metric) + "@" + std::to_string(k);
}

inline MetricReport evaluate_run(const RetrievalRun& run, const Qrels& qrels, const std::vector<std::size_t>& ks) {
  require(!ks.empty(), ErrorKind::invalid_argument, "no metric cutoffs requested");
  MetricReport report;
  std::map<std::string, CompensatedSum> sums;
  bool any_overlap = false;
  for (const auto& [qid, list] : run) {
    auto it = qrels.find(qid);
    if (it == qrels.end()) {
      ++report.unmatched;
      continue;
    }
    any_overlap = true;
    if (it->second.empty()) {
      ++report.empty_relevance;
      continue;
    }
    std::vector<std::string> ranked;
    ranked.reserve(list.size());
    for (const auto& s : list) ranked.push_back(s.id);
    for (std::size_t k : ks) {
      sums[metric_name("ndcg", k)].add(ndcg_at_k(ranked, it->second, k));
      sums[metric_name("mrr", k)].add(mrr_at_k(ranked, it->second, k));
      sums[metric_name("recall", k)].add(recall_at_k(ranked, it->second, k));
    }
    ++report.query_count;
  }
  for (const auto& [qid, rel] : qrels) {
    if (!run.count(qid)) ++report.missing;
  }
  require(any_overlap, ErrorKind::empty_input, "run and qrels share no query ids");
  for (const auto& [name, sum] : sums) {
    report.means[name] = report.query_count ? sum.value() / static_cast<double>(report.query_count) : 0.0;
  }
  return report;
}

inline nlohmann::json to_json(const MetricReport& report) {
  nlohmann::json metrics = nlohmann::json::object();
  for (const auto& [name, value] : report.means) metrics[name] = value;
  return {{"metrics", metrics},
          {"queries", report.query_count},
          {"empty_relevance", report.empty_relevance},
          {"unmatched", report.unmatched},
          {"missing", report.missing}};
}

/// Aligned table, one row per cutoff, values x100 like the usual IR tables.
inline std::string format_table(const MetricReport& report, const std::vector<std::size_t>& ks) {
  std::string out;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%-8s %10s %10s %10s\n", "k", "nDCG", "MRR", "Recall");
  out += buf;
  for (std::size_t k : ks) {
    std::snprintf(buf, sizeof(buf), "%-8zu %10.2f %10.2f %10.2f\n", k, 100.0 * report.at(metric_name("ndcg", k)),
                  100.0 * report.at(metric_name("mrr", k)), 100.0 * report.at(metric_name("recall", k)));
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "queries=%zu empty_relevance=%zu unmatched=%zu missing=%zu\n",
                report.query_count, report.empty_relevance, report.unmatched, report.missing);
  out += buf;
  return out;
}

}  // namespace lexsem
