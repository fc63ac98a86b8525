#pragma once

// Exact cosine top-k over an in-memory dense index.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <map>
#include <string>
#include <thread>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lexsem/core.hpp"
#include "lexsem/tensor_io.hpp"

namespace lexsem {

inline double cosine(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::dimension_mismatch, "cosine of vectors with different sizes");
  const double na = norm(a);
  const double nb = norm(b);
  require(na > 0.0 && nb > 0.0, ErrorKind::invalid_argument, "cosine of a zero-norm vector");
  return dot(a, b) / (na * nb);
}

struct ScoredId {
  std::string id;
  double score = 0.0;

  bool operator==(const ScoredId&) const = default;
};

/// Descending score, ties by ascending id. Total order over distinct ids.
inline bool ranks_before(const ScoredId& a, const ScoredId& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.id < b.id;
}

/// Passage embeddings stored as f32; all scoring accumulates in f64.
class DenseIndex {
 public:
  DenseIndex() = default;

  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return matrix_.cols(); }
  bool empty() const noexcept { return ids_.empty(); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const Matrix<float>& matrix() const noexcept { return matrix_; }
  std::span<const double> norms() const noexcept { return norms_; }

  friend DenseIndex build_index(std::vector<std::string> ids, const Matrix<double>& embeddings);

 private:
  std::vector<std::string> ids_;
  Matrix<float> matrix_;
  std::vector<double> norms_;
};

inline DenseIndex build_index(std::vector<std::string> ids, const Matrix<double>& embeddings) {
  require(ids.size() == embeddings.rows(), ErrorKind::dimension_mismatch,
          "index has " + std::to_string(ids.size()) + " ids but " +
              std::to_string(embeddings.rows()) + " embedding rows");
  DenseIndex index;
  std::unordered_set<std::string> seen;
  index.matrix_ = Matrix<float>(embeddings.rows(), embeddings.cols());
  index.norms_.resize(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(seen.insert(ids[i]).second, ErrorKind::duplicate_id, "duplicate passage id in index: " + ids[i]);
    const auto src = embeddings.row(i);
    auto dst = index.matrix_.row(i);
    double sq = 0.0;
    for (std::size_t k = 0; k < src.size(); ++k) {
      dst[k] = static_cast<float>(src[k]);
      sq += static_cast<double>(dst[k]) * dst[k];
    }
    require(std::isfinite(sq), ErrorKind::non_finite, "non-finite embedding for passage " + ids[i]);
    require(sq > 0.0, ErrorKind::invalid_argument, "zero-norm embedding for passage " + ids[i]);
    index.norms_[i] = std::sqrt(sq);
  }
  index.ids_ = std::move(ids);
  return index;
}

namespace detail {

inline void scan_range(const DenseIndex& index, std::span<const double> query, double query_norm,
                       std::size_t begin, std::size_t end, std::size_t k, std::vector<ScoredId>& out) {
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(end - begin);
  const auto& m = index.matrix();
  for (std::size_t i = begin; i < end; ++i) {
    const auto row = m.row(i);
    double acc = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) acc += query[c] * static_cast<double>(row[c]);
    scored.emplace_back(acc / (query_norm * index.norms()[i]), i);
  }
  const auto& ids = index.ids();
  auto before = [&ids](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return ids[a.second] < ids[b.second];
  };
  const std::size_t keep = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(), before);
  out.clear();
  for (std::size_t i = 0; i < keep; ++i) out.push_back({ids[scored[i].second], scored[i].first});
}

}  // namespace detail

/// Exhaustive top-k. With threads > 1 the scan is partitioned and merged; the
/// total tie order makes the result independent of the partitioning.
inline std::vector<ScoredId> search_topk(const DenseIndex& index, std::span<const double> query,
                                         std::size_t k, std::size_t threads = 1) {
  require(!index.empty(), ErrorKind::empty_input, "search on an empty index");
  require(k >= 1, ErrorKind::invalid_argument, "k must be >= 1");
  require(query.size() == index.dim(), ErrorKind::dimension_mismatch,
          "query dimension " + std::to_string(query.size()) + " != index dimension " +
              std::to_string(index.dim()));
  const double qn = norm(query);
  require(std::isfinite(qn) && qn > 0.0, ErrorKind::invalid_argument, "query vector has zero norm");

  threads = std::clamp<std::size_t>(threads, 1, index.size());
  if (threads == 1) {
    std::vector<ScoredId> out;
    detail::scan_range(index, query, qn, 0, index.size(), k, out);
    return out;
  }
  std::vector<std::vector<ScoredId>> parts(threads);
  std::vector<std::thread> workers;
  const std::size_t chunk = (index.size() + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t begin = std::min(index.size(), t * chunk);
    const std::size_t end = std::min(index.size(), begin + chunk);
    workers.emplace_back([&, t, begin, end] { detail::scan_range(index, query, qn, begin, end, k, parts[t]); });
  }
  for (auto& w : workers) w.join();
  std::vector<ScoredId> merged;
  for (auto& p : parts) merged.insert(merged.end(), p.begin(), p.end());
  const std::size_t keep = std::min(k, merged.size());
  std::partial_sort(merged.begin(), merged.begin() + static_cast<std::ptrdiff_t>(keep), merged.end(), ranks_before);
  merged.resize(keep);
  return merged;
}

/// Ranked lists per query id, descending score.
using RetrievalRun = std::map<std::string, std::vector<ScoredId>>;

inline void validate_run(const RetrievalRun& run) {
  for (const auto& [qid, list] : run) {
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < list.size(); ++i) {
      require(seen.insert(list[i].id).second, ErrorKind::duplicate_id,
              "run for query " + qid + " lists " + list[i].id + " twice");
      require(i == 0 || list[i - 1].score >= list[i].score, ErrorKind::malformed,
              "run for query " + qid + " is not sorted by descending score");
    }
  }
}

// Index persistence: <dir>/index.lxsb (n x d, f32) and <dir>/index.ids (one id per line).

inline std::vector<std::string> read_id_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::io, "cannot open " + path.string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

inline void write_id_list(const std::filesystem::path& path, const std::vector<std::string>& ids) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorKind::io, "cannot open " + path.string() + " for writing");
  for (const auto& id : ids) out << id << '\n';
  require(!out.fail(), ErrorKind::io, "write failed for " + path.string());
}

inline void save_index(const std::filesystem::path& dir, const DenseIndex& index) {
  std::filesystem::create_directories(dir);
  Tensor t{DType::f32, {index.size(), index.dim()}, {}};
  t.values.assign(index.matrix().values().begin(), index.matrix().values().end());
  write_tensor(dir / "index.lxsb", t);
  write_id_list(dir / "index.ids", index.ids());
}

inline DenseIndex load_index(const std::filesystem::path& dir) {
  return build_index(read_id_list(dir / "index.ids"), to_matrix(read_tensor(dir / "index.lxsb")));
}

// TREC run lines: query_id Q0 passage_id rank score run_tag

inline std::string format_score(double score) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", score);
  return buf;
}

inline void write_trec_run(const std::filesystem::path& path, const RetrievalRun& run, const std::string& tag) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorKind::io, "cannot open " + path.string() + " for writing");
  for (const auto& [qid, list] : run) {
    for (std::size_t r = 0; r < list.size(); ++r) {
      out << qid << " Q0 " << list[r].id << ' ' << (r + 1) << ' ' << format_score(list[r].score) << ' '
          << tag << '\n';
    }
  }
  require(!out.fail(), ErrorKind::io, "write failed for " + path.string());
}

/// Lists are re-sorted by score (ties by id), like trec_eval.
inline RetrievalRun read_trec_run(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::io, "cannot open " + path.string());
  RetrievalRun run;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string qid, q0, pid, rank, score, tag;
    if (!(ss >> qid)) continue;
    require(static_cast<bool>(ss >> q0 >> pid >> rank >> score >> tag), ErrorKind::malformed,
            path.string() + ":" + std::to_string(line_no) + ": expected 6 fields");
    double s = 0.0;
    try {
      s = std::stod(score);
    } catch (const std::exception&) {
      throw Error(ErrorKind::malformed, path.string() + ":" + std::to_string(line_no) + ": bad score");
    }
    run[qid].push_back({pid, s});
  }
  for (auto& [qid, list] : run) std::stable_sort(list.begin(), list.end(), ranks_before);
  validate_run(run);
  return run;
}

}  // namespace lexsem
