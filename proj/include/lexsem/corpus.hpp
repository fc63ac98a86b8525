#pragma once

// Corpus, query and qrels file formats.
//
// corpus   JSONL, one {"id": ..., "text": ...} per line
// queries  JSONL, {"id", "text", "task", "span_length"?, "start"?}
// qrels    TSV, query_id<TAB>passage_id<TAB>1

#include <algorithm>
#include <array>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "lexsem/core.hpp"

namespace lexsem {

inline bool is_ascii_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_ascii_space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !is_ascii_space(text[i])) ++i;
    if (i > start) words.emplace_back(text.substr(start, i - start));
  }
  return words;
}

inline std::string join(const std::vector<std::string>& words, std::size_t begin, std::size_t end) {
  std::string out;
  for (std::size_t i = begin; i < end; ++i) {
    if (i > begin) out += ' ';
    out += words[i];
  }
  return out;
}

inline std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

struct Passage {
  std::string id;
  std::string text;
  std::size_t word_count = 0;

  Passage() = default;
  Passage(std::string id_, std::string text_)
      : id(std::move(id_)), text(std::move(text_)), word_count(split_whitespace(text).size()) {}

  bool operator==(const Passage&) const = default;
};

enum class Task { semantic, keyword, pop };

inline const char* to_string(Task t) {
  switch (t) {
    case Task::semantic: return "semantic";
    case Task::keyword: return "keyword";
    case Task::pop: return "pop";
  }
  return "unknown";
}

inline Task parse_task(std::string_view s) {
  if (s == "semantic") return Task::semantic;
  if (s == "keyword") return Task::keyword;
  if (s == "pop") return Task::pop;
  throw Error(ErrorKind::invalid_argument, "unknown task: " + std::string(s));
}

inline constexpr std::array<std::size_t, 5> kSpanLengths{16, 32, 64, 128, 256};

inline bool is_valid_span_length(std::size_t s) {
  return std::find(kSpanLengths.begin(), kSpanLengths.end(), s) != kSpanLengths.end();
}

struct QueryRecord {
  std::string id;
  std::string text;
  Task task = Task::semantic;
  std::optional<std::size_t> span_length;
  std::optional<std::size_t> start;  // word offset of a P-o-P span in its source
  std::vector<std::string> relevant_ids;

  void validate() const {
    require(!relevant_ids.empty(), ErrorKind::invalid_argument,
            "query " + id + " has no relevant passages");
    if (task == Task::pop) {
      require(span_length.has_value() && is_valid_span_length(*span_length),
              ErrorKind::invalid_argument, "P-o-P query " + id + " has an invalid span length");
    }
  }
};

/// query id -> set of relevant passage ids
using Qrels = std::map<std::string, std::set<std::string>>;

namespace detail {

inline std::string line_context(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line);
}

inline std::string json_string_field(const nlohmann::json& obj, const char* field,
                                     const std::filesystem::path& path, std::size_t line) {
  auto it = obj.find(field);
  require(it != obj.end(), ErrorKind::missing_field,
          line_context(path, line) + ": missing field '" + field + "'");
  require(it->is_string(), ErrorKind::malformed,
          line_context(path, line) + ": field '" + field + "' is not a string");
  return it->get<std::string>();
}

template <typename Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::io, "cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (split_whitespace(line).empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorKind::malformed, line_context(path, line_no) + ": " + e.what());
    }
    require(obj.is_object(), ErrorKind::malformed,
            line_context(path, line_no) + ": expected a JSON object");
    fn(obj, line_no);
  }
}

inline std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorKind::io, "cannot open " + path.string() + " for writing");
  return out;
}

}  // namespace detail

inline std::vector<Passage> load_corpus(const std::filesystem::path& path) {
  std::vector<Passage> passages;
  std::unordered_set<std::string> seen;
  detail::for_each_json_line(path, [&](const nlohmann::json& obj, std::size_t line) {
    auto id = detail::json_string_field(obj, "id", path, line);
    auto text = detail::json_string_field(obj, "text", path, line);
    require(seen.insert(id).second, ErrorKind::duplicate_id,
            detail::line_context(path, line) + ": duplicate passage id '" + id + "'");
    passages.emplace_back(std::move(id), std::move(text));
  });
  return passages;
}

inline void write_corpus(const std::filesystem::path& path, const std::vector<Passage>& passages) {
  auto out = detail::open_for_write(path);
  for (const auto& p : passages) out << nlohmann::json{{"id", p.id}, {"text", p.text}}.dump() << '\n';
  require(!out.fail(), ErrorKind::io, "write failed for " + path.string());
}

inline void write_queries(const std::filesystem::path& path, const std::vector<QueryRecord>& queries) {
  auto out = detail::open_for_write(path);
  for (const auto& q : queries) {
    nlohmann::json obj{{"id", q.id}, {"text", q.text}, {"task", to_string(q.task)}};
    if (q.span_length) obj["span_length"] = *q.span_length;
    if (q.start) obj["start"] = *q.start;
    out << obj.dump() << '\n';
  }
  require(!out.fail(), ErrorKind::io, "write failed for " + path.string());
}

/// Reads queries; relevant_ids stay empty (they live in the qrels file).
inline std::vector<QueryRecord> load_queries(const std::filesystem::path& path) {
  std::vector<QueryRecord> queries;
  std::unordered_set<std::string> seen;
  detail::for_each_json_line(path, [&](const nlohmann::json& obj, std::size_t line) {
    QueryRecord q;
    q.id = detail::json_string_field(obj, "id", path, line);
    q.text = detail::json_string_field(obj, "text", path, line);
    q.task = parse_task(detail::json_string_field(obj, "task", path, line));
    if (auto it = obj.find("span_length"); it != obj.end()) q.span_length = it->get<std::size_t>();
    if (auto it = obj.find("start"); it != obj.end()) q.start = it->get<std::size_t>();
    require(seen.insert(q.id).second, ErrorKind::duplicate_id,
            detail::line_context(path, line) + ": duplicate query id '" + q.id + "'");
    queries.push_back(std::move(q));
  });
  return queries;
}

inline Qrels make_qrels(const std::vector<QueryRecord>& queries) {
  Qrels qrels;
  for (const auto& q : queries) qrels[q.id].insert(q.relevant_ids.begin(), q.relevant_ids.end());
  return qrels;
}

inline void write_qrels(const std::filesystem::path& path, const Qrels& qrels) {
  auto out = detail::open_for_write(path);
  for (const auto& [qid, pids] : qrels) {
    for (const auto& pid : pids) out << qid << '\t' << pid << "\t1\n";
  }
  require(!out.fail(), ErrorKind::io, "write failed for " + path.string());
}

/// Lines with a relevance of 0 are recorded as a query with no relevant entry.
inline Qrels load_qrels(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::io, "cannot open " + path.string());
  Qrels qrels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (split_whitespace(line).empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    require(fields.size() == 3, ErrorKind::malformed,
            detail::line_context(path, line_no) + ": expected 3 tab-separated fields");
    auto& rel = qrels[fields[0]];
    int grade = 0;
    try {
      grade = std::stoi(fields[2]);
    } catch (const std::exception&) {
      throw Error(ErrorKind::malformed, detail::line_context(path, line_no) + ": bad relevance");
    }
    if (grade > 0) rel.insert(fields[1]);
  }
  return qrels;
}

}  // namespace lexsem
