#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "lexsem/retrieval.hpp"
#include "test_util.hpp"

using namespace lexsem;
using lexsem::testing::random_matrix;
using lexsem::testing::random_vector;
using lexsem::testing::TempDir;

namespace {

std::vector<std::string> make_ids(std::size_t n, const std::string& prefix = "p") {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back(prefix + std::to_string(i));
  return ids;
}

/// Full sort over every row with an independently written comparator.
std::vector<ScoredId> full_sort_oracle(const DenseIndex& index, const Vector& q) {
  std::vector<ScoredId> all;
  double qq = 0.0;
  for (double v : q) qq += v * v;
  for (std::size_t i = 0; i < index.size(); ++i) {
    double dp = 0.0;
    double pp = 0.0;
    for (std::size_t c = 0; c < q.size(); ++c) {
      const double x = index.matrix()(i, c);
      dp += q[c] * x;
      pp += x * x;
    }
    all.push_back({index.ids()[i], dp / (std::sqrt(qq) * std::sqrt(pp))});
  }
  std::sort(all.begin(), all.end(), [](const ScoredId& a, const ScoredId& b) {
    return a.score > b.score || (a.score == b.score && a.id < b.id);
  });
  return all;
}

}  // namespace

TEST(Cosine, Examples) {
  EXPECT_DOUBLE_EQ(cosine(Vector{3, 4}, Vector{3, 4}), 1.0);
  EXPECT_EQ(cosine(Vector{1, 0}, Vector{0, 1}), 0.0);
  EXPECT_LEXSEM_ERROR(cosine(Vector{0, 0}, Vector{0, 1}), invalid_argument);
  EXPECT_LEXSEM_ERROR(cosine(Vector{1}, Vector{0, 1}), dimension_mismatch);
}

TEST(Cosine, MatchesStraightLineOracle) {
  const auto a = random_vector(64, 1);
  const auto b = random_vector(64, 2);
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < 64; ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  EXPECT_NEAR(cosine(a, b), ab / std::sqrt(aa * bb), 1e-12);
}

TEST(BuildIndex, ZeroRowNamesTheId) {
  Matrix<double> m(3, 2, 1.0);
  m(1, 0) = 0.0;
  m(1, 1) = 0.0;
  try {
    build_index({"a", "zero-doc", "c"}, m);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_argument);
    EXPECT_NE(std::string(e.what()).find("zero-doc"), std::string::npos);
  }
}

TEST(BuildIndex, EmptyIsValidButNotSearchable) {
  const auto index = build_index({}, Matrix<double>(0, 4));
  EXPECT_EQ(index.size(), 0u);
  EXPECT_LEXSEM_ERROR(search_topk(index, Vector(4, 1.0), 3), empty_input);
}

TEST(BuildIndex, DuplicateIdsAndShapeErrors) {
  EXPECT_LEXSEM_ERROR(build_index({"a", "a"}, Matrix<double>(2, 2, 1.0)), duplicate_id);
  EXPECT_LEXSEM_ERROR(build_index({"a"}, Matrix<double>(2, 2, 1.0)), dimension_mismatch);
  Matrix<double> m(1, 2, 1.0);
  m(0, 0) = std::nan("");
  EXPECT_LEXSEM_ERROR(build_index({"a"}, m), non_finite);
}

TEST(BuildIndex, NormsMatchPerRowOracle) {
  const auto m = random_matrix(5000, 128, 17);
  const auto index = build_index(make_ids(5000), m);
  for (std::size_t i = 0; i < 5000; ++i) {
    double sq = 0.0;
    for (std::size_t c = 0; c < 128; ++c) {
      const double x = static_cast<float>(m(i, c));  // stored precision
      sq += x * x;
    }
    ASSERT_NEAR(index.norms()[i], std::sqrt(sq), 1e-12 * std::sqrt(sq));
  }
}

TEST(SearchTopk, SelfIsRankOne) {
  auto m = random_matrix(50, 8, 3);
  for (auto& v : m.values()) v = static_cast<float>(v);
  const auto index = build_index(make_ids(50), m);
  const Vector q(m.row(17).begin(), m.row(17).end());
  const auto hits = search_topk(index, q, 5);
  EXPECT_EQ(hits[0].id, "p17");
  EXPECT_NEAR(hits[0].score, 1.0, 1e-12);
}

TEST(SearchTopk, KLargerThanIndexReturnsAll) {
  const auto index = build_index(make_ids(7), random_matrix(7, 4, 1));
  EXPECT_EQ(search_topk(index, random_vector(4, 2), 100).size(), 7u);
  EXPECT_LEXSEM_ERROR(search_topk(index, random_vector(4, 2), 0), invalid_argument);
  EXPECT_LEXSEM_ERROR(search_topk(index, Vector(4, 0.0), 1), invalid_argument);
  EXPECT_LEXSEM_ERROR(search_topk(index, Vector(5, 1.0), 1), dimension_mismatch);
}

TEST(SearchTopk, MatchesFullSortOracleWithTies) {
  // Duplicate rows under different ids force exact score ties.
  auto m = random_matrix(5000, 128, 5);
  for (std::size_t i = 0; i < 5000; i += 10) {
    std::copy(m.row(i + 1).begin(), m.row(i + 1).end(), m.row(i).begin());
  }
  auto ids = make_ids(5000, "doc");
  std::reverse(ids.begin(), ids.end());
  const auto index = build_index(ids, m);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Vector q = s % 2 ? random_vector(128, 100 + s) : Vector(m.row(s * 10).begin(), m.row(s * 10).end());
    const auto oracle = full_sort_oracle(index, q);
    const std::vector<ScoredId> expected(oracle.begin(), oracle.begin() + 10);
    EXPECT_EQ(search_topk(index, q, 10), expected);
    EXPECT_EQ(search_topk(index, q, 10, 4), expected);
  }
}

TEST(SearchTopk, FullListIsAPermutationOfAllCosines) {
  const auto m = random_matrix(200, 16, 8);
  const auto index = build_index(make_ids(200), m);
  const auto q = random_vector(16, 9);
  const auto hits = search_topk(index, q, 200);
  ASSERT_EQ(hits.size(), 200u);
  std::vector<double> got, want;
  for (const auto& h : hits) got.push_back(h.score);
  for (std::size_t i = 0; i < 200; ++i) {
    Vector row(16);
    for (std::size_t c = 0; c < 16; ++c) row[c] = static_cast<float>(m(i, c));
    want.push_back(cosine(q, row));
  }
  std::sort(got.begin(), got.end());
  std::sort(want.begin(), want.end());
  for (std::size_t i = 0; i < 200; ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
}

TEST(SearchTopk, QueryScaleInvariance) {
  const auto index = build_index(make_ids(500), random_matrix(500, 32, 2));
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto q = random_vector(32, s);
    const auto base = search_topk(index, q, 20);
    for (double c : {1e-3, 0.5, 7.0, 1e4}) {
      Vector scaled = q;
      for (auto& v : scaled) v *= c;
      const auto hits = search_topk(index, scaled, 20);
      ASSERT_EQ(hits.size(), base.size());
      for (std::size_t i = 0; i < hits.size(); ++i) {
        EXPECT_EQ(hits[i].id, base[i].id);
        EXPECT_NEAR(hits[i].score, base[i].score, 1e-9);
      }
    }
  }
}

TEST(SearchTopk, ThreadCountDoesNotChangeResults) {
  Matrix<double> m(300, 3, 1.0);  // all ties
  const auto index = build_index(make_ids(300), m);
  const auto one = search_topk(index, Vector{1, 1, 1}, 25, 1);
  for (std::size_t t : {2, 3, 7, 64, 1000}) EXPECT_EQ(search_topk(index, Vector{1, 1, 1}, 25, t), one);
  EXPECT_EQ(one[0].id, "p0");
  EXPECT_EQ(one[1].id, "p1");
  EXPECT_EQ(one[2].id, "p10");  // lexicographic
}

TEST(IndexPersistence, RoundTrip) {
  TempDir dir;
  const auto index = build_index(make_ids(40), random_matrix(40, 6, 4));
  save_index(dir.path(), index);
  const auto back = load_index(dir.path());
  EXPECT_EQ(back.ids(), index.ids());
  EXPECT_EQ(back.matrix(), index.matrix());
  const auto q = random_vector(6, 5);
  EXPECT_EQ(search_topk(back, q, 10), search_topk(index, q, 10));
}

TEST(TrecRun, RoundTripAndResort) {
  TempDir dir;
  RetrievalRun run{{"q1", {{"b", 0.9}, {"a", 0.5}, {"c", 0.5}}}, {"q2", {{"x", -0.25}}}};
  write_trec_run(dir / "r.trec", run, "tag");
  EXPECT_EQ(read_trec_run(dir / "r.trec"), run);
  const auto text = lexsem::testing::read_bytes(dir / "r.trec");
  EXPECT_EQ(text.substr(0, text.find('\n')), "q1 Q0 b 1 0.90000000000000002 tag");
  lexsem::testing::write_text(dir / "u.trec", "q1 Q0 a 2 0.1 t\nq1 Q0 b 1 0.7 t\n");
  const auto resorted = read_trec_run(dir / "u.trec");
  EXPECT_EQ(resorted.at("q1")[0].id, "b");
}

TEST(TrecRun, MalformedAndDuplicate) {
  TempDir dir;
  lexsem::testing::write_text(dir / "a.trec", "q1 Q0 a 1\n");
  EXPECT_LEXSEM_ERROR(read_trec_run(dir / "a.trec"), malformed);
  lexsem::testing::write_text(dir / "b.trec", "q1 Q0 a 1 high t\n");
  EXPECT_LEXSEM_ERROR(read_trec_run(dir / "b.trec"), malformed);
  lexsem::testing::write_text(dir / "c.trec", "q1 Q0 a 1 0.5 t\nq1 Q0 a 2 0.4 t\n");
  EXPECT_LEXSEM_ERROR(read_trec_run(dir / "c.trec"), duplicate_id);
}

TEST(ValidateRun, RequiresDescendingScores) {
  RetrievalRun run{{"q", {{"a", 0.1}, {"b", 0.2}}}};
  EXPECT_LEXSEM_ERROR(validate_run(run), malformed);
}
