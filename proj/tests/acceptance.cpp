// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Tolerances are the contract values, not loosened ones.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <unistd.h>

#include "lexsem/bridge.hpp"
#include "lexsem/eval.hpp"
#include "lexsem/gradcheck.hpp"
#include "lexsem/pipeline.hpp"
#include "lexsem/retrieval.hpp"
#include "lexsem/taskgen.hpp"
#include "lexsem/toyenc.hpp"
#include "lexsem/training.hpp"

namespace fs = std::filesystem;
using namespace lexsem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string where;
  for (auto [d, m] : {std::pair<std::size_t, std::size_t>{16, 64}, {32, 256}}) {
    for (Strategy s : {Strategy::slr, Strategy::llr, Strategy::clr}) {
      GradCheckOptions o;
      o.dim = d;
      o.vocab_size = m;
      o.batch = 4;
      o.group = 4;
      o.strategy = s;
      o.step = 1e-5;
      o.seed = 0;
      const auto r = run_gradcheck(o);
      if (r.max_rel_error >= worst) {
        worst = r.max_rel_error;
        where = fmt("d=%zu m=%zu %s %s", d, m, to_string(s), r.worst.c_str());
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-4 && secs < 10.0,
          fmt("max rel error %.3e (%s) <= 1e-4, %.2fs < 10s", worst, where.c_str(), secs)};
}

Outcome normalization_suite() {
  const std::size_t d = 32, m = 512, L = 12;
  std::size_t bad = 0;
  double worst_sum = 0.0, min_entry = 1.0;
  for (Strategy s : {Strategy::slr, Strategy::llr, Strategy::clr}) {
    Rng rng(derive_seed(91, static_cast<std::uint64_t>(s)));
    for (int trial = 0; trial < 1000; ++trial) {
      auto params = init_bridge_parameters(s, d, m, rng);
      const double scale = uniform_real(rng, 0.01, 1.0);
      for (auto& v : params.projection.values()) v = uniform_real(rng, -scale, scale);
      Vector w;
      if (s == Strategy::slr) {
        std::vector<TokenId> tokens(L);
        for (auto& t : tokens) t = static_cast<TokenId>(uniform_index(rng, m));
        w = slr_weights(tokens, Vocabulary(m));
      } else if (s == Strategy::llr) {
        Matrix<double> rows(L, d);
        for (auto& v : rows.values()) v = standard_normal(rng);
        for (auto& v : *params.llr_bias) v = uniform_real(rng, -0.5, 0.5);
        w = llr_weights(HiddenStateMatrix(std::move(rows), Vector(d, 0.0)), params);
      } else {
        Vector logits(m);
        for (auto& v : logits) v = 3.0 * standard_normal(rng);
        w = clr_weights(softmax(logits));
      }
      const auto q = project_and_normalize(w, params);
      CompensatedSum total;
      bool positive = true;
      for (double v : q) {
        total.add(v);
        positive = positive && v > 0.0;
        min_entry = std::min(min_entry, v);
      }
      const double err = std::abs(total.value() - 1.0);
      worst_sum = std::max(worst_sum, err);
      if (err > 1e-6 || !positive) ++bad;
    }
  }
  return {bad == 0, fmt("3000 constructions, %zu violations, max |sum-1| %.2e, min entry %.2e", bad, worst_sum,
                        min_entry)};
}

Outcome semantic_preservation() {
  SyntheticCorpusConfig cc;
  cc.n_passages = 1000;
  cc.seed = 17;
  const auto corpus = make_synthetic_corpus(cc);
  const auto tok = WordTokenizer::from_corpus(corpus.passages);
  ToyEncoderConfig ec;
  ec.vocab_size = tok.size();
  ec.seed = 17;
  const ToyEncoder enc(ec);
  std::vector<std::string> ids, texts;
  for (const auto& p : corpus.passages) {
    ids.push_back(p.id);
    texts.push_back(p.text);
  }
  const auto passages = featurize_toy(ids, texts, tok, enc);
  const auto queries_set = gen_pop_queries(corpus.passages, {16}, 3).queries;
  std::vector<std::string> qids, qtexts;
  for (std::size_t i = 0; i < queries_set.size(); i += 5) {
    qids.push_back(queries_set[i].id);
    qtexts.push_back(queries_set[i].text);
  }
  const auto queries = featurize_toy(qids, qtexts, tok, enc);

  const auto base_index = build_index(passages.ids, passages.dense);
  const auto base = search_queries(base_index, queries, baseline_model(), 10);
  std::size_t mismatched = 0, checked = 0;
  for (Strategy s : {Strategy::slr, Strategy::llr, Strategy::clr}) {
    for (HeadMode mode : {HeadMode::query_only, HeadMode::passage_only, HeadMode::both}) {
      auto model = init_bridge(s, mode, enc.dim(), tok.size(), 5);
      for (auto& v : model.query_head.projection.values()) v = 0.0;  // q_lex = 1/d exactly
      const auto index = build_index(passages.ids, encode_passages(passages, model));
      const auto run = search_queries(index, queries, model, 10);
      for (const auto& [qid, list] : base) {
        ++checked;
        const auto& other = run.at(qid);
        bool same = other.size() == list.size();
        for (std::size_t i = 0; same && i < list.size(); ++i) same = other[i].id == list[i].id;
        if (!same) ++mismatched;
      }
    }
  }
  return {mismatched == 0, fmt("%zu top-10 lists over a 1000-passage index (3 strategies x 3 head modes), "
                               "%zu differ from the baseline",
                               checked, mismatched)};
}

Outcome oracle_equivalence() {
  const std::size_t n = 5000, d = 128;
  Rng rng(2718);
  Matrix<double> emb(n, d);
  for (auto& v : emb.values()) v = standard_normal(rng);
  // exact duplicates (and a scaled copy) force score ties
  for (std::size_t i = 0; i < 200; ++i) {
    const std::size_t src = uniform_index(rng, n), dst = uniform_index(rng, n);
    const double scale = i % 2 ? 1.0 : 4.0;
    for (std::size_t c = 0; c < d; ++c) emb(dst, c) = emb(src, c) * scale;
  }
  std::vector<std::string> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = fmt("doc%05zu", (i * 7919) % n);
  const auto t0 = std::chrono::steady_clock::now();
  const auto index = build_index(ids, emb);
  std::size_t mismatches = 0;
  const std::size_t queries = 50, k = 100;
  for (std::size_t q = 0; q < queries; ++q) {
    Vector query(d);
    if (q % 5 == 0) {
      const auto row = emb.row(uniform_index(rng, n));
      query.assign(row.begin(), row.end());
    } else {
      for (auto& v : query) v = standard_normal(rng);
    }
    // independent oracle: score everything, full sort, (score desc, id asc)
    std::vector<std::pair<double, std::string>> all;
    const double qn = std::sqrt(std::inner_product(query.begin(), query.end(), query.begin(), 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      double dotp = 0.0, sq = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double x = static_cast<double>(static_cast<float>(emb(i, c)));
        dotp += query[c] * x;
        sq += x * x;
      }
      all.emplace_back(dotp / (qn * std::sqrt(sq)), ids[i]);
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    for (std::size_t threads : {std::size_t{1}, std::size_t{4}}) {
      const auto got = search_topk(index, query, k, threads);
      bool same = got.size() == k;
      for (std::size_t i = 0; same && i < k; ++i) same = got[i].id == all[i].second && got[i].score == all[i].first;
      if (!same) ++mismatches;
    }
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 5.0,
          fmt("%zu queries x {1,4} threads, top-%zu over 5000x128 with forced ties, %zu mismatches, %.2fs < 5s",
              queries, k, mismatches, secs)};
}

Outcome metric_oracle() {
  const fs::path dir = LEXSEM_FIXTURES;
  std::ifstream in(dir / "metrics_expected.json");
  const auto expected = nlohmann::json::parse(in);
  const auto ks = expected.at("ks").get<std::vector<std::size_t>>();
  const auto run = read_trec_run(dir / "metrics_run.trec");
  const auto qrels = load_qrels(dir / "metrics_qrels.tsv");
  const auto report = evaluate_run(run, qrels, ks);
  double worst = 0.0;
  for (const auto& [name, value] : expected.at("means").items()) {
    worst = std::max(worst, std::abs(report.at(name) - value.get<double>()));
  }
  for (const auto& [qid, values] : expected.at("per_query").items()) {
    std::vector<std::string> ranked;
    for (const auto& s : run.at(qid)) ranked.push_back(s.id);
    const auto& rel = qrels.at(qid);
    for (std::size_t k : ks) {
      worst = std::max(worst, std::abs(ndcg_at_k(ranked, rel, k) - values.at(metric_name("ndcg", k)).get<double>()));
      worst = std::max(worst, std::abs(mrr_at_k(ranked, rel, k) - values.at(metric_name("mrr", k)).get<double>()));
      worst = std::max(worst,
                       std::abs(recall_at_k(ranked, rel, k) - values.at(metric_name("recall", k)).get<double>()));
    }
  }
  const double half = ndcg_at_k({"a", "b", "c"}, {"c"}, 3);
  const bool half_ok = std::abs(half - 0.5) <= 1e-9;
  const bool acc_ok = std::abs(report.at("ndcg@1") - expected.at("accuracy@1").get<double>()) <= 1e-9;
  const bool counts_ok = report.query_count == expected.at("query_count").get<std::size_t>() &&
                         report.empty_relevance == expected.at("empty_relevance").get<std::size_t>();
  return {worst <= 1e-9 && half_ok && acc_ok && counts_ok,
          fmt("20-query fixture, max |diff| %.2e <= 1e-9; rank-3 nDCG %.12f; nDCG@1 == accuracy@1: %s", worst,
              half, acc_ok ? "yes" : "no")};
}

Outcome loss_identities() {
  double worst = 0.0;
  for (std::size_t G : {2, 3, 8}) {
    for (double tau : {0.02, 0.05, 0.5, 1.0, 7.0}) {
      for (double s : {-1.0, 0.0, 0.3, 1.0}) {
        Matrix<double> sims(3, G);
        for (auto& v : sims.values()) v = s;
        worst = std::max(worst, std::abs(contrastive_loss(sims, tau) - std::log(static_cast<double>(G))));
      }
    }
  }
  // +-1 gaps at tau = 0.02: scaled logits of +-100
  Matrix<double> gap(2, 8);
  for (std::size_t j = 0; j < 8; ++j) {
    gap(0, j) = j == 0 ? 1.0 : -1.0;
    gap(1, j) = j == 0 ? -1.0 : 1.0;
  }
  const double l = contrastive_loss(gap, 0.02);
  // row 0: ln(1 + 7e^-100); row 1: 100 + ln 7 + ln(1 + e^-100 / 7)
  const double expect =
      0.5 * (std::log1p(7.0 * std::exp(-100.0)) + 100.0 + std::log(7.0) + std::log1p(std::exp(-100.0) / 7.0));
  const bool finite = std::isfinite(l) && std::abs(l - expect) <= 1e-9;
  // A single confident row must not round to 0: log1p(e^-100) ~ 3.7e-44.
  Matrix<double> one(1, 2, std::vector<double>{1.0, -1.0});
  const double tiny = contrastive_loss(one, 0.02);
  const bool tiny_ok = tiny > 0.0 && std::abs(tiny / std::exp(-100.0) - 1.0) <= 1e-12;
  return {worst <= 1e-9 && finite && tiny_ok,
          fmt("max |L - ln G| %.2e <= 1e-9; tau=0.02 with +-1 gaps gives %.12f (finite); [1,-1] gives %.6e (no underflow)",
              worst, l, tiny)};
}

Outcome taskgen_contracts() {
  const auto corpus = load_corpus(fs::path(LEXSEM_FIXTURES) / "passages100.jsonl");
  std::size_t pop = 0, kw = 0, violations = 0;
  const std::vector<std::size_t> spans(kSpanLengths.begin(), kSpanLengths.end());
  std::map<std::string, const Passage*> by_id;
  for (const auto& p : corpus) by_id[p.id] = &p;
  for (const auto& q : gen_pop_queries(corpus, spans, 4).queries) {
    ++pop;
    const auto& src = *by_id.at(q.relevant_ids.at(0));
    const auto words = split_whitespace(q.text);
    const auto src_words = split_whitespace(src.text);
    bool ok = words.size() == *q.span_length && is_valid_span_length(words.size()) && q.start &&
              src.text.find(q.text) != std::string::npos;
    for (std::size_t i = 0; ok && i < words.size(); ++i) ok = src_words.at(*q.start + i) == words[i];
    if (!ok) ++violations;
  }
  for (const auto& q : gen_keyword_queries(corpus, 4).queries) {
    ++kw;
    const auto words = split_whitespace(q.text);
    const auto src = split_whitespace(by_id.at(q.relevant_ids.at(0))->text);
    bool ok = words.size() >= 3 && words.size() <= 8;
    for (const auto& w : words) ok = ok && std::find(src.begin(), src.end(), w) != src.end();
    if (!ok) ++violations;
  }
  return {violations == 0 && pop > 0 && kw > 0,
          fmt("100-passage fixture: %zu P-o-P and %zu keyword queries, %zu violations", pop, kw, violations)};
}

// Trend protocol. Passages 0..999 supply training queries, passages
// 1000..1999 the evaluation queries; the index holds all 2000. Per-strategy
// Adam learning rates (LLR's dense importance vector makes its W gradient
// ~40x larger than SLR's or CLR's).
Outcome desk_scale_trend() {
  const auto t0 = std::chrono::steady_clock::now();
  SyntheticCorpusConfig cc;
  cc.seed = 2024;
  const auto corpus = make_synthetic_corpus(cc);
  const auto tok = WordTokenizer::from_corpus(corpus.passages);
  ToyEncoderConfig ec;
  ec.vocab_size = tok.size();
  ec.dim = 32;
  ec.seed = 2025;
  const ToyEncoder enc(ec);

  std::vector<std::string> pids, ptexts;
  for (const auto& p : corpus.passages) {
    pids.push_back(p.id);
    ptexts.push_back(p.text);
  }
  const auto passages = featurize_toy(pids, ptexts, tok, enc, {false, false});
  const std::vector<Passage> train_p(corpus.passages.begin(), corpus.passages.begin() + 1000);
  const std::vector<Passage> eval_p(corpus.passages.begin() + 1000, corpus.passages.end());
  auto featurize = [&](const std::vector<QueryRecord>& qs) {
    std::vector<std::string> ids, texts;
    for (const auto& q : qs) {
      ids.push_back(q.id);
      texts.push_back(q.text);
    }
    return featurize_toy(ids, texts, tok, enc);
  };

  auto train_q = gen_keyword_queries(train_p, 1).queries;
  auto train_pop = gen_pop_queries(train_p, {16}, 2).queries;
  train_q.resize(500);
  train_q.insert(train_q.end(), train_pop.begin(), train_pop.begin() + 500);
  const auto train_set = assemble_training_set(featurize(train_q), passages, make_qrels(train_q), 16, 3);

  const auto eval_kw = gen_keyword_queries(eval_p, 4).queries;
  const auto eval_pop = gen_pop_queries(eval_p, {16}, 5).queries;
  const auto kw_feats = featurize(eval_kw);
  const auto pop_feats = featurize(eval_pop);
  const auto index = build_index(pids, passages.dense);
  auto score = [&](const BridgeModel& m) {
    return std::pair{evaluate_run(search_queries(index, kw_feats, m, 10), make_qrels(eval_kw), {1}).at("ndcg@1"),
                     evaluate_run(search_queries(index, pop_feats, m, 10), make_qrels(eval_pop), {1}).at("ndcg@1")};
  };

  const auto [base_kw, base_pop] = score(baseline_model());
  std::string detail = fmt("baseline kw %.4f pop16 %.4f", base_kw, base_pop);
  bool ok = true;
  for (auto [s, lr] : {std::pair{Strategy::slr, 3e-3}, {Strategy::llr, 3e-5}, {Strategy::clr, 2e-2}}) {
    TrainingConfig tc;
    tc.strategy = s;
    tc.epochs = 5;
    tc.optimizer = OptimizerKind::adam;
    tc.learning_rate = lr;
    tc.seed = 9;
    const auto result = train_bridge(train_set.examples, tc, init_bridge(s, HeadMode::query_only, 32, tok.size(), 9));
    const auto [kw, pop] = score(result.model);
    const double margin = s == Strategy::clr ? 0.02 : 0.0;
    ok = ok && kw >= base_kw + margin && pop >= base_pop + margin;
    detail += fmt("; %s kw %.4f (%+.4f) pop16 %.4f (%+.4f)", to_string(s), kw, kw - base_kw, pop, pop - base_pop);
  }
  const double secs = seconds_since(t0);
  detail += fmt("; %.1fs < 300s", secs);
  return {ok && secs < 300.0, detail};
}

Outcome hard_negative_contract() {
  std::size_t violations = 0;
  Rng rng(4242);
  for (std::uint64_t trial = 0; trial < 10000; ++trial) {
    std::vector<std::string> ranked(250);
    for (std::size_t i = 0; i < ranked.size(); ++i) ranked[i] = "p" + std::to_string(i);
    shuffle(ranked, rng);
    const std::size_t pos_rank = uniform_index(rng, 250);  // positive anywhere, including inside 20..200
    const auto positive = ranked[pos_rank];
    const auto picks = mine_hard_negatives(ranked, positive, 15, trial);
    const auto again = mine_hard_negatives(ranked, positive, 15, trial);
    std::set<std::string> distinct(picks.begin(), picks.end());
    bool ok = picks.size() == 15 && distinct.size() == 15 && picks == again && !distinct.count(positive);
    for (const auto& p : picks) {
      const auto rank = static_cast<std::size_t>(std::find(ranked.begin(), ranked.end(), p) - ranked.begin()) + 1;
      ok = ok && rank >= 20 && rank <= 200;
    }
    if (!ok) ++violations;
  }
  return {violations == 0, fmt("10000 minings over 250-candidate lists, %zu violations", violations)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / fmt("lexsem-acceptance-%d", static_cast<int>(::getpid()));
  fs::remove_all(root);
  const std::string cli = LEXSEM_CLI;
  auto pipeline = [&](const fs::path& dir) {
    fs::create_directories(dir);
    {
      std::ofstream cfg(dir / "train.json");
      cfg << R"({"strategy": "llr", "head_mode": "both", "optimizer": "adam", "learning_rate": 3e-4,
                 "epochs": 2, "batch_size": 32, "group_size": 8, "seed": 7, "checkpoint_every": 5})";
    }
    const std::string d = dir.string();
    const std::vector<std::string> steps{
        "gen-corpus --out " + d + "/corpus.jsonl --passages 300 --seed 3",
        "gen-tasks --corpus " + d + "/corpus.jsonl --task pop --span-lengths 16 --out " + d + "/q.jsonl --qrels " + d +
            "/q.tsv --seed 1",
        "featurize --corpus " + d + "/corpus.jsonl --queries " + d + "/q.jsonl --out " + d +
            "/feat --seed 5 --passage-features",
        "train-bridge --features " + d + "/feat --qrels " + d + "/q.tsv --config " + d + "/train.json --out " + d +
            "/train",
        "build-index --features " + d + "/feat --bridge " + d + "/train/bridge --out " + d + "/index",
        "search --index " + d + "/index --features " + d + "/feat --bridge " + d + "/train/bridge --out " + d +
            "/run.trec --k 20",
    };
    for (const auto& s : steps) {
      const std::string cmd = cli + " " + s + " > " + d + "/log.txt 2>&1";
      if (std::system(cmd.c_str()) != 0) return false;
    }
    return true;
  };
  const bool ran = pipeline(root / "a") && pipeline(root / "b");
  std::size_t compared = 0, differing = 0;
  if (ran) {
    for (const auto& entry : fs::recursive_directory_iterator(root / "a")) {
      if (!entry.is_regular_file() || entry.path().filename() == "log.txt") continue;
      const auto rel = fs::relative(entry.path(), root / "a");
      const auto ext = rel.extension();
      const bool artifact = ext == ".trec" || ext == ".lxsb" || rel.string().find("train") == 0;
      if (!artifact) continue;
      ++compared;
      if (!fs::exists(root / "b" / rel) || slurp(entry.path()) != slurp(root / "b" / rel)) ++differing;
    }
  }
  bool has_checkpoint = fs::exists(root / "a" / "train" / "checkpoints" / "step-5" / "W.lxsb");
  fs::remove_all(root);
  return {ran && has_checkpoint && compared > 0 && differing == 0,
          fmt("CLI pipeline run twice: %s, %zu artifacts compared (run, index, parameters, checkpoints), "
              "%zu differ",
              ran ? "both completed" : "a step failed", compared, differing)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient-correctness", gradient_correctness},
      {"normalization", normalization_suite},
      {"semantic-preservation", semantic_preservation},
      {"oracle-equivalence", oracle_equivalence},
      {"metric-oracle", metric_oracle},
      {"loss-identities", loss_identities},
      {"task-generation", taskgen_contracts},
      {"desk-scale-trend", desk_scale_trend},
      {"hard-negatives", hard_negative_contract},
      {"determinism", determinism},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
