// lexsem: command-line driver for the bridge pipeline.
//
//   gen-corpus -> gen-tasks -> featurize -> train-bridge -> build-index -> search -> evaluate
//
// Exit status: 0 success, 1 runtime failure ("error: <kind>: <message>" on
// stderr), 2 usage error.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lexsem/bridge.hpp"
#include "lexsem/corpus.hpp"
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

std::vector<std::string> read_vocab_file(const fs::path& path) {
  auto terms = read_id_list(path);
  require(terms.size() >= 2, ErrorKind::invalid_argument, path.string() + ": vocabulary needs >= 2 terms");
  return terms;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorKind::io, "cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  require(!out.fail(), ErrorKind::io, "write failed for " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::io, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::malformed, path.string() + ": " + e.what());
  }
}

std::vector<std::size_t> parse_sizes(const std::string& csv) {
  std::vector<std::size_t> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    require(!item.empty() && item.find_first_not_of("0123456789") == std::string::npos, ErrorKind::invalid_argument,
            "expected a comma-separated list of positive integers: " + csv);
    out.push_back(std::stoul(item));
  }
  require(!out.empty(), ErrorKind::invalid_argument, "empty list: " + csv);
  return out;
}

// ---------------------------------------------------------------------------

struct GenCorpusArgs {
  fs::path out;
  SyntheticCorpusConfig config;
};

void run_gen_corpus(const GenCorpusArgs& a) {
  const auto corpus = make_synthetic_corpus(a.config);
  write_corpus(a.out, corpus.passages);
  std::printf("wrote %zu passages to %s\n", corpus.passages.size(), a.out.string().c_str());
}

struct GenTasksArgs {
  fs::path corpus;
  fs::path out;
  fs::path qrels;
  fs::path import;
  std::string task = "keyword";
  std::string span_lengths = "16";
  std::size_t min_keywords = 3;
  std::size_t max_keywords = 8;
  std::uint64_t seed = 0;
};

void run_gen_tasks(const GenTasksArgs& a) {
  const auto task = parse_task(a.task);
  require(task != Task::semantic, ErrorKind::invalid_argument, "gen-tasks builds keyword or pop queries");
  TaskSet set;
  if (!a.import.empty()) {
    require(task == Task::keyword, ErrorKind::invalid_argument, "--import applies to keyword tasks");
    set = import_keyword_queries(a.import);
  } else {
    require(!a.corpus.empty(), ErrorKind::invalid_argument, "--corpus is required unless --import is given");
    const auto corpus = load_corpus(a.corpus);
    set = task == Task::pop ? gen_pop_queries(corpus, parse_sizes(a.span_lengths), a.seed)
                            : gen_keyword_queries(corpus, a.min_keywords, a.max_keywords, a.seed);
  }
  write_queries(a.out, set.queries);
  if (!a.qrels.empty()) write_qrels(a.qrels, make_qrels(set.queries));
  std::printf("wrote %zu queries to %s (skipped %zu", set.queries.size(), a.out.string().c_str(), set.skipped);
  for (const auto& [s, n] : set.skipped_by_span) std::printf(", span %zu: %zu", s, n);
  std::printf(")\n");
}

struct FeaturizeArgs {
  std::string encoder = "toy";
  fs::path corpus;
  fs::path queries;
  fs::path out;
  fs::path vocab;
  fs::path features;  // import mode
  std::size_t dim = 32;
  std::uint64_t seed = 0;
  bool passage_features = false;
};

void run_featurize(const FeaturizeArgs& a) {
  if (a.encoder == "import") {
    require(!a.features.empty(), ErrorKind::invalid_argument, "--features is required with --encoder import");
    validate_feature_dir(a.features);
    const auto m = load_feature_manifest(a.features);
    std::printf("valid feature directory %s: encoder=%s d=%zu vocab=%zu\n", a.features.string().c_str(),
                m.encoder.c_str(), m.dim, m.vocab_size);
    return;
  }
  require(a.encoder == "toy", ErrorKind::invalid_argument, "unknown encoder: " + a.encoder);
  require(!a.corpus.empty() && !a.queries.empty() && !a.out.empty(), ErrorKind::invalid_argument,
          "--corpus, --queries and --out are required with --encoder toy");
  const auto corpus = load_corpus(a.corpus);
  const auto queries = load_queries(a.queries);
  const auto tokenizer = a.vocab.empty() ? WordTokenizer::from_corpus(corpus) : WordTokenizer(read_vocab_file(a.vocab));
  ToyEncoderConfig ec;
  ec.vocab_size = tokenizer.size();
  ec.dim = a.dim;
  ec.seed = a.seed;
  const ToyEncoder encoder(ec);

  std::vector<std::string> ids, texts;
  for (const auto& q : queries) {
    ids.push_back(q.id);
    texts.push_back(q.text);
  }
  const auto qf = featurize_toy(ids, texts, tokenizer, encoder);
  ids.clear();
  texts.clear();
  for (const auto& p : corpus) {
    ids.push_back(p.id);
    texts.push_back(p.text);
  }
  const auto pf = featurize_toy(ids, texts, tokenizer, encoder, {a.passage_features, a.passage_features});

  fs::create_directories(a.out);
  save_feature_set(a.out, "query_", qf);
  save_feature_set(a.out, "passage_", pf);
  write_id_list(a.out / "vocab.txt", tokenizer.terms());
  save_feature_manifest(a.out, {"toy", a.dim, tokenizer.size(), qf.size(), pf.size(), a.passage_features, a.seed});
  std::printf("featurized %zu queries and %zu passages (d=%zu, |V|=%zu) into %s\n", qf.size(), pf.size(), a.dim,
              tokenizer.size(), a.out.string().c_str());
}

struct TrainArgs {
  fs::path features;
  fs::path qrels;
  fs::path config;
  fs::path out;
  std::string strategy;
  std::string head_mode;
  std::string optimizer;
  std::string llr_aggregation;
  double learning_rate = 0.0;
  std::size_t epochs = 0;
  bool epochs_set = false;
  std::size_t batch_size = 0;
  std::size_t group_size = 0;
  double temperature = 0.0;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool separate_passage_head = false;
  std::size_t threads = 1;
};

TrainingConfig resolve_config(const TrainArgs& a) {
  TrainingConfig c = a.config.empty() ? TrainingConfig{} : training_config_from_json(read_json(a.config));
  if (!a.strategy.empty()) c.strategy = parse_strategy(a.strategy);
  if (!a.head_mode.empty()) c.head_mode = parse_head_mode(a.head_mode);
  if (!a.optimizer.empty()) c.optimizer = parse_optimizer(a.optimizer);
  if (!a.llr_aggregation.empty()) c.llr_aggregation = parse_llr_aggregation(a.llr_aggregation);
  if (a.learning_rate > 0.0) c.learning_rate = a.learning_rate;
  if (a.epochs_set) c.epochs = a.epochs;
  if (a.batch_size > 0) c.batch_size = a.batch_size;
  if (a.group_size > 0) c.group_size = a.group_size;
  if (a.temperature > 0.0) c.temperature = a.temperature;
  if (a.seed_set) c.seed = a.seed;
  if (a.separate_passage_head) c.separate_passage_head = true;
  c.validate();
  return c;
}

void run_train(const TrainArgs& a) {
  const auto config = resolve_config(a);
  const auto manifest = load_feature_manifest(a.features);
  const auto queries = load_feature_set(a.features, "query_", manifest.vocab_size);
  const auto passages = load_feature_set(a.features, "passage_", manifest.vocab_size);
  if (fusion_for(Side::passage, config.strategy, config.head_mode) != Fusion::dense) {
    require(passages.has_lexical(), ErrorKind::missing_field,
            "head mode " + std::string(to_string(config.head_mode)) +
                " modulates passages; featurize with --passage-features");
  }
  const auto qrels = load_qrels(a.qrels);
  const auto set = assemble_training_set(queries, passages, qrels, config.group_size, config.seed, a.threads);

  fs::create_directories(a.out);
  write_json(a.out / "config.json", to_json(config));
  auto initial = init_bridge(config.strategy, config.head_mode, manifest.dim, manifest.vocab_size, config.seed,
                             config.separate_passage_head, config.llr_aggregation);
  const auto checkpoint = [&](std::size_t step, const BridgeModel& m) {
    save_bridge(a.out / "checkpoints" / ("step-" + std::to_string(step)), m);
  };
  const auto start = std::chrono::steady_clock::now();
  const auto result = train_bridge(set.examples, config, std::move(initial), checkpoint);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  save_bridge(a.out / "bridge", result.model);
  write_loss_csv(a.out / "loss.csv", result.log);
  std::printf("trained %s/%s on %zu examples (%zu skipped), %zu steps in %.1fs\n", to_string(config.strategy),
              to_string(config.head_mode), set.examples.size(), set.skipped, result.log.size(), seconds);
  for (std::size_t e = 0; e < result.epoch_mean_loss.size(); ++e) {
    std::printf("epoch %zu mean loss %.6f\n", e + 1, result.epoch_mean_loss[e]);
  }
}

struct IndexArgs {
  fs::path features;
  fs::path bridge;
  fs::path out;
};

void run_build_index(const IndexArgs& a) {
  const auto manifest = load_feature_manifest(a.features);
  const auto passages = load_feature_set(a.features, "passage_", manifest.vocab_size);
  const auto model = a.bridge.empty() ? baseline_model() : load_bridge(a.bridge);
  const bool modulated = fusion_for(Side::passage, model.strategy, model.head_mode) != Fusion::dense;
  if (modulated) {
    require(passages.has_lexical(), ErrorKind::missing_field,
            "bridge modulates passages; featurize with --passage-features");
  }
  const auto index = build_index(passages.ids, encode_passages(passages, model));
  save_index(a.out, index);
  write_json(a.out / "index.json", {{"passages", index.size()},
                                    {"d", index.dim()},
                                    {"passage_encoding", modulated ? "modulated" : "dense"},
                                    {"strategy", to_string(model.strategy)},
                                    {"head_mode", to_string(model.head_mode)}});
  std::printf("indexed %zu passages (%s) into %s\n", index.size(), modulated ? "modulated" : "dense",
              a.out.string().c_str());
}

struct SearchArgs {
  fs::path index;
  fs::path features;
  fs::path bridge;
  fs::path out;
  std::string tag = "lexsem";
  std::size_t k = 100;
  std::size_t threads = 1;
};

void run_search(const SearchArgs& a) {
  const auto manifest = load_feature_manifest(a.features);
  const auto queries = load_feature_set(a.features, "query_", manifest.vocab_size);
  const auto model = a.bridge.empty() ? baseline_model() : load_bridge(a.bridge);
  const bool wants_modulated = fusion_for(Side::passage, model.strategy, model.head_mode) != Fusion::dense;
  if (fs::exists(a.index / "index.json")) {
    const auto meta = read_json(a.index / "index.json");
    const bool is_modulated = meta.value("passage_encoding", std::string("dense")) == "modulated";
    require(is_modulated == wants_modulated, ErrorKind::invalid_argument,
            std::string("index passages are ") + (is_modulated ? "modulated" : "dense") + " but the bridge expects " +
                (wants_modulated ? "modulated" : "dense") + " passages; rebuild the index with the same --bridge");
  }
  const auto index = load_index(a.index);
  const auto run = search_queries(index, queries, model, a.k, a.threads);
  write_trec_run(a.out, run, a.tag);
  std::printf("searched %zu queries against %zu passages, wrote %s\n", run.size(), index.size(),
              a.out.string().c_str());
}

struct EvaluateArgs {
  fs::path run;
  fs::path qrels;
  fs::path out;
  std::string ks = "1,10";
};

void run_evaluate(const EvaluateArgs& a) {
  const auto ks = parse_sizes(a.ks);
  const auto report = evaluate_run(read_trec_run(a.run), load_qrels(a.qrels), ks);
  if (!a.out.empty()) write_json(a.out, to_json(report));
  std::fputs(format_table(report, ks).c_str(), stdout);
}

struct GradCheckArgs {
  std::uint64_t seed = 0;
  std::string dims = "16x64,32x256";
  std::string strategies = "slr,llr,clr";
  std::string head_mode = "query_only";
  bool separate_passage_head = false;
  double tolerance = 1e-4;
};

std::vector<std::pair<std::size_t, std::size_t>> parse_dims(const std::string& csv) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto x = item.find('x');
    require(x != std::string::npos, ErrorKind::invalid_argument, "expected DxM, e.g. 16x64: " + item);
    const auto d = parse_sizes(item.substr(0, x));
    const auto m = parse_sizes(item.substr(x + 1));
    out.emplace_back(d.front(), m.front());
  }
  require(!out.empty(), ErrorKind::invalid_argument, "no dimensions given");
  return out;
}

int run_grad_check(const GradCheckArgs& a) {
  bool ok = true;
  const auto start = std::chrono::steady_clock::now();
  std::stringstream ss(a.strategies);
  std::vector<Strategy> strategies;
  for (std::string s; std::getline(ss, s, ',');) strategies.push_back(parse_strategy(s));
  for (const auto& [d, m] : parse_dims(a.dims)) {
    for (Strategy s : strategies) {
      GradCheckOptions o;
      o.dim = d;
      o.vocab_size = m;
      o.strategy = s;
      o.head_mode = parse_head_mode(a.head_mode);
      o.separate_passage_head = a.separate_passage_head;
      o.seed = a.seed;
      const auto r = run_gradcheck(o);
      const bool pass = r.max_rel_error <= a.tolerance;
      ok = ok && pass;
      std::printf("%s d=%zu m=%zu %s coords=%zu max_rel_error=%.3e worst=%s analytic=%.6e numeric=%.6e\n",
                  pass ? "PASS" : "FAIL", d, m, to_string(s), r.coordinates, r.max_rel_error, r.worst.c_str(),
                  r.worst_analytic, r.worst_numeric);
    }
  }
  std::printf("elapsed %.2fs\n", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lexsem: lexical-semantic bridge for dense retrieval"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for all subcommands");

  GenCorpusArgs gc;
  auto* gen_corpus = app.add_subcommand("gen-corpus", "Write a seeded synthetic corpus (JSONL)");
  gen_corpus->add_option("--out", gc.out, "Output corpus.jsonl")->required();
  gen_corpus->add_option("--passages", gc.config.n_passages, "Number of passages")->capture_default_str();
  gen_corpus->add_option("--words-per-passage", gc.config.words_per_passage)->capture_default_str();
  gen_corpus->add_option("--topics", gc.config.topics)->capture_default_str();
  gen_corpus->add_option("--seed", gc.config.seed)->capture_default_str();

  GenTasksArgs gt;
  auto* gen_tasks = app.add_subcommand("gen-tasks", "Generate keyword or P-o-P queries from a corpus");
  gen_tasks->add_option("--corpus", gt.corpus, "Corpus JSONL");
  gen_tasks->add_option("--task", gt.task, "keyword | pop")->capture_default_str();
  gen_tasks->add_option("--out", gt.out, "Output queries.jsonl")->required();
  gen_tasks->add_option("--qrels", gt.qrels, "Also write qrels (TSV)");
  gen_tasks->add_option("--span-lengths", gt.span_lengths, "P-o-P span lengths, e.g. 16,32,64")->capture_default_str();
  gen_tasks->add_option("--min-keywords", gt.min_keywords)->capture_default_str();
  gen_tasks->add_option("--max-keywords", gt.max_keywords)->capture_default_str();
  gen_tasks->add_option("--import", gt.import, "Pre-extracted keywords: passage_id<TAB>kw1 kw2 ...");
  gen_tasks->add_option("--seed", gt.seed)->capture_default_str();

  FeaturizeArgs fa;
  auto* featurize = app.add_subcommand("featurize", "Encode queries and passages, or validate imported features");
  featurize->add_option("--encoder", fa.encoder, "toy | import")->capture_default_str();
  featurize->add_option("--corpus", fa.corpus, "Corpus JSONL (toy)");
  featurize->add_option("--queries", fa.queries, "Queries JSONL (toy)");
  featurize->add_option("--out", fa.out, "Output feature directory (toy)");
  featurize->add_option("--vocab", fa.vocab, "Vocabulary file, one term per line (default: built from the corpus)");
  featurize->add_option("--features", fa.features, "Feature directory to validate (import)");
  featurize->add_option("--dim", fa.dim)->capture_default_str();
  featurize->add_option("--seed", fa.seed)->capture_default_str();
  featurize->add_flag("--passage-features", fa.passage_features,
                      "Keep passage tokens, hidden states and MLM outputs (needed for passage modulation)");

  TrainArgs ta;
  auto* train = app.add_subcommand("train-bridge", "Train bridge parameters with the contrastive loss");
  train->add_option("--features", ta.features, "Feature directory")->required();
  train->add_option("--qrels", ta.qrels, "Training qrels (TSV)")->required();
  train->add_option("--out", ta.out, "Output directory")->required();
  train->add_option("--config", ta.config, "Training config JSON; flags override it");
  train->add_option("--strategy", ta.strategy, "baseline | slr | llr | clr");
  train->add_option("--head-mode", ta.head_mode, "query_only | passage_only | both | lexical_only");
  train->add_option("--optimizer", ta.optimizer, "sgd | adam");
  train->add_option("--llr-aggregation", ta.llr_aggregation, "max | sum");
  train->add_option("--lr", ta.learning_rate, "Learning rate");
  train->add_option("--epochs", ta.epochs)->each([&](const std::string&) { ta.epochs_set = true; });
  train->add_option("--batch-size", ta.batch_size);
  train->add_option("--group-size", ta.group_size, "1 positive + (G - 1) mined negatives");
  train->add_option("--temperature", ta.temperature);
  train->add_option("--seed", ta.seed)->each([&](const std::string&) { ta.seed_set = true; });
  train->add_flag("--separate-passage-head", ta.separate_passage_head, "Unshared passage parameters (head mode both)");
  train->add_option("--threads", ta.threads, "Threads for hard-negative search")->capture_default_str();

  IndexArgs ia;
  auto* index = app.add_subcommand("build-index", "Build a dense index over passage features");
  index->add_option("--features", ia.features, "Feature directory")->required();
  index->add_option("--bridge", ia.bridge, "Bridge directory (modulates passages when its head mode does)");
  index->add_option("--out", ia.out, "Index directory")->required();

  SearchArgs sa;
  auto* search = app.add_subcommand("search", "Exact top-k cosine search; writes a TREC run");
  search->add_option("--index", sa.index, "Index directory")->required();
  search->add_option("--features", sa.features, "Feature directory with query features")->required();
  search->add_option("--bridge", sa.bridge, "Bridge directory (omit for the dense baseline)");
  search->add_option("--out", sa.out, "Output run file")->required();
  search->add_option("--k", sa.k)->capture_default_str();
  search->add_option("--tag", sa.tag)->capture_default_str();
  search->add_option("--threads", sa.threads)->capture_default_str();

  EvaluateArgs ea;
  auto* evaluate = app.add_subcommand("evaluate", "nDCG / MRR / Recall at k for a TREC run");
  evaluate->add_option("--run", ea.run, "TREC run file")->required();
  evaluate->add_option("--qrels", ea.qrels, "Qrels (TSV)")->required();
  evaluate->add_option("--k", ea.ks, "Cutoffs, e.g. 1,10,100")->capture_default_str();
  evaluate->add_option("--out", ea.out, "Write metrics JSON here");

  GradCheckArgs ga;
  auto* grad_check = app.add_subcommand("grad-check", "Analytic vs finite-difference gradients");
  grad_check->add_option("--seed", ga.seed)->capture_default_str();
  grad_check->add_option("--dims", ga.dims, "Comma-separated DxM sizes")->capture_default_str();
  grad_check->add_option("--strategies", ga.strategies)->capture_default_str();
  grad_check->add_option("--head-mode", ga.head_mode)->capture_default_str();
  grad_check->add_flag("--separate-passage-head", ga.separate_passage_head);
  grad_check->add_option("--tolerance", ga.tolerance)->capture_default_str();

  if (argc > 1 && argv[1][0] != '-') {
    const auto subs = app.get_subcommands([](CLI::App*) { return true; });
    const bool known = std::any_of(subs.begin(), subs.end(), [&](CLI::App* s) { return s->get_name() == argv[1]; });
    if (!known) {
      std::cerr << "error: usage: unknown subcommand: " << argv[1] << "\n\n" << app.help();
      return 2;
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*gen_corpus) run_gen_corpus(gc);
    if (*gen_tasks) run_gen_tasks(gt);
    if (*featurize) run_featurize(fa);
    if (*train) run_train(ta);
    if (*index) run_build_index(ia);
    if (*search) run_search(sa);
    if (*evaluate) run_evaluate(ea);
    if (*grad_check) return run_grad_check(ga);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", to_string(e.kind()), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 1;
  }
  return 0;
}
