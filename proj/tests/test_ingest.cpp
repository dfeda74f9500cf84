#include <fstream>
#include <map>

#include "doctest.h"
#include "edgediff/error.hpp"
#include "edgediff/ingest.hpp"
#include "edgediff/text_io.hpp"
#include "support.hpp"

using namespace edgediff;
using testing_support::TempDir;

namespace {

void write(const std::filesystem::path& p, const std::string& text) { io::atomic_write(p, text); }

bool throws_kind(ErrorKind kind, const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind() == kind;
  }
  return false;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("recipe corpus parsing") {
  TempDir dir("ingest_recipes");
  write(dir / "r.tsv", "a\tb\na\tc\n");
  const CorpusStats s = parse_recipe_corpus(dir / "r.tsv");
  CHECK(s.n_recipes == 2);
  CHECK(s.count_of("a") == 2);
  CHECK(s.pair_count(*s.id_of("a"), *s.id_of("b")) == 1);

  write(dir / "dup.tsv", "a\ta\tb\n");
  const CorpusStats d = parse_recipe_corpus(dir / "dup.tsv");
  CHECK(d.count_of("a") == 1);
  CHECK(d.pairs.size() == 1);

  write(dir / "blank.tsv", "a\tb\n\nb\tc\n");
  const CorpusStats b = parse_recipe_corpus(dir / "blank.tsv");
  CHECK(b.n_recipes == 2);
  CHECK(b.skipped_empty == 1);

  write(dir / "crlf.tsv", "a\tb\r\nb\tc\r\n");
  CHECK(parse_recipe_corpus(dir / "crlf.tsv").id_of("b").has_value());

  write(dir / "empty.tsv", "");
  CHECK(throws_kind(ErrorKind::Validation, [&] { parse_recipe_corpus(dir / "empty.tsv"); }));
  write(dir / "bad.tsv", "a\tb\na\t\tc\n");
  const std::string msg = message_of([&] { parse_recipe_corpus(dir / "bad.tsv"); });
  CHECK(msg.find(":2") != std::string::npos);
  CHECK(throws_kind(ErrorKind::Io, [&] { parse_recipe_corpus(dir / "missing.tsv"); }));
}

TEST_CASE("fingerprint parsing") {
  TempDir dir("ingest_fp");
  const std::string zeros(881, '0');
  std::string ones = zeros;
  ones[3] = ones[880] = '1';
  write(dir / "f.tsv", "c1\t" + zeros + "\nc2\t" + ones + "\n");
  const auto fps = parse_fingerprints(dir / "f.tsv");
  CHECK(fps.at("c1").none());
  CHECK(fps.at("c2").count() == 2);
  CHECK(fps.at("c2")[3]);
  CHECK(fps.at("c2")[880]);
  CHECK(format_fingerprint(fps.at("c2")) == ones);

  write(dir / "short.tsv", "c1\t" + zeros + "\nc2\t" + std::string(880, '0') + "\n");
  const std::string msg = message_of([&] { parse_fingerprints(dir / "short.tsv"); });
  CHECK(msg.find("c2") != std::string::npos);
  write(dir / "dup.tsv", "c1\t" + zeros + "\nc1\t" + zeros + "\n");
  CHECK(message_of([&] { parse_fingerprints(dir / "dup.tsv"); }).find("duplicate") != std::string::npos);
  write(dir / "chars.tsv", "c1\t" + std::string(880, '0') + "2\n");
  CHECK_THROWS_AS(parse_fingerprints(dir / "chars.tsv"), Error);
}

TEST_CASE("association and category parsing") {
  TempDir dir("ingest_assoc");
  write(dir / "a.tsv", "i1\tc1\ni1\tc1\ni2\tc2\n");
  const auto a = parse_associations(dir / "a.tsv");
  CHECK(a.size() == 3);
  CHECK(a[2] == Association{"i2", "c2"});
  write(dir / "bad.tsv", "i1\tc1\tx\n");
  CHECK_THROWS_AS(parse_associations(dir / "bad.tsv"), Error);
  write(dir / "c.tsv", "i1\tDairy\ni2\tFruit\n");
  CHECK(parse_categories(dir / "c.tsv").at("i2") == "Fruit");
  write(dir / "cc.tsv", "i1\tDairy\ni1\tFruit\n");
  CHECK_THROWS_AS(parse_categories(dir / "cc.tsv"), Error);
}

TEST_CASE("synthetic generator is deterministic and planted") {
  SynthConfig cfg;
  cfg.seed = 7;
  const SynthCorpus a = generate_synthetic_corpus(cfg);
  const SynthCorpus b = generate_synthetic_corpus(cfg);
  CHECK(a.recipes == b.recipes);
  CHECK(a.associations == b.associations);
  CHECK(a.fingerprints == b.fingerprints);
  CHECK(a.categories == b.categories);
  cfg.seed = 8;
  CHECK(generate_synthetic_corpus(cfg).recipes != a.recipes);

  TempDir dir("ingest_synth");
  write_synthetic_corpus(a, dir.path());
  const CorpusStats s = parse_recipe_corpus(dir / "recipes.tsv");
  const auto cats = parse_categories(dir / "categories.tsv");
  const auto fps = parse_fingerprints(dir / "fingerprints.tsv");
  CHECK(s.n_recipes == 500);
  CHECK(cats.size() == 40);
  CHECK(fps.size() == 10);

  // Brute-force NPMI statistics over every observed pair.
  double within = 0.0, across = 0.0;
  int n_within = 0, n_across = 0;
  for (const PairCount& p : s.pairs) {
    const double v = compute_npmi(p.count, s.counts[static_cast<std::size_t>(p.a)],
                                  s.counts[static_cast<std::size_t>(p.b)], s.n_recipes);
    if (cats.at(s.names[static_cast<std::size_t>(p.a)]) == cats.at(s.names[static_cast<std::size_t>(p.b)])) {
      within += v;
      ++n_within;
    } else {
      across += v;
      ++n_across;
    }
  }
  REQUIRE(n_within > 0);
  REQUIRE(n_across > 0);
  CHECK(within / n_within > across / n_across);

  const HeteroGraph g = build_hetero_graph(s, parse_associations(dir / "associations.tsv"), {}, {}, cats);
  const HubPartition part = hub_partition(g);
  CHECK(part.hubs.size() >= 4);
  CHECK(part.non_hubs.size() >= 4);
}

TEST_CASE("synthetic generator edge cases") {
  SynthConfig one;
  one.n_categories = 1;
  one.n_ingredients = 6;
  const SynthCorpus c = generate_synthetic_corpus(one);
  TempDir dir("ingest_one");
  write_synthetic_corpus(c, dir.path());
  const auto cats = parse_categories(dir / "categories.tsv");
  for (const auto& [name, cat] : cats) CHECK(cat == cats.begin()->second);

  SynthConfig bad;
  bad.n_ingredients = 7;
  bad.n_categories = 4;
  CHECK_THROWS_AS(generate_synthetic_corpus(bad), Error);
  bad = SynthConfig{};
  bad.n_categories = 10;
  bad.n_ingredients = 40;
  CHECK_THROWS_AS(generate_synthetic_corpus(bad), Error);
  bad = SynthConfig{};
  bad.n_recipes = 0;
  CHECK_THROWS_AS(generate_synthetic_corpus(bad), Error);
}

TEST_CASE("graph roundtrip") {
  TempDir dir("ingest_graph");
  const CorpusStats s = count_recipes({{"A", "B"}, {"A", "B"}, {"A", "C"}, {"B", "C"}, {"B", "D"}});
  GraphBuildOptions opts;
  opts.min_cooccur = 1;
  opts.npmi_threshold = -1.0;
  const HeteroGraph g = build_hetero_graph(s, {{"A", "c1"}}, {{"C", "d1"}}, opts, {{"A", "Dairy"}});
  write_graph(g, dir / "g");
  const HeteroGraph r = read_graph(dir / "g");
  CHECK(r == g);
  CHECK(graph_hash(r) == graph_hash(g));
  CHECK(r.node(0).category == std::optional<std::string>("Dairy"));
  for (std::size_t k = 0; k < g.edges().size(); ++k) CHECK(r.edges()[k].weight == g.edges()[k].weight);

  // Edge-free graph.
  opts.npmi_threshold = 1.0;
  opts.min_cooccur = 100;
  const HeteroGraph empty = build_hetero_graph(s, {}, {}, opts);
  write_graph(empty, dir / "e");
  CHECK(read_graph(dir / "e") == empty);

  // Missing edges file, truncated file, version mismatch.
  std::filesystem::remove(dir / "e" / "edges.tsv");
  CHECK(throws_kind(ErrorKind::Io, [&] { read_graph(dir / "e"); }));
  const std::string edges = io::read_file(dir / "g" / "edges.tsv");
  write(dir / "g" / "edges.tsv", edges.substr(0, edges.rfind('\n', edges.size() - 2) + 1));
  CHECK(message_of([&] { read_graph(dir / "g"); }).find("truncated") != std::string::npos);
  write(dir / "g" / "edges.tsv", edges);
  CHECK(read_graph(dir / "g") == g);
  std::string manifest = io::read_file(dir / "g" / "manifest.txt");
  manifest.replace(manifest.find("version=1"), 9, "version=9");
  write(dir / "g" / "manifest.txt", manifest);
  CHECK_THROWS_AS(read_graph(dir / "g"), Error);
}
