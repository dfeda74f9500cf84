#pragma once

#include <bitset>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "edgediff/corpus.hpp"
#include "edgediff/graph.hpp"

namespace edgediff {

inline constexpr int kFingerprintBits = 881;
using Fingerprint = std::bitset<kFingerprintBits>;

/// The nine food categories used for clustering labels; synthetic corpora
/// draw their category names from the front of this list.
inline constexpr const char* kFoodCategories[] = {
    "Bakery/Dessert/Snack", "Beverage Alcoholic", "Cereal/Crop/Bean", "Dairy",  "Fruit",
    "Meat/Animal Product",  "Plant/Vegetable",    "Seafood",          "Others",
};

/// One recipe per line, ingredient names separated by tabs. Blank lines are
/// skipped and tallied; empty fields are a format error.
CorpusStats parse_recipe_corpus(const std::filesystem::path& path);
std::vector<std::vector<std::string>> parse_recipe_lists(const std::filesystem::path& path);

/// Rows of `name TAB bits` where bits is an 881-character 0/1 string.
std::map<std::string, Fingerprint> parse_fingerprints(const std::filesystem::path& path);
std::string format_fingerprint(const Fingerprint& fp);

/// Rows of `ingredient TAB compound`. Duplicates are kept; graph
/// construction de-duplicates and counts them.
std::vector<Association> parse_associations(const std::filesystem::path& path);

/// Rows of `ingredient TAB category`.
std::map<std::string, std::string> parse_categories(const std::filesystem::path& path);

struct SynthConfig {
  int n_ingredients = 40;
  int n_compounds = 10;
  int n_recipes = 500;
  int n_categories = 4;
  std::uint64_t seed = 0;
};

/// In-memory contents of the four synthetic files.
struct SynthCorpus {
  std::string recipes;
  std::string associations;
  std::string fingerprints;
  std::string categories;
};

/// Planted-category corpus: recipes favour ingredients of one category,
/// hubs link to their category's compounds, and each category's compounds
/// share a block of fingerprint bits. Pure function of the config.
SynthCorpus generate_synthetic_corpus(const SynthConfig& config);
void write_synthetic_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir);

inline constexpr const char* kGraphFormatVersion = "1";

/// nodes.tsv (id, name, kind, category), edges.tsv (a, b, weight) and
/// manifest.txt with the format version and row counts.
void write_graph(const HeteroGraph& g, const std::filesystem::path& dir);
HeteroGraph read_graph(const std::filesystem::path& dir);
std::uint64_t graph_hash(const HeteroGraph& g);

}  // namespace edgediff
