#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "d2d/record.hpp"

namespace d2d {

// Relation generation: precision of extracted relations against the db and
// the count of unique supported relations. Precision is undefined (nullopt)
// when nothing was extracted.
struct RgResult {
  std::optional<double> precision;  // in [0,1]
  int supported = 0;                // unique extracted relations found in db
  int unique_extracted = 0;
};
RgResult rg(std::span<const RelationKey> extracted, const GameDatabase& db);

// Content selection: precision/recall of the generated relation set against
// the gold relation set (unique keys). Each side is undefined when its
// denominator is empty.
struct CsResult {
  std::optional<double> precision;
  std::optional<double> recall;
};
CsResult cs(std::span<const RelationKey> generated, std::span<const RelationKey> gold);

// Damerau-Levenshtein distance, restricted form: unit-cost insert, delete,
// substitute, and adjacent transposition, where a transposed pair cannot be
// edited again (optimal string alignment). Symbols are interned ids.
int dld(std::span<const int> a, std::span<const int> b);

// Content ordering: 100 * (1 - DLD / max(|gen|, |gold|)) over the relation
// sequences (duplicates kept, order preserved). Both empty -> 100, exactly
// one empty -> 0.
double co(std::span<const RelationKey> generated, std::span<const RelationKey> gold);

// Corpus-level BLEU-4, uniform weights, no smoothing, brevity penalty
// exp(1 - r/c) for c < r. Returns a percentage in [0,100]. Zero if any
// n-gram order has zero matches (or zero candidates) overall.
double bleu(std::span<const std::vector<std::string>> candidates,
            std::span<const std::vector<std::string>> references);

struct DocScores {
  std::string game_id;
  RgResult rg;
  CsResult cs;
  double co = 0.0;
};

// Corpus evaluation row: means over documents where defined; BLEU is
// corpus-level. undefined_* count skipped documents per column.
struct MetricsReport {
  std::optional<double> rg_precision;  // percent
  double rg_count = 0.0;               // mean supported relations per doc
  std::optional<double> cs_precision;  // percent
  std::optional<double> cs_recall;     // percent
  double co_score = 0.0;               // percent
  double bleu_score = 0.0;             // percent
  std::optional<double> perplexity;
  int n_docs = 0;
  int undefined_rg = 0, undefined_cs_p = 0, undefined_cs_r = 0;
  std::vector<DocScores> per_doc;
};

// Scores pre-extracted relation sequences; gen_relations[i] /
// gold_relations[i] belong to document i. The testable core of eval.
MetricsReport evaluate_relations(std::span<const std::vector<RelationKey>> gen_relations,
                                 std::span<const std::vector<RelationKey>> gold_relations,
                                 std::span<const std::vector<std::string>> gen_tokens,
                                 std::span<const ExamplePair> pairs);

struct Ensemble;

// Runs ensemble extraction over generated and gold documents, then scores.
MetricsReport evaluate_system(std::span<const Document> gen_docs,
                              std::span<const ExamplePair> pairs, const Ensemble& ens);

// Fixed-width report row (percent columns) for terminal output.
std::string format_report(const MetricsReport& r, const std::string& label);

}  // namespace d2d
