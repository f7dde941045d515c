#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "d2d/record.hpp"

namespace d2d {

// Phrases whose exact token sequence must never be read as a number
// ("three - point" is a shot type, not a 3). One phrase per line in files,
// tokens separated by spaces.
class Blocklist {
 public:
  static Blocklist defaults();
  static Blocklist from_file(const std::filesystem::path& file);
  static Blocklist none() { return Blocklist(); }

  void add(const std::string& phrase);
  // Length of the blocked phrase starting at tokens[pos], or 0.
  int match_at(std::span<const std::string> tokens, size_t pos) const;
  bool blocks_exact(std::span<const std::string> tokens) const;
  const std::vector<std::vector<std::string>>& phrases() const { return phrases_; }

 private:
  std::vector<std::vector<std::string>> phrases_;
};

// Splits a token stream into [start, end) sentence ranges. A sentence ends
// after '.', '!' or '?' unless the previous token is a known abbreviation.
// Trailing tokens without a terminator form a final sentence.
std::vector<std::pair<int, int>> split_sentences(std::span<const std::string> tokens);

// Parses a token window as a non-negative integer: either one all-digit
// token or an English number phrase up to 999 ("twenty - three", "eleven",
// "one hundred and four"). Case-insensitive on words. Returns nullopt for
// anything else or for exact blocklist phrases.
std::optional<int> text2num(std::span<const std::string> tokens, const Blocklist& blocklist);

struct EntitySpan {
  Span span;
  std::string canonical;
};

struct NumberSpan {
  Span span;
  int value;
};

// Greedy longest-match entity mentions over the database alias table,
// left to right, case-sensitive. An ambiguous surface yields one span per
// candidate entity (sorted by canonical name).
std::vector<EntitySpan> entity_spans(std::span<const std::string> sentence, int sentence_index,
                                     const GameDatabase& db);

// Maximal number mentions, left to right. A blocklist phrase starting at the
// cursor is skipped whole.
std::vector<NumberSpan> number_spans(std::span<const std::string> sentence, int sentence_index,
                                     const Blocklist& blocklist);

// One candidate relation mention: an (entity span, number span) pair within
// a sentence, with token ids, distance features and the gold label set.
struct IEExample {
  std::string game_id;
  std::vector<int> tokens;     // sentence tokens as vocab ids
  Span ent;                    // token indexes within the sentence
  Span num;
  int value = 0;
  std::string entity;          // canonical
  std::vector<int> labels;     // record type ids; {EPS} when none match
  std::vector<int> ent_dist;   // clipped signed distance to the entity span
  std::vector<int> num_dist;
};

// Signed token distance to span [s,e): 0 inside, i-s before, i-e+1 after,
// clipped to [-max_dist, max_dist].
int span_distance(int i, int s, int e, int max_dist);

// Cross product of entity and number spans per sentence, in (sentence,
// entity start, number start) order. Labels come from the database's numeric
// records; {EPS} when entity and value never co-occur in a record.
std::vector<IEExample> build_ie_examples(const GameDatabase& db, const Document& doc,
                                         const Vocab& vocab, int max_dist = 40,
                                         const Blocklist& blocklist = Blocklist::defaults());

inline std::vector<IEExample> build_ie_examples(const ExamplePair& pair, const Vocab& vocab,
                                                int max_dist = 40,
                                                const Blocklist& blocklist =
                                                    Blocklist::defaults()) {
  return build_ie_examples(pair.db, pair.summary, vocab, max_dist, blocklist);
}

// JSONL round trip for IE example files.
void save_ie_examples(const std::filesystem::path& file, std::span<const IEExample> examples);
std::vector<IEExample> load_ie_examples(const std::filesystem::path& file);

}  // namespace d2d
