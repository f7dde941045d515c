#include "d2d/spanner.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "d2d/dataset.hpp"

namespace d2d {

using json = nlohmann::ordered_json;

namespace {

std::string lower(const std::string& s) {
  std::string out = s;
  for (char& c : out) c = char(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool all_digits(const std::string& s) {
  if (s.empty() || s.size() > 9) return false;
  return std::all_of(s.begin(), s.end(),
                     [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

const std::unordered_map<std::string, int>& unit_words() {
  static const std::unordered_map<std::string, int> m = {
      {"zero", 0}, {"one", 1}, {"two", 2},   {"three", 3}, {"four", 4},
      {"five", 5}, {"six", 6}, {"seven", 7}, {"eight", 8}, {"nine", 9}};
  return m;
}

const std::unordered_map<std::string, int>& teen_words() {
  static const std::unordered_map<std::string, int> m = {
      {"ten", 10},      {"eleven", 11},  {"twelve", 12},    {"thirteen", 13},
      {"fourteen", 14}, {"fifteen", 15}, {"sixteen", 16},   {"seventeen", 17},
      {"eighteen", 18}, {"nineteen", 19}};
  return m;
}

const std::unordered_map<std::string, int>& tens_words() {
  static const std::unordered_map<std::string, int> m = {
      {"twenty", 20}, {"thirty", 30}, {"forty", 40},  {"fifty", 50},
      {"sixty", 60},  {"seventy", 70}, {"eighty", 80}, {"ninety", 90}};
  return m;
}

const std::unordered_set<std::string>& abbreviations() {
  static const std::unordered_set<std::string> s = {"Jr", "Sr", "Dr", "Mr",
                                                    "Mrs", "Ms", "St", "vs", "No"};
  return s;
}

constexpr int kMaxNumberWindow = 6;

}  // namespace

Blocklist Blocklist::defaults() {
  Blocklist b;
  for (const char* p : {"three - point", "three - pointer", "three - pointers",
                        "three-point", "three-pointer", "three-pointers"})
    b.add(p);
  return b;
}

Blocklist Blocklist::from_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ParseError(cat("cannot open blocklist ", file.string()));
  Blocklist b;
  std::string line;
  while (std::getline(in, line)) {
    if (!normalize_string(line).empty()) b.add(line);
  }
  return b;
}

void Blocklist::add(const std::string& phrase) {
  auto toks = split_ws(lower(phrase));
  if (!toks.empty()) phrases_.push_back(std::move(toks));
}

int Blocklist::match_at(std::span<const std::string> tokens, size_t pos) const {
  int best = 0;
  for (const auto& p : phrases_) {
    if (pos + p.size() > tokens.size() || int(p.size()) <= best) continue;
    bool ok = true;
    for (size_t i = 0; i < p.size(); ++i)
      if (lower(tokens[pos + i]) != p[i]) { ok = false; break; }
    if (ok) best = int(p.size());
  }
  return best;
}

bool Blocklist::blocks_exact(std::span<const std::string> tokens) const {
  return match_at(tokens, 0) == int(tokens.size());
}

std::vector<std::pair<int, int>> split_sentences(std::span<const std::string> tokens) {
  std::vector<std::pair<int, int>> bounds;
  int start = 0;
  for (int i = 0; i < int(tokens.size()); ++i) {
    const std::string& t = tokens[size_t(i)];
    bool terminator = (t == "." || t == "!" || t == "?");
    if (terminator && t == "." && i > start && abbreviations().count(tokens[size_t(i - 1)]))
      terminator = false;
    if (terminator) {
      bounds.emplace_back(start, i + 1);
      start = i + 1;
    }
  }
  if (start < int(tokens.size())) bounds.emplace_back(start, int(tokens.size()));
  return bounds;
}

std::optional<int> text2num(std::span<const std::string> tokens, const Blocklist& blocklist) {
  if (tokens.empty()) return std::nullopt;
  if (blocklist.blocks_exact(tokens)) return std::nullopt;

  if (tokens.size() == 1 && all_digits(tokens[0])) return std::stoi(tokens[0]);

  // word form; digit tokens are only valid alone
  size_t i = 0, n = tokens.size();
  std::vector<std::string> w;
  w.reserve(n);
  for (const auto& t : tokens) w.push_back(lower(t));

  int total = 0;
  bool consumed = false;
  if (n >= 2 && unit_words().count(w[0]) && w[1] == "hundred") {
    int u = unit_words().at(w[0]);
    if (u == 0) return std::nullopt;
    total = 100 * u;
    i = 2;
    consumed = true;
    if (i < n && w[i] == "and") {
      if (i + 1 >= n) return std::nullopt;  // dangling "and"
      ++i;
    }
  }
  if (i < n) {
    if (auto it = tens_words().find(w[i]); it != tens_words().end()) {
      total += it->second;
      ++i;
      bool hyphen = (i < n && w[i] == "-");
      if (hyphen) ++i;
      if (i < n) {
        auto ut = unit_words().find(w[i]);
        if (ut == unit_words().end() || ut->second == 0) return std::nullopt;
        total += ut->second;
        ++i;
      } else if (hyphen) {
        return std::nullopt;  // "twenty -" with nothing after
      }
    } else if (auto tt = teen_words().find(w[i]); tt != teen_words().end()) {
      total += tt->second;
      ++i;
    } else if (auto ut = unit_words().find(w[i]); ut != unit_words().end()) {
      if (consumed && ut->second == 0) return std::nullopt;
      total += ut->second;
      ++i;
    } else if (!consumed) {
      return std::nullopt;
    }
    consumed = true;
  }
  if (!consumed || i != n) return std::nullopt;
  return total;
}

std::vector<EntitySpan> entity_spans(std::span<const std::string> sentence, int sentence_index,
                                     const GameDatabase& db) {
  std::vector<EntitySpan> out;
  int n = int(sentence.size());
  int i = 0;
  while (i < n) {
    bool matched = false;
    for (int len = std::min(db.max_alias_len(), n - i); len >= 1; --len) {
      std::string key = sentence[size_t(i)];
      for (int k = 1; k < len; ++k) key += " " + sentence[size_t(i + k)];
      if (const auto* canonicals = db.match_surface(key)) {
        for (const auto& c : *canonicals)
          out.push_back({{sentence_index, i, i + len}, c});
        i += len;
        matched = true;
        break;
      }
    }
    if (!matched) ++i;
  }
  return out;
}

std::vector<NumberSpan> number_spans(std::span<const std::string> sentence, int sentence_index,
                                     const Blocklist& blocklist) {
  std::vector<NumberSpan> out;
  int n = int(sentence.size());
  int i = 0;
  while (i < n) {
    if (int skip = blocklist.match_at(sentence, size_t(i)); skip > 0) {
      i += skip;
      continue;
    }
    bool matched = false;
    for (int len = std::min(kMaxNumberWindow, n - i); len >= 1; --len) {
      auto v = text2num(sentence.subspan(size_t(i), size_t(len)), blocklist);
      if (v) {
        out.push_back({{sentence_index, i, i + len}, *v});
        i += len;
        matched = true;
        break;
      }
    }
    if (!matched) ++i;
  }
  return out;
}

int span_distance(int i, int s, int e, int max_dist) {
  int d = 0;
  if (i < s) d = i - s;
  else if (i >= e) d = i - e + 1;
  return std::clamp(d, -max_dist, max_dist);
}

std::vector<IEExample> build_ie_examples(const GameDatabase& db, const Document& doc,
                                         const Vocab& vocab, int max_dist,
                                         const Blocklist& blocklist) {
  std::vector<IEExample> out;
  for (int s = 0; s < int(doc.sentences.size()); ++s) {
    auto [lo, hi] = doc.sentences[size_t(s)];
    std::span<const std::string> sent(doc.tokens.data() + lo, size_t(hi - lo));
    auto ents = entity_spans(sent, s, db);
    auto nums = number_spans(sent, s, blocklist);
    if (ents.empty() || nums.empty()) continue;

    std::vector<int> ids(sent.size());
    for (size_t i = 0; i < sent.size(); ++i) ids[i] = vocab.id(sent[i]);

    for (const auto& e : ents) {
      for (const auto& m : nums) {
        IEExample ex;
        ex.game_id = db.id;
        ex.tokens = ids;
        ex.ent = e.span;
        ex.num = m.span;
        ex.value = m.value;
        ex.entity = e.canonical;
        for (RecordType t : db.numeric_types(e.canonical, m.value))
          ex.labels.push_back(int(t));
        if (ex.labels.empty()) ex.labels.push_back(kEpsLabel);
        ex.ent_dist.resize(sent.size());
        ex.num_dist.resize(sent.size());
        for (int i = 0; i < int(sent.size()); ++i) {
          ex.ent_dist[size_t(i)] = span_distance(i, e.span.start, e.span.end, max_dist);
          ex.num_dist[size_t(i)] = span_distance(i, m.span.start, m.span.end, max_dist);
        }
        out.push_back(std::move(ex));
      }
    }
  }
  return out;
}

void save_ie_examples(const std::filesystem::path& file, std::span<const IEExample> examples) {
  std::ofstream out(file);
  if (!out) throw ParseError(cat("cannot write ", file.string()));
  for (const auto& ex : examples) {
    json o;
    o["tokens"] = ex.tokens;
    o["ent"] = {ex.ent.start, ex.ent.end};
    o["num"] = {ex.num.start, ex.num.end};
    o["value"] = ex.value;
    o["labels"] = ex.labels;
    o["entity"] = ex.entity;
    o["game"] = ex.game_id;
    out << o.dump() << "\n";
  }
}

std::vector<IEExample> load_ie_examples(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ParseError(cat("cannot open ", file.string()));
  std::vector<IEExample> out;
  std::string line;
  int lineno = 0;
  constexpr int max_dist = 40;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json o;
    try {
      o = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(cat(file.string(), " line ", lineno, ": ", e.what()));
    }
    try {
      IEExample ex;
      ex.tokens = o.at("tokens").get<std::vector<int>>();
      ex.ent = {0, o.at("ent").at(0).get<int>(), o.at("ent").at(1).get<int>()};
      ex.num = {0, o.at("num").at(0).get<int>(), o.at("num").at(1).get<int>()};
      ex.value = o.at("value").get<int>();
      ex.labels = o.at("labels").get<std::vector<int>>();
      ex.entity = o.at("entity").get<std::string>();
      if (o.contains("game")) ex.game_id = o.at("game").get<std::string>();
      if (ex.labels.empty())
        throw SchemaError("empty label set");
      for (int l : ex.labels)
        if (l < 0 || l >= kNumLabels) throw SchemaError(cat("label id ", l, " out of range"));
      int n = int(ex.tokens.size());
      if (ex.ent.start < 0 || ex.ent.end > n || ex.ent.start >= ex.ent.end ||
          ex.num.start < 0 || ex.num.end > n || ex.num.start >= ex.num.end)
        throw SchemaError("span out of range");
      ex.ent_dist.resize(size_t(n));
      ex.num_dist.resize(size_t(n));
      for (int i = 0; i < n; ++i) {
        ex.ent_dist[size_t(i)] = span_distance(i, ex.ent.start, ex.ent.end, max_dist);
        ex.num_dist[size_t(i)] = span_distance(i, ex.num.start, ex.num.end, max_dist);
      }
      out.push_back(std::move(ex));
    } catch (const json::exception& e) {
      throw SchemaError(cat(file.string(), " line ", lineno, ": ", e.what()));
    } catch (const SchemaError& e) {
      throw SchemaError(cat(file.string(), " line ", lineno, ": ", e.what()));
    }
  }
  return out;
}

}  // namespace d2d
