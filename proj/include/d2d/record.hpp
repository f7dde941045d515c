#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "d2d/util.hpp"

namespace d2d {

// Closed set of record types: 24 player types then 15 team types, ids dense
// in [0,38]. EPS (id 39) is the classifier-only null label and never appears
// in a database record.
enum class RecordType : int {
  POSN = 0, MIN, PTS, FGM, FGA, FG_PCT, FG3M, FG3A, FG3_PCT, FTM, FTA, FT_PCT,
  OREB, DREB, REB, AST, TOV, STL, BLK, PF, FULL_NAME, NAME1, NAME2, CITY,
  TEAM_PTS_QTR1, TEAM_PTS_QTR2, TEAM_PTS_QTR3, TEAM_PTS_QTR4, TEAM_PTS,
  TEAM_FG_PCT, TEAM_FG3_PCT, TEAM_FT_PCT, TEAM_REB, TEAM_AST, TEAM_TOV,
  TEAM_WINS, TEAM_LOSSES, TEAM_CITY, TEAM_NAME,
  EPS = 39,
};

constexpr int kNumRecordTypes = 39;        // database types, excludes EPS
constexpr int kNumLabels = 40;             // classifier label space, includes EPS
constexpr int kEpsLabel = 39;

const std::string& record_type_name(RecordType t);
RecordType record_type_from_name(const std::string& name);  // throws SchemaError
bool is_team_type(RecordType t);
bool is_string_type(RecordType t);         // value is text, not a number
bool is_percent_type(RecordType t);

// A record value is either a normalized integer or a normalized string.
using Value = std::variant<int, std::string>;

inline bool is_numeric(const Value& v) { return std::holds_alternative<int>(v); }
inline int num(const Value& v) { return std::get<int>(v); }
inline const std::string& str(const Value& v) { return std::get<std::string>(v); }

struct Record {
  RecordType type;
  std::string entity;  // canonical entity name
  Value value;
  bool is_home;

  bool operator==(const Record& o) const {
    return type == o.type && entity == o.entity && value == o.value && is_home == o.is_home;
  }
};

// (entity, value, type) triple used by the extractive metrics. Values are
// integers because only numeric records participate in extraction.
struct RelationKey {
  std::string entity;
  int value;
  RecordType type;

  bool operator==(const RelationKey& o) const {
    return value == o.value && type == o.type && entity == o.entity;
  }
  bool operator<(const RelationKey& o) const {
    if (entity != o.entity) return entity < o.entity;
    if (value != o.value) return value < o.value;
    return int(type) < int(o.type);
  }
};

// Token span inside one sentence. end is exclusive.
struct Span {
  int sentence = 0;
  int start = 0;
  int end = 0;

  bool operator==(const Span& o) const {
    return sentence == o.sentence && start == o.start && end == o.end;
  }
};

struct ExtractedRecord {
  std::string entity;
  int value;
  RecordType type;
  int sentence;
  int ent_start;
  int num_start;
};

struct Document {
  std::vector<std::string> tokens;
  // [start, end) token ranges, one per sentence, covering all tokens
  std::vector<std::pair<int, int>> sentences;

  bool operator==(const Document& o) const {
    return tokens == o.tokens && sentences == o.sentences;
  }
};

// A surface form (token sequence) that refers to one canonical entity.
struct Alias {
  std::vector<std::string> surface;
  std::string canonical;
};

struct PlayerRef {
  std::string canonical;  // full name
  bool is_home;
};

// Flat bag of records for one game plus the derived lookup structure the
// spanner and templater need: alias table and (entity, value) -> types index.
class GameDatabase {
 public:
  std::string id;
  std::vector<Record> records;
  std::string home_city, home_name, vis_city, vis_name;
  std::vector<PlayerRef> players;  // file order

  std::string home_canonical() const { return home_city + " " + home_name; }
  std::string vis_canonical() const { return vis_city + " " + vis_name; }

  // Builds alias table and indexes from the fields above. Must be called
  // after records/players are filled in (the loader and synth do this).
  void finalize();

  const std::vector<Alias>& aliases() const { return aliases_; }
  int max_alias_len() const { return max_alias_len_; }

  // Canonical entities whose alias matches this exact token sequence,
  // sorted. Empty if none.
  const std::vector<std::string>* match_surface(const std::string& joined) const;

  // Types of numeric records with this entity and value, sorted by id.
  std::vector<RecordType> numeric_types(const std::string& entity, int value) const;

  std::optional<int> numeric_stat(const std::string& entity, RecordType t) const;
  std::optional<std::string> string_stat(const std::string& entity, RecordType t) const;

  // Unique (entity, value, type) keys over numeric records.
  std::set<RelationKey> relation_keys() const;

  bool operator==(const GameDatabase& o) const {
    return id == o.id && records == o.records && home_city == o.home_city &&
           home_name == o.home_name && vis_city == o.vis_city && vis_name == o.vis_name;
  }

 private:
  std::vector<Alias> aliases_;
  int max_alias_len_ = 0;
  std::map<std::string, std::vector<std::string>> surface_to_canonicals_;
  std::map<std::pair<std::string, int>, std::vector<RecordType>> numeric_index_;
  std::map<std::pair<std::string, int>, Value> stat_index_;  // (entity, type id)
};

struct ExamplePair {
  GameDatabase db;
  Document summary;

  bool operator==(const ExamplePair& o) const { return db == o.db && summary == o.summary; }
};

struct DatasetSplit {
  std::vector<ExamplePair> train, valid, test;

  bool operator==(const DatasetSplit& o) const {
    return train == o.train && valid == o.valid && test == o.test;
  }
};

// Word vocabulary with reserved ids 0..3.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;

  Vocab();

  int add(const std::string& tok);          // returns existing id if present
  int id(const std::string& tok) const;     // kUnk if absent
  bool contains(const std::string& tok) const;
  const std::string& token(int id) const;
  int size() const { return int(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace d2d
