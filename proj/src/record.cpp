#include "d2d/record.hpp"

#include <algorithm>
#include <array>

namespace d2d {

namespace {

const std::array<std::string, kNumLabels> kTypeNames = {
    "POSN", "MIN", "PTS", "FGM", "FGA", "FG-PCT", "FG3M", "FG3A", "FG3-PCT",
    "FTM", "FTA", "FT-PCT", "OREB", "DREB", "REB", "AST", "TOV", "STL", "BLK",
    "PF", "FULL-NAME", "NAME1", "NAME2", "CITY",
    "TEAM-PTS-QTR1", "TEAM-PTS-QTR2", "TEAM-PTS-QTR3", "TEAM-PTS-QTR4",
    "TEAM-PTS", "TEAM-FG-PCT", "TEAM-FG3-PCT", "TEAM-FT-PCT", "TEAM-REB",
    "TEAM-AST", "TEAM-TOV", "TEAM-WINS", "TEAM-LOSSES", "TEAM-CITY",
    "TEAM-NAME", "EPS"};

std::vector<std::string> tokenize_name(const std::string& s) {
  return split_ws(s);
}

}  // namespace

const std::string& record_type_name(RecordType t) {
  int i = int(t);
  if (i < 0 || i >= kNumLabels) throw ContractError(cat("bad record type id ", i));
  return kTypeNames[size_t(i)];
}

RecordType record_type_from_name(const std::string& name) {
  for (int i = 0; i < kNumLabels; ++i)
    if (kTypeNames[size_t(i)] == name) return RecordType(i);
  throw SchemaError(cat("unknown record type '", name, "'"));
}

bool is_team_type(RecordType t) {
  return int(t) >= int(RecordType::TEAM_PTS_QTR1) && int(t) < kNumLabels - 1;
}

bool is_string_type(RecordType t) {
  switch (t) {
    case RecordType::POSN:
    case RecordType::FULL_NAME:
    case RecordType::NAME1:
    case RecordType::NAME2:
    case RecordType::CITY:
    case RecordType::TEAM_CITY:
    case RecordType::TEAM_NAME:
      return true;
    default:
      return false;
  }
}

bool is_percent_type(RecordType t) {
  switch (t) {
    case RecordType::FG_PCT:
    case RecordType::FG3_PCT:
    case RecordType::FT_PCT:
    case RecordType::TEAM_FG_PCT:
    case RecordType::TEAM_FG3_PCT:
    case RecordType::TEAM_FT_PCT:
      return true;
    default:
      return false;
  }
}

void GameDatabase::finalize() {
  aliases_.clear();
  surface_to_canonicals_.clear();
  numeric_index_.clear();
  stat_index_.clear();
  max_alias_len_ = 0;

  auto add_alias = [&](const std::vector<std::string>& surface, const std::string& canonical) {
    if (surface.empty()) return;
    aliases_.push_back({surface, canonical});
    std::string key = join_tokens(surface, 0, surface.size());
    auto& cs = surface_to_canonicals_[key];
    if (std::find(cs.begin(), cs.end(), canonical) == cs.end()) cs.push_back(canonical);
    max_alias_len_ = std::max(max_alias_len_, int(surface.size()));
  };

  auto add_team = [&](const std::string& city, const std::string& name) {
    std::string canonical = city + " " + name;
    auto city_toks = tokenize_name(city);
    auto name_toks = tokenize_name(name);
    std::vector<std::string> full = city_toks;
    full.insert(full.end(), name_toks.begin(), name_toks.end());
    add_alias(full, canonical);
    add_alias(name_toks, canonical);
    add_alias(city_toks, canonical);
  };
  add_team(home_city, home_name);
  add_team(vis_city, vis_name);

  for (const auto& p : players) {
    auto full = tokenize_name(p.canonical);
    add_alias(full, p.canonical);
    if (full.size() > 1) {
      add_alias({full.front()}, p.canonical);
      add_alias({full.back()}, p.canonical);
    }
  }
  for (auto& [key, cs] : surface_to_canonicals_) std::sort(cs.begin(), cs.end());

  for (const auto& r : records) {
    if (is_numeric(r.value))
      numeric_index_[{r.entity, num(r.value)}].push_back(r.type);
    stat_index_.emplace(std::make_pair(r.entity, int(r.type)), r.value);
  }
  for (auto& [key, types] : numeric_index_)
    std::sort(types.begin(), types.end(),
              [](RecordType a, RecordType b) { return int(a) < int(b); });
}

const std::vector<std::string>* GameDatabase::match_surface(const std::string& joined) const {
  auto it = surface_to_canonicals_.find(joined);
  return it == surface_to_canonicals_.end() ? nullptr : &it->second;
}

std::vector<RecordType> GameDatabase::numeric_types(const std::string& entity, int value) const {
  auto it = numeric_index_.find({entity, value});
  return it == numeric_index_.end() ? std::vector<RecordType>{} : it->second;
}

std::optional<int> GameDatabase::numeric_stat(const std::string& entity, RecordType t) const {
  auto it = stat_index_.find({entity, int(t)});
  if (it == stat_index_.end() || !is_numeric(it->second)) return std::nullopt;
  return num(it->second);
}

std::optional<std::string> GameDatabase::string_stat(const std::string& entity,
                                                     RecordType t) const {
  auto it = stat_index_.find({entity, int(t)});
  if (it == stat_index_.end() || is_numeric(it->second)) return std::nullopt;
  return str(it->second);
}

std::set<RelationKey> GameDatabase::relation_keys() const {
  std::set<RelationKey> keys;
  for (const auto& r : records)
    if (is_numeric(r.value)) keys.insert({r.entity, num(r.value), r.type});
  return keys;
}

Vocab::Vocab() {
  for (const char* t : {"<pad>", "<unk>", "<bos>", "<eos>"}) add(t);
}

int Vocab::add(const std::string& tok) {
  auto it = index_.find(tok);
  if (it != index_.end()) return it->second;
  int id = int(tokens_.size());
  tokens_.push_back(tok);
  index_.emplace(tok, id);
  return id;
}

int Vocab::id(const std::string& tok) const {
  auto it = index_.find(tok);
  return it == index_.end() ? kUnk : it->second;
}

bool Vocab::contains(const std::string& tok) const { return index_.count(tok) > 0; }

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw ContractError(cat("vocab id ", id, " out of range"));
  return tokens_[size_t(id)];
}

}  // namespace d2d
