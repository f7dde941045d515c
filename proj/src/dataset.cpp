#include "d2d/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "d2d/spanner.hpp"

namespace d2d {

using json = nlohmann::ordered_json;

namespace {

// (key, record type) in emission order. Team and player blocks each produce
// records in this fixed order so record layout is a pure function of the
// schema, not of JSON key order.
const std::vector<std::pair<std::string, RecordType>> kTeamFields = {
    {"name", RecordType::TEAM_NAME},       {"city", RecordType::TEAM_CITY},
    {"wins", RecordType::TEAM_WINS},       {"losses", RecordType::TEAM_LOSSES},
    {"pts", RecordType::TEAM_PTS},         {"pts_qtr1", RecordType::TEAM_PTS_QTR1},
    {"pts_qtr2", RecordType::TEAM_PTS_QTR2}, {"pts_qtr3", RecordType::TEAM_PTS_QTR3},
    {"pts_qtr4", RecordType::TEAM_PTS_QTR4}, {"fg_pct", RecordType::TEAM_FG_PCT},
    {"fg3_pct", RecordType::TEAM_FG3_PCT}, {"ft_pct", RecordType::TEAM_FT_PCT},
    {"reb", RecordType::TEAM_REB},         {"ast", RecordType::TEAM_AST},
    {"tov", RecordType::TEAM_TOV}};

const std::vector<std::pair<std::string, RecordType>> kPlayerFields = {
    {"name", RecordType::FULL_NAME}, {"first", RecordType::NAME1},
    {"last", RecordType::NAME2},     {"city", RecordType::CITY},
    {"pos", RecordType::POSN},       {"min", RecordType::MIN},
    {"pts", RecordType::PTS},        {"fgm", RecordType::FGM},
    {"fga", RecordType::FGA},        {"fg_pct", RecordType::FG_PCT},
    {"fg3m", RecordType::FG3M},      {"fg3a", RecordType::FG3A},
    {"fg3_pct", RecordType::FG3_PCT},{"ftm", RecordType::FTM},
    {"fta", RecordType::FTA},        {"ft_pct", RecordType::FT_PCT},
    {"oreb", RecordType::OREB},      {"dreb", RecordType::DREB},
    {"reb", RecordType::REB},        {"ast", RecordType::AST},
    {"tov", RecordType::TOV},        {"stl", RecordType::STL},
    {"blk", RecordType::BLK},        {"pf", RecordType::PF}};

void check_keys(const json& obj, const std::vector<std::string>& allowed,
                const std::string& ctx) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw SchemaError(cat(ctx, ": unknown key '", it.key(), "'"));
  }
}

std::string require_string(const json& obj, const std::string& key, const std::string& ctx) {
  if (!obj.contains(key) || !obj[key].is_string())
    throw SchemaError(cat(ctx, ": missing or non-string '", key, "'"));
  return normalize_string(obj[key].get<std::string>());
}

// Returns the normalized value, or nullopt for absent/null fields.
std::optional<Value> field_value(const json& obj, const std::string& key, RecordType type,
                                 const std::string& ctx) {
  if (!obj.contains(key) || obj[key].is_null()) return std::nullopt;
  const json& v = obj[key];
  if (is_string_type(type)) {
    if (!v.is_string()) throw SchemaError(cat(ctx, ".", key, ": expected string"));
    return Value(normalize_string(v.get<std::string>()));
  }
  if (!v.is_number()) throw SchemaError(cat(ctx, ".", key, ": expected number"));
  try {
    return Value(normalize_value(v.get<double>(), type));
  } catch (const SchemaError& e) {
    throw SchemaError(cat(ctx, ".", key, ": ", e.what()));
  }
}

void parse_team(const json& obj, bool is_home, const std::string& ctx, GameDatabase& db) {
  if (!obj.is_object()) throw SchemaError(cat(ctx, ": team must be an object"));
  std::vector<std::string> allowed;
  for (auto& [k, t] : kTeamFields) allowed.push_back(k);
  check_keys(obj, allowed, ctx);
  std::string name = require_string(obj, "name", ctx);
  std::string city = require_string(obj, "city", ctx);
  (is_home ? db.home_name : db.vis_name) = name;
  (is_home ? db.home_city : db.vis_city) = city;
  std::string canonical = city + " " + name;
  for (auto& [key, type] : kTeamFields) {
    auto v = field_value(obj, key, type, ctx);
    if (v) db.records.push_back({type, canonical, *v, is_home});
  }
}

void parse_player(const json& obj, const std::string& ctx, GameDatabase& db) {
  if (!obj.is_object()) throw SchemaError(cat(ctx, ": player must be an object"));
  std::vector<std::string> allowed = {"is_home"};
  for (auto& [k, t] : kPlayerFields) allowed.push_back(k);
  check_keys(obj, allowed, ctx);
  std::string canonical = require_string(obj, "name", ctx);
  if (!obj.contains("is_home") || !obj["is_home"].is_boolean())
    throw SchemaError(cat(ctx, ": missing or non-boolean 'is_home'"));
  bool is_home = obj["is_home"].get<bool>();
  db.players.push_back({canonical, is_home});
  for (auto& [key, type] : kPlayerFields) {
    auto v = field_value(obj, key, type, ctx);
    if (v) db.records.push_back({type, canonical, *v, is_home});
  }
}

json team_to_json(const GameDatabase& db, bool is_home) {
  json t = json::object();
  std::string canonical = is_home ? db.home_canonical() : db.vis_canonical();
  for (auto& [key, type] : kTeamFields) {
    if (is_string_type(type)) {
      auto v = db.string_stat(canonical, type);
      t[key] = v ? json(*v) : json(nullptr);
    } else {
      auto v = db.numeric_stat(canonical, type);
      t[key] = v ? json(*v) : json(nullptr);
    }
  }
  return t;
}

json player_to_json(const GameDatabase& db, const PlayerRef& p) {
  json o = json::object();
  for (auto& [key, type] : kPlayerFields) {
    if (is_string_type(type)) {
      auto v = db.string_stat(p.canonical, type);
      o[key] = v ? json(*v) : json(nullptr);
    } else {
      auto v = db.numeric_stat(p.canonical, type);
      o[key] = v ? json(*v) : json(nullptr);
    }
  }
  o["is_home"] = p.is_home;
  return o;
}

json parse_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ParseError(cat("cannot open ", file.string()));
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    size_t line = 1;
    for (size_t i = 0; i < e.byte && i < text.size(); ++i)
      if (text[i] == '\n') ++line;
    throw ParseError(cat(file.string(), " line ", line, ": ", e.what()));
  }
}

}  // namespace

int normalize_value(double raw, RecordType type) {
  if (is_string_type(type))
    throw ContractError(cat("normalize_value on string type ", record_type_name(type)));
  if (!std::isfinite(raw)) throw SchemaError("non-finite numeric value");
  if (is_percent_type(type)) {
    if (raw < 0.0) throw SchemaError(cat("negative percent ", raw));
    if (raw <= 1.0) {
      // ratio form; the epsilon absorbs FP noise so exact halves round up
      return int(std::floor(raw * 100.0 + 0.5 + 1e-7));
    }
    if (raw <= 100.0 && std::floor(raw) == raw) return int(raw);
    throw SchemaError(cat("percent value ", raw, " not a ratio or integral percentage"));
  }
  if (std::floor(raw) != raw) throw SchemaError(cat("non-integral value ", raw));
  if (std::abs(raw) > 1e9) throw SchemaError(cat("value ", raw, " out of range"));
  return int(raw);
}

std::string normalize_string(const std::string& raw) {
  std::string out;
  bool in_space = true;  // swallow leading spaces
  for (char c : raw) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      in_space = true;
    } else {
      if (in_space && !out.empty()) out += ' ';
      in_space = false;
      out += c;
    }
  }
  return out;
}

std::vector<ExamplePair> load_games(const std::filesystem::path& file) {
  json root = parse_file(file);
  if (!root.is_object() || !root.contains("games") || !root["games"].is_array())
    throw SchemaError(cat(file.string(), ": root must be an object with a 'games' array"));
  check_keys(root, {"games"}, file.string());

  std::vector<ExamplePair> pairs;
  int idx = 0;
  for (const json& g : root["games"]) {
    std::string ctx = cat(file.filename().string(), " game[", idx, "]");
    if (!g.is_object()) throw SchemaError(cat(ctx, ": game must be an object"));
    check_keys(g, {"id", "home", "vis", "players", "summary"}, ctx);
    for (const char* k : {"id", "home", "vis", "players", "summary"})
      if (!g.contains(k)) throw SchemaError(cat(ctx, ": missing key '", k, "'"));

    ExamplePair pair;
    pair.db.id = require_string(g, "id", ctx);
    ctx = cat(file.filename().string(), " game '", pair.db.id, "'");
    parse_team(g["home"], true, cat(ctx, ".home"), pair.db);
    parse_team(g["vis"], false, cat(ctx, ".vis"), pair.db);
    if (pair.db.home_canonical() == pair.db.vis_canonical())
      throw SchemaError(cat(ctx, ": home and visiting team are identical"));
    if (!g["players"].is_array()) throw SchemaError(cat(ctx, ": 'players' must be an array"));
    int pi = 0;
    for (const json& p : g["players"])
      parse_player(p, cat(ctx, ".players[", pi++, "]"), pair.db);
    pair.db.finalize();

    if (!g["summary"].is_array()) throw SchemaError(cat(ctx, ": 'summary' must be an array"));
    for (const json& t : g["summary"]) {
      if (!t.is_string()) throw SchemaError(cat(ctx, ": summary tokens must be strings"));
      pair.summary.tokens.push_back(t.get<std::string>());
    }
    pair.summary.sentences = split_sentences(pair.summary.tokens);
    pairs.push_back(std::move(pair));
    ++idx;
  }
  return pairs;
}

void save_games(const std::filesystem::path& file, std::span<const ExamplePair> pairs) {
  json games = json::array();
  for (const auto& pair : pairs) {
    json g = json::object();
    g["id"] = pair.db.id;
    g["home"] = team_to_json(pair.db, true);
    g["vis"] = team_to_json(pair.db, false);
    json players = json::array();
    for (const auto& p : pair.db.players) players.push_back(player_to_json(pair.db, p));
    g["players"] = std::move(players);
    g["summary"] = pair.summary.tokens;
    games.push_back(std::move(g));
  }
  json root;
  root["games"] = std::move(games);
  std::ofstream out(file);
  if (!out) throw ParseError(cat("cannot write ", file.string()));
  out << root.dump(2) << "\n";
}

DatasetSplit load_dataset(const std::filesystem::path& dir) {
  DatasetSplit split;
  split.train = load_games(dir / "train.json");
  split.valid = load_games(dir / "valid.json");
  split.test = load_games(dir / "test.json");
  return split;
}

void save_dataset(const std::filesystem::path& dir, const DatasetSplit& split) {
  std::filesystem::create_directories(dir);
  save_games(dir / "train.json", split.train);
  save_games(dir / "valid.json", split.valid);
  save_games(dir / "test.json", split.test);
}

Vocab build_vocab(std::span<const ExamplePair> pairs, int min_count) {
  std::map<std::string, int> counts;
  for (const auto& pair : pairs)
    for (const auto& tok : pair.summary.tokens) counts[tok]++;
  std::vector<std::pair<std::string, int>> items(counts.begin(), counts.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab v;
  for (auto& [tok, c] : items)
    if (c >= min_count) v.add(tok);
  return v;
}

}  // namespace d2d
