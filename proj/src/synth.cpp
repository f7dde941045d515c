#include "d2d/synth.hpp"

#include <algorithm>
#include <cstdio>

#include "d2d/templater.hpp"

namespace d2d {

namespace {

const std::vector<std::pair<std::string, std::string>>& team_pool() {
  // no Dallas Mavericks or Chicago Bulls: the template's closing sentence
  // names them as fixed non-roster opponents
  static const std::vector<std::pair<std::string, std::string>> teams = {
      {"Atlanta", "Hawks"},        {"Boston", "Celtics"},      {"Brooklyn", "Nets"},
      {"Charlotte", "Hornets"},    {"Cleveland", "Cavaliers"}, {"Denver", "Nuggets"},
      {"Detroit", "Pistons"},      {"Golden State", "Warriors"}, {"Houston", "Rockets"},
      {"Indiana", "Pacers"},       {"Los Angeles", "Lakers"},  {"Memphis", "Grizzlies"},
      {"Miami", "Heat"},           {"Milwaukee", "Bucks"},     {"Minnesota", "Timberwolves"},
      {"New Orleans", "Pelicans"}, {"New York", "Knicks"},     {"Oklahoma City", "Thunder"},
      {"Orlando", "Magic"},        {"Philadelphia", "Sixers"}, {"Phoenix", "Suns"},
      {"Portland", "Blazers"},     {"Sacramento", "Kings"},    {"San Antonio", "Spurs"},
      {"Toronto", "Raptors"},      {"Utah", "Jazz"},           {"Washington", "Wizards"}};
  return teams;
}

const std::vector<std::string>& first_names() {
  static const std::vector<std::string> v = {
      "Aaron",   "Alec",    "Andre",   "Anthony", "Austin",  "Blake",  "Bradley",
      "Brandon", "Caleb",   "Cameron", "Carl",    "Chris",   "Cody",   "Cole",
      "Damian",  "Danny",   "Darius",  "Dennis",  "Derek",   "Devin",  "Dwight",
      "Elliot",  "Emmanuel","Eric",    "Evan",    "Gary",    "Goran",  "Grant",
      "Henry",   "Isaiah",  "Jalen",   "Jared",   "Jason",   "Jeremy", "Joel",
      "Julius",  "Kemba",   "Kevin",   "Kyle",    "Lamar",   "Lance",  "Louis",
      "Malcolm", "Marcus",  "Mario",   "Mason",   "Nate",    "Omar",   "Otto",
      "Patrick", "Paul",    "Quincy",  "Rajon",   "Rodney",  "Ryan",   "Samuel",
      "Thabo",   "Tyler",   "Victor",  "Wayne",   "Zach"};
  return v;
}

const std::vector<std::string>& last_names() {
  static const std::vector<std::string> v = {
      "Adams",    "Allen",     "Anderson", "Baker",    "Barnes",   "Bell",
      "Bennett",  "Brooks",    "Burke",    "Carter",   "Clark",    "Coleman",
      "Collins",  "Cooper",    "Crawford", "Daniels",  "Dragic",   "Edwards",
      "Ellington","Farrell",   "Fisher",   "Foster",   "Gibson",   "Gordon",
      "Graham",   "Grant",     "Harris",   "Hayes",    "Henderson","Holiday",
      "Howard",   "Hughes",    "Jackson",  "Jenkins",  "Johnson",  "Kennedy",
      "Korver",   "Lawson",    "Lee",      "Lewis",    "Marshall", "McGruder",
      "Mills",    "Millsap",   "Mitchell", "Morgan",   "Murray",   "Nelson",
      "Osman",    "Parsons",   "Payton",   "Reed",     "Richards", "Roberts",
      "Schroder", "Sefolosha", "Simmons",  "Stevens",  "Turner",   "Walker",
      "Watson",   "Young"};
  return v;
}

int pct_half_up(int made, int att) { return (200 * made + att) / (2 * att); }

struct PlayerStats {
  std::string first, last, pos;
  int min, pts, fgm, fga, fg_pct, fg3m, fg3a, fg3_pct, ftm, fta, ft_pct,
      oreb, dreb, reb, ast, tov, stl, blk, pf;
};

PlayerStats roll_player(Rng& rng, int slot) {
  PlayerStats p{};
  static const char* positions[] = {"PG", "SG", "SF", "PF", "C"};
  p.pos = slot < 5 ? positions[slot] : positions[rng.uniform_int(0, 4)];
  p.min = int(rng.uniform_int(6, 42));
  // every attempt count is >= 1 so all three percents exist and record
  // count stays a pure function of roster size
  p.fga = int(rng.uniform_int(2, 22));
  p.fgm = int(rng.uniform_int(0, p.fga));
  p.fg3a = int(rng.uniform_int(1, std::min(9, p.fga)));
  p.fg3m = int(rng.uniform_int(0, std::min(p.fgm, p.fg3a)));
  p.fta = int(rng.uniform_int(1, 12));
  p.ftm = int(rng.uniform_int(0, p.fta));
  p.pts = 2 * p.fgm + p.fg3m + p.ftm;
  p.fg_pct = pct_half_up(p.fgm, p.fga);
  p.fg3_pct = pct_half_up(p.fg3m, p.fg3a);
  p.ft_pct = pct_half_up(p.ftm, p.fta);
  p.oreb = int(rng.uniform_int(0, 7));
  p.dreb = int(rng.uniform_int(0, 12));
  p.reb = p.oreb + p.dreb;
  p.ast = int(rng.uniform_int(0, 13));
  p.tov = int(rng.uniform_int(0, 8));
  p.stl = int(rng.uniform_int(0, 5));
  p.blk = int(rng.uniform_int(0, 5));
  p.pf = int(rng.uniform_int(0, 6));
  return p;
}

void emit_team_records(GameDatabase& db, bool is_home, const std::string& canonical,
                       const std::string& city, const std::string& name, int wins, int losses,
                       const std::vector<PlayerStats>& roster, Rng& rng) {
  int pts = 0, reb = 0, ast = 0, tov = 0, fgm = 0, fga = 0, fg3m = 0, fg3a = 0,
      ftm = 0, fta = 0;
  for (const auto& p : roster) {
    pts += p.pts; reb += p.reb; ast += p.ast; tov += p.tov;
    fgm += p.fgm; fga += p.fga; fg3m += p.fg3m; fg3a += p.fg3a;
    ftm += p.ftm; fta += p.fta;
  }
  int quarters[4];
  int remaining = pts;
  for (int q = 0; q < 3; ++q) {
    int target = pts / 4 + int(rng.uniform_int(-5, 5));
    quarters[q] = std::clamp(target, 0, remaining);
    remaining -= quarters[q];
  }
  quarters[3] = remaining;

  auto add = [&](RecordType t, Value v) { db.records.push_back({t, canonical, v, is_home}); };
  add(RecordType::TEAM_NAME, name);
  add(RecordType::TEAM_CITY, city);
  add(RecordType::TEAM_WINS, wins);
  add(RecordType::TEAM_LOSSES, losses);
  add(RecordType::TEAM_PTS, pts);
  add(RecordType::TEAM_PTS_QTR1, quarters[0]);
  add(RecordType::TEAM_PTS_QTR2, quarters[1]);
  add(RecordType::TEAM_PTS_QTR3, quarters[2]);
  add(RecordType::TEAM_PTS_QTR4, quarters[3]);
  add(RecordType::TEAM_FG_PCT, pct_half_up(fgm, std::max(1, fga)));
  add(RecordType::TEAM_FG3_PCT, pct_half_up(fg3m, std::max(1, fg3a)));
  add(RecordType::TEAM_FT_PCT, pct_half_up(ftm, std::max(1, fta)));
  add(RecordType::TEAM_REB, reb);
  add(RecordType::TEAM_AST, ast);
  add(RecordType::TEAM_TOV, tov);
}

void emit_player_records(GameDatabase& db, bool is_home, const std::string& city,
                         const PlayerStats& p) {
  std::string canonical = p.first + " " + p.last;
  db.players.push_back({canonical, is_home});
  auto add = [&](RecordType t, Value v) { db.records.push_back({t, canonical, v, is_home}); };
  add(RecordType::FULL_NAME, canonical);
  add(RecordType::NAME1, p.first);
  add(RecordType::NAME2, p.last);
  add(RecordType::CITY, city);
  add(RecordType::POSN, p.pos);
  add(RecordType::MIN, p.min);
  add(RecordType::PTS, p.pts);
  add(RecordType::FGM, p.fgm);
  add(RecordType::FGA, p.fga);
  add(RecordType::FG_PCT, p.fg_pct);
  add(RecordType::FG3M, p.fg3m);
  add(RecordType::FG3A, p.fg3a);
  add(RecordType::FG3_PCT, p.fg3_pct);
  add(RecordType::FTM, p.ftm);
  add(RecordType::FTA, p.fta);
  add(RecordType::FT_PCT, p.ft_pct);
  add(RecordType::OREB, p.oreb);
  add(RecordType::DREB, p.dreb);
  add(RecordType::REB, p.reb);
  add(RecordType::AST, p.ast);
  add(RecordType::TOV, p.tov);
  add(RecordType::STL, p.stl);
  add(RecordType::BLK, p.blk);
  add(RecordType::PF, p.pf);
}

struct Sub {
  std::vector<std::string> from;
  std::vector<std::vector<std::string>> to;
};

const std::vector<Sub>& paraphrase_subs() {
  // word-level substitutions only; none introduce digits or number words
  static const std::vector<Sub> subs = {
      {{"defeated"}, {{"beat"}, {"topped"}, {"downed"}, {"held", "off"}}},
      {{"scored"}, {{"added"}, {"poured", "in"}, {"put", "up"}, {"tallied"}}},
      {{"rebounds"}, {{"boards"}}},
      {{"to", "go", "with"}, {{"along", "with"}, {"to", "go", "along", "with"}, {"plus"}}},
  };
  return subs;
}

std::vector<std::string> paraphrase_sentence(const std::vector<std::string>& sent, Rng& rng,
                                             double prob) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < sent.size()) {
    const Sub* hit = nullptr;
    for (const auto& s : paraphrase_subs()) {
      if (i + s.from.size() > sent.size()) continue;
      if (hit && s.from.size() <= hit->from.size()) continue;
      bool ok = true;
      for (size_t k = 0; k < s.from.size(); ++k)
        if (sent[i + k] != s.from[k]) { ok = false; break; }
      if (ok) hit = &s;
    }
    if (hit && rng.bernoulli(prob)) {
      const auto& alt = hit->to[size_t(rng.uniform_int(0, int64_t(hit->to.size()) - 1))];
      out.insert(out.end(), alt.begin(), alt.end());
      i += hit->from.size();
    } else {
      out.push_back(sent[i]);
      ++i;
    }
  }
  return out;
}

// None of these contain digits or cardinal words, so they never yield
// number spans (and thus no records to extract).
std::vector<std::string> make_distractor(Rng& rng, const GameDatabase& db) {
  std::vector<std::vector<std::string>> options = {
      {"The", "crowd", "was", "loud", "from", "the", "opening", "tip", "."},
      {"It", "was", "a", "physical", "game", "from", "start", "to", "finish", "."},
      {"Both", "coaches", "emptied", "the", "bench", "late", "."},
      {"The", "home", "fans", "had", "plenty", "to", "cheer", "about", "."},
      {"Turnovers", "kept", "the", "game", "closer", "than", "it", "should", "have", "been", "."},
  };
  auto sent = options[size_t(rng.uniform_int(0, int64_t(options.size()) - 1))];
  if (rng.bernoulli(0.5)) {
    // mention a roster team by name; entity span with no numbers nearby
    std::vector<std::string> t = {"The"};
    for (auto& w : split_ws(rng.bernoulli(0.5) ? db.home_name : db.vis_name)) t.push_back(w);
    for (const char* w : {"kept", "the", "pressure", "on", "all", "game", "."}) t.push_back(w);
    return t;
  }
  return sent;
}

Document apply_noise(const Document& doc, const GameDatabase& db, const NoiseConfig& noise,
                     Rng& rng) {
  Document out;
  for (auto [lo, hi] : doc.sentences) {
    std::vector<std::string> sent(doc.tokens.begin() + lo, doc.tokens.begin() + hi);
    if (noise.paraphrase_prob > 0) sent = paraphrase_sentence(sent, rng, noise.paraphrase_prob);
    int start = int(out.tokens.size());
    out.tokens.insert(out.tokens.end(), sent.begin(), sent.end());
    out.sentences.emplace_back(start, int(out.tokens.size()));
    if (noise.distractor_prob > 0 && rng.bernoulli(noise.distractor_prob)) {
      auto d = make_distractor(rng, db);
      start = int(out.tokens.size());
      out.tokens.insert(out.tokens.end(), d.begin(), d.end());
      out.sentences.emplace_back(start, int(out.tokens.size()));
    }
  }
  return out;
}

}  // namespace

ExamplePair synth_game(Rng& rng, const std::string& id, const NoiseConfig& noise,
                       int roster_size) {
  if (roster_size < 5) throw ContractError("roster_size must be at least 5");
  ExamplePair pair;
  GameDatabase& db = pair.db;
  db.id = id;

  const auto& teams = team_pool();
  int ti = int(rng.uniform_int(0, int64_t(teams.size()) - 1));
  int tj = int(rng.uniform_int(0, int64_t(teams.size()) - 2));
  if (tj >= ti) ++tj;
  db.home_city = teams[size_t(ti)].first;
  db.home_name = teams[size_t(ti)].second;
  db.vis_city = teams[size_t(tj)].first;
  db.vis_name = teams[size_t(tj)].second;

  // distinct first and last names across both rosters keeps single-token
  // aliases unambiguous within a game
  std::vector<int> fidx(first_names().size()), lidx(last_names().size());
  for (size_t i = 0; i < fidx.size(); ++i) fidx[i] = int(i);
  for (size_t i = 0; i < lidx.size(); ++i) lidx[i] = int(i);
  rng.shuffle(fidx);
  rng.shuffle(lidx);
  if (2 * roster_size > int(fidx.size()))
    throw ContractError(cat("roster_size ", roster_size, " exceeds name pool"));

  std::vector<PlayerStats> home_roster, vis_roster;
  for (int side = 0; side < 2; ++side) {
    auto& roster = side == 0 ? home_roster : vis_roster;
    for (int k = 0; k < roster_size; ++k) {
      PlayerStats p = roll_player(rng, k);
      int ni = side * roster_size + k;
      p.first = first_names()[size_t(fidx[size_t(ni)])];
      p.last = last_names()[size_t(lidx[size_t(ni)])];
      roster.push_back(std::move(p));
    }
  }

  auto total_pts = [](const std::vector<PlayerStats>& r) {
    int s = 0;
    for (const auto& p : r) s += p.pts;
    return s;
  };
  if (total_pts(home_roster) == total_pts(vis_roster)) {
    // break the tie through the scoring identity so consistency holds
    auto& p = home_roster[0];
    p.ftm += 1;
    p.fta = std::max(p.fta, p.ftm);
    p.pts = 2 * p.fgm + p.fg3m + p.ftm;
    p.ft_pct = pct_half_up(p.ftm, p.fta);
  }

  int home_wins = int(rng.uniform_int(8, 73));
  int home_losses = int(rng.uniform_int(8, 73));
  int vis_wins = int(rng.uniform_int(8, 73));
  int vis_losses = int(rng.uniform_int(8, 73));
  emit_team_records(db, true, db.home_canonical(), db.home_city, db.home_name, home_wins,
                    home_losses, home_roster, rng);
  emit_team_records(db, false, db.vis_canonical(), db.vis_city, db.vis_name, vis_wins,
                    vis_losses, vis_roster, rng);
  for (const auto& p : home_roster) emit_player_records(db, true, db.home_city, p);
  for (const auto& p : vis_roster) emit_player_records(db, false, db.vis_city, p);
  db.finalize();

  pair.summary = apply_noise(render_summary(db).doc, db, noise, rng);
  return pair;
}

DatasetSplit synth_games(int n, uint64_t seed, const NoiseConfig& noise, int roster_size) {
  if (n <= 0) throw ContractError("need at least one game");
  Rng rng(seed);
  std::vector<ExamplePair> pairs;
  pairs.reserve(size_t(n));
  for (int i = 0; i < n; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "G%05d", i + 1);
    pairs.push_back(synth_game(rng, id, noise, roster_size));
  }
  int held = std::max(n / 10, n >= 3 ? 1 : 0);
  int train_n = n - 2 * held;

  DatasetSplit split;
  for (int i = 0; i < n; ++i) {
    auto& dst = i < train_n ? split.train
              : i < train_n + held ? split.valid
              : split.test;
    dst.push_back(std::move(pairs[size_t(i)]));
  }
  return split;
}

}  // namespace d2d
