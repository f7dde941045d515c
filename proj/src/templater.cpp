#include "d2d/templater.hpp"

#include <algorithm>

namespace d2d {

namespace {

void push_name(std::vector<std::string>& toks, const std::string& name) {
  for (auto& t : split_ws(name)) toks.push_back(t);
}

std::string digits(int v) { return std::to_string(v); }

struct SentenceBuilder {
  Document& doc;
  std::vector<RelationKey>& realized;
  std::vector<std::string> toks;

  void word(const std::string& w) { toks.push_back(w); }
  void name(const std::string& n) { push_name(toks, n); }
  void slot(const std::string& entity, int value, RecordType type) {
    toks.push_back(digits(value));
    realized.push_back({entity, value, type});
  }
  void finish() {
    int start = int(doc.tokens.size());
    doc.tokens.insert(doc.tokens.end(), toks.begin(), toks.end());
    doc.sentences.emplace_back(start, int(doc.tokens.size()));
    toks.clear();
  }
};

}  // namespace

std::vector<std::string> top_scorers(const GameDatabase& db, int k) {
  std::vector<std::pair<int, std::string>> scored;
  for (const auto& p : db.players) {
    auto pts = db.numeric_stat(p.canonical, RecordType::PTS);
    if (pts) scored.emplace_back(*pts, p.canonical);
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::string> out;
  for (int i = 0; i < k && i < int(scored.size()); ++i)
    out.push_back(scored[size_t(i)].second);
  return out;
}

TemplateOutput render_summary(const GameDatabase& db, int num_players) {
  TemplateOutput out;
  SentenceBuilder sb{out.doc, out.realized, {}};

  std::string home = db.home_canonical(), vis = db.vis_canonical();
  auto home_pts = db.numeric_stat(home, RecordType::TEAM_PTS);
  auto vis_pts = db.numeric_stat(vis, RecordType::TEAM_PTS);
  if (!home_pts || !vis_pts)
    throw ContractError(cat("game ", db.id, ": missing TEAM-PTS record"));
  if (*home_pts == *vis_pts)
    throw ContractError(cat("game ", db.id, ": tied game has no winner"));

  bool home_won = *home_pts > *vis_pts;
  std::string win_city = home_won ? db.home_city : db.vis_city;
  std::string win_name = home_won ? db.home_name : db.vis_name;
  std::string lose_city = home_won ? db.vis_city : db.home_city;
  std::string lose_name = home_won ? db.vis_name : db.home_name;
  std::string winner = win_city + " " + win_name;
  std::string loser = lose_city + " " + lose_name;
  int win_pts = home_won ? *home_pts : *vis_pts;
  int lose_pts = home_won ? *vis_pts : *home_pts;

  // "The Atlanta Hawks ( 46 - 12 ) defeated the Miami Heat ( 11 - 47 ) 103 - 95 ."
  auto record_fragment = [&](const std::string& team) {
    auto w = db.numeric_stat(team, RecordType::TEAM_WINS);
    auto l = db.numeric_stat(team, RecordType::TEAM_LOSSES);
    if (!w || !l) return;
    sb.word("(");
    sb.slot(team, *w, RecordType::TEAM_WINS);
    sb.word("-");
    sb.slot(team, *l, RecordType::TEAM_LOSSES);
    sb.word(")");
  };
  sb.word("The");
  sb.name(winner);
  record_fragment(winner);
  sb.word("defeated");
  sb.word("the");
  sb.name(loser);
  record_fragment(loser);
  sb.slot(winner, win_pts, RecordType::TEAM_PTS);
  sb.word("-");
  sb.slot(loser, lose_pts, RecordType::TEAM_PTS);
  sb.word(".");
  sb.finish();

  // "<player> scored <pts> points ( <fgm> - <fga> FG , <tpm> - <tpa> 3PT ,
  //  <ftm> - <fta> FT ) to go with <reb> rebounds ."
  for (const auto& player : top_scorers(db, num_players)) {
    auto pts = db.numeric_stat(player, RecordType::PTS);
    if (!pts) continue;
    sb.name(player);
    sb.word("scored");
    sb.slot(player, *pts, RecordType::PTS);
    sb.word("points");

    struct Shot { RecordType made, att; const char* label; };
    const Shot shots[] = {{RecordType::FGM, RecordType::FGA, "FG"},
                          {RecordType::FG3M, RecordType::FG3A, "3PT"},
                          {RecordType::FTM, RecordType::FTA, "FT"}};
    bool open = false;
    for (const auto& s : shots) {
      auto made = db.numeric_stat(player, s.made);
      auto att = db.numeric_stat(player, s.att);
      if (!made || !att) continue;
      sb.word(open ? "," : "(");
      open = true;
      sb.slot(player, *made, s.made);
      sb.word("-");
      sb.slot(player, *att, s.att);
      sb.word(s.label);
    }
    if (open) sb.word(")");

    auto reb = db.numeric_stat(player, RecordType::REB);
    if (reb) {
      sb.word("to");
      sb.word("go");
      sb.word("with");
      sb.slot(player, *reb, RecordType::REB);
      sb.word("rebounds");
    }
    sb.word(".");
    sb.finish();
  }

  // Fixed closing sentence; the named opponents are never roster teams.
  sb.word("The");
  sb.name(winner);
  sb.word("'");
  for (const char* w : {"next", "game", "will", "be", "at", "home", "against",
                        "the", "Dallas", "Mavericks", ","})
    sb.word(w);
  sb.word("while");
  sb.word("the");
  sb.name(loser);
  for (const char* w : {"will", "travel", "to", "play", "the", "Bulls", "."})
    sb.word(w);
  sb.finish();

  return out;
}

}  // namespace d2d
