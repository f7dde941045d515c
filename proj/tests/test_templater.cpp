#include <doctest.h>

#include "d2d/templater.hpp"

using namespace d2d;

namespace {

GameDatabase tmpl_db(int home_pts = 103, int vis_pts = 95) {
  GameDatabase db;
  db.id = "t";
  db.home_city = "Atlanta";
  db.home_name = "Hawks";
  db.vis_city = "Miami";
  db.vis_name = "Heat";
  db.players = {{"Alpha Fox", true}, {"Bob Ray", true}, {"Carl Zed", false}};
  std::string h = db.home_canonical(), v = db.vis_canonical();
  db.records = {
      {RecordType::TEAM_PTS, h, home_pts, true},
      {RecordType::TEAM_WINS, h, 46, true},
      {RecordType::TEAM_LOSSES, h, 12, true},
      {RecordType::TEAM_PTS, v, vis_pts, false},
      {RecordType::TEAM_WINS, v, 11, false},
      {RecordType::TEAM_LOSSES, v, 47, false},
      // full stat line
      {RecordType::PTS, "Alpha Fox", 20, true},
      {RecordType::FGM, "Alpha Fox", 7, true},
      {RecordType::FGA, "Alpha Fox", 15, true},
      {RecordType::FG3M, "Alpha Fox", 2, true},
      {RecordType::FG3A, "Alpha Fox", 6, true},
      {RecordType::FTM, "Alpha Fox", 4, true},
      {RecordType::FTA, "Alpha Fox", 5, true},
      {RecordType::REB, "Alpha Fox", 9, true},
      // only free throws and boards
      {RecordType::PTS, "Bob Ray", 20, true},
      {RecordType::FTM, "Bob Ray", 4, true},
      {RecordType::FTA, "Bob Ray", 4, true},
      {RecordType::REB, "Bob Ray", 3, true},
      // bare points
      {RecordType::PTS, "Carl Zed", 25, false},
  };
  db.finalize();
  return db;
}

std::vector<std::string> sentence(const Document& d, size_t i) {
  auto [lo, hi] = d.sentences[i];
  return {d.tokens.begin() + lo, d.tokens.begin() + hi};
}

}  // namespace

TEST_CASE("top_scorers sorts by points, stable on ties") {
  auto db = tmpl_db();
  CHECK(top_scorers(db, 6) ==
        std::vector<std::string>{"Carl Zed", "Alpha Fox", "Bob Ray"});
  CHECK(top_scorers(db, 1) == std::vector<std::string>{"Carl Zed"});
  CHECK(top_scorers(db, 0).empty());
}

TEST_CASE("render_summary produces the expected surface") {
  auto out = render_summary(tmpl_db());
  REQUIRE(out.doc.sentences.size() == 5);  // lead + 3 players + closer

  CHECK(sentence(out.doc, 0) ==
        std::vector<std::string>{"The", "Atlanta", "Hawks", "(", "46", "-", "12", ")",
                                 "defeated", "the", "Miami", "Heat", "(", "11", "-", "47",
                                 ")", "103", "-", "95", "."});
  CHECK(sentence(out.doc, 1) ==
        std::vector<std::string>{"Carl", "Zed", "scored", "25", "points", "."});
  CHECK(sentence(out.doc, 2) ==
        std::vector<std::string>{"Alpha", "Fox", "scored", "20", "points", "(", "7", "-",
                                 "15", "FG", ",", "2", "-", "6", "3PT", ",", "4", "-", "5",
                                 "FT", ")", "to", "go", "with", "9", "rebounds", "."});
  CHECK(sentence(out.doc, 3) ==
        std::vector<std::string>{"Bob", "Ray", "scored", "20", "points", "(", "4", "-", "4",
                                 "FT", ")", "to", "go", "with", "3", "rebounds", "."});
  CHECK(sentence(out.doc, 4) ==
        std::vector<std::string>{"The", "Atlanta", "Hawks", "'", "next", "game", "will",
                                 "be", "at", "home", "against", "the", "Dallas",
                                 "Mavericks", ",", "while", "the", "Miami", "Heat", "will",
                                 "travel", "to", "play", "the", "Bulls", "."});
}

TEST_CASE("realized relations match the digit tokens in order") {
  auto db = tmpl_db();
  auto out = render_summary(db);

  std::vector<std::string> digit_toks;
  for (const auto& t : out.doc.tokens)
    if (!t.empty() && t.find_first_not_of("0123456789") == std::string::npos)
      digit_toks.push_back(t);
  REQUIRE(digit_toks.size() == out.realized.size());
  for (size_t i = 0; i < digit_toks.size(); ++i)
    CHECK(digit_toks[i] == std::to_string(out.realized[i].value));

  // every realized relation is a true record
  auto keys = db.relation_keys();
  for (const auto& r : out.realized) CHECK(keys.count(r) == 1);

  // lead sentence order: winner record, loser record, final score
  REQUIRE(out.realized.size() >= 6);
  CHECK(out.realized[0] == RelationKey{"Atlanta Hawks", 46, RecordType::TEAM_WINS});
  CHECK(out.realized[1] == RelationKey{"Atlanta Hawks", 12, RecordType::TEAM_LOSSES});
  CHECK(out.realized[2] == RelationKey{"Miami Heat", 11, RecordType::TEAM_WINS});
  CHECK(out.realized[3] == RelationKey{"Miami Heat", 47, RecordType::TEAM_LOSSES});
  CHECK(out.realized[4] == RelationKey{"Atlanta Hawks", 103, RecordType::TEAM_PTS});
  CHECK(out.realized[5] == RelationKey{"Miami Heat", 95, RecordType::TEAM_PTS});
}

TEST_CASE("the winner leads even when the visitor wins") {
  auto out = render_summary(tmpl_db(90, 101));
  auto s0 = sentence(out.doc, 0);
  REQUIRE(s0.size() > 3);
  CHECK(s0[1] == "Miami");
  CHECK(s0[2] == "Heat");
  CHECK(out.realized[0] == RelationKey{"Miami Heat", 11, RecordType::TEAM_WINS});
}

TEST_CASE("num_players caps the body sentences") {
  auto out = render_summary(tmpl_db(), 2);
  REQUIRE(out.doc.sentences.size() == 4);
  CHECK(sentence(out.doc, 1)[0] == "Carl");
  CHECK(sentence(out.doc, 2)[0] == "Alpha");
}

TEST_CASE("degenerate games are rejected") {
  CHECK_THROWS_AS(render_summary(tmpl_db(100, 100)), ContractError);

  auto db = tmpl_db();
  std::erase_if(db.records, [](const Record& r) { return r.type == RecordType::TEAM_PTS; });
  db.finalize();
  CHECK_THROWS_AS(render_summary(db), ContractError);
}
