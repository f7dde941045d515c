#include <doctest.h>

#include "d2d/spanner.hpp"
#include "d2d/synth.hpp"

using namespace d2d;

namespace {

int stat(const GameDatabase& db, const std::string& e, RecordType t) {
  auto v = db.numeric_stat(e, t);
  REQUIRE(v.has_value());
  return *v;
}

}  // namespace

TEST_CASE("record count is a pure function of roster size") {
  // 15 team records per side + 24 player records per slot
  auto expect = [](int roster) { return 2 * 15 + 2 * 24 * roster; };
  for (uint64_t seed : {1ull, 9ull, 77ull}) {
    Rng rng(seed);
    auto a = synth_game(rng, "a", NoiseConfig::none());
    CHECK(int(a.db.records.size()) == expect(13));
    auto b = synth_game(rng, "b", NoiseConfig::defaults(), 8);
    CHECK(int(b.db.records.size()) == expect(8));
  }
  Rng rng(5);
  CHECK_THROWS_AS(synth_game(rng, "x", NoiseConfig::none(), 4), ContractError);
}

TEST_CASE("stats respect the arithmetic couplings") {
  Rng rng(123);
  auto pair = synth_game(rng, "g", NoiseConfig::none());
  const auto& db = pair.db;

  auto half_up = [](int made, int att) { return (200 * made + att) / (2 * att); };

  for (const auto& p : db.players) {
    int fgm = stat(db, p.canonical, RecordType::FGM);
    int fga = stat(db, p.canonical, RecordType::FGA);
    int fg3m = stat(db, p.canonical, RecordType::FG3M);
    int fg3a = stat(db, p.canonical, RecordType::FG3A);
    int ftm = stat(db, p.canonical, RecordType::FTM);
    int fta = stat(db, p.canonical, RecordType::FTA);
    CHECK(stat(db, p.canonical, RecordType::PTS) == 2 * fgm + fg3m + ftm);
    CHECK(stat(db, p.canonical, RecordType::REB) ==
          stat(db, p.canonical, RecordType::OREB) + stat(db, p.canonical, RecordType::DREB));
    CHECK(fgm <= fga);
    CHECK(fg3m <= fg3a);
    CHECK(fg3m <= fgm);
    CHECK(ftm <= fta);
    CHECK(stat(db, p.canonical, RecordType::FG_PCT) == half_up(fgm, fga));
    CHECK(stat(db, p.canonical, RecordType::FG3_PCT) == half_up(fg3m, fg3a));
    CHECK(stat(db, p.canonical, RecordType::FT_PCT) == half_up(ftm, fta));
  }

  for (const auto& side : {db.home_canonical(), db.vis_canonical()}) {
    bool home = side == db.home_canonical();
    int pts = 0, reb = 0, ast = 0, tov = 0;
    for (const auto& p : db.players) {
      if (p.is_home != home) continue;
      pts += stat(db, p.canonical, RecordType::PTS);
      reb += stat(db, p.canonical, RecordType::REB);
      ast += stat(db, p.canonical, RecordType::AST);
      tov += stat(db, p.canonical, RecordType::TOV);
    }
    CHECK(stat(db, side, RecordType::TEAM_PTS) == pts);
    CHECK(stat(db, side, RecordType::TEAM_REB) == reb);
    CHECK(stat(db, side, RecordType::TEAM_AST) == ast);
    CHECK(stat(db, side, RecordType::TEAM_TOV) == tov);
    int q = stat(db, side, RecordType::TEAM_PTS_QTR1) +
            stat(db, side, RecordType::TEAM_PTS_QTR2) +
            stat(db, side, RecordType::TEAM_PTS_QTR3) +
            stat(db, side, RecordType::TEAM_PTS_QTR4);
    CHECK(q == pts);
  }
}

TEST_CASE("games are never tied") {
  for (uint64_t seed = 0; seed < 40; ++seed) {
    Rng rng(seed);
    auto pair = synth_game(rng, "g", NoiseConfig::none());
    CHECK(stat(pair.db, pair.db.home_canonical(), RecordType::TEAM_PTS) !=
          stat(pair.db, pair.db.vis_canonical(), RecordType::TEAM_PTS));
  }
}

TEST_CASE("noise leaves the database alone and only edits the summary") {
  // noise draws happen after the db is rolled, so equal seeds give equal dbs
  Rng a1(31);
  auto clean = synth_game(a1, "g", NoiseConfig::none());

  Rng a2(31);
  auto dist = synth_game(a2, "g", NoiseConfig{0.0, 1.0});
  CHECK(dist.db == clean.db);
  // one distractor after every sentence
  REQUIRE(dist.summary.sentences.size() == 2 * clean.summary.sentences.size());
  Blocklist bl = Blocklist::defaults();
  for (size_t s = 1; s < dist.summary.sentences.size(); s += 2) {
    auto [lo, hi] = dist.summary.sentences[s];
    std::span<const std::string> sent(dist.summary.tokens.data() + lo, size_t(hi - lo));
    CHECK(number_spans(sent, int(s), bl).empty());  // distractors carry no stats
  }

  Rng a3(31);
  auto para = synth_game(a3, "g", NoiseConfig{1.0, 0.0});
  CHECK(para.db == clean.db);
  REQUIRE(para.summary.sentences.size() == clean.summary.sentences.size());
  CHECK(para.summary.tokens != clean.summary.tokens);
  // paraphrases never touch numbers: same values in the same order per sentence
  for (size_t s = 0; s < clean.summary.sentences.size(); ++s) {
    auto values = [&](const Document& d, std::pair<int, int> b) {
      std::span<const std::string> sent(d.tokens.data() + b.first, size_t(b.second - b.first));
      std::vector<int> v;
      for (const auto& ns : number_spans(sent, int(s), bl)) v.push_back(ns.value);
      return v;
    };
    CHECK(values(clean.summary, clean.summary.sentences[s]) ==
          values(para.summary, para.summary.sentences[s]));
  }
}

TEST_CASE("synth_games splits 80/10/10 with floors") {
  auto s20 = synth_games(20, 4, NoiseConfig::none(), 6);
  CHECK(s20.train.size() == 16);
  CHECK(s20.valid.size() == 2);
  CHECK(s20.test.size() == 2);
  CHECK(s20.train[0].db.id == "G00001");
  CHECK(s20.test[1].db.id == "G00020");

  auto s3 = synth_games(3, 4, NoiseConfig::none(), 6);
  CHECK(s3.train.size() == 1);
  CHECK(s3.valid.size() == 1);
  CHECK(s3.test.size() == 1);

  auto s1 = synth_games(1, 4, NoiseConfig::none(), 6);
  CHECK(s1.train.size() == 1);
  CHECK(s1.valid.empty());
  CHECK(s1.test.empty());

  CHECK_THROWS_AS(synth_games(0, 4, NoiseConfig::none()), ContractError);
}

TEST_CASE("synth_games is deterministic in its inputs") {
  auto a = synth_games(5, 99, NoiseConfig::defaults(), 7);
  auto b = synth_games(5, 99, NoiseConfig::defaults(), 7);
  CHECK(a == b);
  auto c = synth_games(5, 100, NoiseConfig::defaults(), 7);
  CHECK(a.train != c.train);
}
