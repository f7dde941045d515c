#include <doctest.h>

#include <cmath>

#include "d2d/metrics.hpp"

using namespace d2d;

namespace {

std::vector<int> chars(const std::string& s) { return {s.begin(), s.end()}; }

RelationKey key(const std::string& e, int v, RecordType t) { return {e, v, t}; }

GameDatabase mini_db() {
  GameDatabase db;
  db.id = "m";
  db.home_city = "Utah";
  db.home_name = "Jazz";
  db.vis_city = "Boston";
  db.vis_name = "Celtics";
  db.players = {{"Al Ox", true}};
  db.records = {
      {RecordType::TEAM_PTS, "Utah Jazz", 102, true},
      {RecordType::TEAM_PTS, "Boston Celtics", 99, false},
      {RecordType::PTS, "Al Ox", 17, true},
  };
  db.finalize();
  return db;
}

std::vector<std::vector<std::string>> docs(std::initializer_list<std::string> sents) {
  std::vector<std::vector<std::string>> out;
  for (const auto& s : sents) out.push_back(split_ws(s));
  return out;
}

}  // namespace

TEST_CASE("dld hand cases") {
  CHECK(dld(chars(""), chars("")) == 0);
  CHECK(dld(chars("abc"), chars("abc")) == 0);
  CHECK(dld(chars(""), chars("abc")) == 3);
  CHECK(dld(chars("abc"), chars("")) == 3);
  CHECK(dld(chars("a"), chars("b")) == 1);
  CHECK(dld(chars("ab"), chars("ba")) == 1);           // one transposition
  CHECK(dld(chars("kitten"), chars("sitting")) == 3);
  // restricted form: a transposed pair cannot be edited again, so this is
  // 3 (not the 2 of unrestricted Damerau-Levenshtein)
  CHECK(dld(chars("ca"), chars("abc")) == 3);
  CHECK(dld(chars("abcd"), chars("badc")) == 2);       // two transpositions
}

TEST_CASE("co scores relation order") {
  auto A = key("A", 1, RecordType::PTS);
  auto B = key("B", 2, RecordType::PTS);
  auto C = key("C", 3, RecordType::PTS);

  std::vector<RelationKey> empty;
  CHECK(co(empty, empty) == 100.0);
  CHECK(co(std::vector{A}, empty) == 0.0);
  CHECK(co(empty, std::vector{A}) == 0.0);
  CHECK(co(std::vector{A, B, C}, std::vector{A, B, C}) == 100.0);
  CHECK(co(std::vector{A, B}, std::vector{B, A}) == doctest::Approx(50.0));
  // dld([A,B,C],[A,C]) = 1, denominator 3
  CHECK(co(std::vector{A, B, C}, std::vector{A, C}) == doctest::Approx(100.0 * 2 / 3));
  // duplicates are kept, not collapsed
  CHECK(co(std::vector{A, A}, std::vector{A}) == doctest::Approx(50.0));
}

TEST_CASE("bleu identity and zero cases") {
  auto cands = docs({"the Jazz won the game in Utah on Friday",
                     "Al Ox scored seventeen points for the hosts"});
  CHECK(bleu(cands, cands) == 100.0);

  auto refs = docs({"completely different words here now folks",
                    "nothing matches in this reference either friend"});
  CHECK(bleu(cands, refs) == 0.0);

  // a corpus with no 4-grams at all cannot score
  CHECK(bleu(docs({"one two three"}), docs({"one two three"})) == 0.0);

  CHECK_THROWS_AS(bleu(cands, docs({"one sentence only"})), ContractError);
}

TEST_CASE("bleu matches hand-computed values") {
  // same length: precisions 4/5, 3/4, 2/3, 1/2; BP = 1
  double expect = 100.0 * std::pow(4.0 / 5 * 3.0 / 4 * 2.0 / 3 * 1.0 / 2, 0.25);
  CHECK(bleu(docs({"a b c d e"}), docs({"a b c d f"})) == doctest::Approx(expect).epsilon(1e-9));

  // short candidate: perfect precisions, BP = exp(1 - 8/4)
  CHECK(bleu(docs({"a b c d"}), docs({"a b c d e f g h"})) ==
        doctest::Approx(100.0 * std::exp(-1.0)).epsilon(1e-9));

  // corpus pooling, not a mean of per-document scores: the second pair has
  // zero 3/4-gram matches but the pooled counts stay positive
  auto cands = docs({"a b c d", "x y z w"});
  auto refs = docs({"a b c d", "x y q w"});
  double pooled = 100.0 * std::pow(7.0 / 8 * 4.0 / 6 * 2.0 / 4 * 1.0 / 2, 0.25);
  CHECK(bleu(cands, refs) == doctest::Approx(pooled).epsilon(1e-9));
}

TEST_CASE("rg counts unique supported relations") {
  auto db = mini_db();
  std::vector<RelationKey> ex = {
      key("Utah Jazz", 102, RecordType::TEAM_PTS),
      key("Utah Jazz", 99, RecordType::TEAM_PTS),   // wrong value
      key("Utah Jazz", 102, RecordType::TEAM_PTS),  // duplicate
  };
  auto r = rg(ex, db);
  CHECK(r.unique_extracted == 2);
  CHECK(r.supported == 1);
  REQUIRE(r.precision.has_value());
  CHECK(*r.precision == doctest::Approx(0.5));

  auto none = rg(std::vector<RelationKey>{}, db);
  CHECK_FALSE(none.precision.has_value());
  CHECK(none.unique_extracted == 0);
  CHECK(none.supported == 0);
}

TEST_CASE("cs is set precision and recall") {
  auto A = key("A", 1, RecordType::PTS);
  auto B = key("B", 2, RecordType::PTS);
  auto C = key("C", 3, RecordType::PTS);
  auto D = key("D", 4, RecordType::PTS);

  auto r = cs(std::vector{A, B, C}, std::vector{B, C, D});
  CHECK(*r.precision == doctest::Approx(2.0 / 3));
  CHECK(*r.recall == doctest::Approx(2.0 / 3));

  // duplicates collapse before comparison
  auto d = cs(std::vector{A, A, B}, std::vector{A, B});
  CHECK(*d.precision == doctest::Approx(1.0));
  CHECK(*d.recall == doctest::Approx(1.0));

  auto e = cs(std::vector<RelationKey>{}, std::vector{A});
  CHECK_FALSE(e.precision.has_value());
  CHECK(*e.recall == doctest::Approx(0.0));
  auto f = cs(std::vector{A}, std::vector<RelationKey>{});
  CHECK(*f.precision == doctest::Approx(0.0));
  CHECK_FALSE(f.recall.has_value());
}

TEST_CASE("evaluate_relations aggregates per-document scores") {
  ExamplePair p1, p2;
  p1.db = mini_db();
  p1.summary.tokens = split_ws("the Jazz won by three points at home tonight");
  p1.summary.sentences = {{0, int(p1.summary.tokens.size())}};
  p2.db = mini_db();
  p2.db.id = "m2";
  p2.summary.tokens = split_ws("Al Ox led all scorers with seventeen points");
  p2.summary.sentences = {{0, int(p2.summary.tokens.size())}};
  std::vector<ExamplePair> pairs = {p1, p2};

  auto score = key("Utah Jazz", 102, RecordType::TEAM_PTS);
  auto pts = key("Al Ox", 17, RecordType::PTS);
  std::vector<std::vector<RelationKey>> gen = {{score, pts}, {}};
  std::vector<std::vector<RelationKey>> gold = {{score, pts}, {pts}};
  std::vector<std::vector<std::string>> toks = {p1.summary.tokens, p2.summary.tokens};

  auto rep = evaluate_relations(gen, gold, toks, pairs);
  CHECK(rep.n_docs == 2);
  REQUIRE(rep.per_doc.size() == 2);

  // doc 1: everything perfect; doc 2: nothing generated
  CHECK(*rep.rg_precision == doctest::Approx(100.0));  // only doc 1 defined
  CHECK(rep.undefined_rg == 1);
  CHECK(rep.rg_count == doctest::Approx(1.0));  // (2 + 0) / 2
  CHECK(*rep.cs_precision == doctest::Approx(100.0));
  CHECK(rep.undefined_cs_p == 1);
  CHECK(*rep.cs_recall == doctest::Approx(50.0));  // (100 + 0) / 2
  CHECK(rep.undefined_cs_r == 0);
  CHECK(rep.co_score == doctest::Approx(50.0));
  CHECK(rep.bleu_score == doctest::Approx(100.0));  // candidates == references
  CHECK(rep.per_doc[0].game_id == "m");
  CHECK(rep.per_doc[1].game_id == "m2");
  CHECK_FALSE(rep.perplexity.has_value());

  CHECK_THROWS_AS(evaluate_relations(gen, gold, toks, std::vector<ExamplePair>{p1}),
                  ContractError);
}

TEST_CASE("format_report pads columns and marks undefined cells") {
  MetricsReport rep;
  rep.rg_count = 2.5;
  rep.co_score = 50.0;
  rep.bleu_score = 12.34;
  auto row = format_report(rep, "gold");
  CHECK(row.find("gold") == 0);
  CHECK(row.find("--") != std::string::npos);    // undefined rg precision
  CHECK(row.find("12.34") != std::string::npos);
  rep.rg_precision = 98.7;
  rep.perplexity = 1.23;
  auto row2 = format_report(rep, "x");
  CHECK(row2.find("98.70") != std::string::npos);
  CHECK(row2.find("1.23") != std::string::npos);
}
