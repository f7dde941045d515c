#pragma once

#include <string>
#include <vector>

#include "d2d/record.hpp"

namespace d2d {

struct TemplateOutput {
  Document doc;
  // numeric slot fills in surface order; the oracle for extractive metrics
  std::vector<RelationKey> realized;
};

// Players ordered by PTS descending (ties by database order), canonical names.
std::vector<std::string> top_scorers(const GameDatabase& db, int k);

// Deterministic three-part summary: intro sentence (winner first), one
// sentence per top scorer, closing sentence. Fragments for absent stats are
// dropped. Throws ContractError when a team PTS record is missing or the
// game is tied.
TemplateOutput render_summary(const GameDatabase& db, int num_players = 6);

}  // namespace d2d
