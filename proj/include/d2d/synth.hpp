#pragma once

#include <cstdint>

#include "d2d/record.hpp"

namespace d2d {

struct NoiseConfig {
  double paraphrase_prob = 0.0;  // per lexical site
  double distractor_prob = 0.0;  // per sentence gap

  static NoiseConfig none() { return {0.0, 0.0}; }
  static NoiseConfig defaults() { return {0.3, 0.2}; }
};

// One internally consistent game. Stats respect the arithmetic couplings
// (PTS from makes, REB = OREB + DREB, team totals are player sums, percents
// are half-up rounded) and the game is never tied. The summary is the
// template rendering plus noise.
ExamplePair synth_game(Rng& rng, const std::string& id, const NoiseConfig& noise,
                       int roster_size = 13);

// n games split 80/10/10 by game id (valid/test get at least one game when
// n >= 3). Deterministic in (n, seed, noise, roster_size).
DatasetSplit synth_games(int n, uint64_t seed, const NoiseConfig& noise, int roster_size = 13);

}  // namespace d2d
