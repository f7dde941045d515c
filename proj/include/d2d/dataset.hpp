#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "d2d/record.hpp"

namespace d2d {

// Normalizes a raw numeric field to the integer stored in a record.
// Non-percent types must already be integral. Percent types accept a ratio
// in [0,1] (scaled to [0,100], round half up) or an integral percentage in
// (1,100]; anything else is a SchemaError. A raw value of exactly 1 is
// treated as the ratio 1.0, i.e. 100%.
int normalize_value(double raw, RecordType type);

// Trims leading/trailing whitespace and collapses internal runs to one space.
std::string normalize_string(const std::string& raw);

// Reads one game file ({"games": [...]}) into pairs. Unknown keys, missing
// required keys, or malformed values raise SchemaError/ParseError with the
// offending game id or index in the message. Null numeric fields drop the
// record. Sentence bounds are recomputed from the token stream.
std::vector<ExamplePair> load_games(const std::filesystem::path& file);
void save_games(const std::filesystem::path& file, std::span<const ExamplePair> pairs);

// train/valid/test.json inside dir.
DatasetSplit load_dataset(const std::filesystem::path& dir);
void save_dataset(const std::filesystem::path& dir, const DatasetSplit& split);

// Summary-token vocabulary over the given pairs; tokens below min_count map
// to UNK by omission.
Vocab build_vocab(std::span<const ExamplePair> pairs, int min_count = 1);

}  // namespace d2d
