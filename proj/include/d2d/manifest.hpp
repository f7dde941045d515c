#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace d2d {

inline constexpr const char* kToolkitVersion = "0.1.0";

// Provenance sidecar written next to every output artifact. The manifest is
// the one artifact allowed to differ between reruns (wall-clock); everything
// else a command writes must be byte-identical for identical inputs.
struct RunManifest {
  std::string command;
  nlohmann::json config;  // resolved flag/config snapshot
  uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  double wall_seconds = 0.0;

  nlohmann::json to_json() const;

  // Writes manifest-<command>.json into dir atomically: the bytes go to a
  // temp file in the same directory, then a rename moves it into place so a
  // crash can never leave a half-written manifest. Returns the final path.
  std::filesystem::path write(const std::filesystem::path& dir) const;
};

}  // namespace d2d
