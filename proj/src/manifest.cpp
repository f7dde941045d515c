#include "d2d/manifest.hpp"

#include <fstream>

#include "d2d/util.hpp"

namespace d2d {

nlohmann::json RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["toolkit_version"] = kToolkitVersion;
  j["seed"] = seed;
  j["config"] = config.is_null() ? nlohmann::json::object() : config;
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  j["wall_seconds"] = wall_seconds;
  return j;
}

std::filesystem::path RunManifest::write(const std::filesystem::path& dir) const {
  if (command.empty()) throw ContractError("manifest has no command");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);  // ok if it already exists
  auto final_path = dir / ("manifest-" + command + ".json");
  auto tmp_path = final_path;
  tmp_path += ".tmp";
  {
    std::ofstream out(tmp_path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(cat("cannot write ", tmp_path.string()));
    out << to_json().dump(2) << "\n";
    out.flush();
    if (!out) throw Error(cat("short write to ", tmp_path.string()));
  }
  std::filesystem::rename(tmp_path, final_path, ec);
  if (ec) throw Error(cat("rename ", tmp_path.string(), " -> ", final_path.string(), ": ", ec.message()));
  return final_path;
}

}  // namespace d2d
