#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "d2d/manifest.hpp"
#include "d2d/util.hpp"

using namespace d2d;

TEST_CASE("manifests land atomically with all provenance fields") {
  RunManifest m;
  m.command = "synth";
  m.seed = 17;
  m.config = {{"games", 4}};
  m.inputs = {"a.jsonl"};
  m.outputs = {"train.jsonl", "valid.jsonl"};
  m.wall_seconds = 0.25;

  auto dir = std::filesystem::temp_directory_path() / "d2d_tests" / "manifest";
  std::filesystem::remove_all(dir);
  auto path = m.write(dir);
  CHECK(path.filename() == "manifest-synth.json");
  CHECK(std::filesystem::exists(path));
  // the temp file must be gone: rename, not copy
  CHECK(!std::filesystem::exists(path.string() + ".tmp"));

  std::ifstream in(path);
  auto j = nlohmann::json::parse(in);
  CHECK(j["command"] == "synth");
  CHECK(j["toolkit_version"] == kToolkitVersion);
  CHECK(j["seed"] == 17);
  CHECK(j["config"]["games"] == 4);
  CHECK(j["inputs"] == nlohmann::json::array({"a.jsonl"}));
  CHECK(j["outputs"].size() == 2);
  CHECK(j["wall_seconds"].is_number());

  // rewriting replaces in place
  m.seed = 18;
  auto path2 = m.write(dir);
  CHECK(path2 == path);
  std::ifstream in2(path);
  CHECK(nlohmann::json::parse(in2)["seed"] == 18);

  RunManifest empty;
  CHECK_THROWS_AS(empty.write(dir), ContractError);

  // null config serializes as an empty object, not null
  RunManifest bare;
  bare.command = "eval";
  CHECK(bare.to_json()["config"].is_object());
}
