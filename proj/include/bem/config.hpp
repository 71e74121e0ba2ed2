#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bem/learner.hpp"
#include "bem/synthdata.hpp"

namespace bem::config {

enum class Mode { kTrain, kCompare, kAblate, kSelfcheck };

const char* to_string(Mode mode);
std::optional<Mode> parse_mode(std::string_view text);

struct RunManifest {
  Mode mode = Mode::kTrain;
  learner::TrainConfig train;
  data::DatasetSpec data;  // data.seed is derived per run seed
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "runs";
  bool dump_mixes = false;

  bool operator==(const RunManifest&) const = default;
};

// Flat key=value text; '#' starts a comment. Throws ConfigError naming the key and line.
RunManifest parse_config_text(std::string_view text);
RunManifest parse_config_file(const std::filesystem::path& path);

// Applies one key=value pair (flag overrides); line 0 in diagnostics.
void apply_setting(RunManifest& manifest, std::string_view key, std::string_view value, int line = 0);

// Cross-field validation; throws ConfigError naming the offending key.
void validate(const RunManifest& manifest);

// Snapshot text that re-parses to an equal manifest.
std::string to_config_text(const RunManifest& manifest);

std::vector<std::string> known_keys();

}  // namespace bem::config
