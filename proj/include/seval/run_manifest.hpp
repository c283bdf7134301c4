#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace seval::cli {

inline constexpr std::string_view kToolVersion = "0.1.0";

struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::string config_digest;  // digest of the effective flag set
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  double wall_ms = 0;
};

// Writes `<primary_output>.manifest.json` atomically (tmp file + rename).
void write_manifest(const RunManifest& manifest,
                    const std::filesystem::path& primary_output);

}  // namespace seval::cli
