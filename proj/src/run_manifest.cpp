#include "seval/run_manifest.hpp"

#include <fstream>

#include <json.hpp>

namespace seval::cli {

void write_manifest(const RunManifest& manifest,
                    const std::filesystem::path& primary_output) {
  nlohmann::json doc{{"format", "seval.manifest"},
                     {"version", 1},
                     {"command", manifest.command},
                     {"argv", manifest.argv},
                     {"config_digest", manifest.config_digest},
                     {"seed", manifest.seed},
                     {"inputs", manifest.inputs},
                     {"outputs", manifest.outputs},
                     {"tool_version", kToolVersion},
                     {"wall_ms", manifest.wall_ms}};
  const auto path = primary_output.string() + ".manifest.json";
  const auto tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) {
      throw std::runtime_error("cannot open " + tmp + " for writing");
    }
    out << doc.dump(2) << '\n';
    if (!out) throw std::runtime_error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace seval::cli
