#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "seval/cost_model.hpp"
#include "seval/graph_ir.hpp"
#include "seval/search_space.hpp"

namespace seval::cost {

enum class RecordSource { oracle, ingested };

std::string_view to_string(RecordSource source);

struct DatasetRecord {
  space::SpaceId space = space::SpaceId::tss;
  std::uint32_t arch_index = 0;
  std::string string_hash;  // digest of the canonical NetString; "" if none
  std::map<std::string, double> metrics;
  RecordSource source = RecordSource::oracle;
  std::vector<std::string> flags;  // e.g. "negative:latency", "no_path"
};

struct DatasetHeader {
  int version = 1;
  space::SpaceId space = space::SpaceId::tss;
  std::vector<std::string> metric_names;
  std::string oracle_digest;  // digest over macro config + profile + oracle tag
  std::string device;         // latency profile name; "" for ingested data
  std::uint64_t seed = 0;
  RecordSource source = RecordSource::oracle;
  graph::MacroConfig macro;
};

struct Dataset {
  DatasetHeader header;
  std::vector<DatasetRecord> records;
};

nlohmann::json macro_to_json(const graph::MacroConfig& macro);
graph::MacroConfig macro_from_json(const nlohmann::json& doc);

// Digest covering everything that determines oracle metric values for an
// arch index, so trained models can refuse mismatched datasets.
std::string oracle_digest(const graph::MacroConfig& macro,
                          const DeviceProfile& profile);

// n distinct uniformly sampled indices in sample order; TSS indices whose
// cell output is unreachable are skipped (they have no elaborated graph).
std::vector<std::uint32_t> sample_arch_indices(space::SpaceId space,
                                               std::size_t n,
                                               std::uint64_t seed);

// One record per index with accuracy/latency/memory from the oracles; each
// arch gets an independent seed mixed from (seed, arch_index).
Dataset build_dataset(space::SpaceId space,
                      std::span<const std::uint32_t> indices,
                      const DeviceProfile& profile,
                      const graph::MacroConfig& macro, std::uint64_t seed);

Dataset ingest_csv(const std::filesystem::path& file);

void save_dataset(const Dataset& dataset, const std::filesystem::path& file);
Dataset load_dataset(const std::filesystem::path& file);

}  // namespace seval::cost
