#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "seval/graph_ir.hpp"
#include "seval/rng.hpp"
#include "seval/search_space.hpp"

namespace seval::cost {

struct DeviceProfile {
  std::string name;
  std::map<std::string, double> ms_per_mflop;  // op_name -> ms per 1e6 FLOPs
  double per_node_overhead_ms = 0;
  double noise_sigma = 0;  // relative, in [0, 0.2]
};

DeviceProfile profile_from_json(const nlohmann::json& doc);
nlohmann::json profile_to_json(const DeviceProfile& profile);
DeviceProfile load_profile(const std::filesystem::path& file);
// All *.json profiles in a directory, sorted by profile name.
std::vector<DeviceProfile> load_profiles(const std::filesystem::path& dir);

// Factor-2 convention: conv 2·Cin·Cout·K²·Hout·Wout, linear 2·in·out,
// pool/ReLU/BN/Add/GlobalAvgPool one op per output element.
std::int64_t node_flops(const graph::GNode& node);
std::int64_t flops(const graph::CompGraph& graph);

// Peak bytes over a topological replay: params·4 baseline, each node output
// allocated at 4 bytes/element and freed once its last consumer has run.
// The graph input tensor is not tracked (constant offset for a fixed input).
std::int64_t peak_memory_bytes(const graph::CompGraph& graph);
// Independent oracle: recomputes the full live set from scratch at every
// step instead of keeping a running counter.
std::int64_t peak_memory_bytes_brute(const graph::CompGraph& graph);

double latency_ms(const graph::CompGraph& graph, const DeviceProfile& profile,
                  Rng& rng);
double latency_ms_mean(const graph::CompGraph& graph,
                       const DeviceProfile& profile);

// Logistic score over op counts (TSS) or summed log2 channels (SSS); the
// noise-free ceiling every accuracy prediction is measured against.
double base_accuracy(const space::ArchSpec& arch);
// base + Normal(0, 3.0 points) noise from the given seed, clamped to [0,100].
double synthetic_accuracy(const space::ArchSpec& arch, std::uint64_t seed);

struct CostReport {
  std::int64_t flops = 0;
  std::int64_t params = 0;
  std::int64_t peak_mem_bytes = 0;
  std::map<std::string, double> latency_ms;  // device name -> milliseconds
  double accuracy_pct = 0;
};

CostReport cost_report(const graph::CompGraph& graph,
                       const space::ArchSpec& arch,
                       const std::vector<DeviceProfile>& profiles,
                       std::uint64_t seed);

}  // namespace seval::cost
