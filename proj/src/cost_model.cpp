#include "seval/cost_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "seval/digest.hpp"

namespace seval::cost {

namespace {

// Published synthetic-accuracy constants (versioned via kOracleVersion):
// logistic argument = sum of per-op weights + bias (TSS) or
// kSssLogWeight · sum(log2 channels) + kSssBias (SSS).
constexpr double kTssOpWeight[space::kNumOps] = {0.0, 0.0, 0.04, 0.12, 0.02};
constexpr double kTssBias = -0.22;
constexpr double kSssLogWeight = 0.08;
constexpr double kSssBias = -1.80;
constexpr double kAccNoisePts = 3.0;

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

std::vector<int> unique_inputs(const graph::GNode& node) {
  std::vector<int> inputs = node.inputs;
  std::sort(inputs.begin(), inputs.end());
  inputs.erase(std::unique(inputs.begin(), inputs.end()), inputs.end());
  return inputs;
}

}  // namespace

DeviceProfile profile_from_json(const nlohmann::json& doc) {
  DeviceProfile profile;
  profile.name = doc.at("name").get<std::string>();
  for (const auto& [op, coeff] : doc.at("ms_per_mflop").items()) {
    const double value = coeff.get<double>();
    if (value <= 0) {
      throw std::invalid_argument("profile " + profile.name + ": coefficient for '" +
                                  op + "' must be positive");
    }
    profile.ms_per_mflop[op] = value;
  }
  profile.per_node_overhead_ms = doc.value("per_node_overhead_ms", 0.0);
  profile.noise_sigma = doc.value("noise_sigma", 0.0);
  if (profile.per_node_overhead_ms < 0) {
    throw std::invalid_argument("profile " + profile.name +
                                ": negative per-node overhead");
  }
  if (profile.noise_sigma < 0 || profile.noise_sigma > 0.2) {
    throw std::invalid_argument("profile " + profile.name +
                                ": noise_sigma outside [0, 0.2]");
  }
  return profile;
}

nlohmann::json profile_to_json(const DeviceProfile& profile) {
  nlohmann::json coeffs = nlohmann::json::object();
  for (const auto& [op, value] : profile.ms_per_mflop) coeffs[op] = value;
  return {{"name", profile.name},
          {"ms_per_mflop", coeffs},
          {"per_node_overhead_ms", profile.per_node_overhead_ms},
          {"noise_sigma", profile.noise_sigma}};
}

DeviceProfile load_profile(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) {
    throw std::runtime_error("cannot open profile " + file.string());
  }
  nlohmann::json doc;
  in >> doc;
  return profile_from_json(doc);
}

std::vector<DeviceProfile> load_profiles(const std::filesystem::path& dir) {
  std::vector<DeviceProfile> profiles;
  if (!std::filesystem::is_directory(dir)) {
    throw std::runtime_error("profile directory not found: " + dir.string());
  }
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() == ".json") {
      profiles.push_back(load_profile(entry.path()));
    }
  }
  std::sort(profiles.begin(), profiles.end(),
            [](const DeviceProfile& a, const DeviceProfile& b) {
              return a.name < b.name;
            });
  if (profiles.empty()) {
    throw std::runtime_error("no profiles in " + dir.string());
  }
  return profiles;
}

std::int64_t node_flops(const graph::GNode& node) {
  if (node.op_name == "Conv2d") {
    const auto k = node.attrs.at("kernel");
    return 2 * node.attrs.at("in_channels") * node.attrs.at("out_channels") *
           k * k * node.out_shape.h * node.out_shape.w * node.out_shape.n;
  }
  if (node.op_name == "Linear") {
    return 2 * node.attrs.at("in_channels") * node.attrs.at("out_channels") *
           node.out_shape.n;
  }
  if (node.op_name == "BatchNorm" || node.op_name == "ReLU" ||
      node.op_name == "Add" || node.op_name == "AvgPool2d" ||
      node.op_name == "GlobalAvgPool") {
    return node.out_shape.numel();
  }
  throw graph::GraphError("flops: unknown op '" + node.op_name +
                          "' at node " + std::to_string(node.id));
}

std::int64_t flops(const graph::CompGraph& graph) {
  std::int64_t total = 0;
  for (const auto& node : graph.nodes) total += node_flops(node);
  return total;
}

std::int64_t peak_memory_bytes(const graph::CompGraph& graph) {
  std::vector<int> remaining(graph.nodes.size(), 0);
  for (const auto& node : graph.nodes) {
    for (const int input : unique_inputs(node)) {
      ++remaining[static_cast<std::size_t>(input)];
    }
  }
  std::int64_t running = graph.param_count * 4;
  std::int64_t peak = running;
  for (const auto& node : graph.nodes) {
    running += node.out_shape.bytes();
    peak = std::max(peak, running);
    for (const int input : unique_inputs(node)) {
      if (--remaining[static_cast<std::size_t>(input)] == 0) {
        running -= graph.nodes[static_cast<std::size_t>(input)]
                       .out_shape.bytes();
      }
    }
  }
  return peak;
}

std::int64_t peak_memory_bytes_brute(const graph::CompGraph& graph) {
  const int n = static_cast<int>(graph.nodes.size());
  std::vector<int> last_consumer(graph.nodes.size(), -1);
  for (const auto& node : graph.nodes) {
    for (const int input : node.inputs) {
      last_consumer[static_cast<std::size_t>(input)] =
          std::max(last_consumer[static_cast<std::size_t>(input)], node.id);
    }
  }
  std::int64_t peak = graph.param_count * 4;
  for (int step = 0; step < n; ++step) {
    std::set<int> live;
    for (int i = 0; i <= step; ++i) {
      // Alive during `step`: just produced, never consumed (kept to the
      // end), or awaited by this or a later consumer — a tensor read at
      // `step` is freed only after the consumer has run.
      const int last = last_consumer[static_cast<std::size_t>(i)];
      if (i == step || last == -1 || last >= step) live.insert(i);
    }
    std::int64_t bytes = graph.param_count * 4;
    for (const int i : live) {
      bytes += graph.nodes[static_cast<std::size_t>(i)].out_shape.bytes();
    }
    peak = std::max(peak, bytes);
  }
  return peak;
}

double latency_ms_mean(const graph::CompGraph& graph,
                       const DeviceProfile& profile) {
  double total = 0;
  for (const auto& node : graph.nodes) {
    const auto it = profile.ms_per_mflop.find(node.op_name);
    if (it == profile.ms_per_mflop.end()) {
      throw std::runtime_error("profile " + profile.name +
                               " has no coefficient for op '" + node.op_name +
                               "'");
    }
    total += it->second * static_cast<double>(node_flops(node)) / 1e6;
  }
  total += profile.per_node_overhead_ms *
           static_cast<double>(graph.nodes.size());
  return total;
}

double latency_ms(const graph::CompGraph& graph, const DeviceProfile& profile,
                  Rng& rng) {
  const double mean = latency_ms_mean(graph, profile);
  const double eps = rng.normal(0.0, profile.noise_sigma);
  return mean * (1.0 + eps);
}

double base_accuracy(const space::ArchSpec& arch) {
  double z = 0;
  if (const auto* tss = std::get_if<space::TssArch>(&arch)) {
    z = kTssBias;
    for (const auto op : tss->edge_ops) {
      z += kTssOpWeight[static_cast<std::size_t>(op)];
    }
  } else {
    const auto& sss = std::get<space::SssArch>(arch);
    double log_sum = 0;
    for (const int ch : sss.channels) log_sum += std::log2(ch);
    z = kSssLogWeight * log_sum + kSssBias;
  }
  return 100.0 * logistic(z);
}

double synthetic_accuracy(const space::ArchSpec& arch, std::uint64_t seed) {
  Rng rng(seed);
  const double noisy = base_accuracy(arch) + rng.normal(0.0, kAccNoisePts);
  return std::clamp(noisy, 0.0, 100.0);
}

CostReport cost_report(const graph::CompGraph& graph,
                       const space::ArchSpec& arch,
                       const std::vector<DeviceProfile>& profiles,
                       std::uint64_t seed) {
  CostReport report;
  report.flops = flops(graph);
  report.params = graph.param_count;
  report.peak_mem_bytes = peak_memory_bytes(graph);
  for (const auto& profile : profiles) {
    Rng rng(Rng::mix(seed, fnv1a64(profile.name)));
    report.latency_ms[profile.name] = latency_ms(graph, profile, rng);
  }
  report.accuracy_pct = synthetic_accuracy(arch, Rng::mix(seed, 1));
  return report;
}

}  // namespace seval::cost
