#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "seval/search_space.hpp"

namespace seval::graph {

struct TensorShape {
  std::int64_t n = 1, c = 1, h = 1, w = 1;
  std::int64_t numel() const { return n * c * h * w; }
  std::int64_t bytes() const { return numel() * 4; }  // float32 elements
  bool operator==(const TensorShape&) const = default;
};

struct GNode {
  int id = 0;
  std::string op_name;
  // Integer attributes in sorted key order (std::map keeps them sorted).
  std::map<std::string, std::int64_t> attrs;
  std::vector<int> inputs;
  TensorShape out_shape;
  bool operator==(const GNode&) const = default;
};

struct MacroConfig {
  int cells_per_stage = 5;
  std::array<int, 3> stage_channels{16, 32, 64};
  TensorShape input{1, 3, 32, 32};
  int num_classes = 10;
};

struct CompGraph {
  std::vector<GNode> nodes;
  TensorShape input_shape;
  std::int64_t param_count = 0;
  std::string skeleton;  // versioned skeleton tag
  bool operator==(const CompGraph&) const = default;
};

// A cell whose output node is unreachable through non-none edges.
class NoPathError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Structural problems other than shapes (bad JSON, unknown op, broken ids).
class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// True iff the cell output (node 3) is reachable from the cell input through
// non-none edges; cheap feasibility probe used by sampling and search.
bool tss_has_path(const space::TssArch& arch);

// Elaboration fills shapes and param_count; throws NoPathError / ShapeError.
CompGraph elaborate_tss(const space::TssArch& arch, const MacroConfig& cfg);
CompGraph elaborate_sss(const space::SssArch& arch, const MacroConfig& cfg);
CompGraph elaborate(const space::ArchSpec& arch, const MacroConfig& cfg);

void infer_shapes(CompGraph& graph);
std::int64_t count_params(const CompGraph& graph);

// Empty result means the graph satisfies all CompGraph invariants.
std::vector<std::string> validate(const CompGraph& graph);

nlohmann::json graph_to_json(const CompGraph& graph);
CompGraph graph_from_json(const nlohmann::json& doc);

}  // namespace seval::graph
