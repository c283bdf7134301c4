#include "seval/graph_ir.hpp"

#include <algorithm>

namespace seval::graph {

namespace {

constexpr int kCellNodes = 4;

int add_node(CompGraph& g, std::string op, std::vector<int> inputs,
             std::map<std::string, std::int64_t> attrs = {}) {
  const int id = static_cast<int>(g.nodes.size());
  g.nodes.push_back(GNode{id, std::move(op), std::move(attrs),
                          std::move(inputs), TensorShape{}});
  return id;
}

int add_conv_bn_relu(CompGraph& g, int input, int in_ch, int out_ch,
                     int kernel, int stride, int padding) {
  const int conv = add_node(g, "Conv2d", {input},
                            {{"in_channels", in_ch},
                             {"kernel", kernel},
                             {"out_channels", out_ch},
                             {"padding", padding},
                             {"stride", stride}});
  const int bn = add_node(g, "BatchNorm", {conv}, {{"in_channels", out_ch}});
  return add_node(g, "ReLU", {bn});
}

struct CellWiring {
  std::array<bool, kCellNodes> defined{};
  std::array<bool, kCellNodes> needed{};
};

// Liveness over the cell DAG: defined = receives a value from the input,
// needed = feeds the output. Only needed x needed edges are elaborated, so
// dead branches collapse and reachability-degenerate archs produce equal
// graphs.
CellWiring wire_cell(const space::TssArch& arch) {
  CellWiring w;
  w.defined[0] = true;
  for (int e = 0; e < space::kNumEdges; ++e) {
    const auto [i, j] = space::kEdges[static_cast<std::size_t>(e)];
    if (arch.edge_ops[static_cast<std::size_t>(e)] != space::OpKind::none &&
        w.defined[static_cast<std::size_t>(i)]) {
      w.defined[static_cast<std::size_t>(j)] = true;
    }
  }
  w.needed[3] = true;
  for (int e = space::kNumEdges - 1; e >= 0; --e) {
    const auto [i, j] = space::kEdges[static_cast<std::size_t>(e)];
    if (arch.edge_ops[static_cast<std::size_t>(e)] != space::OpKind::none &&
        w.defined[static_cast<std::size_t>(i)] &&
        w.needed[static_cast<std::size_t>(j)]) {
      w.needed[static_cast<std::size_t>(i)] = true;
    }
  }
  return w;
}

// Returns the graph node id carrying the cell output.
int emit_cell(CompGraph& g, int cell_input, int channels,
              const space::TssArch& arch) {
  const CellWiring w = wire_cell(arch);
  if (!w.defined[3]) {
    throw NoPathError("cell output unreachable in arch " +
                      space::to_text(space::ArchSpec{arch}));
  }
  std::array<int, kCellNodes> value{cell_input, -1, -1, -1};
  for (int j = 1; j < kCellNodes; ++j) {
    if (!w.defined[static_cast<std::size_t>(j)] ||
        !w.needed[static_cast<std::size_t>(j)]) {
      continue;
    }
    std::vector<int> contributions;
    for (int e = 0; e < space::kNumEdges; ++e) {
      const auto [src, dst] = space::kEdges[static_cast<std::size_t>(e)];
      if (dst != j) continue;
      const auto op = arch.edge_ops[static_cast<std::size_t>(e)];
      if (op == space::OpKind::none || !w.defined[static_cast<std::size_t>(src)]) {
        continue;
      }
      const int src_value = value[static_cast<std::size_t>(src)];
      switch (op) {
        case space::OpKind::skip_connect:
          contributions.push_back(src_value);
          break;
        case space::OpKind::conv_1x1:
          contributions.push_back(
              add_conv_bn_relu(g, src_value, channels, channels, 1, 1, 0));
          break;
        case space::OpKind::conv_3x3:
          contributions.push_back(
              add_conv_bn_relu(g, src_value, channels, channels, 3, 1, 1));
          break;
        case space::OpKind::avg_pool_3x3:
          contributions.push_back(add_node(
              g, "AvgPool2d", {src_value},
              {{"kernel", 3}, {"padding", 1}, {"stride", 1}}));
          break;
        case space::OpKind::none:
          break;
      }
    }
    if (contributions.size() == 1) {
      value[static_cast<std::size_t>(j)] = contributions.front();
    } else {
      value[static_cast<std::size_t>(j)] =
          add_node(g, "Add", std::move(contributions));
    }
  }
  return value[3];
}

TensorShape conv_like_shape(const GNode& node, const TensorShape& in,
                            std::int64_t out_channels) {
  const auto kernel = node.attrs.at("kernel");
  const auto stride = node.attrs.at("stride");
  const auto padding = node.attrs.at("padding");
  const auto h = (in.h + 2 * padding - kernel) / stride + 1;
  const auto w = (in.w + 2 * padding - kernel) / stride + 1;
  if (h < 1 || w < 1) {
    throw ShapeError("node " + std::to_string(node.id) +
                     ": spatial size collapsed to zero");
  }
  return TensorShape{in.n, out_channels, h, w};
}

}  // namespace

bool tss_has_path(const space::TssArch& arch) {
  return wire_cell(arch).defined[3];
}

CompGraph elaborate_tss(const space::TssArch& arch, const MacroConfig& cfg) {
  CompGraph g;
  g.skeleton = "tss-cell-v1";
  g.input_shape = cfg.input;
  int cur = add_node(g, "Conv2d", {},
                     {{"in_channels", cfg.input.c},
                      {"kernel", 3},
                      {"out_channels", cfg.stage_channels[0]},
                      {"padding", 1},
                      {"stride", 1}});
  cur = add_node(g, "BatchNorm", {cur},
                 {{"in_channels", cfg.stage_channels[0]}});
  for (int stage = 0; stage < 3; ++stage) {
    const int ch = cfg.stage_channels[static_cast<std::size_t>(stage)];
    if (stage > 0) {
      const int prev = cfg.stage_channels[static_cast<std::size_t>(stage - 1)];
      cur = add_node(g, "Conv2d", {cur},
                     {{"in_channels", prev},
                      {"kernel", 3},
                      {"out_channels", ch},
                      {"padding", 1},
                      {"stride", 2}});
      cur = add_node(g, "BatchNorm", {cur}, {{"in_channels", ch}});
    }
    for (int cell = 0; cell < cfg.cells_per_stage; ++cell) {
      cur = emit_cell(g, cur, ch, arch);
    }
  }
  cur = add_node(g, "GlobalAvgPool", {cur});
  add_node(g, "Linear", {cur},
           {{"in_channels", cfg.stage_channels[2]},
            {"out_channels", cfg.num_classes}});
  infer_shapes(g);
  g.param_count = count_params(g);
  return g;
}

CompGraph elaborate_sss(const space::SssArch& arch, const MacroConfig& cfg) {
  CompGraph g;
  g.skeleton = "sss-chain-v1";
  g.input_shape = cfg.input;
  int cur = -1;
  int in_ch = static_cast<int>(cfg.input.c);
  for (int block = 0; block < space::kNumSlots; ++block) {
    const int out_ch = arch.channels[static_cast<std::size_t>(block)];
    const int stride = (block == 1 || block == 3) ? 2 : 1;
    std::vector<int> inputs;
    if (cur >= 0) inputs.push_back(cur);
    const int conv = add_node(g, "Conv2d", std::move(inputs),
                              {{"in_channels", in_ch},
                               {"kernel", 3},
                               {"out_channels", out_ch},
                               {"padding", 1},
                               {"stride", stride}});
    const int bn = add_node(g, "BatchNorm", {conv}, {{"in_channels", out_ch}});
    cur = add_node(g, "ReLU", {bn});
    in_ch = out_ch;
  }
  cur = add_node(g, "GlobalAvgPool", {cur});
  add_node(g, "Linear", {cur},
           {{"in_channels", in_ch}, {"out_channels", cfg.num_classes}});
  infer_shapes(g);
  g.param_count = count_params(g);
  return g;
}

CompGraph elaborate(const space::ArchSpec& arch, const MacroConfig& cfg) {
  if (const auto* tss = std::get_if<space::TssArch>(&arch)) {
    return elaborate_tss(*tss, cfg);
  }
  return elaborate_sss(std::get<space::SssArch>(arch), cfg);
}

void infer_shapes(CompGraph& g) {
  for (auto& node : g.nodes) {
    for (const int input : node.inputs) {
      if (input < 0 || input >= node.id) {
        throw GraphError("node " + std::to_string(node.id) +
                         ": input id " + std::to_string(input) +
                         " breaks topological order");
      }
    }
    const auto input_shape = [&](std::size_t idx) -> const TensorShape& {
      if (node.inputs.empty()) return g.input_shape;
      return g.nodes[static_cast<std::size_t>(node.inputs[idx])].out_shape;
    };
    if (node.op_name == "Conv2d") {
      const auto& in = input_shape(0);
      if (in.c != node.attrs.at("in_channels")) {
        throw ShapeError("node " + std::to_string(node.id) +
                         ": Conv2d expects " +
                         std::to_string(node.attrs.at("in_channels")) +
                         " channels, got " + std::to_string(in.c));
      }
      node.out_shape = conv_like_shape(node, in, node.attrs.at("out_channels"));
    } else if (node.op_name == "AvgPool2d") {
      const auto& in = input_shape(0);
      node.out_shape = conv_like_shape(node, in, in.c);
    } else if (node.op_name == "BatchNorm") {
      const auto& in = input_shape(0);
      if (in.c != node.attrs.at("in_channels")) {
        throw ShapeError("node " + std::to_string(node.id) +
                         ": BatchNorm channel mismatch");
      }
      node.out_shape = in;
    } else if (node.op_name == "ReLU") {
      node.out_shape = input_shape(0);
    } else if (node.op_name == "Add") {
      if (node.inputs.size() < 2) {
        throw ShapeError("node " + std::to_string(node.id) +
                         ": Add needs at least 2 inputs");
      }
      const auto& first = input_shape(0);
      for (std::size_t i = 1; i < node.inputs.size(); ++i) {
        if (!(input_shape(i) == first)) {
          throw ShapeError("node " + std::to_string(node.id) +
                           ": Add input shapes differ");
        }
      }
      node.out_shape = first;
    } else if (node.op_name == "GlobalAvgPool") {
      const auto& in = input_shape(0);
      node.out_shape = TensorShape{in.n, in.c, 1, 1};
    } else if (node.op_name == "Linear") {
      const auto& in = input_shape(0);
      if (in.c * in.h * in.w != node.attrs.at("in_channels")) {
        throw ShapeError("node " + std::to_string(node.id) +
                         ": Linear expects " +
                         std::to_string(node.attrs.at("in_channels")) +
                         " input features, got " +
                         std::to_string(in.c * in.h * in.w));
      }
      node.out_shape = TensorShape{in.n, node.attrs.at("out_channels"), 1, 1};
    } else {
      throw GraphError("node " + std::to_string(node.id) + ": unknown op '" +
                       node.op_name + "'");
    }
  }
}

std::int64_t count_params(const CompGraph& g) {
  std::int64_t params = 0;
  for (const auto& node : g.nodes) {
    if (node.op_name == "Conv2d") {
      const auto k = node.attrs.at("kernel");
      params += k * k * node.attrs.at("in_channels") *
                node.attrs.at("out_channels");
    } else if (node.op_name == "BatchNorm") {
      params += 2 * node.attrs.at("in_channels");
    } else if (node.op_name == "Linear") {
      const auto in = node.attrs.at("in_channels");
      const auto out = node.attrs.at("out_channels");
      params += in * out + out;
    }
  }
  return params;
}

std::vector<std::string> validate(const CompGraph& g) {
  std::vector<std::string> violations;
  if (g.nodes.empty()) {
    violations.push_back("graph has no nodes");
    return violations;
  }
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    if (g.nodes[i].id != static_cast<int>(i)) {
      violations.push_back("node ids not dense at position " +
                           std::to_string(i));
      break;
    }
  }
  std::vector<int> consumers(g.nodes.size(), 0);
  for (const auto& node : g.nodes) {
    for (const int input : node.inputs) {
      if (input < 0 || input >= node.id) {
        violations.push_back("acyclicity: node " + std::to_string(node.id) +
                             " input " + std::to_string(input) +
                             " not strictly smaller");
      } else {
        ++consumers[static_cast<std::size_t>(input)];
      }
    }
  }
  int sinks = 0;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    if (consumers[i] == 0) ++sinks;
  }
  if (sinks != 1) {
    violations.push_back("expected exactly 1 sink, found " +
                         std::to_string(sinks));
  }
  // Forward reachability from the graph input: node 0 consumes it; any node
  // fed by a reachable node is reachable.
  std::vector<bool> reachable(g.nodes.size(), false);
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const auto& node = g.nodes[i];
    if (node.inputs.empty()) {
      reachable[i] = (i == 0);
      continue;
    }
    for (const int input : node.inputs) {
      if (input >= 0 && input < static_cast<int>(i) &&
          reachable[static_cast<std::size_t>(input)]) {
        reachable[i] = true;
        break;
      }
    }
  }
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    if (!reachable[i]) {
      violations.push_back("reachability: node " + std::to_string(i) +
                           " not reachable from the input");
    }
  }
  return violations;
}

nlohmann::json graph_to_json(const CompGraph& g) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& node : g.nodes) {
    nlohmann::json attrs = nlohmann::json::object();
    for (const auto& [key, value] : node.attrs) attrs[key] = value;
    nodes.push_back({{"id", node.id},
                     {"op", node.op_name},
                     {"attrs", attrs},
                     {"inputs", node.inputs},
                     {"shape",
                      {node.out_shape.n, node.out_shape.c, node.out_shape.h,
                       node.out_shape.w}}});
  }
  return {{"format", "seval.graph"},
          {"version", 1},
          {"skeleton", g.skeleton},
          {"input_shape",
           {g.input_shape.n, g.input_shape.c, g.input_shape.h,
            g.input_shape.w}},
          {"param_count", g.param_count},
          {"nodes", nodes}};
}

CompGraph graph_from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || doc.value("format", "") != "seval.graph") {
    throw GraphError("not a seval.graph document");
  }
  if (doc.value("version", 0) != 1) {
    throw GraphError("unsupported graph format version");
  }
  CompGraph g;
  g.skeleton = doc.value("skeleton", "");
  const auto& in = doc.at("input_shape");
  g.input_shape = TensorShape{in.at(0), in.at(1), in.at(2), in.at(3)};
  g.param_count = doc.at("param_count");
  for (const auto& entry : doc.at("nodes")) {
    GNode node;
    node.id = entry.at("id");
    node.op_name = entry.at("op");
    for (const auto& [key, value] : entry.at("attrs").items()) {
      node.attrs[key] = value.get<std::int64_t>();
    }
    node.inputs = entry.at("inputs").get<std::vector<int>>();
    const auto& shape = entry.at("shape");
    node.out_shape =
        TensorShape{shape.at(0), shape.at(1), shape.at(2), shape.at(3)};
    g.nodes.push_back(std::move(node));
  }
  return g;
}

}  // namespace seval::graph
