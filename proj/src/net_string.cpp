#include "seval/net_string.hpp"

#include <algorithm>
#include <deque>
#include <set>
#include <stdexcept>

#include "seval/digest.hpp"

namespace seval::text {

namespace {

constexpr std::string_view kReserved[] = {"<pad>", "<unk>", "<eos>"};

void append_record(std::string& out, const graph::GNode& node, int emit_id,
                   const std::vector<int>& emit_ids) {
  out += node.op_name;
  out += '|';
  out += std::to_string(emit_id);
  out += '|';
  bool first = true;
  // Operand references in operand order; "in0"/"in1" sort before every attr
  // key the ops use ('0' < '_'), so the field list stays key-sorted.
  for (std::size_t k = 0; k < node.inputs.size(); ++k) {
    if (!first) out += ',';
    first = false;
    out += "in";
    out += std::to_string(k);
    out += '=';
    out += std::to_string(emit_ids[static_cast<std::size_t>(node.inputs[k])]);
  }
  for (const auto& [key, value] : node.attrs) {
    if (!first) out += ',';
    first = false;
    out += key;
    out += '=';
    out += std::to_string(value);
  }
  out += '\n';
}

int find_sink(const graph::CompGraph& g) {
  const auto violations = graph::validate(g);
  if (!violations.empty()) {
    throw graph::GraphError("graph_to_string requires a valid graph: " +
                            violations.front());
  }
  std::vector<bool> consumed(g.nodes.size(), false);
  for (const auto& node : g.nodes) {
    for (const int input : node.inputs) {
      consumed[static_cast<std::size_t>(input)] = true;
    }
  }
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    if (!consumed[i]) return static_cast<int>(i);
  }
  throw graph::GraphError("graph has no sink");
}

std::vector<int> sorted_inputs(const graph::GNode& node) {
  std::vector<int> inputs = node.inputs;
  std::sort(inputs.begin(), inputs.end());
  return inputs;
}

}  // namespace

// Order in which records are emitted, as construction ids. BFS records can
// reference operands emitted later, so numbering happens before emission.
std::vector<int> emission_order(const graph::CompGraph& g, Traversal traversal,
                                int sink) {
  std::vector<int> order;
  order.reserve(g.nodes.size());
  std::vector<bool> seen(g.nodes.size(), false);
  if (traversal == Traversal::postorder_dfs) {
    // Iterative post-order; a node is marked seen on first touch and emitted
    // once all of its inputs have been visited.
    struct Frame {
      int node;
      std::size_t next_input = 0;
    };
    std::vector<Frame> stack{{sink}};
    seen[static_cast<std::size_t>(sink)] = true;
    std::vector<std::vector<int>> inputs_of(g.nodes.size());
    while (!stack.empty()) {
      Frame& frame = stack.back();
      const auto& node = g.nodes[static_cast<std::size_t>(frame.node)];
      if (frame.next_input == 0 && !node.inputs.empty()) {
        inputs_of[static_cast<std::size_t>(frame.node)] = sorted_inputs(node);
      }
      const auto& inputs = inputs_of[static_cast<std::size_t>(frame.node)];
      if (frame.next_input < inputs.size()) {
        const int next = inputs[frame.next_input++];
        if (!seen[static_cast<std::size_t>(next)]) {
          seen[static_cast<std::size_t>(next)] = true;
          stack.push_back(Frame{next});
        }
        continue;
      }
      order.push_back(frame.node);
      stack.pop_back();
    }
  } else {
    std::deque<int> queue{sink};
    seen[static_cast<std::size_t>(sink)] = true;
    while (!queue.empty()) {
      const int id = queue.front();
      queue.pop_front();
      order.push_back(id);
      for (const int input : sorted_inputs(g.nodes[static_cast<std::size_t>(id)])) {
        if (!seen[static_cast<std::size_t>(input)]) {
          seen[static_cast<std::size_t>(input)] = true;
          queue.push_back(input);
        }
      }
    }
  }
  return order;
}

NetString graph_to_string(const graph::CompGraph& g, Traversal traversal) {
  const int sink = find_sink(g);
  const std::vector<int> order = emission_order(g, traversal, sink);
  std::vector<int> emit_ids(g.nodes.size(), -1);
  for (std::size_t i = 0; i < order.size(); ++i) {
    emit_ids[static_cast<std::size_t>(order[i])] = static_cast<int>(i);
  }
  NetString out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    append_record(out.text, g.nodes[static_cast<std::size_t>(order[i])],
                  static_cast<int>(i), emit_ids);
  }
  return out;
}

std::vector<std::string> split_fields(std::string_view text) {
  std::vector<std::string> fields;
  std::string current;
  for (const char c : text) {
    if (c == '|' || c == ',' || c == '=' || c == '\n') {
      if (!current.empty()) {
        fields.push_back(std::move(current));
        current.clear();
      }
    } else {
      current += c;
    }
  }
  if (!current.empty()) fields.push_back(std::move(current));
  return fields;
}

std::int32_t Vocab::id_of(std::string_view field) const {
  const auto it = ids.find(std::string(field));
  return it == ids.end() ? kUnk : it->second;
}

std::string Vocab::digest() const {
  std::string joined;
  for (const auto& token : tokens) {
    joined += token;
    joined += '\n';
  }
  return hex_digest(joined);
}

Vocab build_vocab(const std::vector<NetString>& corpus) {
  if (corpus.empty()) {
    throw std::invalid_argument("build_vocab: empty corpus");
  }
  std::set<std::string> fields;
  for (const auto& s : corpus) {
    for (auto& field : split_fields(s.text)) {
      fields.insert(std::move(field));
    }
  }
  Vocab vocab;
  for (const auto reserved : kReserved) {
    vocab.tokens.emplace_back(reserved);
  }
  for (const auto& field : fields) {
    vocab.tokens.push_back(field);
  }
  for (std::size_t i = 0; i < vocab.tokens.size(); ++i) {
    vocab.ids[vocab.tokens[i]] = static_cast<std::int32_t>(i);
  }
  return vocab;
}

nlohmann::json vocab_to_json(const Vocab& vocab) {
  std::vector<std::string> tokens(
      vocab.tokens.begin() + Vocab::kNumReserved, vocab.tokens.end());
  return {{"format", "seval.vocab"},
          {"version", 1},
          {"reserved", {{"pad", Vocab::kPad}, {"unk", Vocab::kUnk},
                        {"eos", Vocab::kEos}}},
          {"tokens", tokens}};
}

Vocab vocab_from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || doc.value("format", "") != "seval.vocab") {
    throw std::invalid_argument("not a seval.vocab document");
  }
  if (doc.value("version", 0) != 1) {
    throw std::invalid_argument("unsupported vocab version");
  }
  Vocab vocab;
  for (const auto reserved : kReserved) {
    vocab.tokens.emplace_back(reserved);
  }
  for (const auto& token : doc.at("tokens")) {
    vocab.tokens.push_back(token.get<std::string>());
  }
  for (std::size_t i = 0; i < vocab.tokens.size(); ++i) {
    vocab.ids[vocab.tokens[i]] = static_cast<std::int32_t>(i);
  }
  return vocab;
}

TokenSeq tokenize(const NetString& s, const Vocab& vocab, int max_len) {
  TokenSeq seq;
  const auto fields = split_fields(s.text);
  seq.ids.reserve(fields.size() + 1);
  for (const auto& field : fields) {
    seq.ids.push_back(vocab.id_of(field));
  }
  seq.ids.push_back(Vocab::kEos);
  if (static_cast<int>(seq.ids.size()) > max_len) {
    seq.ids.resize(static_cast<std::size_t>(max_len));
    seq.truncated = true;
  }
  return seq;
}

std::vector<std::string> detokenize(const TokenSeq& seq, const Vocab& vocab) {
  std::vector<std::string> fields;
  for (const auto id : seq.ids) {
    if (id == Vocab::kEos) break;
    if (id == Vocab::kPad) continue;
    if (id < 0 || id >= vocab.size()) {
      throw std::out_of_range("token id " + std::to_string(id) +
                              " outside vocab");
    }
    fields.push_back(vocab.tokens[static_cast<std::size_t>(id)]);
  }
  return fields;
}

}  // namespace seval::text
