#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "seval/graph_ir.hpp"

namespace seval::text {

// Traversal from the sink with inputs visited in ascending id order.
// postorder_dfs emits a node after its inputs; bfs emits in dequeue order
// starting at the sink. Both assign node_id = emission counter.
enum class Traversal { postorder_dfs, bfs };

struct NetString {
  std::string text;
  bool operator==(const NetString&) const = default;
};

// Records are `op_name|node_id|k1=v1,k2=v2,...`, one per line, fields in
// sorted key order. Operand references appear as in0=/in1= fields carrying
// the producers' emitted node_ids (operand order preserved), which makes the
// string lossless up to node relabeling. Throws GraphError on graphs that
// fail validate().
NetString graph_to_string(const graph::CompGraph& g,
                          Traversal traversal = Traversal::postorder_dfs);

// Field view used by tokenize: splits on '|', ',', '=', '\n'; empty segments
// (e.g. the attr slot of `ReLU|4|`) produce no field.
std::vector<std::string> split_fields(std::string_view text);

struct Vocab {
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;
  static constexpr std::int32_t kEos = 2;
  static constexpr int kNumReserved = 3;

  std::vector<std::string> tokens;          // index = id, [0..2] reserved
  std::unordered_map<std::string, std::int32_t> ids;

  int size() const { return static_cast<int>(tokens.size()); }
  std::int32_t id_of(std::string_view field) const;
  std::string digest() const;
};

// Distinct fields across the corpus, sorted lexicographically, ids assigned
// after the reserved ids. Throws std::invalid_argument on an empty corpus.
Vocab build_vocab(const std::vector<NetString>& corpus);

nlohmann::json vocab_to_json(const Vocab& vocab);
Vocab vocab_from_json(const nlohmann::json& doc);

struct TokenSeq {
  std::vector<std::int32_t> ids;
  bool truncated = false;
  int length() const { return static_cast<int>(ids.size()); }
};

// One token per field, EOS appended, then truncated to max_len; truncated is
// set exactly when the pre-truncation length exceeds max_len.
TokenSeq tokenize(const NetString& s, const Vocab& vocab, int max_len);

// Fields until EOS; PAD is skipped, UNK renders as the reserved token text.
std::vector<std::string> detokenize(const TokenSeq& seq, const Vocab& vocab);

}  // namespace seval::text
