#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <variant>

#include "seval/rng.hpp"

namespace seval::space {

enum class SpaceId { tss, sss };

std::string_view to_string(SpaceId space);
// Accepts "tss" or "sss"; throws std::invalid_argument otherwise.
SpaceId space_from_string(std::string_view text);

// Cell edge operations. The enum order is load-bearing: it defines the
// mixed-radix digit values used by tss_encode/tss_decode.
enum class OpKind : std::uint8_t {
  none = 0,
  skip_connect,
  conv_1x1,
  conv_3x3,
  avg_pool_3x3,
};

inline constexpr int kNumOps = 5;
inline constexpr int kNumEdges = 6;

// Edges (i, j) of the 4-node cell DAG, sorted by (j, i). Digit position e of
// an arch index corresponds to kEdges[e].
inline constexpr std::array<std::pair<int, int>, kNumEdges> kEdges{{
    {0, 1},
    {0, 2},
    {1, 2},
    {0, 3},
    {1, 3},
    {2, 3},
}};

std::string_view to_string(OpKind op);
bool op_from_string(std::string_view text, OpKind& out);

struct TssArch {
  std::array<OpKind, kNumEdges> edge_ops{};
  bool operator==(const TssArch&) const = default;
};

inline constexpr int kNumSlots = 5;
inline constexpr std::array<int, 8> kSssChannels{8, 16, 24, 32, 40, 48, 56, 64};

struct SssArch {
  // Channel values, each drawn from kSssChannels.
  std::array<int, kNumSlots> channels{};
  bool operator==(const SssArch&) const = default;
};

using ArchSpec = std::variant<TssArch, SssArch>;

SpaceId space_of(const ArchSpec& arch);
std::uint64_t space_size(SpaceId space);

TssArch tss_decode(std::uint64_t index);
std::uint32_t tss_encode(const TssArch& arch);
SssArch sss_decode(std::uint64_t index);
std::uint32_t sss_encode(const SssArch& arch);

ArchSpec decode(SpaceId space, std::uint64_t index);
std::uint32_t encode(const ArchSpec& arch);

ArchSpec sample(SpaceId space, Rng& rng);

// Resamples exactly one position to a different value; position and
// replacement both uniform.
ArchSpec mutate(const ArchSpec& arch, Rng& rng);

// Canonical form "tss/<index>" or "sss/<index>".
std::string to_text(const ArchSpec& arch);
// Debug form "tss[none,conv_3x3,...]" or "sss[8,16,24,32,40]".
std::string to_verbose_text(const ArchSpec& arch);
// Parses either form; throws std::invalid_argument on malformed input.
ArchSpec parse_arch(std::string_view text);

}  // namespace seval::space
