#include "seval/search_space.hpp"

#include <charconv>
#include <stdexcept>

namespace seval::space {

namespace {

constexpr std::array<std::string_view, kNumOps> kOpNames{
    "none", "skip_connect", "conv_1x1", "conv_3x3", "avg_pool_3x3"};

constexpr std::uint64_t kTssSize = 15625;  // 5^6
constexpr std::uint64_t kSssSize = 32768;  // 8^5

int channel_digit(int channels) {
  for (int d = 0; d < static_cast<int>(kSssChannels.size()); ++d) {
    if (kSssChannels[static_cast<std::size_t>(d)] == channels) return d;
  }
  throw std::invalid_argument("channel value " + std::to_string(channels) +
                              " not in the SSS channel set");
}

std::uint64_t parse_u64(std::string_view text) {
  std::uint64_t value = 0;
  const auto* begin = text.data();
  const auto* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || ptr != end || text.empty()) {
    throw std::invalid_argument("malformed arch index: '" + std::string(text) +
                                "'");
  }
  return value;
}

}  // namespace

std::string_view to_string(SpaceId space) {
  return space == SpaceId::tss ? "tss" : "sss";
}

SpaceId space_from_string(std::string_view text) {
  if (text == "tss") return SpaceId::tss;
  if (text == "sss") return SpaceId::sss;
  throw std::invalid_argument("unknown space '" + std::string(text) + "'");
}

std::string_view to_string(OpKind op) {
  return kOpNames[static_cast<std::size_t>(op)];
}

bool op_from_string(std::string_view text, OpKind& out) {
  for (int i = 0; i < kNumOps; ++i) {
    if (kOpNames[static_cast<std::size_t>(i)] == text) {
      out = static_cast<OpKind>(i);
      return true;
    }
  }
  return false;
}

SpaceId space_of(const ArchSpec& arch) {
  return std::holds_alternative<TssArch>(arch) ? SpaceId::tss : SpaceId::sss;
}

std::uint64_t space_size(SpaceId space) {
  return space == SpaceId::tss ? kTssSize : kSssSize;
}

TssArch tss_decode(std::uint64_t index) {
  if (index >= kTssSize) {
    throw std::out_of_range("tss index " + std::to_string(index) +
                            " out of range [0, " + std::to_string(kTssSize) +
                            ")");
  }
  TssArch arch;
  for (int e = 0; e < kNumEdges; ++e) {
    arch.edge_ops[static_cast<std::size_t>(e)] =
        static_cast<OpKind>(index % kNumOps);
    index /= kNumOps;
  }
  return arch;
}

std::uint32_t tss_encode(const TssArch& arch) {
  std::uint32_t index = 0;
  for (int e = kNumEdges - 1; e >= 0; --e) {
    index = index * kNumOps +
            static_cast<std::uint32_t>(arch.edge_ops[static_cast<std::size_t>(e)]);
  }
  return index;
}

SssArch sss_decode(std::uint64_t index) {
  if (index >= kSssSize) {
    throw std::out_of_range("sss index " + std::to_string(index) +
                            " out of range [0, " + std::to_string(kSssSize) +
                            ")");
  }
  SssArch arch;
  for (int s = 0; s < kNumSlots; ++s) {
    arch.channels[static_cast<std::size_t>(s)] =
        kSssChannels[index % kSssChannels.size()];
    index /= kSssChannels.size();
  }
  return arch;
}

std::uint32_t sss_encode(const SssArch& arch) {
  std::uint32_t index = 0;
  for (int s = kNumSlots - 1; s >= 0; --s) {
    index = index * static_cast<std::uint32_t>(kSssChannels.size()) +
            static_cast<std::uint32_t>(
                channel_digit(arch.channels[static_cast<std::size_t>(s)]));
  }
  return index;
}

ArchSpec decode(SpaceId space, std::uint64_t index) {
  if (space == SpaceId::tss) return tss_decode(index);
  return sss_decode(index);
}

std::uint32_t encode(const ArchSpec& arch) {
  if (const auto* tss = std::get_if<TssArch>(&arch)) return tss_encode(*tss);
  return sss_encode(std::get<SssArch>(arch));
}

ArchSpec sample(SpaceId space, Rng& rng) {
  return decode(space, rng.uniform_u32(
                           static_cast<std::uint32_t>(space_size(space))));
}

ArchSpec mutate(const ArchSpec& arch, Rng& rng) {
  if (const auto* tss = std::get_if<TssArch>(&arch)) {
    TssArch out = *tss;
    const auto pos = rng.uniform_u32(kNumEdges);
    const auto offset = 1 + rng.uniform_u32(kNumOps - 1);
    auto& op = out.edge_ops[pos];
    op = static_cast<OpKind>((static_cast<std::uint32_t>(op) + offset) %
                             kNumOps);
    return out;
  }
  SssArch out = std::get<SssArch>(arch);
  const auto pos = rng.uniform_u32(kNumSlots);
  const auto radix = static_cast<std::uint32_t>(kSssChannels.size());
  const auto offset = 1 + rng.uniform_u32(radix - 1);
  auto& ch = out.channels[pos];
  ch = kSssChannels[(static_cast<std::uint32_t>(channel_digit(ch)) + offset) %
                    radix];
  return out;
}

std::string to_text(const ArchSpec& arch) {
  return std::string(to_string(space_of(arch))) + "/" +
         std::to_string(encode(arch));
}

std::string to_verbose_text(const ArchSpec& arch) {
  std::string out(to_string(space_of(arch)));
  out += '[';
  if (const auto* tss = std::get_if<TssArch>(&arch)) {
    for (int e = 0; e < kNumEdges; ++e) {
      if (e) out += ',';
      out += to_string(tss->edge_ops[static_cast<std::size_t>(e)]);
    }
  } else {
    const auto& sss = std::get<SssArch>(arch);
    for (int s = 0; s < kNumSlots; ++s) {
      if (s) out += ',';
      out += std::to_string(sss.channels[static_cast<std::size_t>(s)]);
    }
  }
  out += ']';
  return out;
}

ArchSpec parse_arch(std::string_view text) {
  SpaceId space;
  if (text.substr(0, 3) == "tss") {
    space = SpaceId::tss;
  } else if (text.substr(0, 3) == "sss") {
    space = SpaceId::sss;
  } else {
    throw std::invalid_argument("arch must start with 'tss' or 'sss': '" +
                                std::string(text) + "'");
  }
  std::string_view rest = text.substr(3);
  if (rest.size() >= 2 && rest.front() == '/') {
    const std::uint64_t index = parse_u64(rest.substr(1));
    if (index >= space_size(space)) {
      throw std::invalid_argument("arch index " + std::to_string(index) +
                                  " out of range for " +
                                  std::string(to_string(space)));
    }
    return decode(space, index);
  }
  if (rest.size() >= 2 && rest.front() == '[' && rest.back() == ']') {
    rest = rest.substr(1, rest.size() - 2);
    std::array<std::string_view, kNumEdges> parts;
    int count = 0;
    while (true) {
      const auto comma = rest.find(',');
      const auto part = rest.substr(0, comma);
      if (count >= kNumEdges) {
        throw std::invalid_argument("too many fields in verbose arch form");
      }
      parts[static_cast<std::size_t>(count++)] = part;
      if (comma == std::string_view::npos) break;
      rest = rest.substr(comma + 1);
    }
    if (space == SpaceId::tss) {
      if (count != kNumEdges) {
        throw std::invalid_argument("tss verbose form needs 6 ops");
      }
      TssArch arch;
      for (int e = 0; e < kNumEdges; ++e) {
        if (!op_from_string(parts[static_cast<std::size_t>(e)],
                            arch.edge_ops[static_cast<std::size_t>(e)])) {
          throw std::invalid_argument(
              "unknown op '" + std::string(parts[static_cast<std::size_t>(e)]) +
              "'");
        }
      }
      return arch;
    }
    if (count != kNumSlots) {
      throw std::invalid_argument("sss verbose form needs 5 channels");
    }
    SssArch arch;
    for (int s = 0; s < kNumSlots; ++s) {
      const auto value =
          parse_u64(parts[static_cast<std::size_t>(s)]);
      arch.channels[static_cast<std::size_t>(s)] = static_cast<int>(value);
      channel_digit(arch.channels[static_cast<std::size_t>(s)]);  // validates
    }
    return arch;
  }
  throw std::invalid_argument("malformed arch text: '" + std::string(text) +
                              "'");
}

}  // namespace seval::space
