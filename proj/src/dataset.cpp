#include "seval/dataset.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "seval/digest.hpp"
#include "seval/net_string.hpp"

namespace seval::cost {

namespace {

constexpr std::string_view kOracleVersion = "oracle-v1";

const std::set<std::string>& allowed_metrics() {
  static const std::set<std::string> names{"accuracy", "latency", "memory"};
  return names;
}

using space::space_from_string;

RecordSource source_from_string(const std::string& text) {
  if (text == "oracle") return RecordSource::oracle;
  if (text == "ingested") return RecordSource::ingested;
  throw std::runtime_error("unknown record source '" + text + "'");
}

nlohmann::json record_to_json(const DatasetRecord& record) {
  nlohmann::json metrics = nlohmann::json::object();
  for (const auto& [name, value] : record.metrics) metrics[name] = value;
  nlohmann::json doc{{"space", space::to_string(record.space)},
                     {"arch_index", record.arch_index},
                     {"string_hash", record.string_hash},
                     {"metrics", metrics},
                     {"source", to_string(record.source)}};
  if (!record.flags.empty()) doc["flags"] = record.flags;
  return doc;
}

DatasetRecord record_from_json(const nlohmann::json& doc) {
  DatasetRecord record;
  record.space = space_from_string(doc.at("space").get<std::string>());
  record.arch_index = doc.at("arch_index");
  record.string_hash = doc.value("string_hash", "");
  for (const auto& [name, value] : doc.at("metrics").items()) {
    record.metrics[name] = value.get<double>();
  }
  record.source = source_from_string(doc.at("source"));
  if (doc.contains("flags")) {
    record.flags = doc.at("flags").get<std::vector<std::string>>();
  }
  return record;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream stream(line);
  while (std::getline(stream, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

std::string_view to_string(RecordSource source) {
  return source == RecordSource::oracle ? "oracle" : "ingested";
}

nlohmann::json macro_to_json(const graph::MacroConfig& macro) {
  return {{"cells_per_stage", macro.cells_per_stage},
          {"stage_channels", macro.stage_channels},
          {"input",
           {macro.input.n, macro.input.c, macro.input.h, macro.input.w}},
          {"num_classes", macro.num_classes}};
}

graph::MacroConfig macro_from_json(const nlohmann::json& doc) {
  graph::MacroConfig macro;
  macro.cells_per_stage = doc.value("cells_per_stage", macro.cells_per_stage);
  if (doc.contains("stage_channels")) {
    const auto& channels = doc.at("stage_channels");
    for (std::size_t i = 0; i < 3; ++i) {
      macro.stage_channels[i] = channels.at(i);
    }
  }
  if (doc.contains("input")) {
    const auto& in = doc.at("input");
    macro.input = graph::TensorShape{in.at(0), in.at(1), in.at(2), in.at(3)};
  }
  macro.num_classes = doc.value("num_classes", macro.num_classes);
  return macro;
}

std::string oracle_digest(const graph::MacroConfig& macro,
                          const DeviceProfile& profile) {
  nlohmann::json doc{{"oracle", kOracleVersion},
                     {"macro", macro_to_json(macro)},
                     {"profile", profile_to_json(profile)}};
  return hex_digest(doc.dump());
}

std::vector<std::uint32_t> sample_arch_indices(space::SpaceId space,
                                               std::size_t n,
                                               std::uint64_t seed) {
  const auto size = space::space_size(space);
  if (n > size) {
    throw std::invalid_argument("requested " + std::to_string(n) +
                                " archs from a space of " +
                                std::to_string(size));
  }
  Rng rng(seed);
  std::set<std::uint32_t> used;
  std::vector<std::uint32_t> indices;
  indices.reserve(n);
  // NoPath rejection removes a fixed fraction of TSS, so the attempt budget
  // only guards against pathological n close to the feasible count.
  const std::uint64_t max_attempts = 1000 + 50 * static_cast<std::uint64_t>(n);
  std::uint64_t attempts = 0;
  while (indices.size() < n) {
    if (++attempts > max_attempts) {
      throw std::runtime_error("sampling could not find " + std::to_string(n) +
                               " distinct feasible archs");
    }
    const auto index = rng.uniform_u32(static_cast<std::uint32_t>(size));
    if (used.count(index)) continue;
    if (space == space::SpaceId::tss &&
        !graph::tss_has_path(space::tss_decode(index))) {
      continue;
    }
    used.insert(index);
    indices.push_back(index);
  }
  return indices;
}

Dataset build_dataset(space::SpaceId space,
                      std::span<const std::uint32_t> indices,
                      const DeviceProfile& profile,
                      const graph::MacroConfig& macro, std::uint64_t seed) {
  Dataset dataset;
  dataset.header.space = space;
  dataset.header.metric_names = {"accuracy", "latency", "memory"};
  dataset.header.oracle_digest = oracle_digest(macro, profile);
  dataset.header.device = profile.name;
  dataset.header.seed = seed;
  dataset.header.source = RecordSource::oracle;
  dataset.header.macro = macro;

  std::set<std::uint32_t> used;
  for (const auto index : indices) {
    if (!used.insert(index).second) {
      throw std::invalid_argument("duplicate arch_index " +
                                  std::to_string(index));
    }
    const auto arch = space::decode(space, index);
    const auto graph = graph::elaborate(arch, macro);
    const auto arch_seed = Rng::mix(seed, index);
    DatasetRecord record;
    record.space = space;
    record.arch_index = index;
    record.string_hash = hex_digest(text::graph_to_string(graph).text);
    record.metrics["accuracy"] =
        synthetic_accuracy(arch, Rng::mix(arch_seed, 1));
    Rng latency_rng(Rng::mix(arch_seed, 2));
    record.metrics["latency"] = latency_ms(graph, profile, latency_rng);
    record.metrics["memory"] =
        static_cast<double>(peak_memory_bytes(graph));
    dataset.records.push_back(std::move(record));
  }
  return dataset;
}

Dataset ingest_csv(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) {
    throw std::runtime_error("cannot open CSV " + file.string());
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error(file.string() + ": empty CSV");
  }
  const auto header = split_csv_line(line);
  if (header.size() < 3 || header[0] != "space" || header[1] != "arch_index") {
    throw std::runtime_error(file.string() +
                             ":1: header must be space,arch_index,<metrics>");
  }
  std::vector<std::string> metric_names(header.begin() + 2, header.end());
  for (const auto& name : metric_names) {
    if (!allowed_metrics().count(name)) {
      throw std::runtime_error(file.string() + ":1: unknown metric '" + name +
                               "'");
    }
  }

  Dataset dataset;
  dataset.header.metric_names = metric_names;
  dataset.header.source = RecordSource::ingested;
  std::set<std::uint32_t> used;
  int line_no = 1;
  bool space_set = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw std::runtime_error(file.string() + ":" + std::to_string(line_no) +
                               ": expected " + std::to_string(header.size()) +
                               " cells, got " + std::to_string(cells.size()));
    }
    DatasetRecord record;
    record.source = RecordSource::ingested;
    try {
      record.space = space_from_string(cells[0]);
      record.arch_index = static_cast<std::uint32_t>(std::stoul(cells[1]));
      for (std::size_t m = 0; m < metric_names.size(); ++m) {
        std::size_t pos = 0;
        const double value = std::stod(cells[m + 2], &pos);
        if (pos != cells[m + 2].size()) {
          throw std::invalid_argument("trailing characters");
        }
        record.metrics[metric_names[m]] = value;
        if (value < 0) {
          record.flags.push_back("negative:" + metric_names[m]);
        }
      }
    } catch (const std::exception& e) {
      throw std::runtime_error(file.string() + ":" + std::to_string(line_no) +
                               ": malformed row (" + e.what() + ")");
    }
    if (record.arch_index >= space::space_size(record.space)) {
      throw std::runtime_error(file.string() + ":" + std::to_string(line_no) +
                               ": arch_index out of range");
    }
    if (!used.insert(record.arch_index).second) {
      throw std::runtime_error(file.string() + ":" + std::to_string(line_no) +
                               ": duplicate arch_index " +
                               std::to_string(record.arch_index));
    }
    if (!space_set) {
      dataset.header.space = record.space;
      space_set = true;
    } else if (record.space != dataset.header.space) {
      throw std::runtime_error(file.string() + ":" + std::to_string(line_no) +
                               ": mixed spaces in one CSV");
    }
    const auto arch = space::decode(record.space, record.arch_index);
    try {
      const auto graph = graph::elaborate(arch, dataset.header.macro);
      record.string_hash = hex_digest(text::graph_to_string(graph).text);
    } catch (const graph::NoPathError&) {
      record.flags.push_back("no_path");
    }
    dataset.records.push_back(std::move(record));
  }
  if (dataset.records.empty()) {
    throw std::runtime_error(file.string() + ": no data rows");
  }
  return dataset;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& file) {
  for (const auto& record : dataset.records) {
    if (record.source != dataset.header.source) {
      throw std::invalid_argument(
          "oracle and ingested records cannot share a dataset file");
    }
  }
  std::ofstream out(file);
  if (!out) {
    throw std::runtime_error("cannot write " + file.string());
  }
  const nlohmann::json header{
      {"format", "seval.dataset"},
      {"version", dataset.header.version},
      {"space", space::to_string(dataset.header.space)},
      {"metrics", dataset.header.metric_names},
      {"oracle_digest", dataset.header.oracle_digest},
      {"device", dataset.header.device},
      {"seed", dataset.header.seed},
      {"source", to_string(dataset.header.source)},
      {"macro", macro_to_json(dataset.header.macro)}};
  out << header.dump() << '\n';
  for (const auto& record : dataset.records) {
    out << record_to_json(record).dump() << '\n';
  }
  if (!out) {
    throw std::runtime_error("write failed for " + file.string());
  }
}

Dataset load_dataset(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) {
    throw std::runtime_error("cannot open dataset " + file.string());
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error(file.string() + ": empty dataset file");
  }
  const auto header = nlohmann::json::parse(line);
  if (header.value("format", "") != "seval.dataset") {
    throw std::runtime_error(file.string() + ": not a seval.dataset file");
  }
  if (header.value("version", 0) != 1) {
    throw std::runtime_error(file.string() + ": unsupported dataset version");
  }
  Dataset dataset;
  dataset.header.version = header.at("version");
  dataset.header.space =
      space_from_string(header.at("space").get<std::string>());
  dataset.header.metric_names =
      header.at("metrics").get<std::vector<std::string>>();
  dataset.header.oracle_digest = header.value("oracle_digest", "");
  dataset.header.device = header.value("device", "");
  dataset.header.seed = header.value("seed", std::uint64_t{0});
  dataset.header.source = source_from_string(header.at("source"));
  dataset.header.macro = macro_from_json(header.at("macro"));
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      dataset.records.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(file.string() + ":" + std::to_string(line_no) +
                               ": " + e.what());
    }
    if (dataset.records.back().source != dataset.header.source) {
      throw std::runtime_error(file.string() + ":" + std::to_string(line_no) +
                               ": record source differs from header");
    }
  }
  return dataset;
}

}  // namespace seval::cost
