#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

#include "seval/evaluator.hpp"

namespace seval::model {

namespace {

using nlohmann::json;

constexpr std::string_view kFormat = "seval.checkpoint";
constexpr int kVersion = 1;
constexpr std::string_view kB64Alphabet =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(const unsigned char* data, std::size_t len) {
  std::string out;
  out.reserve((len + 2) / 3 * 4);
  for (std::size_t i = 0; i < len; i += 3) {
    const unsigned b0 = data[i];
    const unsigned b1 = i + 1 < len ? data[i + 1] : 0;
    const unsigned b2 = i + 2 < len ? data[i + 2] : 0;
    out.push_back(kB64Alphabet[b0 >> 2]);
    out.push_back(kB64Alphabet[((b0 & 0x3u) << 4) | (b1 >> 4)]);
    out.push_back(i + 1 < len ? kB64Alphabet[((b1 & 0xFu) << 2) | (b2 >> 6)]
                              : '=');
    out.push_back(i + 2 < len ? kB64Alphabet[b2 & 0x3Fu] : '=');
  }
  return out;
}

std::vector<unsigned char> base64_decode(std::string_view text) {
  std::array<signed char, 256> lut;
  lut.fill(-1);
  for (int i = 0; i < 64; ++i) {
    lut[static_cast<unsigned char>(kB64Alphabet[static_cast<std::size_t>(i)])] =
        static_cast<signed char>(i);
  }
  if (text.size() % 4 != 0) {
    throw std::runtime_error("checkpoint: base64 payload length not a multiple of 4");
  }
  std::vector<unsigned char> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int vals[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + static_cast<std::size_t>(k)];
      if (c == '=') {
        if (i + 4 != text.size() || k < 2) {
          throw std::runtime_error("checkpoint: malformed base64 padding");
        }
        vals[k] = 0;
        ++pad;
      } else {
        const auto v = lut[static_cast<unsigned char>(c)];
        if (v < 0 || pad > 0) {
          throw std::runtime_error("checkpoint: invalid base64 character");
        }
        vals[k] = v;
      }
    }
    out.push_back(static_cast<unsigned char>((vals[0] << 2) | (vals[1] >> 4)));
    if (pad < 2) {
      out.push_back(
          static_cast<unsigned char>(((vals[1] & 0xF) << 4) | (vals[2] >> 2)));
    }
    if (pad < 1) {
      out.push_back(
          static_cast<unsigned char>(((vals[2] & 0x3) << 6) | vals[3]));
    }
  }
  return out;
}

// Tensors serialize as little-endian float32 regardless of host order.
std::string encode_tensor(const Mat<float>& m) {
  static_assert(std::endian::native == std::endian::little,
                "big-endian hosts need byte swapping here");
  return base64_encode(reinterpret_cast<const unsigned char*>(m.data()),
                       static_cast<std::size_t>(m.size()) * sizeof(float));
}

void decode_tensor(const std::string& payload, Mat<float>& m,
                   const std::string& name) {
  const auto bytes = base64_decode(payload);
  const auto expected = static_cast<std::size_t>(m.size()) * sizeof(float);
  if (bytes.size() != expected) {
    throw std::runtime_error("checkpoint: tensor '" + name + "' has " +
                             std::to_string(bytes.size()) +
                             " bytes, expected " + std::to_string(expected));
  }
  std::memcpy(m.data(), bytes.data(), expected);
  if (!m.allFinite()) {
    throw std::runtime_error("checkpoint: tensor '" + name +
                             "' contains non-finite values");
  }
}

json config_to_json(const ModelConfig& cfg) {
  return json{{"d_model", cfg.d_model},
              {"n_layers", cfg.n_layers},
              {"n_heads", cfg.n_heads},
              {"ffn_dim", cfg.ffn_dim},
              {"max_len", cfg.max_len},
              {"k_outputs", cfg.k_outputs},
              {"dropout_p", cfg.dropout_p},
              {"vocab_size", cfg.vocab_size},
              {"readout", cfg.readout == Readout::first_token ? "first_token"
                                                              : "mean_pool"}};
}

ModelConfig config_from_json(const json& doc) {
  ModelConfig cfg;
  cfg.d_model = doc.at("d_model").get<int>();
  cfg.n_layers = doc.at("n_layers").get<int>();
  cfg.n_heads = doc.at("n_heads").get<int>();
  cfg.ffn_dim = doc.at("ffn_dim").get<int>();
  cfg.max_len = doc.at("max_len").get<int>();
  cfg.k_outputs = doc.at("k_outputs").get<int>();
  cfg.dropout_p = doc.at("dropout_p").get<double>();
  cfg.vocab_size = doc.at("vocab_size").get<int>();
  const auto readout = doc.at("readout").get<std::string>();
  if (readout == "first_token") {
    cfg.readout = Readout::first_token;
  } else if (readout == "mean_pool") {
    cfg.readout = Readout::mean_pool;
  } else {
    throw std::runtime_error("checkpoint: unknown readout '" + readout + "'");
  }
  cfg.check();
  return cfg;
}

}  // namespace

void save_checkpoint(const EvaluatorModel& model,
                     const std::filesystem::path& path) {
  json doc;
  doc["format"] = kFormat;
  doc["version"] = kVersion;
  doc["config"] = config_to_json(model.config);
  doc["objectives"] = model.objectives;
  doc["norm_mean"] = model.norm_mean;
  doc["norm_std"] = model.norm_std;
  doc["space"] = space::to_string(model.space);
  doc["macro"] = cost::macro_to_json(model.macro);
  doc["dataset_digest"] = model.dataset_digest;
  doc["vocab"] = text::vocab_to_json(model.vocab);
  doc["vocab_digest"] = model.vocab.digest();
  doc["split"] = json{{"seed", model.split_seed},
                      {"val_fraction", model.val_fraction},
                      {"test_fraction", model.test_fraction}};
  json tensors = json::array();
  visit_params(model.params, [&](const std::string& name,
                                 const Mat<float>& tensor) {
    tensors.push_back(json{{"name", name},
                           {"shape", {tensor.rows(), tensor.cols()}},
                           {"data", encode_tensor(tensor)}});
  });
  doc["tensors"] = std::move(tensors);

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) {
      throw std::runtime_error("cannot open " + tmp + " for writing");
    }
    out << doc.dump(2) << '\n';
    if (!out) throw std::runtime_error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

EvaluatorModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open checkpoint " + path.string());
  }
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("checkpoint parse error at byte " +
                             std::to_string(e.byte) + " of " + path.string() +
                             ": " + e.what());
  }
  if (!doc.is_object() || doc.value("format", "") != kFormat) {
    throw std::runtime_error("checkpoint: not a " + std::string(kFormat) +
                             " file");
  }
  if (doc.at("version").get<int>() != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " +
                             doc.at("version").dump());
  }

  EvaluatorModel model;
  model.config = config_from_json(doc.at("config"));
  model.objectives = doc.at("objectives").get<std::vector<std::string>>();
  model.norm_mean = doc.at("norm_mean").get<std::vector<double>>();
  model.norm_std = doc.at("norm_std").get<std::vector<double>>();
  if (model.objectives.size() !=
          static_cast<std::size_t>(model.config.k_outputs) ||
      model.norm_mean.size() != model.objectives.size() ||
      model.norm_std.size() != model.objectives.size()) {
    throw std::runtime_error("checkpoint: objective/normalization arity mismatch");
  }
  for (const auto s : model.norm_std) {
    if (!(s > 0)) {
      throw std::runtime_error("checkpoint: normalization std must be > 0");
    }
  }
  model.space = space::space_from_string(doc.at("space").get<std::string>());
  model.macro = cost::macro_from_json(doc.at("macro"));
  model.dataset_digest = doc.at("dataset_digest").get<std::string>();
  model.vocab = text::vocab_from_json(doc.at("vocab"));
  const auto stored_digest = doc.at("vocab_digest").get<std::string>();
  if (model.vocab.digest() != stored_digest) {
    throw std::runtime_error(
        "checkpoint: vocab digest mismatch (stored " + stored_digest +
        ", embedded vocab hashes to " + model.vocab.digest() + "); refusing");
  }
  if (model.vocab.size() != model.config.vocab_size) {
    throw std::runtime_error("checkpoint: vocab size disagrees with config");
  }
  const auto& split = doc.at("split");
  model.split_seed = split.at("seed").get<std::uint64_t>();
  model.val_fraction = split.at("val_fraction").get<double>();
  model.test_fraction = split.at("test_fraction").get<double>();

  model.params = make_params_shape<float>(model.config);
  std::map<std::string, const json*> by_name;
  for (const auto& t : doc.at("tensors")) {
    by_name[t.at("name").get<std::string>()] = &t;
  }
  std::size_t used = 0;
  visit_params(model.params, [&](const std::string& name, Mat<float>& tensor) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
    }
    const auto& entry = *it->second;
    const auto shape = entry.at("shape").get<std::vector<long>>();
    if (shape.size() != 2 || shape[0] != tensor.rows() ||
        shape[1] != tensor.cols()) {
      throw std::runtime_error("checkpoint: tensor '" + name +
                               "' shape disagrees with config");
    }
    decode_tensor(entry.at("data").get_ref<const std::string&>(), tensor, name);
    ++used;
  });
  if (used != by_name.size()) {
    throw std::runtime_error("checkpoint: file contains unknown tensors");
  }
  return model;
}

}  // namespace seval::model
