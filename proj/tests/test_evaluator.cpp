#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>

#include <json.hpp>

#include "seval/cost_model.hpp"
#include "seval/dataset.hpp"
#include "seval/digest.hpp"
#include "seval/evaluator.hpp"
#include "seval/net_string.hpp"
#include "seval/rng.hpp"

using namespace seval;

namespace {

std::filesystem::path temp_dir() {
  const auto dir =
      std::filesystem::temp_directory_path() / "seval_test_evaluator";
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_text(const std::filesystem::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  out << text;
}

model::ModelConfig tiny_config() {
  model::ModelConfig cfg;
  cfg.d_model = 4;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.ffn_dim = 8;
  cfg.max_len = 8;
  cfg.vocab_size = 5;
  cfg.k_outputs = 2;
  cfg.dropout_p = 0.0;
  return cfg;
}

// Every tensor zero (layer-norm gains one); the encoder maps any sequence to
// the zero embedding, so the head bias is the whole prediction.
model::EvaluatorModel zero_model() {
  model::EvaluatorModel m;
  m.config = tiny_config();
  m.params = model::make_params_shape<float>(m.config);
  m.objectives = {"accuracy", "memory"};
  m.norm_mean = {10.0, 20.0};
  m.norm_std = {2.0, 4.0};
  return m;
}

bool params_equal(const model::Params<float>& a,
                  const model::Params<float>& b) {
  std::vector<const model::Mat<float>*> ta, tb;
  model::visit_params(a, [&](const std::string&, const model::Mat<float>& t) {
    ta.push_back(&t);
  });
  model::visit_params(b, [&](const std::string&, const model::Mat<float>& t) {
    tb.push_back(&t);
  });
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i]->rows() != tb[i]->rows() || ta[i]->cols() != tb[i]->cols()) {
      return false;
    }
    if (!(ta[i]->array() == tb[i]->array()).all()) return false;
  }
  return true;
}

cost::Dataset sss_dataset(std::size_t n, std::uint64_t seed) {
  const auto profile = cost::load_profile(
      std::filesystem::path(SEVAL_PROFILES_DIR) / "edgegpu.json");
  graph::MacroConfig macro;
  const auto indices = cost::sample_arch_indices(space::SpaceId::sss, n, seed);
  return cost::build_dataset(space::SpaceId::sss, indices, profile, macro,
                             seed);
}

// Overfits 16 SSS records on the memory objective; shared by the
// memorization, checkpoint and pipeline tests.
const model::TrainResult& memorized() {
  static const model::TrainResult result = [] {
    const auto dataset = sss_dataset(16, 5);
    model::ModelConfig base;
    base.d_model = 16;
    base.n_layers = 1;
    base.n_heads = 2;
    base.ffn_dim = 32;
    base.max_len = 192;
    base.dropout_p = 0.0;
    model::TrainConfig tc;
    tc.learning_rate = 3e-3;
    tc.epochs = 400;
    tc.batch_size = 16;
    tc.seed = 7;
    tc.val_fraction = 0.0;
    tc.test_fraction = 0.0;
    return model::train_evaluator(dataset, {"memory"}, base, tc);
  }();
  return result;
}

}  // namespace

TEST_CASE("encode input validation") {
  const auto m = zero_model();
  const std::vector<std::int32_t> ok = {3, 4, 2};
  CHECK_NOTHROW(model::encode(m.config, m.params,
                              std::span<const std::int32_t>(ok)));

  const std::vector<std::int32_t> empty;
  CHECK_THROWS_WITH_AS(
      model::encode(m.config, m.params, std::span<const std::int32_t>(empty)),
      doctest::Contains("empty token sequence"), std::invalid_argument);

  const std::vector<std::int32_t> long_seq(9, 3);  // max_len is 8
  CHECK_THROWS_WITH_AS(
      model::encode(m.config, m.params,
                    std::span<const std::int32_t>(long_seq)),
      doctest::Contains("longer than max_len"), std::invalid_argument);

  const std::vector<std::int32_t> oov = {3, 7};
  CHECK_THROWS_AS(
      model::encode(m.config, m.params, std::span<const std::int32_t>(oov)),
      std::out_of_range);
  const std::vector<std::int32_t> negative = {-1};
  CHECK_THROWS_AS(model::encode(m.config, m.params,
                                std::span<const std::int32_t>(negative)),
                  std::out_of_range);

  const std::vector<std::int32_t> all_pad = {0, 0, 0};
  CHECK_THROWS_WITH_AS(
      model::encode(m.config, m.params,
                    std::span<const std::int32_t>(all_pad)),
      doctest::Contains("all PAD"), std::invalid_argument);
}

TEST_CASE("zero-parameter model: prediction is the de-normalized head bias") {
  auto m = zero_model();
  m.params.head_b(0, 0) = 0.5f;
  m.params.head_b(0, 1) = -1.25f;

  text::TokenSeq tokens;
  tokens.ids = {3, 4, 2};
  CHECK(m.embed(tokens).norm() == 0.0f);

  const auto normalized = m.predict_normalized(tokens);
  REQUIRE(normalized.size() == 2);
  CHECK(normalized[0] == 0.5);
  CHECK(normalized[1] == -1.25);

  // mean + std * normalized, exactly representable values throughout.
  const auto pred = m.predict(tokens);
  CHECK(pred[0] == 11.0);
  CHECK(pred[1] == 15.0);

  model::Vec<float> embedding = model::Vec<float>::Zero(m.config.d_model);
  CHECK(model::predict_from_embedding(m, embedding) == pred);

  CHECK(model::normalize_targets(m, {11.0, 15.0}) ==
        std::vector<double>{0.5, -1.25});
  CHECK(model::denormalize(m, {0.5, -1.25}) == std::vector<double>{11.0, 15.0});
  CHECK_THROWS_AS(model::denormalize(m, {1.0}), std::invalid_argument);
}

TEST_CASE("head gradients in closed form") {
  auto m = zero_model();
  m.params.head_b(0, 0) = 0.5f;
  m.params.head_b(0, 1) = -1.25f;

  const std::vector<std::int32_t> ids = {3, 4, 2};
  model::detail::ForwardCache<float> cache;
  model::forward_sample(m.config, m.params, std::span<const std::int32_t>(ids),
                        false, nullptr, cache);
  const model::Vec<float> pred = model::head_forward(m.params, cache.pooled);

  const std::vector<double> target = {2.0, 0.75};
  model::Vec<float> dpred;
  const double loss =
      model::sample_loss_grad(pred, std::span<const double>(target), dpred);
  // diff = (-1.5, -2); loss = (2.25 + 4) / 2; every value exact in float.
  CHECK(loss == 3.125);

  auto grads = model::zeros_like(m.params);
  model::detail::BackwardWorkspace<float> ws;
  model::backward_sample(m.config, m.params, cache, dpred, grads, ws);

  CHECK(grads.head_b(0, 0) == -1.5f);
  CHECK(grads.head_b(0, 1) == -2.0f);
  // The pooled embedding is zero, so nothing upstream receives gradient.
  model::visit_params(
      grads, [&](const std::string& name, const model::Mat<float>& t) {
        if (name != "head.bias") CHECK(t.norm() == 0.0f);
      });
}

TEST_CASE("padding tail and readout behavior") {
  auto cfg = tiny_config();
  Rng rng(Rng::mix(123, 0x11));
  const auto params = model::init_params<float>(cfg, rng);

  const std::vector<std::int32_t> bare = {3, 4, 2};
  const std::vector<std::int32_t> padded = {3, 4, 2, 0, 0, 0};

  SUBCASE("a PAD tail changes nothing, bit for bit") {
    const auto a =
        model::encode(cfg, params, std::span<const std::int32_t>(bare));
    const auto b =
        model::encode(cfg, params, std::span<const std::int32_t>(padded));
    CHECK((a - b).norm() == 0.0f);
  }

  SUBCASE("mean pool over a single token is that token's row") {
    const std::vector<std::int32_t> one = {4};
    model::detail::ForwardCache<float> cache;
    model::forward_sample(cfg, params, std::span<const std::int32_t>(one),
                          false, nullptr, cache);
    CHECK((cache.pooled - cache.x_final.row(0).transpose()).norm() == 0.0f);
  }

  SUBCASE("first_token readout returns row 0") {
    cfg.readout = model::Readout::first_token;
    model::detail::ForwardCache<float> cache;
    model::forward_sample(cfg, params, std::span<const std::int32_t>(bare),
                          false, nullptr, cache);
    CHECK((cache.pooled - cache.x_final.row(0).transpose()).norm() == 0.0f);

    // Generic parameters: first-token and mean-pool readouts disagree.
    auto mean_cfg = tiny_config();
    const auto first =
        model::encode(cfg, params, std::span<const std::int32_t>(bare));
    const auto mean =
        model::encode(mean_cfg, params, std::span<const std::int32_t>(bare));
    CHECK((first - mean).norm() > 0.0f);
  }
}

TEST_CASE("gradient check against finite differences") {
  model::ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.ffn_dim = 16;
  cfg.vocab_size = 10;
  cfg.max_len = 16;
  cfg.k_outputs = 1;

  const auto dbl = model::grad_check<double>(cfg, 42, 1e-5, 20);
  CHECK(dbl.max_rel_error < 1e-4);
  // 16 per-layer tensors plus embeddings and the two head tensors.
  CHECK(dbl.per_group.size() == 20);
  std::set<std::string> names;
  for (const auto& [name, err] : dbl.per_group) {
    names.insert(name);
    CHECK(err <= dbl.max_rel_error);
  }
  CHECK(names.count("token_embedding") == 1);
  CHECK(names.count("layer0.wq") == 1);
  CHECK(names.count("head.weight") == 1);

  const auto flt = model::grad_check<float>(cfg, 42, 1e-5, 20);
  CHECK(flt.max_rel_error < 1e-2);
}

TEST_CASE("split_dataset is a disjoint deterministic shuffle split") {
  const auto split = model::split_dataset(100, 0.1, 0.1, 31);
  CHECK(split.train.size() == 80);
  CHECK(split.val.size() == 10);
  CHECK(split.test.size() == 10);
  std::set<std::size_t> seen;
  for (const auto* part : {&split.train, &split.val, &split.test}) {
    for (const auto idx : *part) {
      CHECK(idx < 100);
      CHECK(seen.insert(idx).second);  // no index lands in two splits
    }
  }
  CHECK(seen.size() == 100);

  const auto again = model::split_dataset(100, 0.1, 0.1, 31);
  CHECK(again.train == split.train);
  CHECK(again.val == split.val);
  CHECK(again.test == split.test);
  CHECK(model::split_dataset(100, 0.1, 0.1, 32).train != split.train);

  CHECK_THROWS_WITH_AS(model::split_dataset(2, 0.5, 0.5, 1),
                       doctest::Contains("no training records"),
                       std::invalid_argument);
}

TEST_CASE("training memorizes a 16-record table") {
  const auto& result = memorized();
  const auto dataset = sss_dataset(16, 5);

  REQUIRE(result.history.size() == 400);
  CHECK(result.best_epoch >= 0);
  CHECK(result.train_indices.size() == 16);
  CHECK(result.val_indices.empty());
  CHECK(result.test_indices.empty());

  double min_loss = result.history.front().train_loss;
  for (const auto& e : result.history) {
    min_loss = std::min(min_loss, e.train_loss);
  }
  CHECK(min_loss < 1e-3);

  const auto& m = result.model;
  CHECK(m.objectives == std::vector<std::string>{"memory"});
  CHECK(m.config.k_outputs == 1);
  CHECK(m.config.vocab_size == m.vocab.size());
  CHECK(m.dataset_digest == dataset.header.oracle_digest);
  REQUIRE(m.norm_std.size() == 1);
  CHECK(m.norm_std[0] > 0);

  // The checkpointed (best-epoch) parameters reproduce every target to a
  // small fraction of the target spread.
  for (const auto& record : dataset.records) {
    const auto pred = m.predict_arch(record.arch_index);
    REQUIRE(pred.size() == 1);
    CHECK(std::abs(pred[0] - record.metrics.at("memory")) <
          0.2 * m.norm_std[0]);
  }
}

TEST_CASE("training is bitwise deterministic") {
  const auto dataset = sss_dataset(16, 5);
  model::ModelConfig base;
  base.d_model = 16;
  base.n_layers = 1;
  base.n_heads = 2;
  base.ffn_dim = 32;
  base.max_len = 192;
  base.dropout_p = 0.1;  // exercise the dropout streams too
  model::TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.epochs = 12;
  tc.batch_size = 8;
  tc.seed = 99;
  tc.val_fraction = 0.2;
  tc.test_fraction = 0.2;

  const auto a = model::train_evaluator(dataset, {"memory"}, base, tc);
  const auto b = model::train_evaluator(dataset, {"memory"}, base, tc);
  CHECK(params_equal(a.model.params, b.model.params));
  CHECK(a.best_epoch == b.best_epoch);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t e = 0; e < a.history.size(); ++e) {
    CHECK(a.history[e].train_loss == b.history[e].train_loss);
    CHECK(a.history[e].val_loss == b.history[e].val_loss);
  }

  tc.seed = 100;
  const auto c = model::train_evaluator(dataset, {"memory"}, base, tc);
  CHECK(!params_equal(a.model.params, c.model.params));
}

TEST_CASE("full-batch gradient does not depend on record order") {
  const auto dataset = sss_dataset(6, 17);
  model::ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.ffn_dim = 32;
  cfg.max_len = 192;
  cfg.dropout_p = 0.0;

  const auto vocab = [&] {
    std::vector<text::NetString> corpus;
    for (const auto& rec : dataset.records) {
      const auto arch = space::decode(rec.space, rec.arch_index);
      corpus.push_back(
          text::graph_to_string(graph::elaborate(arch, dataset.header.macro)));
    }
    return text::build_vocab(corpus);
  }();
  cfg.vocab_size = vocab.size();
  cfg.k_outputs = 1;

  const auto seqs =
      model::tokenize_dataset(dataset, vocab, dataset.header.macro,
                              cfg.max_len);
  Rng init(Rng::mix(3, 0x11));
  const auto params = model::init_params<float>(cfg, init);

  const auto grads_for = [&](const std::vector<std::size_t>& order) {
    auto grads = model::zeros_like(params);
    model::detail::ForwardCache<float> cache;
    model::detail::BackwardWorkspace<float> ws;
    for (const auto idx : order) {
      Rng drop(Rng::mix(11, idx));
      model::forward_sample(cfg, params,
                            std::span<const std::int32_t>(seqs[idx].ids), true,
                            &drop, cache);
      const model::Vec<float> pred =
          model::head_forward(params, cache.pooled);
      const std::vector<double> target = {
          dataset.records[idx].metrics.at("memory") / 1e6};
      model::Vec<float> dpred;
      model::sample_loss_grad(pred, std::span<const double>(target), dpred);
      model::backward_sample(cfg, params, cache, dpred, grads, ws);
    }
    return grads;
  };

  const auto forward_order = grads_for({0, 1, 2, 3, 4, 5});
  const auto reverse_order = grads_for({5, 4, 3, 2, 1, 0});

  // Accumulation order only reorders a float sum, so demand tight relative
  // agreement rather than bit equality.
  std::vector<const model::Mat<float>*> ta, tb;
  model::visit_params(forward_order,
                      [&](const std::string&, const model::Mat<float>& t) {
                        ta.push_back(&t);
                      });
  model::visit_params(reverse_order,
                      [&](const std::string&, const model::Mat<float>& t) {
                        tb.push_back(&t);
                      });
  for (std::size_t i = 0; i < ta.size(); ++i) {
    const float scale = std::max({1e-6f, ta[i]->cwiseAbs().maxCoeff(),
                                  tb[i]->cwiseAbs().maxCoeff()});
    CHECK((*ta[i] - *tb[i]).cwiseAbs().maxCoeff() / scale <= 1e-5f);
  }
}

TEST_CASE("divergence is reported, not silently produced") {
  const auto dataset = sss_dataset(16, 5);
  model::ModelConfig base;
  base.d_model = 16;
  base.n_layers = 1;
  base.n_heads = 2;
  base.ffn_dim = 32;
  base.max_len = 192;
  base.dropout_p = 0.0;
  model::TrainConfig tc;
  tc.learning_rate = 1e12;
  tc.optimizer = model::Optimizer::sgd;
  tc.epochs = 5;
  tc.batch_size = 16;
  tc.seed = 1;
  tc.val_fraction = 0.0;
  tc.test_fraction = 0.0;
  CHECK_THROWS_AS(model::train_evaluator(dataset, {"memory"}, base, tc),
                  model::TrainingDiverged);
}

TEST_CASE("objective and config validation") {
  const auto dataset = sss_dataset(8, 13);
  model::ModelConfig base;
  base.d_model = 8;
  base.n_layers = 1;
  base.n_heads = 2;
  base.ffn_dim = 16;
  base.max_len = 192;
  model::TrainConfig tc;
  tc.epochs = 1;

  CHECK_THROWS_WITH_AS(
      model::train_evaluator(dataset, {"flops"}, base, tc),
      doctest::Contains("dataset provides: accuracy, latency, memory"),
      std::invalid_argument);
  CHECK_THROWS_WITH_AS(model::train_evaluator(dataset, {}, base, tc),
                       doctest::Contains("objectives must be nonempty"),
                       std::invalid_argument);

  SUBCASE("constant objective is rejected") {
    const auto dir = temp_dir();
    const auto file = dir / "constant.csv";
    write_text(file,
               "space,arch_index,accuracy,memory\n"
               "sss,0,50.0,100\n"
               "sss,1,50.0,200\n"
               "sss,2,50.0,300\n"
               "sss,3,50.0,400\n"
               "sss,4,50.0,500\n");
    const auto ingested = cost::ingest_csv(file);
    CHECK_THROWS_WITH_AS(
        model::train_evaluator(ingested, {"accuracy"}, base, tc),
        doctest::Contains("constant on the train split"),
        std::invalid_argument);
    // The varying column trains fine from the same file.
    CHECK_NOTHROW(model::train_evaluator(ingested, {"memory"}, base, tc));
  }

  SUBCASE("train config validation") {
    model::TrainConfig bad = tc;
    bad.learning_rate = 0;
    CHECK_THROWS_AS(bad.check(), std::invalid_argument);
    bad = tc;
    bad.val_fraction = 0.6;
    bad.test_fraction = 0.5;
    CHECK_THROWS_AS(bad.check(), std::invalid_argument);
    bad = tc;
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.check(), std::invalid_argument);
  }

  SUBCASE("model config validation") {
    model::ModelConfig bad = base;
    bad.vocab_size = 10;
    bad.d_model = 10;
    bad.n_heads = 4;
    CHECK_THROWS_WITH_AS(bad.check(),
                         doctest::Contains("divisible by n_heads"),
                         std::invalid_argument);
    bad = base;
    bad.vocab_size = 10;
    bad.dropout_p = 1.0;
    CHECK_THROWS_AS(bad.check(), std::invalid_argument);
  }
}

TEST_CASE("tokenize_dataset validates hashes and elaboration") {
  const auto dataset = sss_dataset(6, 21);
  const auto& m = memorized().model;

  const auto seqs = model::tokenize_dataset(dataset, m.vocab,
                                            dataset.header.macro, 192);
  REQUIRE(seqs.size() == dataset.records.size());
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto& rec = dataset.records[i];
    const auto arch = space::decode(rec.space, rec.arch_index);
    const auto expected = text::tokenize(
        text::graph_to_string(graph::elaborate(arch, dataset.header.macro)),
        m.vocab, 192);
    CHECK(seqs[i].ids == expected.ids);
    CHECK(!seqs[i].truncated);
  }

  SUBCASE("no_path records are rejected") {
    auto flagged = dataset;
    flagged.records[2].flags.push_back("no_path");
    CHECK_THROWS_WITH_AS(
        model::tokenize_dataset(flagged, m.vocab, flagged.header.macro, 192),
        doctest::Contains("no_path"), std::invalid_argument);
  }

  SUBCASE("a different macro config is caught by the stored hash") {
    graph::MacroConfig other = dataset.header.macro;
    other.num_classes = 7;
    CHECK_THROWS_WITH_AS(
        model::tokenize_dataset(dataset, m.vocab, other, 192),
        doctest::Contains("macro config mismatch?"), std::runtime_error);
  }
}

TEST_CASE("checkpoint round trip and tamper detection") {
  const auto dir = temp_dir();
  const auto& m = memorized().model;
  const auto path = dir / "model.ckpt.json";
  model::save_checkpoint(m, path);

  SUBCASE("round trip preserves predictions bit for bit") {
    const auto loaded = model::load_checkpoint(path);
    CHECK(params_equal(loaded.params, m.params));
    CHECK(loaded.objectives == m.objectives);
    CHECK(loaded.norm_mean == m.norm_mean);
    CHECK(loaded.norm_std == m.norm_std);
    CHECK(loaded.vocab.tokens == m.vocab.tokens);
    CHECK(loaded.space == m.space);
    CHECK(loaded.dataset_digest == m.dataset_digest);
    CHECK(loaded.split_seed == m.split_seed);
    const auto dataset = sss_dataset(16, 5);
    for (int i = 0; i < 3; ++i) {
      const auto idx = dataset.records[static_cast<std::size_t>(i)].arch_index;
      CHECK(loaded.predict_arch(idx) == m.predict_arch(idx));
    }

    // Saving the loaded model reproduces the file byte for byte.
    const auto path2 = dir / "model2.ckpt.json";
    model::save_checkpoint(loaded, path2);
    CHECK(slurp(path) == slurp(path2));
  }

  SUBCASE("tampered vocab digest is refused") {
    auto doc = nlohmann::json::parse(slurp(path));
    doc["vocab_digest"] = "0000000000000000";
    const auto tampered = dir / "tampered.ckpt.json";
    write_text(tampered, doc.dump());
    CHECK_THROWS_WITH_AS(model::load_checkpoint(tampered),
                         doctest::Contains("vocab digest mismatch"),
                         std::runtime_error);
  }

  SUBCASE("truncated file reports the parse offset") {
    const auto text = slurp(path);
    const auto truncated = dir / "truncated.ckpt.json";
    write_text(truncated, text.substr(0, text.size() / 2));
    CHECK_THROWS_WITH_AS(model::load_checkpoint(truncated),
                         doctest::Contains("parse error at byte"),
                         std::runtime_error);
  }

  SUBCASE("missing and unknown tensors are refused") {
    auto doc = nlohmann::json::parse(slurp(path));
    auto tensors = doc.at("tensors");
    REQUIRE(tensors.is_array());

    auto missing = doc;
    missing["tensors"].erase(0);
    const auto missing_path = dir / "missing.ckpt.json";
    write_text(missing_path, missing.dump());
    CHECK_THROWS_WITH_AS(model::load_checkpoint(missing_path),
                         doctest::Contains("missing tensor"),
                         std::runtime_error);

    auto extra = doc;
    auto bogus = extra["tensors"][0];
    bogus["name"] = "layer9.wq";
    extra["tensors"].push_back(bogus);
    const auto extra_path = dir / "extra.ckpt.json";
    write_text(extra_path, extra.dump());
    CHECK_THROWS_WITH_AS(model::load_checkpoint(extra_path),
                         doctest::Contains("unknown tensors"),
                         std::runtime_error);
  }

  SUBCASE("wrong format, version or shape is refused") {
    auto doc = nlohmann::json::parse(slurp(path));

    auto foreign = doc;
    foreign["format"] = "other";
    write_text(dir / "foreign.ckpt.json", foreign.dump());
    CHECK_THROWS_AS(model::load_checkpoint(dir / "foreign.ckpt.json"),
                    std::runtime_error);

    auto versioned = doc;
    versioned["version"] = 99;
    write_text(dir / "versioned.ckpt.json", versioned.dump());
    CHECK_THROWS_WITH_AS(model::load_checkpoint(dir / "versioned.ckpt.json"),
                         doctest::Contains("unsupported version"),
                         std::runtime_error);

    auto reshaped = doc;
    for (auto& tensor : reshaped["tensors"]) {
      if (tensor["name"] == "head.bias") tensor["shape"] = {1, 3};
    }
    write_text(dir / "reshaped.ckpt.json", reshaped.dump());
    CHECK_THROWS_WITH_AS(model::load_checkpoint(dir / "reshaped.ckpt.json"),
                         doctest::Contains("shape disagrees"),
                         std::runtime_error);
  }
}

TEST_CASE("predict_arch is the full pipeline") {
  const auto& m = memorized().model;
  const auto dataset = sss_dataset(16, 5);
  const auto idx = dataset.records[3].arch_index;

  const auto tokens = m.tokenize_arch(idx);
  CHECK(tokens.length() <= m.config.max_len);
  CHECK(m.predict_arch(idx) == m.predict(tokens));

  const auto direct = text::tokenize(
      text::graph_to_string(
          graph::elaborate(space::decode(m.space, idx), m.macro)),
      m.vocab, m.config.max_len);
  CHECK(tokens.ids == direct.ids);
}

TEST_CASE("sgd optimizer also learns") {
  const auto dataset = sss_dataset(16, 5);
  model::ModelConfig base;
  base.d_model = 16;
  base.n_layers = 1;
  base.n_heads = 2;
  base.ffn_dim = 32;
  base.max_len = 192;
  base.dropout_p = 0.0;
  model::TrainConfig tc;
  tc.learning_rate = 1e-2;
  tc.optimizer = model::Optimizer::sgd;
  tc.epochs = 30;
  tc.batch_size = 16;
  tc.seed = 3;
  tc.val_fraction = 0.0;
  tc.test_fraction = 0.0;
  const auto result = model::train_evaluator(dataset, {"memory"}, base, tc);
  CHECK(result.history.back().train_loss <
        result.history.front().train_loss);
}

TEST_CASE("history csv format") {
  const auto dir = temp_dir();
  const auto& result = memorized();
  const auto path = dir / "history.csv";
  model::write_history_csv(path, result.history, result.model.objectives);
  std::ifstream in(path);
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "epoch,train_loss,val_loss,val_memory");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == result.history.size());
}
