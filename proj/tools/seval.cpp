#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "seval/correlation.hpp"
#include "seval/cost_model.hpp"
#include "seval/dataset.hpp"
#include "seval/digest.hpp"
#include "seval/evaluator.hpp"
#include "seval/evolution.hpp"
#include "seval/net_string.hpp"
#include "seval/run_manifest.hpp"
#include "seval/search_space.hpp"

namespace {

using nlohmann::json;
using namespace seval;

using Clock = std::chrono::steady_clock;

std::vector<std::string> g_argv;
int g_exit_code = 0;

// Config files are JSON objects; dotted keys address subcommand options,
// e.g. {"train.epochs": 40}. Command-line flags win over config values.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool,
                        std::string) const override {
    return "{}\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json doc;
    try {
      doc = json::parse(input);
    } catch (const json::parse_error& e) {
      throw CLI::FileError(std::string("config is not valid JSON: ") +
                           e.what());
    }
    if (!doc.is_object()) {
      throw CLI::FileError("config must be a JSON object");
    }
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : doc.items()) {
      CLI::ConfigItem item;
      std::string name = key;
      for (std::size_t dot = name.find('.'); dot != std::string::npos;
           dot = name.find('.')) {
        item.parents.push_back(name.substr(0, dot));
        name = name.substr(dot + 1);
      }
      item.name = name;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar_to_string(v));
      } else {
        item.inputs.push_back(scalar_to_string(value));
      }
      items.push_back(std::move(item));
    }
    return items;
  }

 private:
  static std::string scalar_to_string(const json& v) {
    return v.is_string() ? v.get<std::string>() : v.dump();
  }
};

std::filesystem::path resolve_profiles_dir(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("SEVAL_PROFILE_DIR")) return env;
  return "profiles";
}

cost::DeviceProfile find_profile(const std::filesystem::path& dir,
                                 const std::string& device) {
  const auto profiles = cost::load_profiles(dir);
  for (const auto& p : profiles) {
    if (p.name == device) return p;
  }
  std::string names;
  for (const auto& p : profiles) {
    if (!names.empty()) names += ", ";
    names += p.name;
  }
  throw std::runtime_error("no profile named '" + device + "' in " +
                           dir.string() + " (available: " + names + ")");
}

struct ManifestScope {
  cli::RunManifest manifest;
  Clock::time_point start = Clock::now();

  ManifestScope(std::string command, const json& effective_config,
                std::uint64_t seed) {
    manifest.command = std::move(command);
    manifest.argv = g_argv;
    manifest.config_digest = hex_digest(effective_config.dump());
    manifest.seed = seed;
  }

  void finish(const std::filesystem::path& primary_output) {
    manifest.wall_ms =
        std::chrono::duration<double, std::milli>(Clock::now() - start)
            .count();
    cli::write_manifest(manifest, primary_output);
  }
};

std::vector<std::string> split_csv_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// --- gen-dataset ---------------------------------------------------------

struct GenDatasetOpts {
  std::string space = "tss";
  std::uint64_t n = 0;
  std::uint64_t seed = 0;
  std::string device = "edgegpu";
  std::string profiles_dir;
  std::string out;
  int cells_per_stage = 5;
};

void run_gen_dataset(const GenDatasetOpts& opt) {
  const auto space = space::space_from_string(opt.space);
  const auto dir = resolve_profiles_dir(opt.profiles_dir);
  const auto profile = find_profile(dir, opt.device);
  graph::MacroConfig macro;
  macro.cells_per_stage = opt.cells_per_stage;

  const json cfg{{"space", opt.space},         {"n", opt.n},
                 {"seed", opt.seed},           {"device", opt.device},
                 {"profiles_dir", dir.string()}, {"out", opt.out},
                 {"cells_per_stage", opt.cells_per_stage}};
  ManifestScope scope("gen-dataset", cfg, opt.seed);
  scope.manifest.inputs = {dir.string()};
  scope.manifest.outputs = {opt.out};

  const auto indices = cost::sample_arch_indices(space, opt.n, opt.seed);
  const auto dataset =
      cost::build_dataset(space, indices, profile, macro, opt.seed);
  cost::save_dataset(dataset, opt.out);
  scope.finish(opt.out);
  std::cout << "wrote " << dataset.records.size() << " records for space "
            << opt.space << " (device " << profile.name << ") to " << opt.out
            << "\n";
}

// --- train ---------------------------------------------------------------

struct TrainOpts {
  std::string dataset;
  std::string objectives;
  std::string out;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int ffn_dim = 256;
  int max_len = 512;
  double dropout = 0.1;
  std::string readout = "mean_pool";
  double lr = 1e-3;
  int epochs = 30;
  int batch_size = 32;
  std::uint64_t seed = 0;
  std::string optimizer = "adam";
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  int threads = 1;
};

void run_train(const TrainOpts& opt) {
  const auto objectives = split_csv_list(opt.objectives);
  if (objectives.empty()) {
    throw std::invalid_argument("--objectives must name at least one metric");
  }

  model::ModelConfig mc;
  mc.d_model = opt.d_model;
  mc.n_layers = opt.n_layers;
  mc.n_heads = opt.n_heads;
  mc.ffn_dim = opt.ffn_dim;
  mc.max_len = opt.max_len;
  mc.dropout_p = opt.dropout;
  if (opt.readout == "first_token") {
    mc.readout = model::Readout::first_token;
  } else if (opt.readout == "mean_pool") {
    mc.readout = model::Readout::mean_pool;
  } else {
    throw std::invalid_argument("--readout must be mean_pool or first_token");
  }

  model::TrainConfig tc;
  tc.learning_rate = opt.lr;
  tc.epochs = opt.epochs;
  tc.batch_size = opt.batch_size;
  tc.seed = opt.seed;
  if (opt.optimizer == "adam") {
    tc.optimizer = model::Optimizer::adam;
  } else if (opt.optimizer == "sgd") {
    tc.optimizer = model::Optimizer::sgd;
  } else {
    throw std::invalid_argument("--optimizer must be adam or sgd");
  }
  tc.val_fraction = opt.val_fraction;
  tc.test_fraction = opt.test_fraction;
  tc.threads = opt.threads;
  tc.check();

  const json cfg{{"dataset", opt.dataset},
                 {"objectives", objectives},
                 {"out", opt.out},
                 {"d_model", mc.d_model},
                 {"n_layers", mc.n_layers},
                 {"n_heads", mc.n_heads},
                 {"ffn_dim", mc.ffn_dim},
                 {"max_len", mc.max_len},
                 {"dropout", mc.dropout_p},
                 {"readout", opt.readout},
                 {"lr", tc.learning_rate},
                 {"epochs", tc.epochs},
                 {"batch_size", tc.batch_size},
                 {"seed", tc.seed},
                 {"optimizer", opt.optimizer},
                 {"val_fraction", tc.val_fraction},
                 {"test_fraction", tc.test_fraction},
                 {"threads", tc.threads}};
  ManifestScope scope("train", cfg, opt.seed);
  const auto history_path = opt.out + ".history.csv";
  scope.manifest.inputs = {opt.dataset};
  scope.manifest.outputs = {opt.out, history_path};

  const auto dataset = cost::load_dataset(opt.dataset);
  const auto result = model::train_evaluator(dataset, objectives, mc, tc);
  model::save_checkpoint(result.model, opt.out);
  model::write_history_csv(history_path, result.history, objectives);
  scope.finish(opt.out);

  const auto& last = result.history.back();
  std::cout << "trained " << objectives.size() << "-objective model on "
            << result.train_indices.size() << " records ("
            << result.val_indices.size() << " val, "
            << result.test_indices.size() << " test)\n";
  std::cout << "final train loss " << last.train_loss << ", val loss "
            << last.val_loss << ", best epoch " << result.best_epoch << "\n";
  std::cout << "checkpoint: " << opt.out << "\nhistory:    " << history_path
            << "\n";
}

// --- eval ----------------------------------------------------------------

struct EvalOpts {
  std::string checkpoint;
  std::string dataset;
  std::string out;
  std::string split = "test";
  bool allow_digest_mismatch = false;
};

void run_eval(const EvalOpts& opt) {
  const json cfg{{"checkpoint", opt.checkpoint},
                 {"dataset", opt.dataset},
                 {"out", opt.out},
                 {"split", opt.split},
                 {"allow_digest_mismatch", opt.allow_digest_mismatch}};

  const auto model = model::load_checkpoint(opt.checkpoint);
  const auto dataset = cost::load_dataset(opt.dataset);
  ManifestScope scope("eval", cfg, model.split_seed);
  scope.manifest.inputs = {opt.checkpoint, opt.dataset};

  if (model.dataset_digest != dataset.header.oracle_digest) {
    if (!opt.allow_digest_mismatch) {
      throw std::runtime_error(
          "checkpoint was trained against oracle digest " +
          model.dataset_digest + " but dataset has " +
          dataset.header.oracle_digest +
          "; refusing (pass --allow-digest-mismatch to override)");
    }
    std::cerr << "warning: oracle digest mismatch, proceeding as requested\n";
  }
  for (const auto& obj : model.objectives) {
    if (std::find(dataset.header.metric_names.begin(),
                  dataset.header.metric_names.end(),
                  obj) == dataset.header.metric_names.end()) {
      throw std::runtime_error("dataset has no metric column '" + obj + "'");
    }
  }

  const auto split = model::split_dataset(dataset.records.size(),
                                          model.val_fraction,
                                          model.test_fraction, model.split_seed);
  std::vector<std::size_t> selected;
  if (opt.split == "train") {
    selected = split.train;
  } else if (opt.split == "val") {
    selected = split.val;
  } else if (opt.split == "test") {
    selected = split.test;
  } else if (opt.split == "all") {
    selected.resize(dataset.records.size());
    std::iota(selected.begin(), selected.end(), 0);
  } else {
    throw std::invalid_argument("--split must be train, val, test or all");
  }
  if (selected.empty()) {
    throw std::runtime_error("selected split '" + opt.split + "' is empty");
  }

  const auto tokens = model::tokenize_dataset(dataset, model.vocab, model.macro,
                                              model.config.max_len);
  std::vector<std::vector<double>> pred(model.objectives.size());
  std::vector<std::vector<double>> truth(model.objectives.size());
  for (const auto idx : selected) {
    const auto p = model.predict(tokens[idx]);
    for (std::size_t j = 0; j < model.objectives.size(); ++j) {
      pred[j].push_back(p[j]);
      truth[j].push_back(
          dataset.records[idx].metrics.at(model.objectives[j]));
    }
  }

  json report{{"format", "seval.eval_report"},
              {"version", 1},
              {"split", opt.split},
              {"n", selected.size()},
              {"objectives", json::object()}};
  const auto out_base = [&] {
    auto p = std::filesystem::path(opt.out);
    auto stem = p;
    stem.replace_extension();
    return stem.string();
  }();
  for (std::size_t j = 0; j < model.objectives.size(); ++j) {
    const auto& name = model.objectives[j];
    const auto rep = stats::correlation_report(pred[j], truth[j]);
    const auto scatter_path = out_base + "_" + name + ".csv";
    {
      std::ofstream scatter(scatter_path);
      if (!scatter) {
        throw std::runtime_error("cannot open " + scatter_path +
                                 " for writing");
      }
      stats::write_scatter_csv(scatter, pred[j], truth[j], rep);
    }
    report["objectives"][name] =
        json{{"kendall_tau", rep.tau_defined ? json(rep.kendall_tau) : json()},
             {"pearson_r", rep.r_defined ? json(rep.pearson_r) : json()},
             {"n", rep.n},
             {"ties_pred", rep.ties_x},
             {"ties_true", rep.ties_y},
             {"scatter_csv", scatter_path}};
    scope.manifest.outputs.push_back(scatter_path);
    std::cout << name << ": tau=";
    if (rep.tau_defined) std::cout << rep.kendall_tau; else std::cout << "undefined";
    std::cout << " pearson=";
    if (rep.r_defined) std::cout << rep.pearson_r; else std::cout << "undefined";
    std::cout << " n=" << rep.n << "\n";
  }
  {
    std::ofstream out_file(opt.out);
    if (!out_file) {
      throw std::runtime_error("cannot open " + opt.out + " for writing");
    }
    out_file << report.dump(2) << '\n';
  }
  scope.manifest.outputs.insert(scope.manifest.outputs.begin(), opt.out);
  scope.finish(opt.out);
}

// --- search --------------------------------------------------------------

struct SearchOpts {
  std::string space = "tss";
  std::uint64_t cycles = 0;
  std::uint64_t seed = 0;
  std::string out;
  std::string checkpoint;
  std::vector<std::string> constraints;
  std::string dataset;
  std::string profiles_dir;
  int population = 25;
  int tournament = 5;
  std::string fitness = "synthetic-proxy";
};

search::Constraint parse_constraint(const std::string& text,
                                    const cost::Dataset* dataset) {
  search::Constraint c;
  auto op_pos = text.find("<=");
  if (op_pos != std::string::npos) {
    c.direction = search::Direction::max_allowed;
  } else {
    op_pos = text.find(">=");
    if (op_pos == std::string::npos) {
      throw std::invalid_argument(
          "unparseable constraint '" + text +
          "' (expected metric<=value, metric>=value, value may be "
          "auto-mean or auto-median)");
    }
    c.direction = search::Direction::min_required;
  }
  c.metric = text.substr(0, op_pos);
  const auto rhs = text.substr(op_pos + 2);
  if (c.metric.empty() || rhs.empty()) {
    throw std::invalid_argument("unparseable constraint '" + text + "'");
  }
  if (rhs == "auto-mean" || rhs == "auto-median") {
    if (dataset == nullptr) {
      throw std::invalid_argument("constraint '" + text +
                                  "' needs --dataset to resolve " + rhs);
    }
    c.threshold = search::threshold_from_dataset(
        dataset->records, c.metric,
        rhs == "auto-mean" ? search::ThresholdStat::mean
                           : search::ThresholdStat::median);
  } else {
    try {
      std::size_t used = 0;
      c.threshold = std::stod(rhs, &used);
      if (used != rhs.size()) throw std::invalid_argument(rhs);
    } catch (const std::exception&) {
      throw std::invalid_argument("constraint '" + text +
                                  "': bad threshold '" + rhs + "'");
    }
  }
  return c;
}

void run_search(const SearchOpts& opt) {
  search::SearchConfig cfg;
  cfg.space = space::space_from_string(opt.space);
  cfg.cycles = opt.cycles;
  cfg.seed = opt.seed;
  cfg.population_size = opt.population;
  cfg.tournament_size = opt.tournament;
  if (opt.fitness == "synthetic-proxy") {
    cfg.fitness = search::FitnessKind::synthetic_proxy;
  } else if (opt.fitness == "evaluator-accuracy") {
    cfg.fitness = search::FitnessKind::evaluator_accuracy;
  } else {
    throw std::invalid_argument(
        "--fitness must be synthetic-proxy or evaluator-accuracy");
  }
  cfg.check();

  std::optional<cost::Dataset> dataset;
  if (!opt.dataset.empty()) dataset = cost::load_dataset(opt.dataset);

  std::optional<model::EvaluatorModel> model;
  std::optional<search::ModelPredictor> predictor;
  if (!opt.checkpoint.empty()) {
    model = model::load_checkpoint(opt.checkpoint);
    predictor.emplace(*model);
    if (dataset.has_value() &&
        model->dataset_digest != dataset->header.oracle_digest) {
      throw std::runtime_error(
          "checkpoint oracle digest does not match --dataset; refusing");
    }
  }

  std::vector<search::Constraint> constraints;
  for (const auto& text : opt.constraints) {
    constraints.push_back(
        parse_constraint(text, dataset.has_value() ? &*dataset : nullptr));
  }
  if (!constraints.empty() && !predictor.has_value()) {
    throw std::invalid_argument("constraints require --checkpoint");
  }

  json cfg_json{{"space", opt.space},
                {"cycles", opt.cycles},
                {"seed", opt.seed},
                {"out", opt.out},
                {"checkpoint", opt.checkpoint},
                {"dataset", opt.dataset},
                {"population", opt.population},
                {"tournament", opt.tournament},
                {"fitness", opt.fitness},
                {"constraints", json::array()}};
  for (const auto& c : constraints) {
    cfg_json["constraints"].push_back(
        json{{"metric", c.metric},
             {"threshold", c.threshold},
             {"direction", c.direction == search::Direction::max_allowed
                               ? "max_allowed"
                               : "min_required"}});
  }
  ManifestScope scope("search", cfg_json, opt.seed);
  if (!opt.checkpoint.empty()) scope.manifest.inputs.push_back(opt.checkpoint);
  if (!opt.dataset.empty()) scope.manifest.inputs.push_back(opt.dataset);
  const auto log_path = opt.out + ".log.jsonl";
  scope.manifest.outputs = {opt.out, log_path};

  const auto fitness = search::make_fitness(
      cfg.fitness, predictor.has_value() ? &*predictor : nullptr);
  const auto result = search::regularized_evolution(
      cfg, fitness, constraints, predictor.has_value() ? &*predictor : nullptr);

  const std::vector<std::string> metric_names =
      model.has_value() ? model->objectives : std::vector<std::string>{};
  {
    std::ofstream log(log_path);
    if (!log) {
      throw std::runtime_error("cannot open " + log_path + " for writing");
    }
    search::write_search_log(log, result, metric_names);
  }

  json summary{{"format", "seval.search_summary"},
               {"version", 1},
               {"space", opt.space},
               {"cycles", cfg.cycles},
               {"seed", cfg.seed},
               {"constraints", cfg_json["constraints"]},
               {"found", result.found},
               {"feasible_evals", result.feasible_evals},
               {"total_evals", result.total_evals},
               {"wall_ms", json{{"init", result.init_wall_ms},
                                {"evolve", result.evolve_wall_ms}}},
               {"log", log_path}};
  if (result.found) {
    json best{{"arch_index", result.best_index},
              {"arch", space::to_text(result.best_arch)},
              {"arch_verbose", space::to_verbose_text(result.best_arch)},
              {"fitness", result.best_fitness}};
    if (predictor.has_value()) {
      const auto feas =
          search::constraint_filter(result.best_arch, &*predictor, constraints);
      json predicted;
      for (std::size_t j = 0; j < metric_names.size(); ++j) {
        predicted[metric_names[j]] = feas.predicted[j];
      }
      best["predicted"] = std::move(predicted);
    }

    // Oracle ground truth for honesty checking, reproducing the dataset
    // oracle seeds when a dataset provides the context.
    const graph::MacroConfig macro =
        model.has_value()
            ? model->macro
            : (dataset.has_value() ? dataset->header.macro
                                   : graph::MacroConfig{});
    json oracle;
    try {
      const auto graph = graph::elaborate(result.best_arch, macro);
      oracle["flops"] = cost::flops(graph);
      oracle["params"] = graph.param_count;
      oracle["memory"] = cost::peak_memory_bytes(graph);
      oracle["base_accuracy"] = cost::base_accuracy(result.best_arch);
      if (dataset.has_value()) {
        const auto dir = resolve_profiles_dir(opt.profiles_dir);
        const auto profile = find_profile(dir, dataset->header.device);
        const auto arch_seed =
            Rng::mix(dataset->header.seed, result.best_index);
        oracle["accuracy"] = cost::synthetic_accuracy(result.best_arch,
                                                      Rng::mix(arch_seed, 1));
        Rng latency_rng(Rng::mix(arch_seed, 2));
        oracle["latency"] = cost::latency_ms(graph, profile, latency_rng);
      }
    } catch (const graph::NoPathError&) {
      oracle["error"] = "no_path";
    }
    summary["best"] = std::move(best);
    summary["oracle"] = std::move(oracle);
  }

  {
    std::ofstream out_file(opt.out);
    if (!out_file) {
      throw std::runtime_error("cannot open " + opt.out + " for writing");
    }
    out_file << summary.dump(2) << '\n';
  }
  scope.finish(opt.out);

  if (result.found) {
    std::cout << "best arch " << space::to_text(result.best_arch)
              << " fitness " << result.best_fitness << " ("
              << result.feasible_evals << "/" << result.total_evals
              << " evaluations feasible)\n";
  } else {
    std::cout << "no feasible architecture found in " << result.total_evals
              << " evaluations\n";
    g_exit_code = 1;
  }
}

// --- net2str -------------------------------------------------------------

struct Net2StrOpts {
  std::string arch;
  std::string traversal = "postorder";
  int cells_per_stage = 5;
  std::string out;
};

void run_net2str(const Net2StrOpts& opt) {
  const auto arch = space::parse_arch(opt.arch);
  graph::MacroConfig macro;
  macro.cells_per_stage = opt.cells_per_stage;
  text::Traversal traversal;
  if (opt.traversal == "postorder") {
    traversal = text::Traversal::postorder_dfs;
  } else if (opt.traversal == "bfs") {
    traversal = text::Traversal::bfs;
  } else {
    throw std::invalid_argument("--traversal must be postorder or bfs");
  }
  const auto graph = graph::elaborate(arch, macro);
  const auto net_string = text::graph_to_string(graph, traversal);
  if (!opt.out.empty()) {
    const json cfg{{"arch", opt.arch},
                   {"traversal", opt.traversal},
                   {"cells_per_stage", opt.cells_per_stage},
                   {"out", opt.out}};
    ManifestScope scope("net2str", cfg, 0);
    scope.manifest.outputs = {opt.out};
    std::ofstream out_file(opt.out, std::ios::binary);
    if (!out_file) {
      throw std::runtime_error("cannot open " + opt.out + " for writing");
    }
    out_file << net_string.text;
    scope.finish(opt.out);
  }
  std::cout << net_string.text;
}

// --- grad-check ----------------------------------------------------------

struct GradCheckOpts {
  std::string precision = "double";
  double eps = 0;  // 0 = per-precision default
  double threshold = 0;
  std::uint64_t seed = 42;
  int d_model = 8;
  int n_layers = 1;
  int n_heads = 2;
  int ffn_dim = 16;
  int vocab_size = 10;
  int max_len = 16;
  int k_outputs = 1;
  int coords = 20;
};

void run_grad_check(const GradCheckOpts& opt) {
  model::ModelConfig mc;
  mc.d_model = opt.d_model;
  mc.n_layers = opt.n_layers;
  mc.n_heads = opt.n_heads;
  mc.ffn_dim = opt.ffn_dim;
  mc.vocab_size = opt.vocab_size;
  mc.max_len = opt.max_len;
  mc.k_outputs = opt.k_outputs;

  const bool is_double = opt.precision == "double";
  if (!is_double && opt.precision != "float") {
    throw std::invalid_argument("--precision must be double or float");
  }
  const double eps = opt.eps > 0 ? opt.eps : 1e-5;
  const double threshold =
      opt.threshold > 0 ? opt.threshold : (is_double ? 1e-4 : 1e-2);

  const auto report =
      is_double ? model::grad_check<double>(mc, opt.seed, eps, opt.coords)
                : model::grad_check<float>(mc, opt.seed, eps, opt.coords);
  for (const auto& [name, err] : report.per_group) {
    std::cout << "  " << name << ": " << err << "\n";
  }
  std::cout << "max relative error: " << report.max_rel_error << " ("
            << opt.precision << ", eps=" << eps << ", threshold=" << threshold
            << ")\n";
  if (!(report.max_rel_error < threshold)) {
    std::cout << "FAIL\n";
    g_exit_code = 1;
  } else {
    std::cout << "PASS\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  g_argv.assign(argv, argv + argc);
  CLI::App app{"seval: architecture dataset, surrogate-evaluator and "
               "constrained-search toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "JSON config file (flags win)");
  app.config_formatter(std::make_shared<JsonConfig>());

  GenDatasetOpts gen;
  auto* gen_cmd = app.add_subcommand(
      "gen-dataset", "Sample architectures and write an oracle-metric dataset");
  gen_cmd->add_option("--space", gen.space, "Search space: tss or sss")
      ->capture_default_str();
  gen_cmd->add_option("--n", gen.n, "Number of architectures")->required();
  gen_cmd->add_option("--seed", gen.seed, "Sampling seed")
      ->capture_default_str();
  gen_cmd->add_option("--device", gen.device, "Latency profile name")
      ->capture_default_str();
  gen_cmd->add_option("--profiles-dir", gen.profiles_dir,
                      "Device profile directory (default: $SEVAL_PROFILE_DIR "
                      "or ./profiles)");
  gen_cmd->add_option("--cells-per-stage", gen.cells_per_stage,
                      "Macro skeleton cells per stage")
      ->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output dataset (JSONL)")->required();
  gen_cmd->callback([&] { run_gen_dataset(gen); });

  TrainOpts train;
  auto* train_cmd =
      app.add_subcommand("train", "Train an evaluator on a dataset");
  train_cmd->add_option("--dataset", train.dataset, "Input dataset (JSONL)")
      ->required();
  train_cmd
      ->add_option("--objectives", train.objectives,
                   "Comma-separated metric names to predict")
      ->required();
  train_cmd->add_option("--out", train.out, "Output checkpoint")->required();
  train_cmd->add_option("--d-model", train.d_model)->capture_default_str();
  train_cmd->add_option("--n-layers", train.n_layers)->capture_default_str();
  train_cmd->add_option("--n-heads", train.n_heads)->capture_default_str();
  train_cmd->add_option("--ffn-dim", train.ffn_dim)->capture_default_str();
  train_cmd->add_option("--max-len", train.max_len)->capture_default_str();
  train_cmd->add_option("--dropout", train.dropout)->capture_default_str();
  train_cmd->add_option("--readout", train.readout, "mean_pool or first_token")
      ->capture_default_str();
  train_cmd->add_option("--lr", train.lr)->capture_default_str();
  train_cmd->add_option("--epochs", train.epochs)->capture_default_str();
  train_cmd->add_option("--batch-size", train.batch_size)
      ->capture_default_str();
  train_cmd->add_option("--seed", train.seed)->capture_default_str();
  train_cmd->add_option("--optimizer", train.optimizer, "adam or sgd")
      ->capture_default_str();
  train_cmd->add_option("--val-fraction", train.val_fraction)
      ->capture_default_str();
  train_cmd->add_option("--test-fraction", train.test_fraction)
      ->capture_default_str();
  train_cmd->add_option("--threads", train.threads,
                        "Worker threads per batch (determinism is per "
                        "thread-count)")
      ->capture_default_str();
  train_cmd->callback([&] { run_train(train); });

  EvalOpts eval;
  auto* eval_cmd = app.add_subcommand(
      "eval", "Correlation report of a checkpoint against a dataset");
  eval_cmd->add_option("--checkpoint", eval.checkpoint)->required();
  eval_cmd->add_option("--dataset", eval.dataset)->required();
  eval_cmd->add_option("--out", eval.out, "Report JSON path")->required();
  eval_cmd->add_option("--split", eval.split, "train, val, test or all")
      ->capture_default_str();
  eval_cmd->add_flag("--allow-digest-mismatch", eval.allow_digest_mismatch,
                     "Evaluate even if the dataset oracle digest differs");
  eval_cmd->callback([&] { run_eval(eval); });

  SearchOpts search_opt;
  auto* search_cmd = app.add_subcommand(
      "search", "Constrained aging-evolution search over a space");
  search_cmd->add_option("--space", search_opt.space)->capture_default_str();
  search_cmd->add_option("--cycles", search_opt.cycles,
                         "Total evaluations (>= population)")
      ->required();
  search_cmd->add_option("--seed", search_opt.seed)->capture_default_str();
  search_cmd->add_option("--out", search_opt.out, "Summary JSON path")
      ->required();
  search_cmd->add_option("--checkpoint", search_opt.checkpoint,
                         "Evaluator checkpoint for constraint predictions");
  search_cmd->add_option(
      "--constraint", search_opt.constraints,
      "metric<=value (or >=); value may be auto-mean/auto-median");
  search_cmd->add_option("--dataset", search_opt.dataset,
                         "Dataset for auto thresholds and oracle context");
  search_cmd->add_option("--profiles-dir", search_opt.profiles_dir,
                         "Device profile directory for ground-truth latency");
  search_cmd->add_option("--population", search_opt.population)
      ->capture_default_str();
  search_cmd->add_option("--tournament", search_opt.tournament)
      ->capture_default_str();
  search_cmd->add_option("--fitness", search_opt.fitness,
                         "synthetic-proxy or evaluator-accuracy")
      ->capture_default_str();
  search_cmd->callback([&] { run_search(search_opt); });

  Net2StrOpts net2str;
  auto* net2str_cmd = app.add_subcommand(
      "net2str", "Print the canonical string of an architecture");
  net2str_cmd->add_option("arch", net2str.arch, "e.g. tss/125 or sss/9")
      ->required();
  net2str_cmd->add_option("--traversal", net2str.traversal,
                          "postorder or bfs")
      ->capture_default_str();
  net2str_cmd->add_option("--cells-per-stage", net2str.cells_per_stage)
      ->capture_default_str();
  net2str_cmd->add_option("--out", net2str.out, "Also write to this file");
  net2str_cmd->callback([&] { run_net2str(net2str); });

  GradCheckOpts grad;
  auto* grad_cmd = app.add_subcommand(
      "grad-check", "Finite-difference check of the evaluator gradients");
  grad_cmd->add_option("--precision", grad.precision, "double or float")
      ->capture_default_str();
  grad_cmd->add_option("--eps", grad.eps, "FD step (default 1e-5)");
  grad_cmd->add_option("--threshold", grad.threshold,
                       "Pass threshold (default 1e-4 / 1e-2)");
  grad_cmd->add_option("--seed", grad.seed)->capture_default_str();
  grad_cmd->add_option("--d-model", grad.d_model)->capture_default_str();
  grad_cmd->add_option("--n-layers", grad.n_layers)->capture_default_str();
  grad_cmd->add_option("--n-heads", grad.n_heads)->capture_default_str();
  grad_cmd->add_option("--ffn-dim", grad.ffn_dim)->capture_default_str();
  grad_cmd->add_option("--vocab-size", grad.vocab_size)->capture_default_str();
  grad_cmd->add_option("--max-len", grad.max_len)->capture_default_str();
  grad_cmd->add_option("--k-outputs", grad.k_outputs)->capture_default_str();
  grad_cmd->add_option("--coords", grad.coords, "Coordinates per tensor")
      ->capture_default_str();
  grad_cmd->callback([&] { run_grad_check(grad); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return g_exit_code;
}
