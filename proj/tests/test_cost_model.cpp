#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <doctest.h>

#include "seval/cost_model.hpp"
#include "seval/digest.hpp"
#include "seval/graph_ir.hpp"
#include "seval/rng.hpp"
#include "seval/search_space.hpp"

using namespace seval;

namespace {

graph::GNode make_node(int id, std::string op, std::vector<int> inputs,
                       graph::TensorShape shape,
                       std::map<std::string, std::int64_t> attrs = {}) {
  graph::GNode node;
  node.id = id;
  node.op_name = std::move(op);
  node.inputs = std::move(inputs);
  node.out_shape = shape;
  node.attrs = std::move(attrs);
  return node;
}

// Conv(3->16,k3,p1) + BatchNorm on a 32x32 input; the smallest graph with
// parameters and a consumed intermediate.
graph::CompGraph stem_chain() {
  graph::CompGraph g;
  g.input_shape = {1, 3, 32, 32};
  g.nodes.push_back(make_node(0, "Conv2d", {}, {1, 16, 32, 32},
                              {{"in_channels", 3},
                               {"out_channels", 16},
                               {"kernel", 3},
                               {"stride", 1},
                               {"padding", 1}}));
  g.nodes.push_back(make_node(1, "BatchNorm", {0}, {1, 16, 32, 32},
                              {{"in_channels", 16}}));
  g.param_count = graph::count_params(g);
  g.skeleton = "test";
  return g;
}

// 0 -> {1,2} -> 3(Add); all four outputs share one shape.
graph::CompGraph diamond() {
  graph::CompGraph g;
  g.input_shape = {1, 3, 32, 32};
  g.nodes.push_back(make_node(0, "Conv2d", {}, {1, 16, 32, 32},
                              {{"in_channels", 3},
                               {"out_channels", 16},
                               {"kernel", 3},
                               {"stride", 1},
                               {"padding", 1}}));
  g.nodes.push_back(make_node(1, "ReLU", {0}, {1, 16, 32, 32}));
  g.nodes.push_back(make_node(2, "AvgPool2d", {0}, {1, 16, 32, 32},
                              {{"kernel", 3}, {"stride", 1}, {"padding", 1}}));
  g.nodes.push_back(make_node(3, "Add", {1, 2}, {1, 16, 32, 32}));
  g.param_count = graph::count_params(g);
  g.skeleton = "test";
  return g;
}

cost::DeviceProfile flat_profile(double coeff, double overhead, double sigma) {
  cost::DeviceProfile p;
  p.name = "flat";
  for (const char* op : {"Conv2d", "BatchNorm", "ReLU", "Add", "AvgPool2d",
                         "GlobalAvgPool", "Linear"}) {
    p.ms_per_mflop[op] = coeff;
  }
  p.per_node_overhead_ms = overhead;
  p.noise_sigma = sigma;
  return p;
}

}  // namespace

TEST_CASE("node_flops fixtures") {
  // 2 * Cin * Cout * K^2 * Hout * Wout = 2*16*16*9*32*32.
  const auto conv = make_node(0, "Conv2d", {}, {1, 16, 32, 32},
                              {{"in_channels", 16},
                               {"out_channels", 16},
                               {"kernel", 3},
                               {"stride", 1},
                               {"padding", 1}});
  CHECK(cost::node_flops(conv) == 4718592);

  const auto linear = make_node(0, "Linear", {}, {1, 10, 1, 1},
                                {{"in_channels", 64}, {"out_channels", 10}});
  CHECK(cost::node_flops(linear) == 2 * 64 * 10);

  // One op per output element for the cheap ops.
  for (const char* op : {"BatchNorm", "ReLU", "Add", "AvgPool2d"}) {
    CHECK(cost::node_flops(make_node(0, op, {}, {1, 16, 32, 32})) == 16384);
  }
  CHECK(cost::node_flops(make_node(0, "GlobalAvgPool", {}, {1, 64, 1, 1})) ==
        64);

  CHECK_THROWS_AS(cost::node_flops(make_node(0, "Softmax", {}, {1, 1, 1, 1})),
                  graph::GraphError);
}

TEST_CASE("graph flops is the node sum") {
  graph::CompGraph g;
  g.input_shape = {1, 3, 32, 32};
  g.nodes.push_back(make_node(0, "Conv2d", {}, {1, 8, 32, 32},
                              {{"in_channels", 3},
                               {"out_channels", 8},
                               {"kernel", 3},
                               {"stride", 1},
                               {"padding", 1}}));
  g.nodes.push_back(make_node(1, "BatchNorm", {0}, {1, 8, 32, 32}));
  g.nodes.push_back(make_node(2, "ReLU", {1}, {1, 8, 32, 32}));
  // 2*3*8*9*1024 + 8192 + 8192.
  CHECK(cost::flops(g) == 442368 + 8192 + 8192);
}

TEST_CASE("peak memory hand fixtures") {
  SUBCASE("chain: params + conv output + bn output coexist") {
    const auto g = stem_chain();
    CHECK(g.param_count == 464);  // 3*16*9 + 2*16
    // 464*4 + 2 * (16*32*32*4): both tensors live while BatchNorm runs.
    CHECK(cost::peak_memory_bytes(g) == 132928);
    CHECK(cost::peak_memory_bytes_brute(g) == 132928);
  }

  SUBCASE("diamond: three tensors live while the second branch runs") {
    const auto g = diamond();
    CHECK(g.param_count == 432);
    // params*4 + 3S with S = 16*32*32*4: node 0 must outlive branch 1.
    CHECK(cost::peak_memory_bytes(g) == 432 * 4 + 3 * 65536);
    CHECK(cost::peak_memory_bytes_brute(g) == 432 * 4 + 3 * 65536);
  }

  SUBCASE("duplicate inputs are freed once") {
    graph::CompGraph g;
    g.input_shape = {1, 3, 32, 32};
    g.nodes.push_back(make_node(0, "Conv2d", {}, {1, 16, 32, 32},
                                {{"in_channels", 3},
                                 {"out_channels", 16},
                                 {"kernel", 3},
                                 {"stride", 1},
                                 {"padding", 1}}));
    g.nodes.push_back(make_node(1, "Add", {0, 0}, {1, 16, 32, 32}));
    g.param_count = graph::count_params(g);
    CHECK(cost::peak_memory_bytes(g) == 432 * 4 + 2 * 65536);
    CHECK(cost::peak_memory_bytes_brute(g) == 432 * 4 + 2 * 65536);
  }
}

TEST_CASE("peak memory: incremental replay matches from-scratch oracle") {
  graph::MacroConfig cfg;
  Rng rng(20240817);
  int checked = 0;
  while (checked < 100) {
    const auto arch = space::tss_decode(
        rng.uniform_u32(static_cast<std::uint32_t>(
            space::space_size(space::SpaceId::tss))));
    if (!graph::tss_has_path(arch)) continue;
    ++checked;
    const auto g = graph::elaborate_tss(arch, cfg);
    CHECK(cost::peak_memory_bytes(g) == cost::peak_memory_bytes_brute(g));
  }
  for (int i = 0; i < 20; ++i) {
    const auto arch = space::sss_decode(
        rng.uniform_u32(static_cast<std::uint32_t>(
            space::space_size(space::SpaceId::sss))));
    const auto g = graph::elaborate_sss(arch, cfg);
    CHECK(cost::peak_memory_bytes(g) == cost::peak_memory_bytes_brute(g));
  }
}

TEST_CASE("latency mean formula") {
  graph::CompGraph g;
  g.input_shape = {1, 3, 32, 32};
  g.nodes.push_back(make_node(0, "Conv2d", {}, {1, 8, 32, 32},
                              {{"in_channels", 3},
                               {"out_channels", 8},
                               {"kernel", 3},
                               {"stride", 1},
                               {"padding", 1}}));
  g.nodes.push_back(make_node(1, "BatchNorm", {0}, {1, 8, 32, 32},
                              {{"in_channels", 8}}));
  g.nodes.push_back(make_node(2, "ReLU", {1}, {1, 8, 32, 32}));
  g.param_count = graph::count_params(g);

  cost::DeviceProfile p;
  p.name = "hand";
  p.ms_per_mflop = {{"Conv2d", 1.0}, {"BatchNorm", 2.0}, {"ReLU", 4.0}};
  p.per_node_overhead_ms = 0.5;

  // 0.442368*1 + 0.008192*2 + 0.008192*4 + 3*0.5.
  CHECK(cost::latency_ms_mean(g, p) ==
        doctest::Approx(1.99152).epsilon(1e-12));

  SUBCASE("missing coefficient is an error") {
    p.ms_per_mflop.erase("ReLU");
    CHECK_THROWS_WITH_AS(cost::latency_ms_mean(g, p),
                         doctest::Contains("no coefficient for op 'ReLU'"),
                         std::runtime_error);
  }
}

TEST_CASE("latency noise behavior") {
  graph::MacroConfig cfg;
  const auto g = graph::elaborate_tss(space::tss_decode(11718), cfg);
  const auto quiet = flat_profile(0.01, 0.002, 0.0);
  const auto noisy = flat_profile(0.01, 0.002, 0.05);
  const double mean = cost::latency_ms_mean(g, quiet);

  SUBCASE("sigma 0 reproduces the mean exactly") {
    Rng rng(1);
    CHECK(cost::latency_ms(g, quiet, rng) == mean);
  }

  SUBCASE("deterministic per seed, one normal draw per call") {
    Rng a(77), b(77);
    const double first = cost::latency_ms(g, noisy, a);
    CHECK(cost::latency_ms(g, noisy, b) == first);
    // A normal draw consumes exactly two engine outputs, so the streams
    // stay aligned afterwards.
    Rng c(77);
    c.next_u64();
    c.next_u64();
    CHECK(a.next_u64() == c.next_u64());
  }

  SUBCASE("noise is relative and centered on the mean") {
    Rng rng(5);
    double sum = 0;
    double lo = mean, hi = mean;
    const int n = 4000;
    for (int i = 0; i < n; ++i) {
      const double sample = cost::latency_ms(g, noisy, rng);
      sum += sample;
      lo = std::min(lo, sample);
      hi = std::max(hi, sample);
    }
    CHECK(sum / n == doctest::Approx(mean).epsilon(0.005));
    CHECK(lo < mean * 0.9);   // sigma 5% must produce visible spread
    CHECK(hi > mean * 1.1);
    CHECK(lo > mean * 0.6);   // but not implausible outliers at n=4000
    CHECK(hi < mean * 1.4);
  }
}

TEST_CASE("profile json validation and round trip") {
  nlohmann::json doc = {{"name", "toy"},
                        {"ms_per_mflop", {{"Conv2d", 0.004}, {"ReLU", 0.001}}},
                        {"per_node_overhead_ms", 0.002},
                        {"noise_sigma", 0.1}};

  SUBCASE("round trip preserves every field") {
    const auto p = cost::profile_from_json(doc);
    CHECK(p.name == "toy");
    CHECK(p.ms_per_mflop.at("Conv2d") == 0.004);
    CHECK(p.per_node_overhead_ms == 0.002);
    CHECK(p.noise_sigma == 0.1);
    CHECK(cost::profile_to_json(p) == doc);
  }

  SUBCASE("non-positive coefficient rejected") {
    doc["ms_per_mflop"]["Conv2d"] = 0.0;
    CHECK_THROWS_WITH_AS(cost::profile_from_json(doc),
                         doctest::Contains("must be positive"),
                         std::invalid_argument);
  }

  SUBCASE("negative overhead rejected") {
    doc["per_node_overhead_ms"] = -0.1;
    CHECK_THROWS_WITH_AS(cost::profile_from_json(doc),
                         doctest::Contains("negative per-node overhead"),
                         std::invalid_argument);
  }

  SUBCASE("noise sigma above 0.2 rejected") {
    doc["noise_sigma"] = 0.25;
    CHECK_THROWS_WITH_AS(cost::profile_from_json(doc),
                         doctest::Contains("noise_sigma outside [0, 0.2]"),
                         std::invalid_argument);
  }
}

TEST_CASE("shipped profiles load and are sane") {
  const auto profiles = cost::load_profiles(SEVAL_PROFILES_DIR);
  REQUIRE(profiles.size() == 6);
  const std::vector<std::string> expected = {"edgegpu", "edgetpu", "eyeriss",
                                             "fpga",    "pixel3",  "raspi4"};
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK(profiles[i].name == expected[i]);
    CHECK(profiles[i].noise_sigma >= 0);
    CHECK(profiles[i].noise_sigma <= 0.2);
    for (const char* op : {"Conv2d", "BatchNorm", "ReLU", "Add", "AvgPool2d",
                           "GlobalAvgPool", "Linear"}) {
      CHECK(profiles[i].ms_per_mflop.count(op) == 1);
    }
  }

  CHECK_THROWS_WITH_AS(cost::load_profiles("/nonexistent/profile/dir"),
                       doctest::Contains("profile directory not found"),
                       std::runtime_error);

  const auto empty_dir =
      std::filesystem::temp_directory_path() / "seval_empty_profiles";
  std::filesystem::create_directories(empty_dir);
  CHECK_THROWS_WITH_AS(cost::load_profiles(empty_dir),
                       doctest::Contains("no profiles in"),
                       std::runtime_error);
  std::filesystem::remove_all(empty_dir);

  CHECK_THROWS_AS(cost::load_profile("/nonexistent/profile.json"),
                  std::runtime_error);
}

TEST_CASE("base accuracy fixtures") {
  // TSS all conv_3x3: z = -0.22 + 6*0.12 = 0.5.
  CHECK(cost::base_accuracy(space::tss_decode(11718)) ==
        doctest::Approx(62.245933120185455).epsilon(1e-12));
  // TSS all none: z = -0.22; no elaboration, so no NoPathError.
  CHECK_NOTHROW(cost::base_accuracy(space::tss_decode(0)));
  CHECK(cost::base_accuracy(space::tss_decode(0)) ==
        doctest::Approx(44.522076489278525).epsilon(1e-12));
  // SSS all 8s: z = 0.08*15 - 1.8 = -0.6; all 64s: z = 0.08*30 - 1.8 = 0.6.
  CHECK(cost::base_accuracy(space::sss_decode(0)) ==
        doctest::Approx(35.434369377420452).epsilon(1e-12));
  CHECK(cost::base_accuracy(space::sss_decode(32767)) ==
        doctest::Approx(64.565630622579548).epsilon(1e-12));
}

TEST_CASE("base accuracy is monotone in its published signal") {
  // Swapping any edge up the weight order never lowers the TSS score.
  const auto weight_order = {space::OpKind::none, space::OpKind::skip_connect,
                             space::OpKind::avg_pool_3x3,
                             space::OpKind::conv_1x1, space::OpKind::conv_3x3};
  space::TssArch arch = space::tss_decode(0);
  double prev = cost::base_accuracy(arch);
  for (const auto op : weight_order) {
    for (auto& edge : arch.edge_ops) edge = op;
    const double score = cost::base_accuracy(arch);
    CHECK(score >= prev);
    prev = score;
  }

  // Raising one SSS channel strictly raises the score.
  space::SssArch sss = space::sss_decode(0);
  double low = cost::base_accuracy(sss);
  sss.channels[2] = 64;
  CHECK(cost::base_accuracy(sss) > low);
}

TEST_CASE("synthetic accuracy noise") {
  const auto arch = space::tss_decode(11718);
  const double base = cost::base_accuracy(arch);

  // Deterministic per seed; the seed is the whole state.
  CHECK(cost::synthetic_accuracy(arch, 42) == cost::synthetic_accuracy(arch, 42));
  CHECK(cost::synthetic_accuracy(arch, 42) != cost::synthetic_accuracy(arch, 43));

  // First normal draw from Rng(seed), scaled to 3 points, then clamped.
  Rng rng(42);
  const double expected =
      std::clamp(base + rng.normal(0.0, 3.0), 0.0, 100.0);
  CHECK(cost::synthetic_accuracy(arch, 42) == expected);

  double sum = 0, sum_sq = 0;
  const int n = 500;
  for (int seed = 0; seed < n; ++seed) {
    const double diff = cost::synthetic_accuracy(arch, seed) - base;
    CHECK(cost::synthetic_accuracy(arch, seed) >= 0.0);
    CHECK(cost::synthetic_accuracy(arch, seed) <= 100.0);
    sum += diff;
    sum_sq += diff * diff;
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sum_sq / n - mean * mean);
  CHECK(std::abs(mean) < 0.5);
  CHECK(sd > 2.4);
  CHECK(sd < 3.6);
}

TEST_CASE("cost report aggregates the individual oracles") {
  graph::MacroConfig cfg;
  const auto arch = space::ArchSpec{space::tss_decode(11718)};
  const auto g = graph::elaborate(arch, cfg);
  const auto profiles = cost::load_profiles(SEVAL_PROFILES_DIR);
  const std::uint64_t seed = 99;

  const auto report = cost::cost_report(g, arch, profiles, seed);
  CHECK(report.flops == cost::flops(g));
  CHECK(report.params == g.param_count);
  CHECK(report.peak_mem_bytes == cost::peak_memory_bytes(g));
  CHECK(report.accuracy_pct ==
        cost::synthetic_accuracy(arch, Rng::mix(seed, 1)));
  REQUIRE(report.latency_ms.size() == profiles.size());
  for (const auto& p : profiles) {
    Rng rng(Rng::mix(seed, fnv1a64(p.name)));
    CHECK(report.latency_ms.at(p.name) == cost::latency_ms(g, p, rng));
  }
}
