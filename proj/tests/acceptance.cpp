// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "evg/bench.hpp"
#include "evg/checkpoint.hpp"
#include "evg/errors.hpp"
#include "evg/sim.hpp"
#include "evg/train.hpp"
#include "test_util.hpp"

using namespace evg;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

constexpr std::uint64_t kDataSeed = 1;
constexpr std::uint64_t kSeeds[] = {1, 2, 3, 4, 5};

int g_failures = 0;

void verdict(int id, const std::string& name, bool pass, const std::string& detail) {
  std::printf("%s  [%2d] %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Runs a criterion body, turning an unexpected library error into a FAIL line.
template <class F>
void guarded(int id, const std::string& name, F&& body) {
  try {
    body();
  } catch (const std::exception& e) {
    verdict(id, name, false, std::string("error: ") + e.what());
  }
}

// ---------------------------------------------------------------- 1

void gradient_exactness() {
  const auto t0 = Clock::now();
  tea::ModelConfig cfg;
  cfg.seed = 11;
  tea::ModelParams model = tea::ModelParams::init(cfg);

  std::mt19937_64 rng(12);
  std::vector<EventGraph> graphs;
  std::vector<int> labels;
  for (int i = 0; i < 10; ++i) {
    auto s = testing::random_stream(rng, 6, 3, {16, 16});
    graphs.push_back(build_graph(s, GraphConfig{Variant::G1, 2, {}, {}}));
    labels.push_back(static_cast<int>(rng() % 2));
  }
  const tea::GraphBatch batch = tea::GraphBatch::from_graphs(std::span<const EventGraph>(graphs));
  auto program = [&](tea::Tape& t) {
    return ad::softmax_cross_entropy(tea::classifier_forward(t, model, batch, tea::Mode::Train).logits, labels);
  };
  std::size_t coords = 0;
  for (auto* p : model.parameters()) coords += p->size();
  const double err = ad::finite_diff_check(program, model.parameters(), 1e-5);
  const double secs = seconds_since(t0);
  verdict(1, "gradient exactness", err < 1e-5 && secs < 30.0,
          fmt("max rel err %.3g over %zu coordinates (< 1e-5), %.1f s (< 30 s)", err, coords, secs));
}

// ---------------------------------------------------------------- 2

using EdgeSet = std::set<std::pair<std::uint32_t, std::uint32_t>>;

EdgeSet enumerate_edges(const EventStream& s, std::uint32_t tau) {
  EdgeSet out;
  const auto k = static_cast<std::uint32_t>(s.size());
  for (std::uint32_t i = 0; i < k; ++i) {
    for (std::uint32_t j = i + 1; j < k; ++j) {
      if (j == i + 1) {
        out.insert({i, j});
        continue;
      }
      if (s.events[j].x != s.events[i].x || s.events[j].y != s.events[i].y) continue;
      std::uint32_t between = 0;  // same-position events strictly between i and j
      for (std::uint32_t m = i + 1; m < j; ++m)
        if (s.events[m].x == s.events[i].x && s.events[m].y == s.events[i].y) ++between;
      if (between < tau) out.insert({i, j});
    }
  }
  return out;
}

void graph_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(21);
  int mismatches = 0, bad_chain = 0, backwards = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::uint32_t tau = std::array<std::uint32_t, 3>{1, 2, 4}[trial % 3];
    auto s = testing::random_stream(rng, 1 + rng() % 64, 1 + trial % 6, {8, 8});
    auto g = build_graph(s, GraphConfig{Variant::G1, tau, {}, {}});
    EdgeSet got;
    std::size_t chain = 0;
    for (const auto& e : g.edges) {
      got.insert({e.src, e.dst});
      if (e.dst == e.src + 1) ++chain;
      if (s.events[e.src].t > s.events[e.dst].t) ++backwards;
    }
    if (got != enumerate_edges(s, tau) || got.size() != g.edges.size()) ++mismatches;
    if (chain != s.size() - 1) ++bad_chain;
  }
  const double secs = seconds_since(t0);
  verdict(2, "graph construction oracle", mismatches == 0 && bad_chain == 0 && backwards == 0 && secs < 10.0,
          fmt("200 streams: %d edge-set mismatches, %d chain-count errors, %d time-reversed edges, %.2f s", mismatches,
              bad_chain, backwards, secs));
}

// ---------------------------------------------------------------- 3

void attention_normalization() {
  std::mt19937_64 rng(31);
  double worst = 0.0;
  std::size_t nodes_checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto variant = trial % 2 ? Variant::G1 : Variant::G2;
    auto s = testing::random_stream(rng, 2 + rng() % 80, 1 + trial % 5, {8, 8});
    auto g = build_graph(s, GraphConfig{variant, 1 + static_cast<std::uint32_t>(trial % 4), {}, {}});
    auto p = tea::TeaLayerParams::init(3, 8, 16, true, rng);
    tea::Tensor x(g.num_nodes, 3);
    for (std::size_t i = 0; i < g.features.size(); ++i) x[i] = g.features[i];
    auto m = tea::MessageEdges::from_graph(g);
    tea::Tape tape;
    const auto& eta = tea::tea_forward(tape, p, tape.input(x), m).attention.value();
    std::map<std::uint32_t, double> sums;
    for (std::size_t e = 0; e < m.size(); ++e) sums[m.dst[e]] += eta[e];
    for (const auto& [node, sum] : sums) worst = std::max(worst, std::abs(sum - 1.0));
    nodes_checked += sums.size();
  }
  verdict(3, "attention normalization", worst <= 1e-12,
          fmt("max |sum - 1| = %.3g over %zu nodes in 100 graphs", worst, nodes_checked));
}

// ---------------------------------------------------------------- 4-7

struct Runs {
  SyntheticDataset data;
  double synth_secs = 0;
  std::map<std::string, TrainResult> models;
  std::map<std::string, double> train_secs;

  const TrainResult& get(const std::string& tag, std::uint32_t tau, bool gate, std::uint64_t seed) {
    const std::string key = tag + std::to_string(seed);
    if (auto it = models.find(key); it != models.end()) return it->second;
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.window_k = 100;
    cfg.graph.variant = Variant::G1;
    cfg.graph.tau = tau;
    auto model_cfg = model_config_for(Variant::G1, data.train.num_classes(), seed);
    model_cfg.use_edge_gate = gate;
    const auto t0 = Clock::now();
    auto r = train(model_cfg, data.train, cfg);
    train_secs[key] = seconds_since(t0);
    return models.emplace(key, std::move(r)).first->second;
  }

  EvalReport eval(const TrainResult& r, std::uint64_t seed, double noise) const {
    EvalConfig e;
    e.windows = {100, 50, 10};
    e.seed = seed;
    e.noise_fraction = noise;
    e.graph = r.graph;
    return evaluate(r.model, data.test, e, r.train_accuracy);
  }
};

Runs& runs() {
  static Runs r = [] {
    Runs out;
    const auto t0 = Clock::now();
    out.data = make_synthetic_dataset(speed_contrast_spec(50), kDataSeed);
    out.synth_secs = seconds_since(t0);
    return out;
  }();
  return r;
}

void end_to_end_learning() {
  const auto t0 = Clock::now();
  Runs& R = runs();
  const auto& model = R.get("tau4-", 4, true, kSeeds[0]);
  const auto report = R.eval(model, kSeeds[0], 0.0);
  const double acc = report.at(100).top1;
  const double secs = seconds_since(t0);
  verdict(4, "synthetic end-to-end learning", acc >= 0.90 && secs < 300.0,
          fmt("test top-1 %.3f at k=100 (>= 0.90, chance 0.50), %zu train / %zu test, train acc %.3f, %.1f s (< 300 s)",
              acc, R.data.train.samples.size(), R.data.test.samples.size(), model.train_accuracy, secs));
}

void short_stream_shape() {
  Runs& R = runs();
  const auto& model = R.get("tau4-", 4, true, kSeeds[0]);
  std::vector<double> a100, a50, a10;
  for (auto seed : kSeeds) {
    const auto r = R.eval(model, seed, 0.0);
    a100.push_back(r.at(100).top1);
    a50.push_back(r.at(50).top1);
    a10.push_back(r.at(10).top1);
  }
  const double m100 = mean(a100), m50 = mean(a50), m10 = mean(a10);
  const bool pass = m100 >= m50 && m50 >= m10 - 0.05 && m10 > 0.5 + 0.10;
  verdict(5, "short-stream degradation", pass,
          fmt("mean over 5 eval seeds: k=100 %.3f, k=50 %.3f, k=10 %.3f (need 100 >= 50 >= 10 - 0.05, 10 > 0.60)", m100,
              m50, m10));
}

void noise_robustness() {
  Runs& R = runs();
  std::map<std::uint32_t, std::map<std::size_t, std::vector<double>>> drops;  // tau -> k -> per-seed drop
  for (std::uint32_t tau : {1u, 4u}) {
    for (auto seed : kSeeds) {
      const auto& m = R.get("tau" + std::to_string(tau) + "-", tau, true, seed);
      const auto clean = R.eval(m, seed, 0.0), noisy = R.eval(m, seed, 0.1);
      for (std::size_t k : {100, 50, 10}) drops[tau][k].push_back(clean.at(k).top1 - noisy.at(k).top1);
    }
  }
  const double d1 = mean(drops[1][100]), d4 = mean(drops[4][100]);
  verdict(6, "tau noise robustness", d4 <= d1,
          fmt("mean k=100 drop with 10%% noise: tau=4 %.3f <= tau=1 %.3f (k=50: %.3f vs %.3f, k=10: %.3f vs %.3f)", d4, d1,
              mean(drops[4][50]), mean(drops[1][50]), mean(drops[4][10]), mean(drops[1][10])));
}

void edge_gate_ablation() {
  Runs& R = runs();
  std::map<bool, std::map<std::size_t, std::vector<double>>> acc;  // gate -> k -> per-seed accuracy
  for (bool gate : {true, false}) {
    for (auto seed : kSeeds) {
      const auto& m = R.get(gate ? "tau4-" : "nogate-", 4, gate, seed);
      const auto r = R.eval(m, seed, 0.0);
      for (std::size_t k : {100, 50, 10}) acc[gate][k].push_back(r.at(k).top1);
    }
  }
  const double on = mean(acc[true][100]), off = mean(acc[false][100]);
  verdict(7, "edge-gate ablation", off <= on,
          fmt("mean k=100 accuracy: without gate %.3f <= with gate %.3f (k=50: %.3f vs %.3f, k=10: %.3f vs %.3f)", off, on,
              mean(acc[false][50]), mean(acc[true][50]), mean(acc[false][10]), mean(acc[true][10])));
}

// ---------------------------------------------------------------- 8

void resolution_invariance() {
  std::mt19937_64 rng(81);
  int differing = 0, size_differing = 0;
  for (int trial = 0; trial < 20; ++trial) {
    auto a = testing::random_stream(rng, 100, 1 + trial % 8, {128, 128});
    EventStream b = a;
    b.sensor = {346, 260};
    const std::uint32_t tau = 1 + trial % 4;
    // Shared coordinate divisor: the content is the same, only the sensor metadata differs.
    const GraphConfig shared{Variant::G1, tau, 346.0, {}};
    if (serialize_graph(build_graph(a, shared)) != serialize_graph(build_graph(b, shared))) ++differing;
    const GraphConfig defaults{Variant::G1, tau, {}, {}};
    if (serialize_graph(build_graph(a, defaults)).size() != serialize_graph(build_graph(b, defaults)).size()) ++size_differing;
  }
  std::size_t worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    auto s = testing::random_stream(rng, 100, 1 + trial % 8, {150, 150});
    for (std::uint32_t tau : {1u, 4u}) worst = std::max(worst, serialize_graph(build_graph(s, {Variant::G1, tau, {}, {}})).size());
  }
  verdict(8, "resolution-invariant memory", differing == 0 && size_differing == 0 && worst < 90000,
          fmt("128x128 vs 346x260: %d/20 byte differences (shared spatial_norm), %d/20 size differences (defaults); "
              "largest 150x150 k=100 G1 graph %zu bytes (< 90000)",
              differing, size_differing, worst));
}

// ---------------------------------------------------------------- 9

void latency_shape() {
  const Dataset& test = runs().data.test;
  const auto builders = parse_builders("g1:tau=4,radius:r=0.1");
  const auto r = bench_transform(test, builders, {10, 100}, 50);
  const double g10 = *r.at("g1:tau=4", 10).median_us, g100 = *r.at("g1:tau=4", 100).median_us;
  const double rad100 = *r.at("radius:r=0.1", 100).median_us;
  verdict(9, "transformation latency shape", g10 < g100 && g100 <= rad100,
          fmt("median over 50 repeats: G1 k=10 %.2f us < G1 k=100 %.2f us <= radius k=100 %.2f us", g10, g100, rad100));
}

// ---------------------------------------------------------------- 10

FrameSequence one_pixel(const std::vector<double>& log_levels, double eps) {
  FrameSequence seq;
  seq.width = seq.height = 1;
  for (std::size_t i = 0; i < log_levels.size(); ++i) {
    seq.frames.push_back({std::exp(log_levels[i]) - eps});
    seq.timestamps.push_back(static_cast<std::int64_t>(i) * 1000);
  }
  return seq;
}

void simulator_correctness() {
  SimConfig cfg;
  cfg.threshold_c = 0.2;
  std::vector<double> up, down, flat;
  for (int f = 0; f <= 10; ++f) {
    up.push_back(-1.0 + 0.1 * f);
    down.push_back(-1.0 - 0.1 * f);
    flat.push_back(-1.0);
  }
  const auto a = simulate_events(one_pixel(up, cfg.log_eps), cfg);
  const auto b = simulate_events(one_pixel(down, cfg.log_eps), cfg);
  const auto c = simulate_events(one_pixel(flat, cfg.log_eps), cfg);
  std::size_t positive = 0;
  for (const auto& e : a.events) positive += e.p == 1;
  bool flipped = a.size() == b.size();
  for (std::size_t i = 0; flipped && i < a.size(); ++i) flipped = b.events[i].p == -a.events[i].p && b.events[i].t == a.events[i].t;
  verdict(10, "simulator correctness", a.size() == 5 && positive == 5 && c.empty() && flipped,
          fmt("ramp: %zu events (%zu positive), constant: %zu events, reversed ramp flips polarity: %s", a.size(), positive,
              c.size(), flipped ? "yes" : "no"));
}

// ---------------------------------------------------------------- 11

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool run(const std::string& cmd) {
  const std::string full = cmd + " > /dev/null 2>&1";
  return std::system(full.c_str()) == 0;
}

void determinism() {
  testing::TempDir dir("accept-det");
  const std::string cli = EVG_CLI_PATH;
  const fs::path root = dir.str();
  const std::string data = (root / "data").string();
  std::vector<std::string> problems;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) problems.push_back(what);
  };

  check(run(cli + " synth --out " + data + " --seed 3 --samples 12"), "synth failed");
  for (const char* tag : {"a", "b"}) {
    const std::string model = (root / (std::string(tag) + ".tea")).string();
    check(run(cli + " train --data " + data + " --tau 2 --k 60 --epochs 4 --batch-size 8 --seed 9 --quiet --out " + model),
          "train failed");
    check(run(cli + " eval --model " + model + " --data " + data + " --windows 60,30,10 --noise 0.1 --seed 4 --report " +
              (root / (std::string(tag) + ".eval.json")).string()),
          "eval failed");
    check(run(cli + " bench --data " + data + " --builders g1:tau=2,g2:tau=1,radius:r=0.2:cap=8 --windows 10,60 --repeats 30 " +
              "--report " + (root / (std::string(tag) + ".bench.json")).string()),
          "bench failed");
  }
  const bool ckpt = !slurp(root / "a.tea").empty() && slurp(root / "a.tea") == slurp(root / "b.tea");
  const bool hist = slurp(root / "a.history.csv") == slurp(root / "b.history.csv");
  const bool eval = !slurp(root / "a.eval.json").empty() && slurp(root / "a.eval.json") == slurp(root / "b.eval.json");
  bool bench = false, bench_raw = false;
  try {
    const auto ba = slurp(root / "a.bench.json"), bb = slurp(root / "b.bench.json");
    bench_raw = ba == bb;
    bench = BenchReport::from_json(ba).without_timings().to_json() == BenchReport::from_json(bb).without_timings().to_json();
  } catch (const Error&) {
    problems.push_back("bench report unreadable");
  }
  check(ckpt, "checkpoints differ");
  check(hist, "training histories differ");
  check(eval, "eval reports differ");
  check(bench, "bench reports differ outside latency fields");
  std::string detail = fmt("checkpoint %s, history %s, eval report %s, bench report %s (latency fields %s)",
                           ckpt ? "identical" : "DIFFERENT", hist ? "identical" : "DIFFERENT", eval ? "identical" : "DIFFERENT",
                           bench ? "identical" : "DIFFERENT",
                           bench_raw ? "also identical" : "are wall-clock measurements and excluded");
  for (const auto& p : problems) detail += "; " + p;
  verdict(11, "determinism", problems.empty(), detail);
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  guarded(1, "gradient exactness", gradient_exactness);
  guarded(2, "graph construction oracle", graph_oracle);
  guarded(3, "attention normalization", attention_normalization);
  guarded(4, "synthetic end-to-end learning", end_to_end_learning);
  guarded(5, "short-stream degradation", short_stream_shape);
  guarded(6, "tau noise robustness", noise_robustness);
  guarded(7, "edge-gate ablation", edge_gate_ablation);
  guarded(8, "resolution-invariant memory", resolution_invariance);
  guarded(9, "transformation latency shape", latency_shape);
  guarded(10, "simulator correctness", simulator_correctness);
  guarded(11, "determinism", determinism);
  std::printf("%d of 11 criteria failed, %.0f s total\n", g_failures, seconds_since(t0));
  return g_failures == 0 ? 0 : 1;
}
