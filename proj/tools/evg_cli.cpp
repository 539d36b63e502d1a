// Command-line front end: simulation, stream utilities, graph building,
// training, evaluation and benchmarks.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "evg/bench.hpp"
#include "evg/checkpoint.hpp"
#include "evg/dataset.hpp"
#include "evg/errors.hpp"
#include "evg/events.hpp"
#include "evg/graph.hpp"
#include "evg/sim.hpp"
#include "evg/train.hpp"

namespace fs = std::filesystem;
using namespace evg;

namespace {

std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v < 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::logic_error&) {
      throw Error(Errc::InvalidSpec, "bad window size '" + item + "'");
    }
  }
  if (out.empty()) throw Error(Errc::InvalidSpec, "no window sizes given");
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  write_file(path, Bytes(text.begin(), text.end()));
}

std::string history_path_for(const std::string& model_path) {
  fs::path p(model_path);
  p.replace_extension(".history.csv");
  return p.string();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Event-stream graphs and graph-transformer classification"};
  app.require_subcommand(1);

  // simulate
  std::string sim_frames, sim_out;
  SimConfig sim_cfg;
  bool sim_no_interp = false;
  auto* simulate = app.add_subcommand("simulate", "Convert intensity frames into events");
  simulate->add_option("--frames", sim_frames, "Directory of PGM frames (with timestamps.txt) or a .frames file")->required();
  simulate->add_option("--threshold", sim_cfg.threshold_c, "Contrast threshold C")->check(CLI::PositiveNumber);
  simulate->add_option("--log-eps", sim_cfg.log_eps, "Offset inside the logarithm")->check(CLI::PositiveNumber);
  simulate->add_flag("--no-interpolation", sim_no_interp, "Stamp events with the later frame's time");
  simulate->add_option("--out", sim_out, "Output directory (events.bin) or .bin/.csv file")->required();

  // sample
  std::string sample_in, sample_out, sample_start = "fixed:0";
  std::size_t sample_k = 100;
  auto* sample = app.add_subcommand("sample", "Take k successive events from a stream");
  sample->add_option("--in", sample_in)->required();
  sample->add_option("--k", sample_k)->required();
  sample->add_option("--start", sample_start, "fixed:I or random:SEED");
  sample->add_option("--out", sample_out)->required();

  // noise
  std::string noise_in, noise_out;
  double noise_fraction = 0.1;
  std::uint64_t noise_seed = 0;
  auto* noise = app.add_subcommand("noise", "Inject uniformly distributed noise events");
  noise->add_option("--in", noise_in)->required();
  noise->add_option("--fraction", noise_fraction)->required();
  noise->add_option("--seed", noise_seed);
  noise->add_option("--out", noise_out)->required();

  // build-graph
  std::string bg_variant = "g1", bg_in, bg_out;
  std::uint32_t bg_tau = 1, bg_cap = UINT32_MAX;
  double bg_radius = 0.0;
  auto* build = app.add_subcommand("build-graph", "Build a graph from an event file");
  build->add_option("--variant", bg_variant, "g1, g2, g3, g4 or radius");
  build->add_option("--tau", bg_tau, "Same-position successors per event");
  build->add_option("--radius", bg_radius, "Radius in normalized (x, y, t) units");
  build->add_option("--cap", bg_cap, "Radius baseline degree cap");
  build->add_option("--in", bg_in)->required();
  build->add_option("--out", bg_out)->required();

  // train
  std::string tr_data, tr_variant = "g1", tr_out, tr_history, tr_optimizer = "adam";
  TrainConfig tr_cfg;
  bool tr_no_gate = false, tr_quiet = false;
  auto* trainc = app.add_subcommand("train", "Train a classifier on <data>/train (or <data>)");
  trainc->add_option("--data", tr_data)->required();
  trainc->add_option("--variant", tr_variant);
  trainc->add_option("--tau", tr_cfg.graph.tau);
  trainc->add_option("--k", tr_cfg.window_k, "Training events per sample");
  trainc->add_option("--epochs", tr_cfg.epochs);
  trainc->add_option("--batch-size", tr_cfg.batch_size);
  trainc->add_option("--lr", tr_cfg.learning_rate);
  trainc->add_option("--optimizer", tr_optimizer, "adam or sgd-momentum");
  trainc->add_option("--seed", tr_cfg.seed);
  trainc->add_flag("--no-edge-gate", tr_no_gate, "Ignore edge attributes");
  trainc->add_option("--out", tr_out)->required();
  trainc->add_option("--history", tr_history, "Per-epoch CSV (default: next to the model)");
  trainc->add_flag("--quiet", tr_quiet);

  // eval
  std::string ev_model, ev_data, ev_windows = "100,50,10", ev_report;
  EvalConfig ev_cfg;
  auto* evalc = app.add_subcommand("eval", "Evaluate a model on <data>/test (or <data>)");
  evalc->add_option("--model", ev_model)->required();
  evalc->add_option("--data", ev_data)->required();
  evalc->add_option("--windows", ev_windows);
  evalc->add_option("--noise", ev_cfg.noise_fraction);
  evalc->add_option("--seed", ev_cfg.seed);
  evalc->add_option("--report", ev_report)->required();

  // bench
  std::string bn_data, bn_builders = "g1:tau=1", bn_windows = "10,100", bn_report;
  std::size_t bn_repeats = 50;
  auto* bench = app.add_subcommand("bench", "Measure graph construction latency and size");
  bench->add_option("--data", bn_data)->required();
  bench->add_option("--builders", bn_builders);
  bench->add_option("--windows", bn_windows);
  bench->add_option("--repeats", bn_repeats);
  bench->add_option("--report", bn_report)->required();

  // synth
  std::string sy_out;
  std::uint64_t sy_seed = 0;
  std::size_t sy_samples = 50;
  auto* synth = app.add_subcommand("synth", "Write the two-class speed-contrast dataset (train/ and test/)");
  synth->add_option("--out", sy_out)->required();
  synth->add_option("--seed", sy_seed);
  synth->add_option("--samples", sy_samples, "Samples per class");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*simulate) {
      if (sim_no_interp) sim_cfg.interpolation = Interpolation::None;
      FrameSequence seq = fs::is_directory(sim_frames) ? read_pgm_directory(sim_frames) : parse_frames(read_file(sim_frames));
      EventStream events = simulate_events(seq, sim_cfg);
      std::string path = sim_out;
      const auto ext = fs::path(sim_out).extension();
      if (ext != ".bin" && ext != ".csv") {
        fs::create_directories(sim_out);
        path = (fs::path(sim_out) / "events.bin").string();
      }
      write_events_file(path, events);
      std::cout << events.size() << " events -> " << path << "\n";
    } else if (*sample) {
      EventStream s = read_events_file(sample_in);
      Window w = sample_window(s, sample_k, WindowStart::parse(sample_start));
      write_events_file(sample_out, w.stream);
      std::cout << w.stream.size() << " events from index " << w.start << (w.short_stream ? " (short stream)" : "") << "\n";
    } else if (*noise) {
      EventStream s = inject_noise(read_events_file(noise_in), noise_fraction, noise_seed);
      write_events_file(noise_out, s);
      std::cout << s.size() << " events\n";
    } else if (*build) {
      EventStream s = read_events_file(bg_in);
      GraphConfig g;
      g.variant = parse_variant(bg_variant);
      g.tau = bg_tau;
      EventGraph graph;
      if (g.variant == Variant::Radius) {
        if (!(bg_radius > 0)) throw Error(Errc::InvalidSpec, "--radius must be positive for the radius builder");
        graph = build_radius_graph(s, bg_radius, bg_cap);
      } else {
        graph = build_graph(s, g);
      }
      const Bytes bytes = serialize_graph(graph);
      write_file(bg_out, bytes);
      std::cout << graph.num_nodes << " nodes, " << graph.edges.size() << " edges, " << bytes.size() << " bytes\n";
    } else if (*trainc) {
      tr_cfg.graph.variant = parse_variant(tr_variant);
      tr_cfg.optimizer = parse_optimizer(tr_optimizer);
      if (!tr_quiet) {
        tr_cfg.on_epoch = [](const EpochStats& e) {
          std::printf("epoch %zu loss %.4f acc %.3f\n", e.epoch, e.loss, e.accuracy);
          std::fflush(stdout);
        };
      }
      Dataset data = load_dataset(split_dir(tr_data, "train"));
      auto model_cfg = model_config_for(tr_cfg.graph.variant, data.num_classes(), tr_cfg.seed);
      model_cfg.use_edge_gate = !tr_no_gate;
      TrainResult result = train(model_cfg, data, tr_cfg);
      save_checkpoint(tr_out, make_checkpoint(result, tr_cfg));
      write_text(tr_history.empty() ? history_path_for(tr_out) : tr_history, history_csv(result.history));
      std::printf("train accuracy %.4f -> %s\n", result.train_accuracy, tr_out.c_str());
    } else if (*evalc) {
      Checkpoint ckpt = load_checkpoint(ev_model);
      ev_cfg.windows = parse_sizes(ev_windows);
      ev_cfg.graph = checkpoint_graph_config(ckpt);
      std::optional<double> train_acc;
      if (const auto* v = ckpt.find("train_accuracy")) train_acc = std::stod(*v);
      Dataset data = load_dataset(split_dir(ev_data, "test"));
      EvalReport report = evaluate(ckpt.model, data, ev_cfg, train_acc);
      write_text(ev_report, report.to_json());
      for (const auto& w : report.windows) std::printf("k=%zu top1=%.4f\n", w.k, w.top1);
    } else if (*bench) {
      Dataset data = load_dataset(split_dir(bn_data, "test"));
      const auto builders = parse_builders(bn_builders);
      const auto windows = parse_sizes(bn_windows);
      BenchReport report = bench_transform(data, builders, windows, bn_repeats);
      write_text(bn_report, report.to_json());
      for (const auto& c : report.cells) {
        std::printf("%-24s k=%-5zu median %.1f us  p95 %.1f us  %.0f bytes  span %.0f us\n", c.builder.c_str(), c.k,
                    *c.median_us, *c.p95_us, c.mean_bytes, c.collection_span_us);
      }
    } else if (*synth) {
      SyntheticDataset ds = make_synthetic_dataset(speed_contrast_spec(sy_samples), sy_seed);
      save_dataset((fs::path(sy_out) / "train").string(), ds.train);
      save_dataset((fs::path(sy_out) / "test").string(), ds.test);
      std::cout << ds.train.samples.size() << " train, " << ds.test.samples.size() << " test samples -> " << sy_out << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
