#include "evg/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <future>
#include <numeric>
#include <random>

#include <json.hpp>

#include "evg/errors.hpp"

namespace evg {

namespace {

using tea::GraphBatch;
using tea::ModelParams;
using tea::Tensor;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a),    static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b),    static_cast<std::uint32_t>(c)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

void check_dataset(const Dataset& data) {
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const auto& label = data.samples[i].label;
    if (!label || *label < 0 || static_cast<std::size_t>(*label) >= data.num_classes()) {
      throw Error(Errc::BadLabel, "sample " + std::to_string(i) + " has no valid class label");
    }
  }
}

class Optim {
 public:
  Optim(const TrainConfig& cfg, std::vector<Tensor*> params) : cfg_(cfg), params_(std::move(params)) {
    for (Tensor* p : params_) {
      m_.emplace_back(p->size(), 0.0);
      if (cfg_.optimizer == Optimizer::Adam) v_.emplace_back(p->size(), 0.0);
    }
  }

  void step() {
    ++t_;
    const double lr = cfg_.learning_rate;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = *params_[i];
      const auto& g = p.grad();
      if (g.empty()) continue;
      auto& m = m_[i];
      if (cfg_.optimizer == Optimizer::SgdMomentum) {
        for (std::size_t j = 0; j < p.size(); ++j) {
          m[j] = cfg_.momentum * m[j] + g[j];
          p[j] -= lr * m[j];
        }
      } else {
        auto& v = v_[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
          m[j] = cfg_.beta1 * m[j] + (1 - cfg_.beta1) * g[j];
          v[j] = cfg_.beta2 * v[j] + (1 - cfg_.beta2) * g[j] * g[j];
          p[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + 1e-8);
        }
      }
    }
  }

 private:
  const TrainConfig& cfg_;
  std::vector<Tensor*> params_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

std::size_t argmax_row(const Tensor& logits, std::size_t r) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < logits.cols(); ++c)
    if (logits(r, c) > logits(r, best)) best = c;
  return best;
}

// Builds graphs for [begin, end) in parallel; each slot is independent so the
// result does not depend on scheduling.
template <typename Fn>
std::vector<EventGraph> build_all(std::size_t n, Fn make) {
  std::vector<EventGraph> out(n);
  const std::size_t workers = std::min(worker_count(), std::max<std::size_t>(n, 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = make(i);
    return out;
  }
  std::vector<std::future<void>> jobs;
  for (std::size_t w = 0; w < workers; ++w) {
    jobs.push_back(std::async(std::launch::async, [&, w] {
      for (std::size_t i = w; i < n; i += workers) out[i] = make(i);
    }));
  }
  for (auto& j : jobs) j.get();
  return out;
}

std::vector<std::size_t> predict_all(const ModelParams& model, const std::vector<EventGraph>& graphs,
                                     std::size_t batch_size) {
  const std::size_t n = graphs.size();
  const std::size_t chunks = (n + batch_size - 1) / batch_size;
  std::vector<std::size_t> pred(n);
  auto run_chunk = [&](std::size_t c) {
    const std::size_t lo = c * batch_size, hi = std::min(n, lo + batch_size);
    GraphBatch batch = GraphBatch::from_graphs(std::span<const EventGraph>(graphs.data() + lo, hi - lo));
    Tensor logits = tea::predict_logits(model, batch);
    for (std::size_t i = lo; i < hi; ++i) pred[i] = argmax_row(logits, i - lo);
  };
  const std::size_t workers = std::min(worker_count(), std::max<std::size_t>(chunks, 1));
  if (workers <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) run_chunk(c);
    return pred;
  }
  std::vector<std::future<void>> jobs;
  for (std::size_t w = 0; w < workers; ++w) {
    jobs.push_back(std::async(std::launch::async, [&, w] {
      for (std::size_t c = w; c < chunks; c += workers) run_chunk(c);
    }));
  }
  for (auto& j : jobs) j.get();
  return pred;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::string optimizer_name(Optimizer o) { return o == Optimizer::Adam ? "adam" : "sgd-momentum"; }

Optimizer parse_optimizer(const std::string& name) {
  if (name == "adam") return Optimizer::Adam;
  if (name == "sgd-momentum" || name == "sgd") return Optimizer::SgdMomentum;
  throw Error(Errc::InvalidSpec, "unknown optimizer '" + name + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw Error(Errc::Precondition, "epochs must be at least 1");
  if (batch_size < 2) throw Error(Errc::Precondition, "batch_size must be at least 2");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw Error(Errc::Precondition, "learning_rate must be a finite non-negative number");
  }
  if (window_k == 0) throw Error(Errc::ZeroWindow, "window_k must be positive");
  graph.validate();
}

tea::Var cross_entropy(tea::Var logits, std::span<const int> labels) { return ad::softmax_cross_entropy(logits, labels); }

double typical_event_interval(const Dataset& data, std::size_t k) {
  std::vector<double> gaps;
  for (const auto& s : data.samples) {
    const std::size_t n = std::min(k, s.size());
    if (n < 2) continue;
    const double span = static_cast<double>(s.events[n - 1].t - s.events[0].t);
    if (span > 0) gaps.push_back(span / static_cast<double>(n - 1));
  }
  if (gaps.empty()) return 1.0;
  std::sort(gaps.begin(), gaps.end());
  const std::size_t h = gaps.size() / 2;
  return gaps.size() % 2 ? gaps[h] : 0.5 * (gaps[h - 1] + gaps[h]);
}

tea::ModelConfig model_config_for(Variant variant, std::size_t num_classes, std::uint64_t seed) {
  tea::ModelConfig c;
  c.input_dim = feature_dim(variant);
  c.num_classes = num_classes;
  c.seed = seed;
  return c;
}

TrainResult train(const tea::ModelConfig& model_cfg, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.num_classes() < 2) throw Error(Errc::Precondition, "training needs at least two classes");
  if (data.samples.size() < 2) throw Error(Errc::Precondition, "training needs at least two samples");
  check_dataset(data);
  if (model_cfg.input_dim != feature_dim(cfg.graph.variant)) {
    throw Error(Errc::DimensionMismatch, "model input width " + std::to_string(model_cfg.input_dim) + " does not match " +
                                             variant_name(cfg.graph.variant) + " features");
  }
  if (model_cfg.num_classes != data.num_classes()) {
    throw Error(Errc::DimensionMismatch, "model has " + std::to_string(model_cfg.num_classes) + " classes, dataset " +
                                             std::to_string(data.num_classes()));
  }

  TrainResult result;
  result.graph = cfg.graph;
  if (!result.graph.temporal_norm) result.graph.temporal_norm = typical_event_interval(data, cfg.window_k);
  result.model = ModelParams::init(model_cfg);
  auto params = result.model.parameters();
  Optim optim(cfg, params);

  const std::size_t n = data.samples.size();
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 perm_rng(mix_seed(cfg.seed, 1, epoch));
    std::shuffle(order.begin(), order.end(), perm_rng);

    const auto graphs = build_all(n, [&](std::size_t i) {
      const std::size_t idx = order[i];
      const auto w = sample_window(data.samples[idx], cfg.window_k, WindowStart::random(mix_seed(cfg.seed, 2, epoch, idx)));
      return build_graph(w.stream, result.graph);
    });

    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t batch_no = 0;
    for (std::size_t lo = 0; lo < n; ++batch_no) {
      std::size_t hi = std::min(n, lo + cfg.batch_size);
      if (n - hi == 1) ++hi;  // never leave a lone graph for the final batch
      GraphBatch batch = GraphBatch::from_graphs(std::span<const EventGraph>(graphs.data() + lo, hi - lo));

      for (Tensor* p : params) p->zero_grad();
      tea::Tape tape;
      const std::string where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_no);
      std::optional<tea::ForwardResult> fwd;
      try {
        fwd = tea::classifier_forward(tape, result.model, batch, tea::Mode::Train);
      } catch (const Error& e) {
        if (e.code() != Errc::NonFiniteActivation) throw;
        throw Error(Errc::DivergedLoss, "training diverged at " + where + ": " + e.what());
      }
      auto loss = cross_entropy(fwd->logits, batch.labels);
      const double loss_value = loss.value()[0];
      if (!std::isfinite(loss_value)) throw Error(Errc::DivergedLoss, "non-finite loss at " + where);
      tape.backward(loss);
      tea::apply_batch_moments(result.model, *fwd);
      optim.step();

      const Tensor& logits = fwd->logits.value();
      for (std::size_t r = 0; r < logits.rows(); ++r)
        if (static_cast<int>(argmax_row(logits, r)) == batch.labels[r]) ++correct;
      loss_sum += loss_value * static_cast<double>(hi - lo);
      lo = hi;
    }
    for (Tensor* p : params) p->zero_grad();

    EpochStats stats{epoch, loss_sum / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n)};
    result.history.push_back(stats);
    if (cfg.on_epoch) cfg.on_epoch(stats);
  }

  const auto train_graphs = build_all(n, [&](std::size_t i) {
    return build_graph(sample_window(data.samples[i], cfg.window_k, WindowStart::fixed(0)).stream, result.graph);
  });
  const auto pred = predict_all(result.model, train_graphs, 32);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (static_cast<int>(pred[i]) == *data.samples[i].label) ++correct;
  result.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return result;
}

std::string history_csv(const std::vector<EpochStats>& history) {
  std::string out = "epoch,train_loss,train_acc\n";
  for (const auto& h : history) out += std::to_string(h.epoch) + "," + fmt(h.loss) + "," + fmt(h.accuracy) + "\n";
  return out;
}

Checkpoint make_checkpoint(const TrainResult& result, const TrainConfig& cfg) {
  Checkpoint ckpt;
  ckpt.model = result.model;
  auto& m = ckpt.meta;
  m["variant"] = variant_name(result.graph.variant);
  m["tau"] = std::to_string(result.graph.tau);
  if (result.graph.spatial_norm) m["spatial_norm"] = format_double(*result.graph.spatial_norm);
  if (result.graph.temporal_norm) m["temporal_norm"] = format_double(*result.graph.temporal_norm);
  m["window_k"] = std::to_string(cfg.window_k);
  m["epochs"] = std::to_string(cfg.epochs);
  m["batch_size"] = std::to_string(cfg.batch_size);
  m["learning_rate"] = format_double(cfg.learning_rate);
  m["optimizer"] = optimizer_name(cfg.optimizer);
  m["train_seed"] = std::to_string(cfg.seed);
  m["train_accuracy"] = format_double(result.train_accuracy);
  return ckpt;
}

GraphConfig checkpoint_graph_config(const Checkpoint& ckpt) {
  GraphConfig g;
  if (const auto* v = ckpt.find("variant")) g.variant = parse_variant(*v);
  if (const auto* v = ckpt.find("tau")) g.tau = static_cast<std::uint32_t>(std::stoul(*v));
  if (const auto* v = ckpt.find("spatial_norm")) g.spatial_norm = std::stod(*v);
  if (const auto* v = ckpt.find("temporal_norm")) g.temporal_norm = std::stod(*v);
  g.validate();
  return g;
}

const WindowScore& EvalReport::at(std::size_t k) const {
  for (const auto& w : windows)
    if (w.k == k) return w;
  throw Error(Errc::Precondition, "report has no window of size " + std::to_string(k));
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["class_names"] = class_names;
  j["class_counts"] = class_counts;
  j["noise_fraction"] = noise_fraction;
  j["seed"] = seed;
  j["train_accuracy"] = train_accuracy ? nlohmann::ordered_json(*train_accuracy) : nlohmann::ordered_json(nullptr);
  auto& ws = j["windows"] = nlohmann::ordered_json::array();
  for (const auto& w : windows) {
    nlohmann::ordered_json e;
    e["k"] = w.k;
    e["top1_accuracy"] = w.top1;
    e["per_class_accuracy"] = w.per_class;
    e["confusion"] = w.confusion;
    e["train_test_gap"] = w.train_test_gap ? nlohmann::ordered_json(*w.train_test_gap) : nlohmann::ordered_json(nullptr);
    ws.push_back(std::move(e));
  }
  return j.dump(2) + "\n";
}

EvalReport EvalReport::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    EvalReport r;
    j.at("class_names").get_to(r.class_names);
    j.at("class_counts").get_to(r.class_counts);
    j.at("noise_fraction").get_to(r.noise_fraction);
    j.at("seed").get_to(r.seed);
    if (!j.at("train_accuracy").is_null()) r.train_accuracy = j.at("train_accuracy").get<double>();
    for (const auto& e : j.at("windows")) {
      WindowScore w;
      e.at("k").get_to(w.k);
      e.at("top1_accuracy").get_to(w.top1);
      e.at("per_class_accuracy").get_to(w.per_class);
      e.at("confusion").get_to(w.confusion);
      if (!e.at("train_test_gap").is_null()) w.train_test_gap = e.at("train_test_gap").get<double>();
      r.windows.push_back(std::move(w));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::MalformedRecord, std::string("evaluation report: ") + e.what());
  }
}

EvalReport evaluate(const tea::ModelParams& model, const Dataset& data, const EvalConfig& cfg,
                    std::optional<double> train_accuracy) {
  if (data.samples.empty()) throw Error(Errc::EmptyTestSet, "no test samples");
  if (cfg.windows.empty()) throw Error(Errc::Precondition, "at least one window size is required");
  if (cfg.batch_size == 0) throw Error(Errc::Precondition, "batch_size must be positive");
  for (auto k : cfg.windows)
    if (k == 0) throw Error(Errc::ZeroWindow, "window sizes must be positive");
  check_dataset(data);
  if (data.num_classes() > model.config.num_classes) {
    throw Error(Errc::DimensionMismatch, "dataset has more classes than the model");
  }

  const std::size_t n = data.samples.size();
  const std::size_t classes = data.num_classes();
  const std::size_t kmax = *std::max_element(cfg.windows.begin(), cfg.windows.end());

  std::vector<Window> base(n);
  for (std::size_t i = 0; i < n; ++i) base[i] = sample_window(data.samples[i], kmax, WindowStart::random(mix_seed(cfg.seed, 3, i)));

  EvalReport report;
  report.class_names = data.class_names;
  report.class_counts.assign(classes, 0);
  for (const auto& s : data.samples) ++report.class_counts[static_cast<std::size_t>(*s.label)];
  report.noise_fraction = cfg.noise_fraction;
  report.seed = cfg.seed;
  report.train_accuracy = train_accuracy;

  for (std::size_t k : cfg.windows) {
    const auto graphs = build_all(n, [&](std::size_t i) {
      Window w = sample_window(base[i].stream, k, WindowStart::fixed(0));
      const auto& big = base[i].stream.events;
      if (w.stream.size() > big.size() || !std::equal(w.stream.events.begin(), w.stream.events.end(), big.begin(),
                                                      [](const Event& a, const Event& b) {
                                                        return a.t == b.t && a.x == b.x && a.y == b.y && a.p == b.p;
                                                      })) {
        throw Error(Errc::Precondition, "window of size " + std::to_string(k) + " is not a prefix of the base window");
      }
      EventStream s = cfg.noise_fraction > 0 ? inject_noise(w.stream, cfg.noise_fraction, mix_seed(cfg.seed, 4, i, k))
                                             : std::move(w.stream);
      return build_graph(s, cfg.graph);
    });
    const auto pred = predict_all(model, graphs, cfg.batch_size);

    WindowScore score;
    score.k = k;
    score.confusion.assign(classes, std::vector<std::size_t>(model.config.num_classes, 0));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto truth = static_cast<std::size_t>(*data.samples[i].label);
      ++score.confusion[truth][pred[i]];
      if (pred[i] == truth) ++correct;
    }
    score.top1 = static_cast<double>(correct) / static_cast<double>(n);
    for (std::size_t c = 0; c < classes; ++c) {
      const auto total = report.class_counts[c];
      score.per_class.push_back(total ? static_cast<double>(score.confusion[c][c]) / static_cast<double>(total) : 0.0);
    }
    if (train_accuracy) score.train_test_gap = *train_accuracy - score.top1;
    report.windows.push_back(std::move(score));
  }
  return report;
}

}  // namespace evg
