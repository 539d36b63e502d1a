#include "evg/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "evg/checkpoint.hpp"
#include "evg/errors.hpp"

namespace evg {

namespace {

using Clock = std::chrono::steady_clock;

volatile std::size_t g_sink = 0;  // keeps timed builds from being optimized away

double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double span_us(const EventStream& s) { return s.empty() ? 0.0 : static_cast<double>(s.events.back().t - s.events.front().t); }

double dense_bytes(const Dataset& data) {
  if (data.samples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : data.samples) total += 4.0 * s.sensor.width * s.sensor.height;
  return total / static_cast<double>(data.samples.size());
}

std::vector<Window> windows_of(const Dataset& data, std::size_t k) {
  std::vector<Window> out;
  for (const auto& s : data.samples) {
    if (s.empty()) continue;
    out.push_back(sample_window(s, k, WindowStart::fixed(0)));
  }
  if (out.empty()) throw Error(Errc::EmptyStream, "dataset has no non-empty samples");
  return out;
}

void check_windows(const std::vector<std::size_t>& windows) {
  for (auto k : windows)
    if (k == 0) throw Error(Errc::ZeroWindow, "window sizes must be positive");
}

nlohmann::ordered_json opt(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

std::optional<double> opt_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

EventGraph BuilderSpec::build(const EventStream& stream) const {
  if (is_radius()) return build_radius_graph(stream, radius, cap, graph.spatial_norm, graph.temporal_norm);
  return build_graph(stream, graph);
}

std::string BuilderSpec::label() const {
  if (is_radius()) {
    std::string out = "radius:r=" + format_double(radius);
    if (cap != UINT32_MAX) out += ":cap=" + std::to_string(cap);
    return out;
  }
  return variant_name(graph.variant) + ":tau=" + std::to_string(graph.tau);
}

BuilderSpec BuilderSpec::parse(const std::string& text) {
  std::stringstream ss(text);
  std::string part;
  std::getline(ss, part, ':');
  BuilderSpec b;
  b.graph.variant = parse_variant(part);
  bool have_radius = false;
  while (std::getline(ss, part, ':')) {
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw Error(Errc::InvalidSpec, "builder option '" + part + "' lacks '='");
    const std::string key = part.substr(0, eq), value = part.substr(eq + 1);
    try {
      if (key == "tau" && !b.is_radius()) {
        b.graph.tau = static_cast<std::uint32_t>(std::stoul(value));
      } else if (key == "r" && b.is_radius()) {
        b.radius = std::stod(value);
        have_radius = true;
      } else if (key == "cap" && b.is_radius()) {
        b.cap = static_cast<std::uint32_t>(std::stoul(value));
      } else {
        throw Error(Errc::InvalidSpec, "unknown option '" + key + "' for builder '" + text + "'");
      }
    } catch (const std::logic_error&) {
      throw Error(Errc::InvalidSpec, "bad value '" + value + "' in builder '" + text + "'");
    }
  }
  if (b.is_radius() && !have_radius) throw Error(Errc::InvalidSpec, "radius builder needs r=R");
  if (b.is_radius() && !(b.radius > 0)) throw Error(Errc::InvalidSpec, "radius must be positive");
  if (!b.is_radius()) b.graph.validate();
  return b;
}

std::vector<BuilderSpec> parse_builders(const std::string& text) {
  std::vector<BuilderSpec> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(BuilderSpec::parse(item));
  return out;
}

const BenchCell& BenchReport::at(const std::string& builder, std::size_t k) const {
  for (const auto& c : cells)
    if (c.builder == builder && c.k == k) return c;
  throw Error(Errc::Precondition, "report has no cell " + builder + " @ k=" + std::to_string(k));
}

BenchReport BenchReport::without_timings() const {
  BenchReport r = *this;
  for (auto& c : r.cells) c.median_us = c.mean_us = c.p95_us = std::nullopt;
  return r;
}

std::string BenchReport::to_json() const {
  nlohmann::ordered_json j;
  j["repeats"] = repeats;
  j["dense_frame_bytes"] = dense_frame_bytes;
  auto& arr = j["cells"] = nlohmann::ordered_json::array();
  for (const auto& c : cells) {
    nlohmann::ordered_json e;
    e["builder"] = c.builder;
    e["k"] = c.k;
    e["samples"] = c.samples;
    e["mean_bytes"] = c.mean_bytes;
    e["median_us"] = opt(c.median_us);
    e["mean_us"] = opt(c.mean_us);
    e["p95_us"] = opt(c.p95_us);
    e["collection_span_us"] = c.collection_span_us;
    arr.push_back(std::move(e));
  }
  return j.dump(2) + "\n";
}

BenchReport BenchReport::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    BenchReport r;
    j.at("repeats").get_to(r.repeats);
    j.at("dense_frame_bytes").get_to(r.dense_frame_bytes);
    for (const auto& e : j.at("cells")) {
      BenchCell c;
      e.at("builder").get_to(c.builder);
      e.at("k").get_to(c.k);
      e.at("samples").get_to(c.samples);
      e.at("mean_bytes").get_to(c.mean_bytes);
      c.median_us = opt_from(e.at("median_us"));
      c.mean_us = opt_from(e.at("mean_us"));
      c.p95_us = opt_from(e.at("p95_us"));
      e.at("collection_span_us").get_to(c.collection_span_us);
      r.cells.push_back(std::move(c));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::MalformedRecord, std::string("benchmark report: ") + e.what());
  }
}

BenchReport bench_transform(const Dataset& data, const std::vector<BuilderSpec>& builders,
                            const std::vector<std::size_t>& windows, std::size_t repeats) {
  if (repeats < 30) throw Error(Errc::Precondition, "repeats must be at least 30, got " + std::to_string(repeats));
  using Period = Clock::period;
  if (static_cast<double>(Period::num) / static_cast<double>(Period::den) > 1e-6) {
    throw Error(Errc::TimerTooCoarse, "steady clock resolution is coarser than 1 microsecond");
  }
  check_windows(windows);

  BenchReport report;
  report.repeats = repeats;
  report.dense_frame_bytes = dense_bytes(data);
  if (builders.empty()) return report;

  for (const auto& b : builders) {
    for (std::size_t k : windows) {
      const auto wins = windows_of(data, k);
      const std::size_t warmup = std::min<std::size_t>(5, wins.size());
      std::size_t sink = 0;
      for (std::size_t i = 0; i < warmup; ++i) sink += b.build(wins[i].stream).edges.size();

      std::vector<double> times;
      times.reserve(repeats);
      double bytes = 0.0, span = 0.0;
      for (std::size_t r = 0; r < repeats; ++r) {
        const auto& s = wins[r % wins.size()].stream;
        const auto t0 = Clock::now();
        EventGraph g = b.build(s);
        const auto t1 = Clock::now();
        times.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
        sink += g.edges.size();
        bytes += static_cast<double>(serialized_graph_size(g.num_nodes, g.edges.size(), g.feature_dim, g.label.has_value()));
        span += span_us(s);
      }
      g_sink = sink;

      BenchCell c;
      c.builder = b.label();
      c.k = k;
      c.samples = repeats;
      c.mean_bytes = bytes / static_cast<double>(repeats);
      c.collection_span_us = span / static_cast<double>(repeats);
      c.median_us = percentile(times, 0.5);
      c.p95_us = percentile(times, 0.95);
      c.mean_us = std::accumulate(times.begin(), times.end(), 0.0) / static_cast<double>(repeats);
      report.cells.push_back(std::move(c));
    }
  }
  return report;
}

BenchReport bench_memory(const Dataset& data, const std::vector<BuilderSpec>& builders,
                         const std::vector<std::size_t>& windows) {
  check_windows(windows);
  BenchReport report;
  report.dense_frame_bytes = dense_bytes(data);
  for (const auto& b : builders) {
    for (std::size_t k : windows) {
      const auto wins = windows_of(data, k);
      double bytes = 0.0, span = 0.0;
      for (const auto& w : wins) {
        bytes += static_cast<double>(serialize_graph(b.build(w.stream)).size());
        span += span_us(w.stream);
      }
      BenchCell c;
      c.builder = b.label();
      c.k = k;
      c.samples = wins.size();
      c.mean_bytes = bytes / static_cast<double>(wins.size());
      c.collection_span_us = span / static_cast<double>(wins.size());
      report.cells.push_back(std::move(c));
    }
  }
  return report;
}

}  // namespace evg
