#pragma once

#include <optional>
#include <string>
#include <vector>

#include "evg/dataset.hpp"
#include "evg/graph.hpp"

namespace evg {

/// One graph construction under test: a G1-G4 builder or the radius baseline.
struct BuilderSpec {
  GraphConfig graph;                     // used by the G1-G4 builders
  double radius = 0.0;                   // radius baseline only
  std::uint32_t cap = UINT32_MAX;        // radius baseline degree cap
  bool is_radius() const { return graph.variant == Variant::Radius; }

  EventGraph build(const EventStream& stream) const;
  /// Canonical text form, e.g. "g1:tau=4" or "radius:r=3:cap=32".
  std::string label() const;

  /// Parses one builder, e.g. "g2:tau=2" or "radius:r=0.5:cap=16".
  static BuilderSpec parse(const std::string& text);
};

/// Comma-separated builder list ("g1:tau=4,radius:r=3").
std::vector<BuilderSpec> parse_builders(const std::string& text);

struct BenchCell {
  std::string builder;
  std::size_t k = 0;
  std::size_t samples = 0;      // windows measured
  double mean_bytes = 0.0;      // mean GRF1 size
  std::optional<double> median_us, mean_us, p95_us;
  /// Mean timestamp span of the measured windows. Stands in for the time a
  /// sensor needs to collect k events; not a software cost.
  double collection_span_us = 0.0;
};

struct BenchReport {
  std::vector<BenchCell> cells;
  std::size_t repeats = 0;
  /// Size of a dense single-channel f32 frame for the dataset's sensor.
  double dense_frame_bytes = 0.0;

  const BenchCell& at(const std::string& builder, std::size_t k) const;
  /// Same report with latency fields cleared, for run-to-run comparison.
  BenchReport without_timings() const;

  std::string to_json() const;
  static BenchReport from_json(const std::string& text);
};

/// Times event-to-graph conversion only. Each of `repeats` measurements
/// builds one window (first k events), cycling through the samples in order
/// after a short untimed warm-up. Single-threaded.
BenchReport bench_transform(const Dataset& data, const std::vector<BuilderSpec>& builders,
                            const std::vector<std::size_t>& windows, std::size_t repeats);

/// Mean serialized size per cell over all samples, plus the dense-frame size.
BenchReport bench_memory(const Dataset& data, const std::vector<BuilderSpec>& builders,
                         const std::vector<std::size_t>& windows);

}  // namespace evg
