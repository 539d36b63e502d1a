#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evg/dataset.hpp"
#include "evg/events.hpp"

namespace evg {

/// Grayscale frames with intensities in [0, 1], row-major, one timestamp
/// (microseconds) per frame.
struct FrameSequence {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<std::vector<double>> frames;
  std::vector<std::int64_t> timestamps;

  /// Throws DimensionMismatch or Precondition (non-increasing timestamps).
  void validate() const;
};

enum class Interpolation { None, LinearInTime };

struct SimConfig {
  double threshold_c = 0.2;
  double log_eps = 1e-3;
  Interpolation interpolation = Interpolation::LinearInTime;
};

/// Log-intensity threshold model: each pixel keeps a reference level and
/// emits one event per +-C crossing of log(I + log_eps), resetting the
/// reference to the crossed level. Output is sorted by time; events sharing
/// a timestamp are ordered by pixel index then crossing order.
EventStream simulate_events(const FrameSequence& seq, const SimConfig& cfg);

/// Directory of 8-bit P5 PGM files (lexicographic order) with a
/// `timestamps.txt`, one microsecond value per line.
FrameSequence read_pgm_directory(const std::string& dir);
void write_pgm_directory(const std::string& dir, const FrameSequence& seq);

/// FRM1 container: "FRM1", u16 w, u16 h, u32 n, n x (u64 t, w*h u8).
FrameSequence parse_frames(std::span<const std::uint8_t> bytes);
Bytes write_frames(const FrameSequence& seq);

enum class PatternKind { TranslatingBar, OscillatingBlob };

/// Parametric moving pattern used to render one class of samples.
struct PatternClass {
  std::string name;
  PatternKind kind = PatternKind::TranslatingBar;
  double speed_min = 1.0;  // bar: pixels per frame
  double speed_max = 1.0;
  double freq_min = 0.05;  // blob: oscillations per frame
  double freq_max = 0.05;
};

struct SyntheticSpec {
  std::vector<PatternClass> classes;
  std::size_t samples_per_class = 50;
  std::uint32_t width = 32;
  std::uint32_t height = 32;
  std::int64_t frame_interval_us = 2000;
  double travel_px = 16.0;  // bar displacement over a sample, independent of speed
  std::size_t blob_frames = 24;
  double train_fraction = 0.8;
  SimConfig sim;
};

/// Two bars that differ only in speed (slow vs fast).
SyntheticSpec speed_contrast_spec(std::size_t samples_per_class = 50);

struct SyntheticDataset {
  Dataset train;
  Dataset test;
};

/// Renders each class pattern to frames, runs the simulator and splits each
/// class 80/20 into disjoint train/test samples. Deterministic in seed.
SyntheticDataset make_synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed);

/// Renders the frames of one sample; exposed for tests and tooling.
FrameSequence render_pattern(const SyntheticSpec& spec, const PatternClass& cls, std::uint64_t sample_seed);

}  // namespace evg
