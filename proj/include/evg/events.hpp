#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evg/bytes.hpp"

namespace evg {

/// One brightness change: pixel (x, y), timestamp t in microseconds and
/// polarity p in {-1, +1}.
struct Event {
  std::uint32_t x = 0;
  std::uint32_t y = 0;
  std::int64_t t = 0;
  std::int8_t p = 1;

  friend bool operator==(const Event&, const Event&) = default;
};

struct SensorSize {
  std::uint32_t width = 0;
  std::uint32_t height = 0;

  friend bool operator==(const SensorSize&, const SensorSize&) = default;
};

/// Time-ordered events of one sample plus the sensor geometry they live on.
struct EventStream {
  std::vector<Event> events;
  SensorSize sensor;
  std::optional<int> label;

  std::size_t size() const { return events.size(); }
  bool empty() const { return events.empty(); }

  /// t_last - t_first, 0 for fewer than two events.
  std::int64_t duration_us() const;

  /// Throws CoordinateOutOfBounds, EmptyStream, MalformedRecord (bad
  /// polarity or timestamp) or Precondition (unsorted) on violation.
  void validate() const;

  friend bool operator==(const EventStream&, const EventStream&) = default;
};

enum class EventFormat { Csv, Bin };

/// Guesses the format from a file extension (".csv" or ".bin").
EventFormat format_from_path(const std::string& path);

/// Parses a CSV or EVS1 buffer into a validated, time-sorted stream.
///
/// CSV carries no mandatory geometry. The sensor size is taken from
/// `sensor` when given, else from a `# sensor=WxH` comment, else inferred as
/// max coordinate + 1. A `# label=N` comment sets the label.
EventStream parse_events(std::span<const std::uint8_t> bytes, EventFormat format,
                         std::optional<SensorSize> sensor = std::nullopt);

Bytes write_events(const EventStream& stream, EventFormat format);

EventStream read_events_file(const std::string& path, std::optional<SensorSize> sensor = std::nullopt);
void write_events_file(const std::string& path, const EventStream& stream);

/// Where a window of successive events begins.
struct WindowStart {
  enum class Kind { Fixed, Random };
  Kind kind = Kind::Fixed;
  std::uint64_t value = 0;  // start index for Fixed, seed for Random

  static WindowStart fixed(std::size_t index) { return {Kind::Fixed, index}; }
  static WindowStart random(std::uint64_t seed) { return {Kind::Random, seed}; }

  /// Parses "fixed:I" or "random:SEED".
  static WindowStart parse(const std::string& text);
};

struct Window {
  EventStream stream;
  std::size_t start = 0;
  bool short_stream = false;  // fewer than k events were available
};

/// Takes k successive events. Windows with the same start are nested
/// prefixes of each other.
Window sample_window(const EventStream& stream, std::size_t k, WindowStart start);

/// Appends ceil(fraction * K) events uniform over the sensor, polarity and
/// [t_min, t_max], then stable-sorts by t so source ties keep their order.
EventStream inject_noise(const EventStream& stream, double fraction, std::uint64_t seed);

/// ceil(fraction * count), robust to representation error in fraction.
std::size_t noise_event_count(std::size_t count, double fraction);

}  // namespace evg
