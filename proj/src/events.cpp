#include "evg/events.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>
#include <string_view>

namespace evg {

namespace {

constexpr std::string_view kBinMagic = "EVS1";
constexpr std::size_t kBinHeaderSize = 4 + 2 + 2 + 8;
constexpr std::size_t kBinRecordSize = 8 + 2 + 2 + 1 + 3;

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
bool parse_int(std::string_view s, T& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && !s.empty();
}

std::int8_t canonical_polarity(long long raw, bool& ok) {
  ok = true;
  if (raw == 1) return 1;
  if (raw == 0 || raw == -1) return -1;
  ok = false;
  return 0;
}

// "# sensor=WxH" and "# label=N" comment directives.
void parse_directive(std::string_view comment, std::optional<SensorSize>& sensor, std::optional<int>& label) {
  comment = trim(comment);
  if (comment.starts_with("sensor=")) {
    auto body = comment.substr(7);
    auto xpos = body.find('x');
    SensorSize s;
    if (xpos != std::string_view::npos && parse_int(body.substr(0, xpos), s.width) &&
        parse_int(body.substr(xpos + 1), s.height)) {
      sensor = s;
    }
  } else if (comment.starts_with("label=")) {
    int l = 0;
    if (parse_int(comment.substr(6), l)) label = l;
  }
}

void sort_by_time(std::vector<Event>& events) {
  if (!std::is_sorted(events.begin(), events.end(),
                      [](const Event& a, const Event& b) { return a.t < b.t; })) {
    std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
  }
}

EventStream parse_csv(std::span<const std::uint8_t> bytes, std::optional<SensorSize> sensor) {
  std::string_view text(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  EventStream stream;
  std::optional<SensorSize> declared;
  std::optional<int> label;
  std::size_t line_no = 0;
  bool seen_record = false;
  while (!text.empty()) {
    auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '#') {
      parse_directive(line.substr(1), declared, label);
      continue;
    }
    if (!seen_record && line == "t,x,y,p") {
      seen_record = true;
      continue;
    }
    seen_record = true;

    std::string_view fields[4];
    std::size_t n = 0;
    std::string_view rest = line;
    while (n < 4) {
      auto comma = rest.find(',');
      fields[n++] = rest.substr(0, comma);
      if (comma == std::string_view::npos) {
        rest = {};
        break;
      }
      rest = rest.substr(comma + 1);
    }
    if (n != 4 || !rest.empty()) {
      throw Error(Errc::MalformedRecord, "line " + std::to_string(line_no) + ": expected 4 fields t,x,y,p");
    }
    long long t = 0, x = 0, y = 0, p = 0;
    if (!parse_int(fields[0], t) || !parse_int(fields[1], x) || !parse_int(fields[2], y) ||
        !parse_int(fields[3], p) || t < 0 || x < 0 || y < 0 || x > UINT32_MAX || y > UINT32_MAX) {
      throw Error(Errc::MalformedRecord, "line " + std::to_string(line_no) + ": bad field value");
    }
    bool ok = false;
    auto pol = canonical_polarity(p, ok);
    if (!ok) throw Error(Errc::MalformedRecord, "line " + std::to_string(line_no) + ": polarity must be 0, 1 or -1");
    stream.events.push_back(Event{static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y), t, pol});
  }
  if (stream.events.empty()) throw Error(Errc::EmptyStream, "no event records");

  if (sensor) {
    stream.sensor = *sensor;
  } else if (declared) {
    stream.sensor = *declared;
  } else {
    for (const auto& e : stream.events) {
      stream.sensor.width = std::max(stream.sensor.width, e.x + 1);
      stream.sensor.height = std::max(stream.sensor.height, e.y + 1);
    }
  }
  stream.label = label;
  sort_by_time(stream.events);
  stream.validate();
  return stream;
}

EventStream parse_bin(std::span<const std::uint8_t> bytes, std::optional<SensorSize> sensor) {
  if (bytes.empty()) throw Error(Errc::EmptyStream, "empty buffer");
  ByteReader in(bytes);
  in.expect_magic(kBinMagic);
  EventStream stream;
  stream.sensor.width = in.get<std::uint16_t>();
  stream.sensor.height = in.get<std::uint16_t>();
  const auto count = in.get<std::uint64_t>();
  if (count == 0) throw Error(Errc::EmptyStream, "record count is zero");
  if (in.remaining() / kBinRecordSize < count) {
    throw Error(Errc::TruncatedPayload, "header declares " + std::to_string(count) + " records");
  }
  stream.events.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto offset = in.position();
    const auto t = in.get<std::uint64_t>();
    Event e;
    e.x = in.get<std::uint16_t>();
    e.y = in.get<std::uint16_t>();
    const auto raw_p = in.get<std::int8_t>();
    in.skip(3);
    if (t > static_cast<std::uint64_t>(INT64_MAX)) {
      throw Error(Errc::MalformedRecord, "offset " + std::to_string(offset) + ": timestamp exceeds 63 bits");
    }
    bool ok = false;
    e.p = canonical_polarity(raw_p, ok);
    if (!ok) throw Error(Errc::MalformedRecord, "offset " + std::to_string(offset) + ": bad polarity");
    e.t = static_cast<std::int64_t>(t);
    stream.events.push_back(e);
  }
  if (sensor) stream.sensor = *sensor;
  sort_by_time(stream.events);
  stream.validate();
  return stream;
}

}  // namespace

std::int64_t EventStream::duration_us() const {
  if (events.size() < 2) return 0;
  return events.back().t - events.front().t;
}

void EventStream::validate() const {
  if (events.empty()) throw Error(Errc::EmptyStream, "stream has no events");
  std::int64_t prev = events.front().t;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    if (e.x >= sensor.width || e.y >= sensor.height) {
      throw Error(Errc::CoordinateOutOfBounds, "event " + std::to_string(i) + " at (" + std::to_string(e.x) +
                                                   "," + std::to_string(e.y) + ") outside " +
                                                   std::to_string(sensor.width) + "x" +
                                                   std::to_string(sensor.height));
    }
    if (e.p != 1 && e.p != -1) throw Error(Errc::MalformedRecord, "event " + std::to_string(i) + ": polarity");
    if (e.t < 0) throw Error(Errc::MalformedRecord, "event " + std::to_string(i) + ": negative timestamp");
    if (e.t < prev) throw Error(Errc::Precondition, "events not sorted by timestamp at " + std::to_string(i));
    prev = e.t;
  }
}

EventFormat format_from_path(const std::string& path) {
  auto dot = path.rfind('.');
  std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
  if (ext == "csv") return EventFormat::Csv;
  if (ext == "bin") return EventFormat::Bin;
  throw Error(Errc::Precondition, "cannot infer event format from '" + path + "' (use .csv or .bin)");
}

EventStream parse_events(std::span<const std::uint8_t> bytes, EventFormat format, std::optional<SensorSize> sensor) {
  return format == EventFormat::Csv ? parse_csv(bytes, sensor) : parse_bin(bytes, sensor);
}

Bytes write_events(const EventStream& stream, EventFormat format) {
  Bytes out;
  if (format == EventFormat::Csv) {
    std::string text = "# sensor=" + std::to_string(stream.sensor.width) + "x" + std::to_string(stream.sensor.height) + "\n";
    if (stream.label) text += "# label=" + std::to_string(*stream.label) + "\n";
    text += "t,x,y,p\n";
    for (const auto& e : stream.events) {
      text += std::to_string(e.t);
      text += ',';
      text += std::to_string(e.x);
      text += ',';
      text += std::to_string(e.y);
      text += ',';
      text += e.p > 0 ? "1\n" : "-1\n";
    }
    out.assign(text.begin(), text.end());
    return out;
  }
  out.reserve(kBinHeaderSize + stream.events.size() * kBinRecordSize);
  ByteWriter w(out);
  w.put_magic(kBinMagic);
  w.put(static_cast<std::uint16_t>(stream.sensor.width));
  w.put(static_cast<std::uint16_t>(stream.sensor.height));
  w.put(static_cast<std::uint64_t>(stream.events.size()));
  for (const auto& e : stream.events) {
    w.put(static_cast<std::uint64_t>(e.t));
    w.put(static_cast<std::uint16_t>(e.x));
    w.put(static_cast<std::uint16_t>(e.y));
    w.put(static_cast<std::int8_t>(e.p));
    w.pad(3);
  }
  return out;
}

EventStream read_events_file(const std::string& path, std::optional<SensorSize> sensor) {
  return parse_events(read_file(path), format_from_path(path), sensor);
}

void write_events_file(const std::string& path, const EventStream& stream) {
  write_file(path, write_events(stream, format_from_path(path)));
}

Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open '" + path + "'");
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error(Errc::Io, "short write to '" + path + "'");
}

WindowStart WindowStart::parse(const std::string& text) {
  auto colon = text.find(':');
  std::uint64_t value = 0;
  if (colon != std::string::npos && parse_int(std::string_view(text).substr(colon + 1), value)) {
    auto kind = text.substr(0, colon);
    if (kind == "fixed") return fixed(value);
    if (kind == "random") return random(value);
  }
  throw Error(Errc::Precondition, "window start must be fixed:I or random:SEED, got '" + text + "'");
}

Window sample_window(const EventStream& stream, std::size_t k, WindowStart start) {
  if (k == 0) throw Error(Errc::ZeroWindow, "window size must be positive");
  const std::size_t total = stream.events.size();
  std::size_t first = 0;
  if (start.kind == WindowStart::Kind::Fixed) {
    first = start.value;
    if (first >= total) {
      throw Error(Errc::Precondition, "start " + std::to_string(first) + " beyond stream of " + std::to_string(total));
    }
  } else if (total > k) {
    std::mt19937_64 rng(start.value);
    first = std::uniform_int_distribution<std::size_t>(0, total - k)(rng);
  }
  const std::size_t last = std::min(total, first + k);
  Window w;
  w.start = first;
  w.short_stream = last - first < k;
  w.stream.sensor = stream.sensor;
  w.stream.label = stream.label;
  w.stream.events.assign(stream.events.begin() + static_cast<std::ptrdiff_t>(first),
                         stream.events.begin() + static_cast<std::ptrdiff_t>(last));
  return w;
}

std::size_t noise_event_count(std::size_t count, double fraction) {
  const double exact = fraction * static_cast<double>(count);
  return static_cast<std::size_t>(std::ceil(exact - 1e-9 * std::max(1.0, exact)));
}

EventStream inject_noise(const EventStream& stream, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw Error(Errc::Precondition, "noise fraction must lie in [0, 1]");
  EventStream out = stream;
  if (stream.empty()) return out;
  const std::size_t extra = noise_event_count(stream.size(), fraction);
  if (extra == 0) return out;

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint32_t> xs(0, stream.sensor.width - 1);
  std::uniform_int_distribution<std::uint32_t> ys(0, stream.sensor.height - 1);
  std::uniform_int_distribution<std::int64_t> ts(stream.events.front().t, stream.events.back().t);
  std::bernoulli_distribution positive(0.5);
  out.events.reserve(stream.size() + extra);
  for (std::size_t i = 0; i < extra; ++i) {
    Event e;
    e.x = xs(rng);
    e.y = ys(rng);
    e.t = ts(rng);
    e.p = positive(rng) ? 1 : -1;
    out.events.push_back(e);
  }
  std::stable_sort(out.events.begin(), out.events.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
  return out;
}

}  // namespace evg
