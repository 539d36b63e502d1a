#include "evg/sim.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace evg {

namespace fs = std::filesystem;

namespace {

// Slack on the threshold comparison so that a change of exactly k*C, built
// up from rounded log values, still yields k events.
constexpr double kCrossingSlack = 1e-9;

std::int64_t crossing_time(std::int64_t t0, std::int64_t t1, double lam0, double lam1, double level,
                           Interpolation mode) {
  if (mode == Interpolation::None || lam1 == lam0) return t1;
  const double frac = std::clamp((level - lam0) / (lam1 - lam0), 0.0, 1.0);
  const auto t = t0 + static_cast<std::int64_t>(std::floor(frac * static_cast<double>(t1 - t0)));
  return std::clamp(t, t0, t1);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  std::uint64_t out[1];
  seq.generate(reinterpret_cast<std::uint32_t*>(out), reinterpret_cast<std::uint32_t*>(out) + 2);
  return out[0];
}

// Length of [a, a+len) that falls inside the unit cell [c, c+1).
double coverage(double a, double len, double c) {
  const double lo = std::max(a, c);
  const double hi = std::min(a + len, c + 1.0);
  return std::max(0.0, hi - lo);
}

FrameSequence render_bar(const SyntheticSpec& spec, const PatternClass& cls, std::mt19937_64& rng) {
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const bool horizontal_motion = std::bernoulli_distribution(0.5)(rng);
  const double direction = std::bernoulli_distribution(0.5)(rng) ? 1.0 : -1.0;
  const bool bright_bar = std::bernoulli_distribution(0.5)(rng);
  const double background = bright_bar ? uni(0.15, 0.3) : uni(0.65, 0.85);
  const double foreground = bright_bar ? uni(0.65, 0.85) : uni(0.15, 0.3);
  const double speed = uni(cls.speed_min, cls.speed_max);
  const double bar_width = uni(2.0, 4.0);

  const double along_extent = horizontal_motion ? spec.width : spec.height;
  const double across_extent = horizontal_motion ? spec.height : spec.width;
  const double bar_len = std::floor(uni(0.4, 0.8) * across_extent);
  const double bar_off = std::floor(uni(0.0, across_extent - bar_len));
  const double travel = std::min(spec.travel_px, along_extent - bar_width - 2.0);
  const double lo = 1.0 + (direction > 0 ? 0.0 : travel);
  const double hi = along_extent - bar_width - 1.0 - (direction > 0 ? travel : 0.0);
  const double start = uni(lo, std::max(lo, hi));
  const auto steps = static_cast<std::size_t>(std::ceil(travel / speed));
  // A slanted leading edge and faint static texture make pixels along the
  // edge cross the threshold at different times.
  const double slant = std::tan(uni(-0.35, 0.35));
  std::vector<double> texture(static_cast<std::size_t>(spec.width) * spec.height);
  for (double& v : texture) v = uni(-0.03, 0.03);

  FrameSequence seq;
  seq.width = spec.width;
  seq.height = spec.height;
  for (std::size_t f = 0; f <= steps; ++f) {
    const double pos = start + direction * speed * static_cast<double>(f);
    std::vector<double> img(static_cast<std::size_t>(spec.width) * spec.height, background);
    for (std::uint32_t y = 0; y < spec.height; ++y) {
      for (std::uint32_t x = 0; x < spec.width; ++x) {
        const double across = horizontal_motion ? y : x;
        const double along = (horizontal_motion ? x : y) + slant * (across - across_extent / 2);
        const double cover = coverage(pos, bar_width, along) * coverage(bar_off, bar_len, across);
        const std::size_t i = static_cast<std::size_t>(y) * spec.width + x;
        img[i] = background + (foreground - background) * cover + texture[i];
      }
    }
    seq.frames.push_back(std::move(img));
    seq.timestamps.push_back(static_cast<std::int64_t>(f) * spec.frame_interval_us);
  }
  return seq;
}

FrameSequence render_blob(const SyntheticSpec& spec, const PatternClass& cls, std::mt19937_64& rng) {
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const double freq = uni(cls.freq_min, cls.freq_max);
  const double phase = uni(0.0, 2.0 * std::numbers::pi);
  const double sigma = uni(2.0, 3.5);
  const double amp = uni(0.15, 0.3) * std::min(spec.width, spec.height);
  const double cx0 = uni(0.35, 0.65) * spec.width;
  const double cy0 = uni(0.35, 0.65) * spec.height;
  const double angle = uni(0.0, std::numbers::pi);
  const double background = uni(0.15, 0.3);
  const double peak = uni(0.5, 0.7);

  FrameSequence seq;
  seq.width = spec.width;
  seq.height = spec.height;
  for (std::size_t f = 0; f < spec.blob_frames; ++f) {
    const double s = amp * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(f) + phase);
    const double cx = cx0 + s * std::cos(angle);
    const double cy = cy0 + s * std::sin(angle);
    std::vector<double> img(static_cast<std::size_t>(spec.width) * spec.height);
    for (std::uint32_t y = 0; y < spec.height; ++y) {
      for (std::uint32_t x = 0; x < spec.width; ++x) {
        const double d2 = (x + 0.5 - cx) * (x + 0.5 - cx) + (y + 0.5 - cy) * (y + 0.5 - cy);
        img[static_cast<std::size_t>(y) * spec.width + x] = background + peak * std::exp(-d2 / (2 * sigma * sigma));
      }
    }
    seq.frames.push_back(std::move(img));
    seq.timestamps.push_back(static_cast<std::int64_t>(f) * spec.frame_interval_us);
  }
  return seq;
}

}  // namespace

void FrameSequence::validate() const {
  if (frames.size() != timestamps.size()) {
    throw Error(Errc::DimensionMismatch, "frame count differs from timestamp count");
  }
  const std::size_t pixels = static_cast<std::size_t>(width) * height;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].size() != pixels) {
      throw Error(Errc::DimensionMismatch, "frame " + std::to_string(i) + " has " +
                                               std::to_string(frames[i].size()) + " pixels, expected " +
                                               std::to_string(pixels));
    }
    if (i > 0 && timestamps[i] <= timestamps[i - 1]) {
      throw Error(Errc::Precondition, "frame timestamps must be strictly increasing");
    }
  }
}

EventStream simulate_events(const FrameSequence& seq, const SimConfig& cfg) {
  if (!(cfg.threshold_c > 0) || !(cfg.log_eps > 0)) {
    throw Error(Errc::Precondition, "threshold and log_eps must be positive");
  }
  seq.validate();
  if (seq.frames.size() < 2) throw Error(Errc::TooFewFrames, "need at least two frames");

  const std::size_t pixels = static_cast<std::size_t>(seq.width) * seq.height;
  const double c = cfg.threshold_c;
  auto log_intensity = [&](std::size_t f, std::size_t px) { return std::log(seq.frames[f][px] + cfg.log_eps); };

  EventStream out;
  out.sensor = {seq.width, seq.height};
  for (std::size_t px = 0; px < pixels; ++px) {
    const auto x = static_cast<std::uint32_t>(px % seq.width);
    const auto y = static_cast<std::uint32_t>(px / seq.width);
    double ref = log_intensity(0, px);
    double prev = ref;
    for (std::size_t f = 1; f < seq.frames.size(); ++f) {
      const double cur = log_intensity(f, px);
      while (cur - ref >= c - kCrossingSlack) {
        ref += c;
        out.events.push_back({x, y, crossing_time(seq.timestamps[f - 1], seq.timestamps[f], prev, cur, ref, cfg.interpolation), 1});
      }
      while (ref - cur >= c - kCrossingSlack) {
        ref -= c;
        out.events.push_back({x, y, crossing_time(seq.timestamps[f - 1], seq.timestamps[f], prev, cur, ref, cfg.interpolation), -1});
      }
      prev = cur;
    }
  }
  std::stable_sort(out.events.begin(), out.events.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
  return out;
}

FrameSequence read_pgm_directory(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".pgm") files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());

  FrameSequence seq;
  for (const auto& path : files) {
    const Bytes raw = read_file(path);
    std::string header(raw.begin(), raw.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(raw.size(), 64)));
    std::istringstream hs(header);
    std::string magic;
    std::uint32_t w = 0, h = 0, maxval = 0;
    hs >> magic >> w >> h >> maxval;
    if (magic != "P5" || !hs || maxval == 0 || maxval > 255) {
      throw Error(Errc::BadMagic, path + ": expected 8-bit binary PGM (P5)");
    }
    const auto data_start = static_cast<std::size_t>(hs.tellg()) + 1;
    if (raw.size() < data_start + static_cast<std::size_t>(w) * h) {
      throw Error(Errc::TruncatedPayload, path + ": pixel data shorter than " + std::to_string(w * h));
    }
    if (seq.frames.empty()) {
      seq.width = w;
      seq.height = h;
    } else if (w != seq.width || h != seq.height) {
      throw Error(Errc::DimensionMismatch, path + ": frame size differs from first frame");
    }
    std::vector<double> img(static_cast<std::size_t>(w) * h);
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = raw[data_start + i] / static_cast<double>(maxval);
    seq.frames.push_back(std::move(img));
  }

  std::ifstream ts((fs::path(dir) / "timestamps.txt").string());
  if (!ts) throw Error(Errc::Io, dir + ": missing timestamps.txt");
  std::int64_t t = 0;
  while (ts >> t) seq.timestamps.push_back(t);
  seq.validate();
  return seq;
}

void write_pgm_directory(const std::string& dir, const FrameSequence& seq) {
  seq.validate();
  fs::create_directories(dir);
  std::ofstream ts((fs::path(dir) / "timestamps.txt").string());
  for (std::size_t f = 0; f < seq.frames.size(); ++f) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%05zu.pgm", f);
    std::string header = "P5\n" + std::to_string(seq.width) + " " + std::to_string(seq.height) + "\n255\n";
    Bytes out(header.begin(), header.end());
    for (double v : seq.frames[f]) out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255)));
    write_file((fs::path(dir) / name).string(), out);
    ts << seq.timestamps[f] << "\n";
  }
}

FrameSequence parse_frames(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  in.expect_magic("FRM1");
  FrameSequence seq;
  seq.width = in.get<std::uint16_t>();
  seq.height = in.get<std::uint16_t>();
  const auto n = in.get<std::uint32_t>();
  const std::size_t pixels = static_cast<std::size_t>(seq.width) * seq.height;
  for (std::uint32_t f = 0; f < n; ++f) {
    seq.timestamps.push_back(static_cast<std::int64_t>(in.get<std::uint64_t>()));
    auto raw = in.get_bytes(pixels);
    std::vector<double> img(pixels);
    for (std::size_t i = 0; i < pixels; ++i) img[i] = raw[i] / 255.0;
    seq.frames.push_back(std::move(img));
  }
  seq.validate();
  return seq;
}

Bytes write_frames(const FrameSequence& seq) {
  seq.validate();
  Bytes out;
  ByteWriter w(out);
  w.put_magic("FRM1");
  w.put(static_cast<std::uint16_t>(seq.width));
  w.put(static_cast<std::uint16_t>(seq.height));
  w.put(static_cast<std::uint32_t>(seq.frames.size()));
  for (std::size_t f = 0; f < seq.frames.size(); ++f) {
    w.put(static_cast<std::uint64_t>(seq.timestamps[f]));
    for (double v : seq.frames[f]) w.put(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255)));
  }
  return out;
}

SyntheticSpec speed_contrast_spec(std::size_t samples_per_class) {
  SyntheticSpec spec;
  spec.samples_per_class = samples_per_class;
  spec.classes = {
      PatternClass{"bar_fast", PatternKind::TranslatingBar, 1.6, 2.4},
      PatternClass{"bar_slow", PatternKind::TranslatingBar, 0.3, 0.5},
  };
  return spec;
}

FrameSequence render_pattern(const SyntheticSpec& spec, const PatternClass& cls, std::uint64_t sample_seed) {
  std::mt19937_64 rng(sample_seed);
  return cls.kind == PatternKind::TranslatingBar ? render_bar(spec, cls, rng) : render_blob(spec, cls, rng);
}

SyntheticDataset make_synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.classes.size() < 2) throw Error(Errc::InvalidSpec, "need at least two classes");
  if (spec.samples_per_class < 2) throw Error(Errc::InvalidSpec, "need at least two samples per class");
  if (!(spec.train_fraction > 0 && spec.train_fraction < 1)) throw Error(Errc::InvalidSpec, "train_fraction must lie in (0, 1)");
  for (const auto& cls : spec.classes) {
    if (cls.kind == PatternKind::TranslatingBar && !(cls.speed_min > 0 && cls.speed_max >= cls.speed_min)) {
      throw Error(Errc::InvalidSpec, "class '" + cls.name + "' has an invalid speed range");
    }
    if (cls.kind == PatternKind::OscillatingBlob && !(cls.freq_min > 0 && cls.freq_max >= cls.freq_min)) {
      throw Error(Errc::InvalidSpec, "class '" + cls.name + "' has an invalid frequency range");
    }
  }
  if (spec.width < 8 || spec.height < 8) throw Error(Errc::InvalidSpec, "sensor must be at least 8x8");

  // Class ids follow the lexicographic rank of the names, matching the
  // on-disk dataset layout.
  std::vector<std::size_t> order(spec.classes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return spec.classes[a].name < spec.classes[b].name; });

  SyntheticDataset out;
  for (std::size_t i : order) {
    out.train.class_names.push_back(spec.classes[i].name);
    out.test.class_names.push_back(spec.classes[i].name);
  }
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(spec.samples_per_class)));
  for (std::size_t label = 0; label < order.size(); ++label) {
    const auto& cls = spec.classes[order[label]];
    for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
      EventStream stream = simulate_events(render_pattern(spec, cls, derive_seed(seed, label, s)), spec.sim);
      if (stream.empty()) throw Error(Errc::InvalidSpec, "class '" + cls.name + "' rendered a sample without events");
      stream.label = static_cast<int>(label);
      (s < n_train ? out.train : out.test).samples.push_back(std::move(stream));
    }
  }
  return out;
}

}  // namespace evg
