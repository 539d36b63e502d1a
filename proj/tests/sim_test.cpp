#include <gtest/gtest.h>

#include <cmath>

#include "evg/errors.hpp"
#include "evg/sim.hpp"
#include "test_util.hpp"

using namespace evg;

namespace {

constexpr double kEps = 1e-3;

// One-pixel sequence whose log-intensity follows `levels`.
FrameSequence from_log_levels(const std::vector<double>& levels, std::int64_t dt = 1000) {
  FrameSequence seq;
  seq.width = seq.height = 1;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    seq.frames.push_back({std::exp(levels[i]) - kEps});
    seq.timestamps.push_back(static_cast<std::int64_t>(i) * dt);
  }
  return seq;
}

// Reference model in terms of an integer level index: the pixel sits at level
// n (reference = lambda0 + n*C) and jumps to the furthest level it has passed.
std::vector<int> oracle_polarities(const std::vector<double>& lambda, double c) {
  std::vector<int> out;
  long n = 0;
  const double slack = 1e-9;
  for (std::size_t f = 1; f < lambda.size(); ++f) {
    const double u = (lambda[f] - lambda[0]) / c;
    if (u >= static_cast<double>(n + 1) - slack / c) {
      const long target = static_cast<long>(std::floor(u + slack / c));
      for (; n < target; ++n) out.push_back(1);
    } else if (u <= static_cast<double>(n - 1) + slack / c) {
      const long target = static_cast<long>(std::ceil(u - slack / c));
      for (; n > target; --n) out.push_back(-1);
    }
  }
  return out;
}

SimConfig config(double c = 0.2, Interpolation interp = Interpolation::LinearInTime) {
  SimConfig cfg;
  cfg.threshold_c = c;
  cfg.log_eps = kEps;
  cfg.interpolation = interp;
  return cfg;
}

}  // namespace

TEST(Simulator, RampOfTenIncrementsGivesFivePositiveEvents) {
  std::vector<double> levels;
  for (int f = 0; f <= 10; ++f) levels.push_back(-1.0 + 0.1 * f);
  auto events = simulate_events(from_log_levels(levels), config());
  ASSERT_EQ(events.size(), 5u);
  for (const auto& e : events.events) EXPECT_EQ(e.p, 1);
  EXPECT_EQ(oracle_polarities(levels, 0.2).size(), 5u);
}

TEST(Simulator, RampCrossingsLandOnEvenFrames) {
  std::vector<double> levels;
  for (int f = 0; f <= 10; ++f) levels.push_back(-1.0 + 0.1 * f);
  auto events = simulate_events(from_log_levels(levels), config());
  ASSERT_EQ(events.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(static_cast<double>(events.events[i].t), 2000.0 * (i + 1), 1.0);
}

TEST(Simulator, ConstantInputIsSilent) {
  FrameSequence seq;
  seq.width = 8;
  seq.height = 6;
  for (int f = 0; f < 12; ++f) {
    seq.frames.emplace_back(48, 0.37);
    seq.timestamps.push_back(f * 100);
  }
  EXPECT_TRUE(simulate_events(seq, config()).empty());
}

TEST(Simulator, ReversedInputFlipsPolarities) {
  std::vector<double> up, down;
  for (int f = 0; f <= 10; ++f) {
    up.push_back(-1.0 + 0.1 * f);
    down.push_back(-1.0 - 0.1 * f);
  }
  auto a = simulate_events(from_log_levels(up), config());
  auto b = simulate_events(from_log_levels(down), config());
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.events[i].p, -b.events[i].p);
}

TEST(Simulator, MatchesLevelIndexOracleOnRandomWalks) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> step(0.0, 0.15);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> levels{-1.5};
    for (int f = 0; f < 30; ++f) levels.push_back(std::clamp(levels.back() + step(rng), -6.0, 0.0));
    auto events = simulate_events(from_log_levels(levels), config(0.15));
    auto expect = oracle_polarities(levels, 0.15);
    ASSERT_EQ(events.size(), expect.size()) << "trial " << trial;
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_EQ(events.events[i].p, expect[i]);
  }
}

TEST(Simulator, TimestampsSortedAndWithinFrameSpan) {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  FrameSequence seq;
  seq.width = 10;
  seq.height = 7;
  for (int f = 0; f < 8; ++f) {
    std::vector<double> img(70);
    for (double& v : img) v = u(rng);
    seq.frames.push_back(img);
    seq.timestamps.push_back(500 + f * 333);
  }
  for (auto interp : {Interpolation::LinearInTime, Interpolation::None}) {
    auto events = simulate_events(seq, config(0.2, interp));
    ASSERT_FALSE(events.empty());
    EXPECT_NO_THROW(events.validate());
    for (const auto& e : events.events) {
      EXPECT_GT(e.t, 500);
      EXPECT_LE(e.t, 500 + 7 * 333);
      if (interp == Interpolation::None) {
        EXPECT_EQ((e.t - 500) % 333, 0);
      }
    }
  }
}

TEST(Simulator, Errors) {
  FrameSequence one = from_log_levels({-1.0});
  EXPECT_THROW(simulate_events(one, config()), Error);
  try {
    simulate_events(one, config());
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::TooFewFrames);
  }
  FrameSequence bad = from_log_levels({-1.0, -0.5});
  bad.frames[1].push_back(0.3);
  try {
    simulate_events(bad, config());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::DimensionMismatch);
  }
}

TEST(FrameIo, PgmDirectoryAndFrameFileRoundTrip) {
  evg::testing::TempDir dir("frames");
  FrameSequence seq;
  seq.width = 5;
  seq.height = 3;
  for (int f = 0; f < 4; ++f) {
    std::vector<double> img(15);
    for (int i = 0; i < 15; ++i) img[i] = ((f * 15 + i) % 256) / 255.0;
    seq.frames.push_back(img);
    seq.timestamps.push_back(f * 1000 + 7);
  }
  write_pgm_directory(dir / "pgm", seq);
  auto back = read_pgm_directory(dir / "pgm");
  EXPECT_EQ(back.timestamps, seq.timestamps);
  for (std::size_t f = 0; f < 4; ++f)
    for (std::size_t i = 0; i < 15; ++i) EXPECT_NEAR(back.frames[f][i], seq.frames[f][i], 1e-12);
  auto again = parse_frames(write_frames(seq));
  EXPECT_EQ(again.timestamps, seq.timestamps);
  EXPECT_EQ(write_frames(again), write_frames(seq));
}

TEST(Synthetic, SpeedContrastDatasetShape) {
  auto ds = make_synthetic_dataset(speed_contrast_spec(), 5);
  EXPECT_EQ(ds.train.class_names, (std::vector<std::string>{"bar_fast", "bar_slow"}));
  EXPECT_EQ(ds.train.samples.size(), 80u);
  EXPECT_EQ(ds.test.samples.size(), 20u);
  std::size_t counts[2] = {0, 0};
  for (const auto& s : ds.test.samples) ++counts[*s.label];
  EXPECT_EQ(counts[0], 10u);
  EXPECT_EQ(counts[1], 10u);
  for (const auto& s : ds.train.samples) {
    EXPECT_GE(s.size(), 100u);
    EXPECT_NO_THROW(s.validate());
  }
}

TEST(Synthetic, DeterministicInSeed) {
  auto a = make_synthetic_dataset(speed_contrast_spec(6), 9);
  auto b = make_synthetic_dataset(speed_contrast_spec(6), 9);
  auto c = make_synthetic_dataset(speed_contrast_spec(6), 10);
  ASSERT_EQ(a.train.samples.size(), b.train.samples.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.train.samples.size(); ++i) {
    EXPECT_TRUE(evg::testing::same_events(a.train.samples[i], b.train.samples[i]));
    differs |= !evg::testing::same_events(a.train.samples[i], c.train.samples[i]);
  }
  EXPECT_TRUE(differs);
}

TEST(Synthetic, FastBarsProduceEventsFaster) {
  auto ds = make_synthetic_dataset(speed_contrast_spec(20), 3);
  double span[2] = {0, 0};
  for (const auto& s : ds.train.samples) span[*s.label] += static_cast<double>(s.events[99].t - s.events[0].t);
  EXPECT_LT(span[0] * 2, span[1]);
}

TEST(Synthetic, InvalidSpecs) {
  auto spec = speed_contrast_spec();
  spec.classes.pop_back();
  EXPECT_THROW(make_synthetic_dataset(spec, 1), Error);
  spec = speed_contrast_spec();
  spec.classes[0].speed_min = -1;
  EXPECT_THROW(make_synthetic_dataset(spec, 1), Error);
}
