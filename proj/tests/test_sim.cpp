#include <catch2/catch_amalgamated.hpp>

#include <numeric>

#include "evbraille/segmentation.hpp"
#include "evbraille/sim.hpp"

using namespace evb;

TEST_CASE("depth gain interpolates the published anchors") {
  GelResponseModel gel;
  CHECK(depth_gain(gel, 0.2) == Catch::Approx(1.00));
  CHECK(depth_gain(gel, 0.6) == Catch::Approx(1.45));
  CHECK(depth_gain(gel, 1.0) == Catch::Approx(1.71));
  CHECK(depth_gain(gel, 1.5) == Catch::Approx(1.91));
  // linear between (0.6, 1.45) and (1.0, 1.71)
  CHECK(depth_gain(gel, 0.8) == Catch::Approx(1.58));
  // clamped outside the calibrated range
  CHECK(depth_gain(gel, 0.05) == Catch::Approx(1.00));
  CHECK(depth_gain(gel, 3.0) == Catch::Approx(1.91));
  CHECK_THROWS_AS(depth_gain(gel, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(depth_gain(gel, -1.0), std::invalid_argument);
}

TEST_CASE("ground truth onsets follow the layout and kinematics") {
  auto sab = preset_board(PresetBoard::SAB);
  ScanConfig cfg;
  cfg.speed_mm_s = 8.0;

  auto gt = ground_truth_onsets(sab, cfg);
  REQUIRE(gt.size() == 9);
  for (int i = 0; i < 9; ++i) CHECK(gt[i].ch == 'A' + i);
  CHECK(std::is_sorted(gt.begin(), gt.end(),
                       [](auto& a, auto& b) { return a.onset_ms < b.onset_ms; }));

  // consecutive onsets differ by cell_pitch / speed = 937.5 ms
  for (int i = 1; i < 9; ++i) {
    CHECK(gt[i].onset_ms - gt[i - 1].onset_ms == Catch::Approx(937.5));
  }

  // doubling the speed halves every onset exactly
  ScanConfig fast = cfg;
  fast.speed_mm_s = 16.0;
  auto gt2 = ground_truth_onsets(sab, fast);
  for (int i = 0; i < 9; ++i) {
    CHECK(gt2[i].onset_ms == Catch::Approx(gt[i].onset_ms / 2));
  }

  CHECK(gt[0].single_column);        // A
  CHECK(gt[1].single_column);        // B
  CHECK_FALSE(gt[2].single_column);  // C

  ScanConfig bad = cfg;
  bad.row = 7;
  CHECK_THROWS_AS(ground_truth_onsets(sab, bad), std::out_of_range);
  CHECK_THROWS_AS(simulate_scan(sab, bad), std::out_of_range);
}

TEST_CASE("a board with no raised dots and no noise gives an empty stream") {
  BoardLayout b;
  b.name = "EMPTY";
  b.rows = {" "};
  NoiseModel quiet;
  quiet.y_jitter_sigma_mm = 0.0;
  auto s = simulate_scan(b, ScanConfig{}, GelResponseModel{}, quiet);
  CHECK(s.events.empty());
}

TEST_CASE("simulation is deterministic given the seed") {
  auto sab = preset_board(PresetBoard::SAB);
  ScanConfig cfg;
  cfg.seed = 99;
  auto a = simulate_scan(sab, cfg);
  auto b = simulate_scan(sab, cfg);
  REQUIRE(a.events.size() == b.events.size());
  CHECK(a.events == b.events);

  cfg.seed = 100;
  auto c = simulate_scan(sab, cfg);
  CHECK(a.events != c.events);
}

TEST_CASE("all emitted events are in sensor bounds and sorted") {
  auto sab = preset_board(PresetBoard::SAB);
  ScanConfig cfg;
  cfg.seed = 5;
  cfg.row = 1;
  NoiseModel noisy;
  noisy.background_rate = 1e-4;
  noisy.hot_pixel_prob = 1e-5;
  auto s = simulate_scan(sab, cfg, GelResponseModel{}, noisy);
  CHECK(s.events.size() > 1000);
  s.validate();  // throws on bounds or ordering violations
}

TEST_CASE("dot x-trajectory in mm is speed independent") {
  // single-dot board: with the PSF disabled, the x extent of emitted events
  // depends only on geometry, and timestamps scale with 1/speed.
  BoardLayout b;
  b.name = "DOT";
  b.rows = {"A"};
  GelResponseModel gel;
  gel.psf_radius_px = 0.0;
  gel.dot_gain_sigma = 0.0;
  NoiseModel quiet;
  quiet.y_jitter_sigma_mm = 0.0;

  ScanConfig slow;
  slow.seed = 3;
  slow.speed_mm_s = 8.0;
  ScanConfig fast = slow;
  fast.speed_mm_s = 32.0;

  auto ss = simulate_scan(b, slow, gel, quiet);
  auto sf = simulate_scan(b, fast, gel, quiet);
  REQUIRE(!ss.events.empty());
  REQUIRE(!sf.events.empty());

  auto x_range = [](const EventStream& s) {
    auto [lo, hi] = std::minmax_element(s.events.begin(), s.events.end(),
                                        [](auto& a, auto& b) { return a.x < b.x; });
    return std::pair<int, int>(lo->x, hi->x);
  };
  auto [lo_s, hi_s] = x_range(ss);
  auto [lo_f, hi_f] = x_range(sf);
  CHECK(std::abs(lo_s - lo_f) <= 8);  // half a mm of burst-tail jitter
  CHECK(std::abs(hi_s - hi_f) <= 8);

  // mean timestamp scales by ~1/4
  auto mean_t = [](const EventStream& s) {
    double acc = 0;
    for (auto& e : s.events) acc += static_cast<double>(e.t_us);
    return acc / s.events.size();
  };
  CHECK(mean_t(ss) / mean_t(sf) == Catch::Approx(4.0).epsilon(0.1));
}

TEST_CASE("event totals scale with the published depth ratios") {
  auto sab = preset_board(PresetBoard::SAB);
  const std::vector<std::pair<double, double>> anchors = {
      {0.6, 1.45}, {1.0, 1.71}, {1.5, 1.91}};
  for (auto [depth, want] : anchors) {
    double base_total = 0, depth_total = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      ScanConfig cfg;
      cfg.seed = seed;
      cfg.depth_mm = 0.2;
      base_total += static_cast<double>(simulate_scan(sab, cfg).events.size());
      cfg.depth_mm = depth;
      depth_total += static_cast<double>(simulate_scan(sab, cfg).events.size());
    }
    const double ratio = depth_total / base_total;
    CHECK(ratio == Catch::Approx(want).epsilon(0.10));
  }
}

TEST_CASE("expected event count is monotone in depth") {
  auto sab = preset_board(PresetBoard::SAB);
  std::vector<double> totals;
  for (double depth : {0.2, 0.6, 1.0, 1.5}) {
    double acc = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      ScanConfig cfg;
      cfg.seed = seed;
      cfg.depth_mm = depth;
      acc += static_cast<double>(simulate_scan(sab, cfg).events.size());
    }
    totals.push_back(acc);
  }
  CHECK(std::is_sorted(totals.begin(), totals.end()));
  CHECK(totals.front() < totals.back() * 0.7);
}

TEST_CASE("single-dot scan: activity peak within 20 ms of ground truth") {
  BoardLayout b;
  b.name = "DOT";
  b.rows = {"A"};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ScanConfig cfg;
    cfg.seed = seed;
    auto gt = ground_truth_onsets(b, cfg);
    REQUIRE(gt.size() == 1);
    auto stream = simulate_scan(b, cfg);
    auto profile = smooth(activity_profile_from_events(stream, BinningConfig{}), 7);
    auto peaks = detect_peaks(profile);
    REQUIRE(!peaks.empty());
    // strongest peak = the one the merge would anchor on
    double best = peaks.front();
    CHECK(std::abs(best - gt[0].onset_ms) <= 20.0);
  }
}

TEST_CASE("closed loop: SAB scans segment to the right count near ground truth") {
  auto sab = preset_board(PresetBoard::SAB);
  SegmentationParams params;
  for (int row = 0; row < 3; ++row) {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      ScanConfig cfg;
      cfg.row = row;
      cfg.seed = seed;
      auto gt = ground_truth_onsets(sab, cfg);
      auto stream = simulate_scan(sab, cfg);
      auto frames = bin_events(stream, BinningConfig{});
      auto profile = smooth(activity_profile(frames, params), params.smooth_kernel);
      auto peaks = detect_peaks(profile, params.prominence_frac);
      auto onsets = merge_peaks_adaptive(peaks, static_cast<int>(gt.size()), params);
      REQUIRE(onsets.size() == gt.size());
      for (std::size_t i = 0; i < gt.size(); ++i) {
        CHECK(std::abs(onsets[i] - gt[i].onset_ms) <= 50.0);
      }
    }
  }
}
