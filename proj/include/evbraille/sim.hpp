#pragma once

// Synthetic event-stream generator for sliding a marker-free gel sensor
// across a Braille board.
//
// Geometry: the sensor images a 40 x 30 mm patch at 16 px/mm (640x480).
// In the sensor frame the board moves in +x; a dot at board coordinate d
// enters the gel contact region (image x = contact_enter_mm) at
// t = (d + lead_mm) / speed and leaves footprint_width_mm later. The contact
// entry edge coincides with the segmentation start window so that
// ground-truth onsets mean "first column enters the start-window x-band".
//
// Per dot crossing, an expected base_rate * depth_gain(depth) * exposure
// events are emitted, split into an ON-heavy burst at contact entry, a
// uniform sliding phase (ON at the dot's leading edge, OFF at the trailing
// edge), and an OFF-heavy burst at contact exit, all with Gaussian spatial
// spread. exposure = min(1, 8/speed) models integration loss at speed.

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "evbraille/board.hpp"
#include "evbraille/events.hpp"
#include "evbraille/rng.hpp"

namespace evb {

struct ScanConfig {
  double speed_mm_s = 8.0;       // paper set {8,16,24,32}; any positive value
  double depth_mm = 1.5;         // calibrated range [0.2, 1.5]
  int row = 0;
  std::uint64_t seed = 0;
  double px_per_mm = 16.0;
  double footprint_width_mm = 12.0;  // gel contact region along x
  double lead_mm = 4.0;              // scan starts this far before the row origin

  void validate() const {
    if (speed_mm_s <= 0) throw std::invalid_argument("speed must be positive");
    if (px_per_mm <= 0 || footprint_width_mm <= 0 || lead_mm < 0) {
      throw std::invalid_argument("scan geometry must be positive");
    }
  }
};

struct GelResponseModel {
  // Expected events per dot crossing at the 0.2 mm reference depth.
  double base_rate = 210.0;
  // Monotone depth -> gain map; interpolated piecewise-linearly and clamped.
  std::vector<std::pair<double, double>> depth_anchors = {
      {0.2, 1.00}, {0.6, 1.45}, {1.0, 1.71}, {1.5, 1.91}};
  double psf_radius_px = 3.0;    // spatial spread of events around the dot image

  // Split of a crossing's events between contact entry, sliding, and exit.
  double entry_fraction = 0.65;
  double slide_fraction = 0.20;
  double exit_fraction = 0.15;
  // Temporal sharpness of the entry/exit bursts, expressed as travel distance.
  double edge_sigma_mm = 0.25;
  double edge_center_offset_mm = -0.05;
  // ON probability per phase (leading edge compresses, trailing releases).
  double on_fraction_entry = 0.85;
  double on_fraction_slide = 0.5;
  double on_fraction_exit = 0.15;
  // Per-dot response variability (manufacturing tolerance).
  double dot_gain_sigma = 0.10;

  void validate() const {
    if (base_rate <= 0) throw std::invalid_argument("base_rate must be positive");
    if (depth_anchors.size() < 2) throw std::invalid_argument("need at least two depth anchors");
    for (std::size_t i = 1; i < depth_anchors.size(); ++i) {
      if (depth_anchors[i].first <= depth_anchors[i - 1].first ||
          depth_anchors[i].second < depth_anchors[i - 1].second) {
        throw std::invalid_argument("depth anchors must be increasing in depth, non-decreasing in gain");
      }
    }
  }
};

struct NoiseModel {
  double background_rate = 0.0;   // events / s / pixel
  double hot_pixel_prob = 0.0;    // probability a pixel is hot for the scan
  double hot_pixel_rate = 100.0;  // events / s for a hot pixel
  double y_jitter_sigma_mm = 0.3; // per-scan vertical mounting offset

  void validate() const {
    if (background_rate < 0 || hot_pixel_prob < 0 || hot_pixel_prob > 1 ||
        hot_pixel_rate < 0 || y_jitter_sigma_mm < 0) {
      throw std::invalid_argument("noise parameters out of range");
    }
  }
};

constexpr int kSensorWidth = 640;
constexpr int kSensorHeight = 480;
constexpr double kContactEnterMm = 5.0;   // image x of the contact leading edge
constexpr double kImageCenterYMm = 15.0;  // cell center maps to the sensor midline

// Piecewise-linear interpolation through the anchors, clamped outside them.
inline double depth_gain(const GelResponseModel& gel, double depth_mm) {
  if (depth_mm <= 0) throw std::invalid_argument("depth must be positive");
  gel.validate();
  const auto& a = gel.depth_anchors;
  if (depth_mm <= a.front().first) return a.front().second;
  if (depth_mm >= a.back().first) return a.back().second;
  for (std::size_t i = 1; i < a.size(); ++i) {
    if (depth_mm <= a[i].first) {
      const double t = (depth_mm - a[i - 1].first) / (a[i].first - a[i - 1].first);
      return a[i - 1].second + t * (a[i].second - a[i - 1].second);
    }
  }
  return a.back().second;
}

struct GroundTruthOnset {
  char ch = 'A';
  double onset_ms = 0.0;    // first column enters the start-window x-band
  bool single_column = false;
};

inline std::vector<GroundTruthOnset> ground_truth_onsets(const BoardLayout& board,
                                                         const ScanConfig& cfg) {
  cfg.validate();
  if (cfg.row < 0 || cfg.row >= static_cast<int>(board.rows.size())) {
    throw std::out_of_range("row index out of range");
  }
  std::vector<GroundTruthOnset> out;
  const std::string& row = board.rows[cfg.row];
  for (int i = 0; i < static_cast<int>(row.size()); ++i) {
    if (row[i] == ' ') continue;
    const double x_mm = board.cell_offset(cfg.row, i) * board.cell_pitch_mm;
    GroundTruthOnset g;
    g.ch = row[i];
    g.onset_ms = 1000.0 * (x_mm + cfg.lead_mm) / cfg.speed_mm_s;
    g.single_column = is_single_column(encode_char(row[i]));
    out.push_back(g);
  }
  return out;
}

// Deterministic given (board, cfg, gel, noise): identical seeds give
// bit-identical streams. All emitted events are within sensor bounds.
inline EventStream simulate_scan(const BoardLayout& board, const ScanConfig& cfg,
                                 const GelResponseModel& gel = {},
                                 const NoiseModel& noise = {}) {
  cfg.validate();
  gel.validate();
  noise.validate();
  board.validate();
  if (cfg.row < 0 || cfg.row >= static_cast<int>(board.rows.size())) {
    throw std::out_of_range("row index out of range");
  }

  std::mt19937_64 rng(detail::mix_seed(cfg.seed, static_cast<std::uint64_t>(cfg.row)));
  std::normal_distribution<double> unit_normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const double v = cfg.speed_mm_s;
  const double exposure = std::min(1.0, 8.0 / v);
  const double gain = depth_gain(gel, std::clamp(cfg.depth_mm, 1e-6, 1e9));
  const double y_offset_mm = unit_normal(rng) * noise.y_jitter_sigma_mm;
  const double dot_r_mm = board.dot_diameter_mm / 2.0;

  const std::string& row_text = board.rows[cfg.row];
  double row_extent_mm = 0.0;

  EventStream stream;
  stream.sensor_width = kSensorWidth;
  stream.sensor_height = kSensorHeight;

  auto emit = [&](double t_s, double x_mm, double y_mm, bool on) {
    if (t_s < 0) return;
    const int x = static_cast<int>(std::lround(x_mm * cfg.px_per_mm + gel.psf_radius_px * unit_normal(rng)));
    const int y = static_cast<int>(std::lround(y_mm * cfg.px_per_mm + gel.psf_radius_px * unit_normal(rng)));
    if (x < 0 || x >= kSensorWidth || y < 0 || y >= kSensorHeight) return;
    stream.events.push_back(Event{static_cast<std::uint64_t>(std::llround(t_s * 1e6)),
                                  static_cast<std::uint16_t>(x),
                                  static_cast<std::uint16_t>(y),
                                  on ? Polarity::On : Polarity::Off});
  };

  for (int i = 0; i < static_cast<int>(row_text.size()); ++i) {
    if (row_text[i] == ' ') continue;
    for (const auto& [dot_x_mm, dot_y_mm] : dot_positions(board, cfg.row, i)) {
      row_extent_mm = std::max(row_extent_mm, dot_x_mm);
      const double y_mm = kImageCenterYMm + (dot_y_mm - board.dot_spacing_mm) + y_offset_mm;
      const double dot_gain = std::max(0.05, 1.0 + unit_normal(rng) * gel.dot_gain_sigma);
      const double lambda = gel.base_rate * gain * exposure * dot_gain;
      const double t_enter = (dot_x_mm + cfg.lead_mm) / v;
      const double t_exit = (dot_x_mm + cfg.lead_mm + cfg.footprint_width_mm) / v;
      // image x of this dot at time t: kContactEnterMm + v * (t - t_enter)

      auto burst = [&](double t_edge, double frac, double on_frac) {
        std::poisson_distribution<int> n_events(lambda * frac);
        const int n = n_events(rng);
        for (int k = 0; k < n; ++k) {
          const double dt = (gel.edge_center_offset_mm + gel.edge_sigma_mm * unit_normal(rng)) / v;
          const double t = t_edge + dt;
          const bool on = unit(rng) < on_frac;
          const double x_mm = kContactEnterMm + v * (t - t_enter) + (on ? dot_r_mm : -dot_r_mm);
          emit(t, x_mm, y_mm, on);
        }
      };

      burst(t_enter, gel.entry_fraction, gel.on_fraction_entry);

      std::poisson_distribution<int> n_slide(lambda * gel.slide_fraction);
      const int n = n_slide(rng);
      for (int k = 0; k < n; ++k) {
        const double u = unit(rng);
        const double t = t_enter + u * (t_exit - t_enter);
        const bool on = unit(rng) < gel.on_fraction_slide;
        const double x_mm = kContactEnterMm + u * cfg.footprint_width_mm + (on ? dot_r_mm : -dot_r_mm);
        emit(t, x_mm, y_mm, on);
      }

      burst(t_exit, gel.exit_fraction, gel.on_fraction_exit);
    }
  }

  const double duration_s =
      (row_extent_mm + cfg.lead_mm + cfg.footprint_width_mm) / v + 0.2;

  if (noise.background_rate > 0) {
    const double mean = noise.background_rate * kSensorWidth * kSensorHeight * duration_s;
    std::poisson_distribution<long> n_bg(mean);
    const long n = n_bg(rng);
    for (long k = 0; k < n; ++k) {
      stream.events.push_back(Event{
          static_cast<std::uint64_t>(std::llround(unit(rng) * duration_s * 1e6)),
          static_cast<std::uint16_t>(unit(rng) * kSensorWidth),
          static_cast<std::uint16_t>(unit(rng) * kSensorHeight),
          unit(rng) < 0.5 ? Polarity::On : Polarity::Off});
    }
  }

  if (noise.hot_pixel_prob > 0) {
    std::binomial_distribution<int> n_hot(kSensorWidth * kSensorHeight, noise.hot_pixel_prob);
    const int n = n_hot(rng);
    for (int k = 0; k < n; ++k) {
      const auto px = static_cast<std::uint16_t>(unit(rng) * kSensorWidth);
      const auto py = static_cast<std::uint16_t>(unit(rng) * kSensorHeight);
      std::poisson_distribution<int> n_ev(noise.hot_pixel_rate * duration_s);
      const int m = n_ev(rng);
      for (int j = 0; j < m; ++j) {
        stream.events.push_back(Event{
            static_cast<std::uint64_t>(std::llround(unit(rng) * duration_s * 1e6)),
            px, py, unit(rng) < 0.5 ? Polarity::On : Polarity::Off});
      }
    }
  }

  std::sort(stream.events.begin(), stream.events.end(), event_time_order);
  return stream;
}

}  // namespace evb
