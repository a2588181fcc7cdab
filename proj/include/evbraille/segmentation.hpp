#pragma once

// Offline labeling pipeline: start-window activity profile, moving-average
// smoothing, peak detection, adaptive peak-to-character merging, and masked
// character window extraction for supervised training.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "evbraille/events.hpp"
#include "evbraille/event_io.hpp"
#include "evbraille/sim.hpp"

namespace evb {

struct ActivityProfile {
  std::vector<double> values;     // per-bin event sum S(t) within the start window
  std::uint32_t bin_width_ms = 10;
  std::int64_t origin_ms = 0;
  bool smoothed = false;
};

struct SegmentationParams {
  int start_window_x0 = 20;        // subsampled px; leading edge of the mask
  int start_window_width = 10;
  int smooth_kernel = 7;
  double merge_min_ms = 300.0;
  double merge_max_ms = 450.0;
  double merge_step_ms = 10.0;
  double char_window_ms = 350.0;
  int mask_x_min = 20;
  int mask_x_max = 100;
  double single_col_offset_ms = 280.0;  // paper default; see calibrate_offset
  double prominence_frac = 0.05;        // peak height floor, fraction of profile max
  // Binary-dataset windows: starts relative to the character onset; the
  // 200 ms duration matches the classifier input window.
  std::vector<double> negative_offsets_ms = {-170.0, 340.0};
  double negative_window_ms = 200.0;

  void validate() const {
    if (start_window_width <= 0) throw std::invalid_argument("start window width must be positive");
    if (smooth_kernel < 1 || smooth_kernel % 2 == 0) {
      throw std::invalid_argument("smoothing kernel must be odd and >= 1");
    }
    if (merge_min_ms > merge_max_ms || merge_step_ms <= 0) {
      throw std::invalid_argument("invalid merge window range");
    }
    if (char_window_ms <= 0 || negative_window_ms <= 0) {
      throw std::invalid_argument("window durations must be positive");
    }
  }

  // The pipeline's time constants are calibrated to 8 mm/s scans; the same
  // shapes hold at other speeds once scaled by 8/speed (the classifier input
  // window stays fixed at 200 ms).
  SegmentationParams scaled_to_speed(double speed_mm_s) const {
    SegmentationParams p = *this;
    const double s = 8.0 / speed_mm_s;
    p.merge_min_ms *= s;
    p.merge_max_ms *= s;
    p.merge_step_ms = std::max(p.merge_step_ms * s, 5.0);
    p.char_window_ms = std::max(p.char_window_ms * s, p.negative_window_ms);
    p.single_col_offset_ms *= s;
    for (double& o : p.negative_offsets_ms) o *= s;
    return p;
  }
};

struct CharacterSegment {
  char label = 0;                // 0 when unlabeled
  double onset_ms = 0.0;         // t_max of the detected character
  FrameTensor frames;            // char_window duration, spatially masked
  bool single_column = false;
};

struct NegativeWindow {
  FrameTensor frames;            // negative_window_ms duration, masked
  double start_ms = 0.0;
  char source_label = 0;         // the character whose neighborhood this is
};

class SegmentationMismatchError : public std::runtime_error {
 public:
  SegmentationMismatchError(double best_window_ms, int achieved, int expected)
      : std::runtime_error("segmentation mismatch: best window " +
                           std::to_string(best_window_ms) + " ms yields " +
                           std::to_string(achieved) + " segments, expected " +
                           std::to_string(expected)),
        best_window_ms_(best_window_ms), achieved_(achieved), expected_(expected) {}
  double best_window_ms() const { return best_window_ms_; }
  int achieved() const { return achieved_; }
  int expected() const { return expected_; }

 private:
  double best_window_ms_;
  int achieved_, expected_;
};

// S(t): per-bin event count summed over all channels and rows, restricted to
// x in [start_window_x0, start_window_x0 + start_window_width).
inline ActivityProfile activity_profile(const FrameTensor& frames,
                                        const SegmentationParams& params = {}) {
  params.validate();
  const int x0 = params.start_window_x0;
  const int x1 = x0 + params.start_window_width;
  if (x0 < 0 || x1 > frames.width()) {
    throw std::invalid_argument("start window outside tensor width");
  }
  ActivityProfile p;
  p.bin_width_ms = frames.bin_width_ms();
  p.origin_ms = frames.origin_ms();
  p.values.assign(frames.num_bins(), 0.0);
  for (int t = 0; t < frames.num_bins(); ++t) {
    std::uint64_t s = 0;
    for (int c = 0; c < frames.channels(); ++c) {
      for (int y = 0; y < frames.height(); ++y) {
        const std::uint16_t* row = frames.counts().data() + frames.index(t, c, y, 0);
        for (int x = x0; x < x1; ++x) s += row[x];
      }
    }
    p.values[t] = static_cast<double>(s);
  }
  return p;
}

// Same profile computed directly from the event stream; avoids materializing
// a full-scan tensor. Must match activity_profile(bin_events(...)) exactly.
inline ActivityProfile activity_profile_from_events(const EventStream& stream,
                                                    const BinningConfig& config,
                                                    const SegmentationParams& params = {},
                                                    std::optional<std::int64_t> duration_ms = std::nullopt) {
  params.validate();
  config.validate();
  const std::uint64_t bin_us = static_cast<std::uint64_t>(config.bin_width_ms) * 1000;
  std::int64_t t_bins = 0;
  if (duration_ms.has_value()) {
    t_bins = (*duration_ms + config.bin_width_ms - 1) / config.bin_width_ms;
  } else if (!stream.events.empty()) {
    t_bins = static_cast<std::int64_t>(stream.events.back().t_us / bin_us) + 1;
  }
  ActivityProfile p;
  p.bin_width_ms = config.bin_width_ms;
  p.origin_ms = 0;
  p.values.assign(static_cast<std::size_t>(t_bins), 0.0);
  const int x0 = params.start_window_x0 * static_cast<int>(config.spatial_factor);
  const int x1 = (params.start_window_x0 + params.start_window_width) *
                 static_cast<int>(config.spatial_factor);
  for (const Event& e : stream.events) {
    if (e.x < x0 || e.x >= x1) continue;
    const auto bin = static_cast<std::int64_t>(e.t_us / bin_us);
    if (bin < t_bins) p.values[bin] += 1.0;
  }
  return p;
}

// Centered moving average; shrinking windows at the boundaries so edge bins
// average only over real samples. Linear in the input.
inline ActivityProfile smooth(const ActivityProfile& profile, int kernel = 7) {
  if (kernel < 1 || kernel % 2 == 0) {
    throw std::invalid_argument("smoothing kernel must be odd and >= 1");
  }
  const int n = static_cast<int>(profile.values.size());
  const int half = kernel / 2;
  ActivityProfile out = profile;
  out.smoothed = true;
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - half);
    const int hi = std::min(n - 1, i + half);
    double s = 0.0;
    for (int j = lo; j <= hi; ++j) s += profile.values[j];
    out.values[i] = s / (hi - lo + 1);
  }
  return out;
}

// Strict interior local maxima S(t-1) < S(t) >= S(t+1), kept only if their
// topographic prominence (height above the higher of the two bases reached
// before higher ground on each side) is at least prominence_frac of the
// profile maximum. 0 restores the raw local-maximum rule. Returned as bin
// start times, ascending.
inline std::vector<double> detect_peaks(const ActivityProfile& profile,
                                        double prominence_frac = 0.05) {
  const auto& v = profile.values;
  std::vector<double> peaks;
  if (v.size() < 3) return peaks;
  const double vmax = *std::max_element(v.begin(), v.end());
  const double floor_value = prominence_frac * vmax;
  for (std::size_t i = 1; i + 1 < v.size(); ++i) {
    if (!(v[i - 1] < v[i] && v[i] >= v[i + 1]) || v[i] <= 0) continue;
    double base_l = v[i];
    for (std::size_t j = i; j-- > 0 && v[j] <= v[i];) base_l = std::min(base_l, v[j]);
    double base_r = v[i];
    for (std::size_t j = i + 1; j < v.size() && v[j] <= v[i]; ++j) base_r = std::min(base_r, v[j]);
    if (v[i] - std::max(base_l, base_r) >= floor_value) {
      peaks.push_back(profile.origin_ms + static_cast<double>(i) * profile.bin_width_ms);
    }
  }
  return peaks;
}

inline std::vector<double> merge_peaks_once(const std::vector<double>& peaks, double window_ms) {
  std::vector<double> onsets;
  std::size_t i = 0;
  while (i < peaks.size()) {
    const double anchor = peaks[i];
    onsets.push_back(anchor);
    std::size_t j = i + 1;
    while (j < peaks.size() && peaks[j] - anchor <= window_ms) ++j;
    i = j;
  }
  return onsets;
}

// Expands the merge window from merge_min to merge_max until the greedy
// left-to-right grouping (anchored at each group's first peak) yields exactly
// expected_n groups. Group onset = first peak time.
inline std::vector<double> merge_peaks_adaptive(const std::vector<double>& peaks,
                                                int expected_n,
                                                const SegmentationParams& params = {}) {
  params.validate();
  if (expected_n < 1) throw std::invalid_argument("expected_n must be >= 1");
  double best_w = params.merge_min_ms;
  int best_count = -1;
  for (double w = params.merge_min_ms; w <= params.merge_max_ms + 1e-9;
       w += params.merge_step_ms) {
    const auto onsets = merge_peaks_once(peaks, w);
    const int count = static_cast<int>(onsets.size());
    if (count == expected_n) return onsets;
    if (best_count < 0 || std::abs(count - expected_n) < std::abs(best_count - expected_n)) {
      best_count = count;
      best_w = w;
    }
  }
  throw SegmentationMismatchError(best_w, best_count < 0 ? 0 : best_count, expected_n);
}

// Masked char_window_ms window starting at the onset (single-column
// characters shift the start by single_col_offset_ms). The window is clipped
// at the stream start and zero-padded past the stream end.
inline CharacterSegment extract_segment(const FrameTensor& frames, double onset_ms,
                                        bool single_column,
                                        const SegmentationParams& params = {}) {
  params.validate();
  const std::int64_t bw = frames.bin_width_ms();
  double start = onset_ms;
  if (single_column) start += params.single_col_offset_ms;
  start = std::max(start, static_cast<double>(frames.origin_ms()));
  const std::int64_t duration =
      ((static_cast<std::int64_t>(std::llround(params.char_window_ms)) + bw - 1) / bw) * bw;
  CharacterSegment seg;
  seg.onset_ms = onset_ms;
  seg.single_column = single_column;
  seg.frames = apply_spatial_mask(
      slice_window(frames, static_cast<std::int64_t>(start), duration),
      params.mask_x_min, params.mask_x_max);
  return seg;
}

inline double temporal_mass_center_ms(const FrameTensor& frames) {
  // relative to the window start; bin centers weighted by frame counts
  double total = 0.0, weighted = 0.0;
  const std::size_t plane =
      static_cast<std::size_t>(frames.channels()) * frames.height() * frames.width();
  for (int t = 0; t < frames.num_bins(); ++t) {
    const std::uint16_t* p = frames.counts().data() + t * plane;
    std::uint64_t s = 0;
    for (std::size_t i = 0; i < plane; ++i) s += p[i];
    total += static_cast<double>(s);
    weighted += static_cast<double>(s) * ((t + 0.5) * frames.bin_width_ms());
  }
  if (total == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return weighted / total;
}

struct ScanRecord {
  std::string id;                      // e.g. "SAB_r0_t3"
  FrameTensor frames;                  // whole-scan binned tensor
  std::vector<GroundTruthOnset> truth;
};

struct CalibrationResult {
  double offset_ms = 280.0;
  double residual_ms = 0.0;
  std::string choice = "default";  // "default", "mirrored" or "fitted"
};

// Chooses the single-column window offset so the temporal event-mass center
// of single-column segments best matches the dual-column average. Candidates
// are the paper's +280 ms, its mirror, and a fitted grid.
inline CalibrationResult calibrate_offset(const std::vector<ScanRecord>& scans,
                                          const SegmentationParams& params = {}) {
  params.validate();
  std::vector<double> dual_centers;
  for (const ScanRecord& scan : scans) {
    for (const GroundTruthOnset& g : scan.truth) {
      if (g.single_column) continue;
      const auto seg = extract_segment(scan.frames, g.onset_ms, false, params);
      const double c = temporal_mass_center_ms(seg.frames);
      if (!std::isnan(c)) dual_centers.push_back(c);
    }
  }
  if (dual_centers.empty()) {
    throw std::runtime_error("calibrate_offset: no dual-column reference segments");
  }
  const double dual_mean =
      std::accumulate(dual_centers.begin(), dual_centers.end(), 0.0) / dual_centers.size();

  // NaN when every single-column segment at this offset is empty.
  auto single_center = [&](double offset) {
    SegmentationParams p = params;
    p.single_col_offset_ms = offset;
    double sum = 0.0;
    int n = 0;
    bool any_single = false;
    for (const ScanRecord& scan : scans) {
      for (const GroundTruthOnset& g : scan.truth) {
        if (!g.single_column) continue;
        any_single = true;
        const auto seg = extract_segment(scan.frames, g.onset_ms, true, p);
        const double c = temporal_mass_center_ms(seg.frames);
        if (!std::isnan(c)) {
          sum += c;
          ++n;
        }
      }
    }
    if (!any_single) throw std::runtime_error("calibrate_offset: no single-column characters");
    return n == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / n;
  };

  CalibrationResult best;
  best.residual_ms = std::numeric_limits<double>::infinity();
  auto consider = [&](double offset, const char* choice) {
    const double c = single_center(offset);
    if (std::isnan(c)) return;
    const double res = std::abs(c - dual_mean);
    if (res < best.residual_ms) best = {offset, res, choice};
  };
  consider(params.single_col_offset_ms, "default");
  consider(-params.single_col_offset_ms, "mirrored");
  for (double off = -350.0; off <= 350.0 + 1e-9; off += 10.0) consider(off, "fitted");
  if (!std::isfinite(best.residual_ms)) {
    throw std::runtime_error("calibrate_offset: no events in single-column segments");
  }
  return best;
}

struct RejectedScan {
  std::string id;
  std::string reason;
};

struct LabeledDataset {
  std::vector<CharacterSegment> characters;  // labeled positives
  std::vector<NegativeWindow> negatives;     // two per character
  std::vector<RejectedScan> rejected;
};

// Runs the full labeling pipeline over whole-scan tensors. Streams whose
// detected segment count cannot be matched to the ground-truth count are
// rejected and logged, not fatal.
inline LabeledDataset build_labeled_dataset(const std::vector<ScanRecord>& scans,
                                            const SegmentationParams& params = {}) {
  params.validate();
  LabeledDataset out;
  for (const ScanRecord& scan : scans) {
    if (scan.truth.empty()) {
      out.rejected.push_back({scan.id, "no ground truth entries"});
      continue;
    }
    const auto raw = activity_profile(scan.frames, params);
    const auto smoothed = smooth(raw, params.smooth_kernel);
    const auto peaks = detect_peaks(smoothed, params.prominence_frac);
    std::vector<double> onsets;
    try {
      onsets = merge_peaks_adaptive(peaks, static_cast<int>(scan.truth.size()), params);
    } catch (const SegmentationMismatchError& e) {
      out.rejected.push_back({scan.id, e.what()});
      continue;
    }
    for (std::size_t i = 0; i < onsets.size(); ++i) {
      const bool single = is_single_column(encode_char(scan.truth[i].ch));
      CharacterSegment seg = extract_segment(scan.frames, onsets[i], single, params);
      seg.label = scan.truth[i].ch;
      out.characters.push_back(std::move(seg));

      for (double off : params.negative_offsets_ms) {
        const double start =
            std::max(onsets[i] + off, static_cast<double>(scan.frames.origin_ms()));
        const std::int64_t bw = scan.frames.bin_width_ms();
        const std::int64_t dur =
            ((static_cast<std::int64_t>(std::llround(params.negative_window_ms)) + bw - 1) / bw) * bw;
        NegativeWindow neg;
        neg.start_ms = start;
        neg.source_label = scan.truth[i].ch;
        neg.frames = apply_spatial_mask(
            slice_window(scan.frames, static_cast<std::int64_t>(start), dur),
            params.mask_x_min, params.mask_x_max);
        out.negatives.push_back(std::move(neg));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Segment tensor serialization (.evb.seg): magic "SEG1", little-endian u32
// dims T,C,H,W, u32 bin width, i64 origin, then u16 counts.

inline void write_segment_tensor(const FrameTensor& frames, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write("SEG1", 4);
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(frames.num_bins()));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(frames.channels()));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(frames.height()));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(frames.width()));
  detail::write_le<std::uint32_t>(os, frames.bin_width_ms());
  detail::write_le<std::int64_t>(os, frames.origin_ms());
  for (std::uint16_t v : frames.counts()) detail::write_le<std::uint16_t>(os, v);
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline FrameTensor read_segment_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "SEG1", 4) != 0) {
    throw std::runtime_error(path + ": bad magic, not a SEG1 file");
  }
  const auto t = detail::read_le<std::uint32_t>(is);
  const auto c = detail::read_le<std::uint32_t>(is);
  const auto h = detail::read_le<std::uint32_t>(is);
  const auto w = detail::read_le<std::uint32_t>(is);
  const auto bw = detail::read_le<std::uint32_t>(is);
  const auto origin = detail::read_le<std::int64_t>(is);
  FrameTensor frames(static_cast<int>(t), static_cast<int>(c), static_cast<int>(h),
                     static_cast<int>(w), bw, origin);
  for (auto& v : frames.counts()) v = detail::read_le<std::uint16_t>(is);
  return frames;
}

// Dataset directory: one .evb.seg per segment plus manifest.csv with columns
// file,label,onset_ms,single_column,positive.
inline void write_dataset(const LabeledDataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "manifest.csv");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir);
  manifest << "file,label,onset_ms,single_column,positive\n";
  char name[64];
  int idx = 0;
  for (const CharacterSegment& seg : ds.characters) {
    std::snprintf(name, sizeof(name), "seg_%05d_%c.evb.seg", idx++, seg.label);
    write_segment_tensor(seg.frames, (fs::path(dir) / name).string());
    manifest << name << ',' << seg.label << ',' << seg.onset_ms << ','
             << (seg.single_column ? 1 : 0) << ",1\n";
  }
  for (const NegativeWindow& neg : ds.negatives) {
    std::snprintf(name, sizeof(name), "seg_%05d_NEG.evb.seg", idx++);
    write_segment_tensor(neg.frames, (fs::path(dir) / name).string());
    manifest << name << ",," << neg.start_ms << ",0,0\n";
  }
  if (!manifest) throw std::runtime_error("manifest write failed in " + dir);
}

inline LabeledDataset read_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream manifest(fs::path(dir) / "manifest.csv");
  if (!manifest) throw std::runtime_error("missing manifest.csv in " + dir);
  std::string line;
  if (!std::getline(manifest, line) || line != "file,label,onset_ms,single_column,positive") {
    throw std::runtime_error(dir + ": malformed dataset manifest header");
  }
  LabeledDataset ds;
  std::size_t line_no = 1;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string file, label, onset, single, positive;
    if (!std::getline(ss, file, ',') || !std::getline(ss, label, ',') ||
        !std::getline(ss, onset, ',') || !std::getline(ss, single, ',') ||
        !std::getline(ss, positive, ',')) {
      throw std::runtime_error(dir + ": manifest line " + std::to_string(line_no) +
                               " malformed");
    }
    FrameTensor frames = read_segment_tensor((fs::path(dir) / file).string());
    if (positive == "1") {
      CharacterSegment seg;
      if (label.size() != 1 || label[0] < 'A' || label[0] > 'Z') {
        throw std::runtime_error(dir + ": manifest line " + std::to_string(line_no) +
                                 ": positive sample needs an A-Z label");
      }
      seg.label = label[0];
      seg.onset_ms = std::stod(onset);
      seg.single_column = (single == "1");
      seg.frames = std::move(frames);
      ds.characters.push_back(std::move(seg));
    } else {
      NegativeWindow neg;
      neg.start_ms = std::stod(onset);
      neg.frames = std::move(frames);
      ds.negatives.push_back(std::move(neg));
    }
  }
  return ds;
}

}  // namespace evb
