#pragma once

// Event-stream representation and time/space discretization for the
// neuromorphic tactile pipeline: asynchronous (t, x, y, polarity) events
// binned into dense count tensors, plus windowing and spatial masking.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace evb {

enum class Polarity : std::uint8_t { Off = 0, On = 1 };

struct Event {
  std::uint64_t t_us = 0;  // microseconds since stream start
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  Polarity polarity = Polarity::On;

  friend bool operator==(const Event&, const Event&) = default;
};

inline bool event_time_order(const Event& a, const Event& b) {
  if (a.t_us != b.t_us) return a.t_us < b.t_us;
  if (a.x != b.x) return a.x < b.x;
  if (a.y != b.y) return a.y < b.y;
  return static_cast<int>(a.polarity) < static_cast<int>(b.polarity);
}

struct EventStream {
  std::uint16_t sensor_width = 640;
  std::uint16_t sensor_height = 480;
  std::vector<Event> events;  // non-decreasing in t, all within sensor bounds

  // Throws std::invalid_argument on the first violated invariant.
  void validate() const {
    std::uint64_t prev = 0;
    for (std::size_t i = 0; i < events.size(); ++i) {
      const Event& e = events[i];
      if (e.x >= sensor_width || e.y >= sensor_height) {
        throw std::invalid_argument(
            "event " + std::to_string(i) + " at (" + std::to_string(e.x) +
            "," + std::to_string(e.y) + ") outside sensor bounds " +
            std::to_string(sensor_width) + "x" + std::to_string(sensor_height));
      }
      if (e.t_us < prev) {
        throw std::invalid_argument("event " + std::to_string(i) +
                                    " breaks non-decreasing time order");
      }
      prev = e.t_us;
    }
  }

  double duration_ms() const {
    return events.empty() ? 0.0 : static_cast<double>(events.back().t_us) / 1000.0;
  }
};

enum class PolarityMode { Merged, Split };

struct BinningConfig {
  std::uint32_t bin_width_ms = 10;
  std::uint32_t spatial_factor = 4;
  PolarityMode polarity_mode = PolarityMode::Split;

  int channels() const { return polarity_mode == PolarityMode::Split ? 2 : 1; }

  void validate() const {
    if (bin_width_ms == 0) throw std::invalid_argument("bin_width_ms must be positive");
    if (spatial_factor == 0) throw std::invalid_argument("spatial_factor must be positive");
  }
};

// Dense T x C x H x W volume of per-bin event counts. Counts are exact
// integers; a checked u16 cell keeps a full 25 s scan under 200 MB.
class FrameTensor {
 public:
  FrameTensor() = default;
  FrameTensor(int t, int c, int h, int w, std::uint32_t bin_width_ms,
              std::int64_t origin_ms = 0)
      : t_(t), c_(c), h_(h), w_(w), bin_width_ms_(bin_width_ms),
        origin_ms_(origin_ms),
        counts_(static_cast<std::size_t>(t) * c * h * w, 0) {
    if (t < 0 || c <= 0 || h <= 0 || w <= 0) {
      throw std::invalid_argument("FrameTensor dimensions must be positive");
    }
  }

  int num_bins() const { return t_; }
  int channels() const { return c_; }
  int height() const { return h_; }
  int width() const { return w_; }
  std::uint32_t bin_width_ms() const { return bin_width_ms_; }
  std::int64_t origin_ms() const { return origin_ms_; }
  std::int64_t duration_ms() const {
    return static_cast<std::int64_t>(t_) * bin_width_ms_;
  }

  std::size_t index(int t, int c, int y, int x) const {
    return ((static_cast<std::size_t>(t) * c_ + c) * h_ + y) * w_ + x;
  }

  std::uint16_t at(int t, int c, int y, int x) const {
    return counts_[index(t, c, y, x)];
  }

  void set(int t, int c, int y, int x, std::uint16_t v) {
    counts_[index(t, c, y, x)] = v;
  }

  void increment(int t, int c, int y, int x) {
    std::uint16_t& cell = counts_[index(t, c, y, x)];
    if (cell == std::numeric_limits<std::uint16_t>::max()) {
      throw std::overflow_error("FrameTensor cell count overflow (u16)");
    }
    ++cell;
  }

  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (std::uint16_t v : counts_) s += v;
    return s;
  }

  const std::vector<std::uint16_t>& counts() const { return counts_; }
  std::vector<std::uint16_t>& counts() { return counts_; }

  friend bool operator==(const FrameTensor&, const FrameTensor&) = default;

 private:
  int t_ = 0, c_ = 1, h_ = 0, w_ = 0;
  std::uint32_t bin_width_ms_ = 10;
  std::int64_t origin_ms_ = 0;
  std::vector<std::uint16_t> counts_;
};

// Counts events per (time bin, polarity channel, subsampled pixel).
// Bins are half-open [k*dt, (k+1)*dt); boundary events go to the later bin.
// Spatial subsampling SUMS counts over each factor x factor block, so the
// tensor total equals the number of events (exact conservation).
// Out-of-bounds events are a hard error, never dropped.
//
// With no declared duration, T covers the last event; an empty stream then
// yields T = 0. Events at or beyond a declared duration are an error.
inline FrameTensor bin_events(const EventStream& stream, const BinningConfig& config,
                              std::optional<std::int64_t> duration_ms = std::nullopt) {
  config.validate();
  if (stream.sensor_width % config.spatial_factor != 0 ||
      stream.sensor_height % config.spatial_factor != 0) {
    throw std::invalid_argument("spatial_factor must divide sensor dimensions");
  }
  const std::uint64_t bin_us = static_cast<std::uint64_t>(config.bin_width_ms) * 1000;

  std::int64_t t_bins = 0;
  if (duration_ms.has_value()) {
    if (*duration_ms < 0) throw std::invalid_argument("duration_ms must be non-negative");
    t_bins = (*duration_ms + config.bin_width_ms - 1) / config.bin_width_ms;
  } else if (!stream.events.empty()) {
    t_bins = static_cast<std::int64_t>(stream.events.back().t_us / bin_us) + 1;
  }

  const int w = stream.sensor_width / config.spatial_factor;
  const int h = stream.sensor_height / config.spatial_factor;
  const int c = config.channels();
  FrameTensor out(static_cast<int>(t_bins), c, h, w, config.bin_width_ms, 0);

  std::uint64_t prev_t = 0;
  for (std::size_t i = 0; i < stream.events.size(); ++i) {
    const Event& e = stream.events[i];
    if (e.x >= stream.sensor_width || e.y >= stream.sensor_height) {
      throw std::invalid_argument("event " + std::to_string(i) +
                                  " outside sensor bounds");
    }
    if (e.t_us < prev_t) {
      throw std::invalid_argument("event stream not sorted by time");
    }
    prev_t = e.t_us;
    const std::int64_t bin = static_cast<std::int64_t>(e.t_us / bin_us);
    if (bin >= t_bins) {
      throw std::invalid_argument("event " + std::to_string(i) +
                                  " beyond declared duration");
    }
    const int ch = (c == 1) ? 0 : static_cast<int>(e.polarity);
    out.increment(static_cast<int>(bin), ch, e.y / config.spatial_factor,
                  e.x / config.spatial_factor);
  }
  return out;
}

// Extracts [start, start+duration) as a tensor of duration/bin_width bins.
// start is rounded down to the containing bin; bins past the source end are
// zero-padded. The result keeps absolute time via origin_ms.
inline FrameTensor slice_window(const FrameTensor& frames, std::int64_t start_ms,
                                std::int64_t duration_ms) {
  if (start_ms < 0) throw std::invalid_argument("slice_window: negative start");
  const std::int64_t bw = frames.bin_width_ms();
  if (duration_ms <= 0 || duration_ms % bw != 0) {
    throw std::invalid_argument("slice_window: duration must be a positive multiple of bin width");
  }
  const std::int64_t rel = start_ms - frames.origin_ms();
  if (rel < 0) throw std::invalid_argument("slice_window: start precedes tensor origin");
  const std::int64_t first_bin = rel / bw;  // round down to bin boundary
  const int n_bins = static_cast<int>(duration_ms / bw);

  FrameTensor out(n_bins, frames.channels(), frames.height(), frames.width(),
                  static_cast<std::uint32_t>(bw), frames.origin_ms() + first_bin * bw);
  const std::size_t plane = static_cast<std::size_t>(frames.channels()) *
                            frames.height() * frames.width();
  for (int t = 0; t < n_bins; ++t) {
    const std::int64_t src = first_bin + t;
    if (src >= frames.num_bins()) break;  // zero padding past the end
    std::copy_n(frames.counts().begin() + static_cast<std::size_t>(src) * plane, plane,
                out.counts().begin() + static_cast<std::size_t>(t) * plane);
  }
  return out;
}

// Zeroes every cell with x outside the half-open band [x_min, x_max).
inline FrameTensor apply_spatial_mask(const FrameTensor& frames, int x_min, int x_max) {
  if (x_min < 0 || x_min >= x_max || x_max > frames.width()) {
    throw std::invalid_argument("apply_spatial_mask: invalid bounds [" +
                                std::to_string(x_min) + "," + std::to_string(x_max) + ")");
  }
  FrameTensor out = frames;
  const int w = frames.width();
  const std::size_t rows = out.counts().size() / w;
  for (std::size_t r = 0; r < rows; ++r) {
    std::uint16_t* row = out.counts().data() + r * w;
    std::fill(row, row + x_min, 0);
    std::fill(row + x_max, row + w, 0);
  }
  return out;
}

}  // namespace evb
