#pragma once

// The character classifier and the binary presence network: architecture
// presets, the Norm/Aug input transforms, training with Adam, evaluation,
// and bit-exact checkpoint serialization.
//
// A sample is a 20-frame x C-polarity count window. The network consumes its
// per-polarity temporal integral (the frames summed over time), so the stem
// sees C input channels; the 20-frame structure is what the augmentation and
// normalization transforms operate on.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "evbraille/nn.hpp"
#include "evbraille/rng.hpp"
#include "evbraille/segmentation.hpp"
#include "evbraille/sha256.hpp"

namespace evb {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------

enum class ArchPreset { Paper, Reduced };

inline std::string to_string(ArchPreset p) {
  return p == ArchPreset::Paper ? "paper" : "reduced";
}

inline ArchPreset arch_preset_from_string(const std::string& s) {
  if (s == "paper") return ArchPreset::Paper;
  if (s == "reduced") return ArchPreset::Reduced;
  throw ModelError("unknown arch preset: " + s);
}

struct ArchConfig {
  ArchPreset preset = ArchPreset::Reduced;
  double dropout = 0.5;
  int num_classes = 26;
  int in_frames = 20;
  int in_polarities = 2;

  void validate() const {
    if (num_classes != 2 && num_classes != 26) {
      throw ModelError("num_classes must be 2 or 26");
    }
    if (dropout < 0 || dropout >= 1) throw ModelError("dropout must be in [0,1)");
    if (in_frames <= 0 || in_polarities <= 0) throw ModelError("bad input dims");
  }

  int stem_channels() const { return preset == ArchPreset::Paper ? 64 : 16; }
  std::array<int, 4> stage_channels() const {
    const int c0 = stem_channels();
    return {c0, 2 * c0, 4 * c0, 8 * c0};
  }
  std::array<int, 4> stage_blocks() const {
    return preset == ArchPreset::Paper ? std::array<int, 4>{3, 4, 6, 3}
                                       : std::array<int, 4>{1, 1, 1, 1};
  }
  std::array<int, 2> fc_dims() const {
    return preset == ArchPreset::Paper ? std::array<int, 2>{256, 128}
                                       : std::array<int, 2>{64, 32};
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"preset", to_string(preset)},
                          {"dropout", dropout},
                          {"num_classes", num_classes},
                          {"in_frames", in_frames},
                          {"in_polarities", in_polarities}};
  }

  static ArchConfig from_json(const nlohmann::json& j) {
    ArchConfig c;
    c.preset = arch_preset_from_string(j.at("preset").get<std::string>());
    c.dropout = j.at("dropout").get<double>();
    c.num_classes = j.at("num_classes").get<int>();
    c.in_frames = j.at("in_frames").get<int>();
    c.in_polarities = j.at("in_polarities").get<int>();
    c.validate();
    return c;
  }

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

// ---------------------------------------------------------------------------
// Samples. The dense InputSample is the public face; SparseSample is the
// compact pipeline representation (tactile windows are overwhelmingly zero).

struct InputSample {
  int frames = 20, channels = 2, height = 120, width = 160;
  std::vector<float> v;  // [t][c][y][x]
  int label = -1;

  InputSample() = default;
  InputSample(int t, int c, int h, int w)
      : frames(t), channels(c), height(h), width(w),
        v(static_cast<std::size_t>(t) * c * h * w, 0.0f) {}

  std::size_t index(int t, int c, int y, int x) const {
    return ((static_cast<std::size_t>(t) * channels + c) * height + y) * width + x;
  }
  float& at(int t, int c, int y, int x) { return v[index(t, c, y, x)]; }
  float at(int t, int c, int y, int x) const { return v[index(t, c, y, x)]; }
};

struct SparseSample {
  int frames = 20, channels = 2, height = 120, width = 160;
  std::vector<std::pair<std::uint32_t, float>> cells;  // flat index -> value
  int label = -1;

  std::size_t total_cells() const {
    return static_cast<std::size_t>(frames) * channels * height * width;
  }

  void decompose(std::uint32_t idx, int& t, int& c, int& y, int& x) const {
    x = static_cast<int>(idx % width);
    idx /= width;
    y = static_cast<int>(idx % height);
    idx /= height;
    c = static_cast<int>(idx % channels);
    t = static_cast<int>(idx / channels);
  }

  std::uint32_t compose(int t, int c, int y, int x) const {
    return static_cast<std::uint32_t>(
        ((static_cast<std::size_t>(t) * channels + c) * height + y) * width + x);
  }

  void sort_cells() {
    std::sort(cells.begin(), cells.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
  }
};

inline SparseSample to_sparse(const InputSample& s) {
  SparseSample out;
  out.frames = s.frames;
  out.channels = s.channels;
  out.height = s.height;
  out.width = s.width;
  out.label = s.label;
  for (std::size_t i = 0; i < s.v.size(); ++i) {
    if (s.v[i] != 0.0f) out.cells.emplace_back(static_cast<std::uint32_t>(i), s.v[i]);
  }
  return out;
}

inline InputSample to_dense(const SparseSample& s) {
  InputSample out(s.frames, s.channels, s.height, s.width);
  out.label = s.label;
  for (const auto& [idx, val] : s.cells) out.v[idx] = val;
  return out;
}

// ---------------------------------------------------------------------------
// Sample pipeline operations (sparse core, dense wrappers below).

// 20-frame sub-window whose center is nearest the segment's temporal
// event-mass center, clamped to the segment bounds. An empty segment takes
// the centered fallback window.
inline SparseSample sparse_crop_to_input(const FrameTensor& frames, int target_frames = 20) {
  if (frames.num_bins() < target_frames) {
    throw std::invalid_argument("crop_to_input: segment shorter than the input window");
  }
  const std::size_t plane =
      static_cast<std::size_t>(frames.channels()) * frames.height() * frames.width();
  double total = 0.0, weighted = 0.0;
  for (int t = 0; t < frames.num_bins(); ++t) {
    const std::uint16_t* p = frames.counts().data() + t * plane;
    std::uint64_t s = 0;
    for (std::size_t i = 0; i < plane; ++i) s += p[i];
    total += static_cast<double>(s);
    weighted += static_cast<double>(s) * (t + 0.5);
  }
  int start;
  if (total == 0.0) {
    start = (frames.num_bins() - target_frames) / 2;
  } else {
    const double center = weighted / total;
    start = static_cast<int>(std::lround(center - target_frames / 2.0));
    start = std::clamp(start, 0, frames.num_bins() - target_frames);
  }
  SparseSample out;
  out.frames = target_frames;
  out.channels = frames.channels();
  out.height = frames.height();
  out.width = frames.width();
  for (int t = 0; t < target_frames; ++t) {
    const std::uint16_t* p = frames.counts().data() + (start + t) * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      if (p[i]) {
        out.cells.emplace_back(static_cast<std::uint32_t>(t * plane + i),
                               static_cast<float>(p[i]));
      }
    }
  }
  return out;
}

// "Norm": (a) integer vertical shift aligning the event mass-center row with
// H/2 (rows shifted outside the frame are dropped), then (b) scaling so the
// values sum to 1. All-zero samples return unchanged. Moments and the divisor
// are computed in double, which makes normalize(k*s) == normalize(s) exact
// for integer-count samples.
inline SparseSample sparse_normalize(const SparseSample& s) {
  if (s.cells.empty()) return s;
  const int h = s.height;
  // row mass histogram and prefix sums over (mass, mass*row)
  std::vector<double> mass(h, 0.0);
  double total = 0.0;
  for (const auto& [idx, val] : s.cells) {
    int t, c, y, x;
    s.decompose(idx, t, c, y, x);
    mass[y] += static_cast<double>(val);
    total += static_cast<double>(val);
  }
  if (total <= 0.0) return s;
  std::vector<double> pm(h + 1, 0.0), pmr(h + 1, 0.0);
  for (int r = 0; r < h; ++r) {
    pm[r + 1] = pm[r] + mass[r];
    pmr[r + 1] = pmr[r] + mass[r] * r;
  }
  // The shift that best aligns the post-clip mass center with row H/2.
  // Rows shifted outside the frame are dropped, so the naive round(H/2 -
  // center) can land off target when mass sits near an edge.
  const double target = h / 2.0;
  int best_shift = 0;
  double best_err = std::numeric_limits<double>::infinity();
  for (int shift = -(h - 1); shift <= h - 1; ++shift) {
    const int lo = std::max(0, -shift);
    const int hi = std::min(h - 1, h - 1 - shift);
    if (lo > hi) continue;
    const double kept = pm[hi + 1] - pm[lo];
    if (kept <= 0.0) continue;
    const double center = (pmr[hi + 1] - pmr[lo]) / kept + shift;
    const double err = std::abs(center - target);
    if (err < best_err - 1e-12 ||
        (std::abs(err - best_err) <= 1e-12 && std::abs(shift) < std::abs(best_shift))) {
      best_err = err;
      best_shift = shift;
    }
  }

  SparseSample out = s;
  out.cells.clear();
  double kept_total = 0.0;
  for (const auto& [idx, val] : s.cells) {
    int t, c, y, x;
    s.decompose(idx, t, c, y, x);
    const int ny = y + best_shift;
    if (ny < 0 || ny >= h) continue;
    out.cells.emplace_back(out.compose(t, c, ny, x), val);
    kept_total += static_cast<double>(val);
  }
  if (out.cells.empty() || kept_total <= 0.0) return s;
  for (auto& [idx, val] : out.cells) {
    val = static_cast<float>(static_cast<double>(val) / kept_total);
  }
  out.sort_cells();
  return out;
}

struct AugConfig {
  double p_geom = 0.5;
  double rotation_deg = 10.0;     // uniform in [-rotation_deg, +rotation_deg]
  double translate_frac = 0.10;   // of width/height
  double scale_min = 0.8, scale_max = 1.2;
  double p_noise = 0.5;
  double toggle_rate = 1e-5;

  void validate() const {
    if (p_geom < 0 || p_geom > 1 || p_noise < 0 || p_noise > 1) {
      throw std::invalid_argument("augment probabilities must be in [0,1]");
    }
    if (scale_min <= 0 || scale_max < scale_min) {
      throw std::invalid_argument("invalid scale range");
    }
    if (toggle_rate < 0 || toggle_rate > 1) {
      throw std::invalid_argument("toggle_rate must be in [0,1]");
    }
  }
};

// With probability p_geom, one uniform geometric transform (rotation,
// translation, isotropic scale about the image center) applied identically to
// all frames; counts are moved as points and accumulate, so they stay
// integral. With probability p_noise, cells are toggled (0 -> 1, nonzero ->
// 0) at toggle_rate. Deterministic given the RNG state.
inline SparseSample sparse_augment(const SparseSample& s, const AugConfig& cfg,
                                   std::mt19937_64& rng) {
  cfg.validate();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SparseSample out = s;

  if (unit(rng) < cfg.p_geom) {
    const double theta = (2.0 * unit(rng) - 1.0) * cfg.rotation_deg * M_PI / 180.0;
    const double tx = (2.0 * unit(rng) - 1.0) * cfg.translate_frac * s.width;
    const double ty = (2.0 * unit(rng) - 1.0) * cfg.translate_frac * s.height;
    const double scale = cfg.scale_min + unit(rng) * (cfg.scale_max - cfg.scale_min);
    const double cx = (s.width - 1) / 2.0, cy = (s.height - 1) / 2.0;
    const double ca = std::cos(theta) * scale, sa = std::sin(theta) * scale;

    std::vector<std::pair<std::uint32_t, float>> moved;
    moved.reserve(out.cells.size());
    for (const auto& [idx, val] : out.cells) {
      int t, c, y, x;
      s.decompose(idx, t, c, y, x);
      const double dx = x - cx, dy = y - cy;
      const int nx = static_cast<int>(std::lround(ca * dx - sa * dy + cx + tx));
      const int ny = static_cast<int>(std::lround(sa * dx + ca * dy + cy + ty));
      if (nx < 0 || nx >= s.width || ny < 0 || ny >= s.height) continue;
      moved.emplace_back(out.compose(t, c, ny, nx), val);
    }
    // accumulate collisions
    std::sort(moved.begin(), moved.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    out.cells.clear();
    for (const auto& [idx, val] : moved) {
      if (!out.cells.empty() && out.cells.back().first == idx) {
        out.cells.back().second += val;
      } else {
        out.cells.emplace_back(idx, val);
      }
    }
  }

  if (unit(rng) < cfg.p_noise) {
    const std::size_t n_cells = s.total_cells();
    std::binomial_distribution<std::uint64_t> n_toggles(n_cells, cfg.toggle_rate);
    const std::uint64_t k = n_toggles(rng);
    std::unordered_set<std::uint32_t> chosen;
    std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(n_cells - 1));
    out.sort_cells();
    for (std::uint64_t i = 0; i < k; ++i) {
      std::uint32_t idx;
      do {
        idx = pick(rng);
      } while (!chosen.insert(idx).second);
      auto it = std::lower_bound(out.cells.begin(), out.cells.end(), idx,
                                 [](const auto& cell, std::uint32_t v) { return cell.first < v; });
      if (it != out.cells.end() && it->first == idx) {
        if (it->second != 0.0f) {
          it->second = 0.0f;  // active -> off
        } else {
          it->second = 1.0f;
        }
      } else {
        out.cells.emplace(it, idx, 1.0f);  // off -> active
      }
    }
    // drop zeroed cells to keep the sparse invariant
    std::erase_if(out.cells, [](const auto& cell) { return cell.second == 0.0f; });
  }
  return out;
}

// Dense wrappers: the spec-facing operations.
inline InputSample crop_to_input(const CharacterSegment& segment) {
  auto sparse = sparse_crop_to_input(segment.frames);
  if (segment.label >= 'A' && segment.label <= 'Z') sparse.label = segment.label - 'A';
  return to_dense(sparse);
}

inline InputSample normalize_sample(const InputSample& sample) {
  return to_dense(sparse_normalize(to_sparse(sample)));
}

inline InputSample augment(const InputSample& sample, const AugConfig& cfg,
                           std::mt19937_64& rng) {
  return to_dense(sparse_augment(to_sparse(sample), cfg, rng));
}

// ---------------------------------------------------------------------------
// Network assembly.

template <typename T>
struct BrailleNet {
  ArchConfig cfg;
  nn::Conv2d<T> stem_conv;
  nn::BatchNorm2d<T> stem_bn;
  nn::ReLU<T> stem_relu;
  nn::MaxPool2d<T> stem_pool;
  std::vector<nn::BasicBlock<T>> blocks;
  nn::GlobalAvgPool<T> avgpool;
  nn::Linear<T> fc1, fc2, fc3;
  nn::ReLU<T> fc_relu1, fc_relu2;
  nn::Dropout<T> drop1, drop2;

  explicit BrailleNet(const ArchConfig& cfg_)
      : cfg(cfg_),
        stem_conv(cfg_.in_polarities, cfg_.stem_channels(), 7, 2, 3),
        stem_bn(cfg_.stem_channels()),
        stem_pool(3, 2, 1),
        fc1(cfg_.stage_channels()[3], cfg_.fc_dims()[0]),
        fc2(cfg_.fc_dims()[0], cfg_.fc_dims()[1]),
        fc3(cfg_.fc_dims()[1], cfg_.num_classes),
        drop1(static_cast<T>(cfg_.dropout)), drop2(static_cast<T>(cfg_.dropout)) {
    cfg.validate();
    const auto chans = cfg.stage_channels();
    const auto counts = cfg.stage_blocks();
    int in_c = cfg.stem_channels();
    for (int stage = 0; stage < 4; ++stage) {
      for (int b = 0; b < counts[stage]; ++b) {
        const int stride = (stage > 0 && b == 0) ? 2 : 1;
        blocks.emplace_back(in_c, chans[stage], stride);
        in_c = chans[stage];
      }
    }
  }

  void init(std::uint64_t seed) {
    std::mt19937_64 rng(detail::mix_seed(seed, 0x1417u));
    stem_conv.init(rng);
    for (auto& b : blocks) b.init(rng);
    fc1.init(rng);
    fc2.init(rng);
    fc3.init(rng);
  }

  std::vector<nn::ParamRef<T>> params() {
    std::vector<nn::ParamRef<T>> out;
    stem_conv.collect(out);
    stem_bn.collect(out);
    for (auto& b : blocks) b.collect(out);
    fc1.collect(out);
    fc2.collect(out);
    fc3.collect(out);
    return out;
  }

  std::vector<nn::BatchNorm2d<T>*> batchnorms() {
    std::vector<nn::BatchNorm2d<T>*> out{&stem_bn};
    for (auto& b : blocks) b.collect_bn(out);
    return out;
  }

  // x: N x in_polarities x H x W (temporally integrated window)
  nn::Tensor<T> forward(const nn::Tensor<T>& x, bool train, std::mt19937_64& rng) {
    if (x.c != cfg.in_polarities) throw ModelError("input channel mismatch");
    auto h = stem_pool.forward(stem_relu.forward(stem_bn.forward(stem_conv.forward(x), train)));
    for (auto& b : blocks) h = b.forward(h, train);
    h = avgpool.forward(h);
    h = drop1.forward(fc_relu1.forward(fc1.forward(h)), train, rng);
    h = drop2.forward(fc_relu2.forward(fc2.forward(h)), train, rng);
    return fc3.forward(h);
  }

  void backward(const nn::Tensor<T>& dlogits) {
    auto d = fc3.backward(dlogits);
    d = fc2.backward(fc_relu2.backward(drop2.backward(d)));
    d = fc1.backward(fc_relu1.backward(drop1.backward(d)));
    d = avgpool.backward(d);
    for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) d = it->backward(d);
    stem_conv.backward(stem_bn.backward(stem_relu.backward(stem_pool.backward(d))));
  }

  // Serialized state: every parameter in params() order, then running mean
  // and variance of every batchnorm in declaration order.
  std::size_t blob_size() {
    std::size_t n = 0;
    for (auto& p : params()) n += p.value->size();
    for (auto* bn : batchnorms()) n += 2 * bn->running_mean.size();
    return n;
  }

  std::vector<float> export_blob() {
    std::vector<float> blob;
    blob.reserve(blob_size());
    for (auto& p : params()) {
      for (T v : *p.value) blob.push_back(static_cast<float>(v));
    }
    for (auto* bn : batchnorms()) {
      for (T v : bn->running_mean) blob.push_back(static_cast<float>(v));
      for (T v : bn->running_var) blob.push_back(static_cast<float>(v));
    }
    return blob;
  }

  void import_blob(const std::vector<float>& blob) {
    if (blob.size() != blob_size()) {
      throw ModelError("checkpoint parameter count does not match architecture");
    }
    std::size_t i = 0;
    for (auto& p : params()) {
      for (T& v : *p.value) v = static_cast<T>(blob[i++]);
    }
    for (auto* bn : batchnorms()) {
      for (T& v : bn->running_mean) v = static_cast<T>(blob[i++]);
      for (T& v : bn->running_var) v = static_cast<T>(blob[i++]);
    }
  }
};

// ---------------------------------------------------------------------------
// Checkpoints: magic "BNET", u32 version, canonical JSON arch config, JSON
// metadata, u64 float count, SHA-256 of the parameter blob, then the blob as
// little-endian f32.

struct ModelCheckpoint {
  ArchConfig arch;
  std::vector<float> blob;
  nlohmann::json metadata;

  bool normalize_input() const {
    return metadata.contains("normalize_input") && metadata["normalize_input"].get<bool>();
  }
};

inline void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write("BNET", 4);
  detail::write_le<std::uint32_t>(os, 1);
  const std::string arch = ckpt.arch.to_json().dump();
  const std::string meta = ckpt.metadata.dump();
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(arch.size()));
  os.write(arch.data(), static_cast<std::streamsize>(arch.size()));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(meta.size()));
  os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  detail::write_le<std::uint64_t>(os, ckpt.blob.size());
  const auto digest =
      sha256_bytes(ckpt.blob.data(), ckpt.blob.size() * sizeof(float));
  os.write(reinterpret_cast<const char*>(digest.data()), 32);
  for (float f : ckpt.blob) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    detail::write_le<std::uint32_t>(os, bits);
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline ModelCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "BNET", 4) != 0) {
    throw ModelError(path + ": bad magic, not a BNET checkpoint");
  }
  const auto version = detail::read_le<std::uint32_t>(is);
  if (version != 1) throw ModelError(path + ": unsupported checkpoint version");
  ModelCheckpoint ckpt;
  const auto arch_len = detail::read_le<std::uint32_t>(is);
  std::string arch(arch_len, '\0');
  is.read(arch.data(), arch_len);
  const auto meta_len = detail::read_le<std::uint32_t>(is);
  std::string meta(meta_len, '\0');
  is.read(meta.data(), meta_len);
  if (!is) throw ModelError(path + ": truncated checkpoint header");
  try {
    ckpt.arch = ArchConfig::from_json(nlohmann::json::parse(arch));
    ckpt.metadata = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw ModelError(path + ": checkpoint config parse error: " + e.what());
  }
  const auto count = detail::read_le<std::uint64_t>(is);
  std::array<std::uint8_t, 32> digest{};
  is.read(reinterpret_cast<char*>(digest.data()), 32);
  ckpt.blob.resize(count);
  for (auto& f : ckpt.blob) {
    const auto bits = detail::read_le<std::uint32_t>(is);
    std::memcpy(&f, &bits, 4);
  }
  const auto check = sha256_bytes(ckpt.blob.data(), ckpt.blob.size() * sizeof(float));
  if (check != digest) throw ModelError(path + ": parameter blob hash mismatch");
  // parameter count must match the declared architecture
  BrailleNet<float> probe(ckpt.arch);
  if (probe.blob_size() != ckpt.blob.size()) {
    throw ModelError(path + ": parameter count does not match architecture");
  }
  return ckpt;
}

// ---------------------------------------------------------------------------
// Batch assembly: sparse samples -> temporally integrated dense batch.

inline void scatter_into_batch(nn::Tensor<float>& batch, int slot, const SparseSample& s) {
  const std::size_t plane = static_cast<std::size_t>(s.channels) * s.height * s.width;
  float* dst = batch.v.data() + static_cast<std::size_t>(slot) * batch.plane();
  for (const auto& [idx, val] : s.cells) {
    dst[idx % plane] += val;  // integrate over frames
  }
}

// Inference wrapper: a loaded net plus the input conditioning recorded in the
// checkpoint metadata.
class ModelRunner {
 public:
  explicit ModelRunner(const ModelCheckpoint& ckpt)
      : net_(ckpt.arch), normalize_(ckpt.normalize_input()), rng_(0) {
    net_.import_blob(ckpt.blob);
  }

  const ArchConfig& arch() const { return net_.cfg; }
  bool normalizes_input() const { return normalize_; }

  // logits for a batch of sparse samples (eval mode)
  nn::Tensor<float> logits(const std::vector<const SparseSample*>& samples) {
    if (samples.empty()) return {};
    const auto& s0 = *samples.front();
    nn::Tensor<float> batch(static_cast<int>(samples.size()), s0.channels, s0.height,
                            s0.width);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (normalize_) {
        scatter_into_batch(batch, static_cast<int>(i), sparse_normalize(*samples[i]));
      } else {
        scatter_into_batch(batch, static_cast<int>(i), *samples[i]);
      }
    }
    return net_.forward(batch, false, rng_);
  }

  nn::Tensor<float> logits_one(const SparseSample& s) { return logits({&s}); }

 private:
  BrailleNet<float> net_;
  bool normalize_;
  std::mt19937_64 rng_;
};

// Spec-facing single-sample forward pass.
inline std::vector<float> forward(const InputSample& sample, const ModelCheckpoint& ckpt) {
  if (sample.frames != ckpt.arch.in_frames || sample.channels != ckpt.arch.in_polarities) {
    throw ModelError("sample dimensions do not match the checkpoint architecture");
  }
  ModelRunner runner(ckpt);
  auto out = runner.logits_one(to_sparse(sample));
  std::vector<float> logits(out.v.begin(), out.v.end());
  for (float f : logits) {
    if (!std::isfinite(f)) throw ModelError("non-finite logits");
  }
  return logits;
}

// ---------------------------------------------------------------------------
// Training.

enum class TrainMode { Raw, Norm, Aug, NormAug };

inline std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::Raw: return "Raw";
    case TrainMode::Norm: return "Norm";
    case TrainMode::Aug: return "Aug";
    case TrainMode::NormAug: return "NormAug";
  }
  return "?";
}

inline TrainMode train_mode_from_string(const std::string& s) {
  if (s == "Raw" || s == "raw") return TrainMode::Raw;
  if (s == "Norm" || s == "norm") return TrainMode::Norm;
  if (s == "Aug" || s == "aug") return TrainMode::Aug;
  if (s == "NormAug" || s == "normaug") return TrainMode::NormAug;
  throw ModelError("unknown training mode: " + s);
}

inline bool mode_normalizes(TrainMode m) {
  return m == TrainMode::Norm || m == TrainMode::NormAug;
}
inline bool mode_augments(TrainMode m) {
  return m == TrainMode::Aug || m == TrainMode::NormAug;
}

struct TrainConfig {
  double lr = 1e-3;
  int batch_size = 32;
  int epochs = 30;
  std::uint64_t seed = 0;
  double val_split = 0.1;
  int early_stop_patience = 5;
  TrainMode mode = TrainMode::NormAug;
  bool verbose = false;
};

struct EpochRecord {
  int epoch;
  double train_loss;
  double val_loss;  // NaN when there is no validation split
};

inline std::string dataset_fingerprint(const std::vector<SparseSample>& samples) {
  std::string buf;
  for (const auto& s : samples) {
    buf.append(reinterpret_cast<const char*>(&s.label), sizeof(s.label));
    buf.append(reinterpret_cast<const char*>(s.cells.data()),
               s.cells.size() * sizeof(s.cells[0]));
  }
  return sha256_hex(buf);
}

// Minimizes softmax cross-entropy with Adam. Deterministic given the seed:
// sample shuffling, augmentation streams, dropout, and weight init all derive
// from it, and every reduction runs in a fixed order.
inline ModelCheckpoint train(const std::vector<SparseSample>& dataset, ArchConfig arch,
                             const TrainConfig& tcfg, const AugConfig& aug = {}) {
  arch.validate();
  if (dataset.empty()) throw ModelError("train: empty dataset");
  for (const auto& s : dataset) {
    if (s.label < 0 || s.label >= arch.num_classes) {
      throw ModelError("train: sample label out of range");
    }
  }

  BrailleNet<float> net(arch);
  net.init(tcfg.seed);
  auto params = net.params();
  nn::Adam<float> opt;
  opt.lr = tcfg.lr;
  std::mt19937_64 shuffle_rng(detail::mix_seed(tcfg.seed, 0x5f0ffeull));
  std::mt19937_64 dropout_rng(detail::mix_seed(tcfg.seed, 0xd20ull));

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  const std::size_t val_n =
      std::min(dataset.size() - 1,
               static_cast<std::size_t>(std::llround(tcfg.val_split * dataset.size())));
  std::vector<std::size_t> val_idx(order.end() - val_n, order.end());
  std::vector<std::size_t> train_idx(order.begin(), order.end() - val_n);

  auto assemble = [&](const std::vector<std::size_t>& idx, std::size_t lo, std::size_t hi,
                      bool with_aug, int epoch, nn::Tensor<float>& batch,
                      std::vector<int>& labels) {
    const auto& s0 = dataset.front();
    batch = nn::Tensor<float>(static_cast<int>(hi - lo), s0.channels, s0.height, s0.width);
    labels.resize(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) {
      const SparseSample& raw = dataset[idx[i]];
      labels[i - lo] = raw.label;
      SparseSample work = raw;
      if (with_aug) {
        std::mt19937_64 sample_rng(
            detail::mix_seed(tcfg.seed, static_cast<std::uint64_t>(epoch), idx[i]));
        work = sparse_augment(work, aug, sample_rng);
      }
      if (mode_normalizes(tcfg.mode)) work = sparse_normalize(work);
      scatter_into_batch(batch, static_cast<int>(i - lo), work);
    }
  };

  std::vector<EpochRecord> history;
  std::vector<float> best_blob = net.export_blob();
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  int epochs_run = 0;

  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), shuffle_rng);
    double loss_acc = 0.0;
    std::size_t seen = 0;
    for (std::size_t lo = 0; lo < train_idx.size(); lo += tcfg.batch_size) {
      const std::size_t hi = std::min(train_idx.size(), lo + tcfg.batch_size);
      nn::Tensor<float> batch;
      std::vector<int> labels;
      assemble(train_idx, lo, hi, mode_augments(tcfg.mode), epoch, batch, labels);
      auto logits = net.forward(batch, true, dropout_rng);
      nn::Tensor<float> dlogits;
      const double loss = nn::softmax_cross_entropy(logits, labels, &dlogits);
      if (!std::isfinite(loss)) {
        throw ModelError("training diverged: non-finite loss at epoch " +
                         std::to_string(epoch));
      }
      loss_acc += loss * static_cast<double>(hi - lo);
      seen += hi - lo;
      nn::zero_grads(params);
      net.backward(dlogits);
      opt.step(params);
    }
    const double train_loss = loss_acc / static_cast<double>(seen);

    double val_loss = std::numeric_limits<double>::quiet_NaN();
    if (!val_idx.empty()) {
      double acc = 0.0;
      for (std::size_t lo = 0; lo < val_idx.size(); lo += tcfg.batch_size) {
        const std::size_t hi = std::min(val_idx.size(), lo + tcfg.batch_size);
        nn::Tensor<float> batch;
        std::vector<int> labels;
        assemble(val_idx, lo, hi, false, epoch, batch, labels);
        auto logits = net.forward(batch, false, dropout_rng);
        acc += nn::softmax_cross_entropy<float>(logits, labels, nullptr) *
               static_cast<double>(hi - lo);
      }
      val_loss = acc / static_cast<double>(val_idx.size());
    }
    history.push_back({epoch, train_loss, val_loss});
    epochs_run = epoch + 1;
    if (tcfg.verbose) {
      std::fprintf(stderr, "[train %s] epoch %d loss %.4f val %.4f\n",
                   to_string(tcfg.mode).c_str(), epoch, train_loss, val_loss);
    }

    const double monitored = val_idx.empty() ? train_loss : val_loss;
    if (monitored < best_val - 1e-6) {
      best_val = monitored;
      best_blob = net.export_blob();
      since_best = 0;
    } else if (++since_best > tcfg.early_stop_patience) {
      break;
    }
  }

  ModelCheckpoint ckpt;
  ckpt.arch = arch;
  ckpt.blob = std::move(best_blob);
  ckpt.metadata["mode"] = to_string(tcfg.mode);
  ckpt.metadata["normalize_input"] = mode_normalizes(tcfg.mode);
  ckpt.metadata["seed"] = tcfg.seed;
  ckpt.metadata["lr"] = tcfg.lr;
  ckpt.metadata["batch_size"] = tcfg.batch_size;
  ckpt.metadata["epochs_run"] = epochs_run;
  ckpt.metadata["dataset_sha256"] = dataset_fingerprint(dataset);
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& r : history) {
    hist.push_back({{"epoch", r.epoch},
                    {"train_loss", r.train_loss},
                    {"val_loss", std::isnan(r.val_loss) ? nlohmann::json() : nlohmann::json(r.val_loss)}});
  }
  ckpt.metadata["history"] = hist;
  return ckpt;
}

// The binary presence network: identical training path, two classes.
inline ModelCheckpoint train_segmenter(const std::vector<SparseSample>& binary_dataset,
                                       ArchConfig arch, const TrainConfig& tcfg,
                                       const AugConfig& aug = {}) {
  arch.num_classes = 2;
  return train(binary_dataset, arch, tcfg, aug);
}

// ---------------------------------------------------------------------------
// Evaluation.

struct EvalMetrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double mean_loss = 0.0;
  std::vector<std::vector<int>> confusion;  // [true][pred]
  int n = 0;
};

inline EvalMetrics evaluate(const ModelCheckpoint& ckpt,
                            const std::vector<SparseSample>& dataset,
                            int batch_size = 64) {
  if (dataset.empty()) throw ModelError("evaluate: empty dataset");
  const int k = ckpt.arch.num_classes;
  for (const auto& s : dataset) {
    if (s.label < 0 || s.label >= k) throw ModelError("evaluate: unlabeled or out-of-range sample");
  }
  ModelRunner runner(ckpt);
  EvalMetrics m;
  m.confusion.assign(k, std::vector<int>(k, 0));
  double loss_acc = 0.0;
  int correct = 0;
  for (std::size_t lo = 0; lo < dataset.size(); lo += batch_size) {
    const std::size_t hi = std::min(dataset.size(), lo + batch_size);
    std::vector<const SparseSample*> batch;
    std::vector<int> labels;
    for (std::size_t i = lo; i < hi; ++i) {
      batch.push_back(&dataset[i]);
      labels.push_back(dataset[i].label);
    }
    auto logits = runner.logits(batch);
    loss_acc += nn::softmax_cross_entropy<float>(logits, labels, nullptr) *
                static_cast<double>(hi - lo);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const float* row = logits.v.data() + i * static_cast<std::size_t>(k);
      const int pred = static_cast<int>(std::max_element(row, row + k) - row);
      m.confusion[labels[i]][pred] += 1;
      correct += (pred == labels[i]);
    }
  }
  m.n = static_cast<int>(dataset.size());
  m.accuracy = static_cast<double>(correct) / m.n;
  m.mean_loss = loss_acc / m.n;

  double f1_sum = 0.0;
  for (int c = 0; c < k; ++c) {
    int tp = m.confusion[c][c], fp = 0, fn = 0;
    for (int o = 0; o < k; ++o) {
      if (o != c) {
        fp += m.confusion[o][c];
        fn += m.confusion[c][o];
      }
    }
    const double denom = 2.0 * tp + fp + fn;
    f1_sum += denom > 0 ? (2.0 * tp) / denom : 0.0;
  }
  m.macro_f1 = f1_sum / k;
  return m;
}

// ---------------------------------------------------------------------------
// Dataset conversion helpers.

inline std::vector<SparseSample> classifier_samples(const LabeledDataset& ds) {
  std::vector<SparseSample> out;
  out.reserve(ds.characters.size());
  for (const auto& seg : ds.characters) {
    SparseSample s = sparse_crop_to_input(seg.frames);
    s.label = seg.label - 'A';
    out.push_back(std::move(s));
  }
  return out;
}

// Binary presence dataset: positive = the character window (mass-centered
// crop), negatives = the two fixed flanking windows. One positive and two
// negatives per character.
inline std::vector<SparseSample> segmenter_samples(const LabeledDataset& ds) {
  std::vector<SparseSample> out;
  out.reserve(ds.characters.size() + ds.negatives.size());
  for (const auto& seg : ds.characters) {
    SparseSample s = sparse_crop_to_input(seg.frames);
    s.label = 1;
    out.push_back(std::move(s));
  }
  for (const auto& neg : ds.negatives) {
    SparseSample s = sparse_crop_to_input(neg.frames, neg.frames.num_bins());
    s.label = 0;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace evb
