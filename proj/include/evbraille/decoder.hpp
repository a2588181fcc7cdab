#pragma once

// Real-time word reading over unsegmented streams: slide a 200 ms window,
// gate with the binary presence network, classify gated windows, register
// characters from temporally consistent detection runs, split words at long
// silences, and optionally spell-correct against a vocabulary.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "evbraille/model.hpp"

namespace evb {

struct Detection {
  double t_ms = 0.0;       // window start
  char ch = 'A';
  double confidence = 0.0; // max softmax probability
};

struct RegisteredChar {
  char ch = 'A';
  double t_ms = 0.0;       // run start
};

struct DecoderConfig {
  double window_ms = 200.0;
  double stride_ms = 10.0;
  int min_consecutive = 4;
  double consec_gap_max_ms = 70.0;
  double word_gap_min_ms = 1000.0;
  double segmenter_threshold = 0.5;
  // windows with fewer events than this skip the networks outright; they can
  // never gate as "present"
  std::uint64_t min_window_events = 1;
  int batch_size = 64;
  int mask_x_min = 20;
  int mask_x_max = 100;

  void validate() const {
    if (window_ms <= 0 || stride_ms <= 0 || stride_ms > window_ms) {
      throw std::invalid_argument("decoder: need 0 < stride <= window");
    }
    if (min_consecutive < 1 || consec_gap_max_ms <= 0 || word_gap_min_ms <= 0) {
      throw std::invalid_argument("decoder: thresholds must be positive");
    }
    if (segmenter_threshold < 0 || segmenter_threshold > 1) {
      throw std::invalid_argument("decoder: segmenter threshold must be in [0,1]");
    }
  }
};

// Slides the window with stride steps over the binned stream; windows passing
// the presence gate are classified (with the Norm conditioning each
// checkpoint was trained with) and emitted time-ordered.
inline std::vector<Detection> stream_decode(const FrameTensor& frames,
                                            const ModelCheckpoint& segnet_ckpt,
                                            const ModelCheckpoint& classifier_ckpt,
                                            const DecoderConfig& cfg = {}) {
  cfg.validate();
  if (segnet_ckpt.arch.num_classes != 2) {
    throw ModelError("stream_decode: segmenter checkpoint must have 2 classes");
  }
  if (classifier_ckpt.arch.num_classes != 26) {
    throw ModelError("stream_decode: classifier checkpoint must have 26 classes");
  }
  const std::int64_t bw = frames.bin_width_ms();
  const int win_bins = static_cast<int>(std::llround(cfg.window_ms / bw));
  const int stride_bins = std::max(1, static_cast<int>(std::llround(cfg.stride_ms / bw)));
  if (win_bins <= 0 || win_bins * bw != static_cast<std::int64_t>(std::llround(cfg.window_ms))) {
    throw std::invalid_argument("stream_decode: window must be a multiple of the bin width");
  }
  if (classifier_ckpt.arch.in_frames != win_bins || segnet_ckpt.arch.in_frames != win_bins) {
    throw ModelError("stream_decode: window length does not match checkpoint input frames");
  }
  if (classifier_ckpt.arch.in_polarities != frames.channels() ||
      segnet_ckpt.arch.in_polarities != frames.channels()) {
    throw ModelError("stream_decode: stream channels do not match checkpoint input");
  }

  ModelRunner segnet(segnet_ckpt);
  ModelRunner classifier(classifier_ckpt);

  const int x0 = std::max(0, cfg.mask_x_min);
  const int x1 = std::min(frames.width(), cfg.mask_x_max);
  const std::size_t plane =
      static_cast<std::size_t>(frames.channels()) * frames.height() * frames.width();

  // per-bin masked event totals -> O(1) window occupancy via prefix sums
  std::vector<std::uint64_t> bin_mass(frames.num_bins() + 1, 0);
  for (int t = 0; t < frames.num_bins(); ++t) {
    std::uint64_t s = 0;
    for (int c = 0; c < frames.channels(); ++c) {
      for (int y = 0; y < frames.height(); ++y) {
        const std::uint16_t* row = frames.counts().data() + frames.index(t, c, y, 0);
        for (int x = x0; x < x1; ++x) s += row[x];
      }
    }
    bin_mass[t + 1] = bin_mass[t] + s;
  }

  auto window_sample = [&](int start_bin) {
    SparseSample s;
    s.frames = win_bins;
    s.channels = frames.channels();
    s.height = frames.height();
    s.width = frames.width();
    for (int t = 0; t < win_bins; ++t) {
      const int src = start_bin + t;
      if (src >= frames.num_bins()) break;
      for (int c = 0; c < frames.channels(); ++c) {
        for (int y = 0; y < frames.height(); ++y) {
          const std::uint16_t* row = frames.counts().data() + frames.index(src, c, y, 0);
          const std::size_t base =
              ((static_cast<std::size_t>(t) * frames.channels() + c) * frames.height() + y) *
              frames.width();
          for (int x = x0; x < x1; ++x) {
            if (row[x]) s.cells.emplace_back(static_cast<std::uint32_t>(base + x),
                                             static_cast<float>(row[x]));
          }
        }
      }
    }
    return s;
  };

  std::vector<Detection> detections;
  std::vector<int> pending;  // start bins awaiting the gate
  std::vector<SparseSample> pending_samples;

  auto flush = [&]() {
    if (pending.empty()) return;
    std::vector<const SparseSample*> batch;
    batch.reserve(pending_samples.size());
    for (const auto& s : pending_samples) batch.push_back(&s);
    auto gate_logits = segnet.logits(batch);
    std::vector<int> present;
    for (std::size_t i = 0; i < pending.size(); ++i) {
      const auto p = nn::softmax_row(gate_logits, static_cast<int>(i));
      if (p[1] >= cfg.segmenter_threshold) present.push_back(static_cast<int>(i));
    }
    if (!present.empty()) {
      std::vector<const SparseSample*> cls_batch;
      for (int i : present) cls_batch.push_back(&pending_samples[i]);
      auto logits = classifier.logits(cls_batch);
      for (std::size_t j = 0; j < present.size(); ++j) {
        const auto p = nn::softmax_row(logits, static_cast<int>(j));
        const int best = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
        detections.push_back(Detection{
            frames.origin_ms() + static_cast<double>(pending[present[j]]) * bw,
            static_cast<char>('A' + best), p[best]});
      }
    }
    pending.clear();
    pending_samples.clear();
  };

  for (int start = 0; start + win_bins <= frames.num_bins(); start += stride_bins) {
    const std::uint64_t mass = bin_mass[start + win_bins] - bin_mass[start];
    if (mass < cfg.min_window_events) continue;
    pending.push_back(start);
    pending_samples.push_back(window_sample(start));
    if (static_cast<int>(pending.size()) >= cfg.batch_size) flush();
  }
  flush();
  std::sort(detections.begin(), detections.end(),
            [](const Detection& a, const Detection& b) { return a.t_ms < b.t_ms; });
  return detections;
}

// Groups detections into runs (successive times closer than
// consec_gap_max_ms, label-agnostic); a run of at least min_consecutive
// detections registers one character: majority label, ties broken by higher
// mean confidence then alphabetically, time-stamped at the run start.
inline std::vector<RegisteredChar> temporal_filter(const std::vector<Detection>& detections,
                                                   const DecoderConfig& cfg = {}) {
  cfg.validate();
  std::vector<RegisteredChar> out;
  std::size_t i = 0;
  while (i < detections.size()) {
    std::size_t j = i + 1;
    while (j < detections.size() &&
           detections[j].t_ms - detections[j - 1].t_ms < cfg.consec_gap_max_ms) {
      ++j;
    }
    const std::size_t run_len = j - i;
    if (run_len >= static_cast<std::size_t>(cfg.min_consecutive)) {
      std::map<char, std::pair<int, double>> votes;  // label -> (count, conf sum)
      for (std::size_t k = i; k < j; ++k) {
        auto& v = votes[detections[k].ch];
        v.first += 1;
        v.second += detections[k].confidence;
      }
      char best = 0;
      int best_count = -1;
      double best_mean = -1.0;
      for (const auto& [ch, v] : votes) {
        const double mean = v.second / v.first;
        if (v.first > best_count ||
            (v.first == best_count && mean > best_mean + 1e-12)) {
          best = ch;
          best_count = v.first;
          best_mean = mean;
        }
      }
      out.push_back(RegisteredChar{best, detections[i].t_ms});
    }
    i = j;
  }
  return out;
}

// Splits the registered sequence into words where consecutive registration
// times differ by more than word_gap_min_ms.
inline std::vector<std::string> assemble_words(const std::vector<RegisteredChar>& chars,
                                               const DecoderConfig& cfg = {}) {
  cfg.validate();
  std::vector<std::string> words;
  std::string current;
  for (std::size_t i = 0; i < chars.size(); ++i) {
    if (i > 0 && chars[i].t_ms - chars[i - 1].t_ms > cfg.word_gap_min_ms) {
      words.push_back(current);
      current.clear();
    }
    current.push_back(chars[i].ch);
  }
  if (!current.empty()) words.push_back(current);
  return words;
}

// ---------------------------------------------------------------------------

inline int levenshtein(const std::string& a, const std::string& b) {
  const std::size_t n = b.size();
  std::vector<int> costs(n + 1);
  std::iota(costs.begin(), costs.end(), 0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    costs[0] = static_cast<int>(i) + 1;
    int corner = static_cast<int>(i);
    for (std::size_t j = 0; j < n; ++j) {
      const int upper = costs[j + 1];
      if (a[i] == b[j]) {
        costs[j + 1] = corner;
      } else {
        costs[j + 1] = std::min({upper, corner, costs[j]}) + 1;
      }
      corner = upper;
    }
  }
  return costs[n];
}

struct Vocabulary {
  std::vector<std::string> words;  // sorted, unique, uppercase
  int max_edit_distance = 2;

  static Vocabulary from_words(std::vector<std::string> list, int max_ed = 2) {
    Vocabulary v;
    v.max_edit_distance = max_ed;
    for (auto& w : list) {
      for (char& c : w) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      if (!w.empty()) v.words.push_back(w);
    }
    std::sort(v.words.begin(), v.words.end());
    v.words.erase(std::unique(v.words.begin(), v.words.end()), v.words.end());
    return v;
  }

  static Vocabulary load(const std::string& path, int max_ed = 2) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open vocabulary: " + path);
    std::vector<std::string> list;
    std::string w;
    while (is >> w) list.push_back(w);
    return from_words(std::move(list), max_ed);
  }

  bool contains(const std::string& w) const {
    return std::binary_search(words.begin(), words.end(), w);
  }
};

// Stateless correction: exact vocabulary hits pass through; otherwise the
// nearest word within max_edit_distance wins, ties broken by smaller distance
// then lexicographic order; no candidate leaves the word unchanged.
inline std::string spell_correct(const std::string& word, const Vocabulary& vocab) {
  if (vocab.words.empty()) {
    throw std::invalid_argument("spell_correct: empty vocabulary");
  }
  if (word.empty() || vocab.contains(word)) return word;
  int best_dist = vocab.max_edit_distance + 1;
  const std::string* best = nullptr;
  for (const auto& cand : vocab.words) {
    // length difference lower-bounds the edit distance
    const int len_gap = std::abs(static_cast<int>(cand.size()) - static_cast<int>(word.size()));
    if (len_gap >= best_dist) continue;
    const int d = levenshtein(word, cand);
    if (d < best_dist) {
      best_dist = d;
      best = &cand;
    }
  }
  return best ? *best : word;
}

inline std::vector<std::string> spell_correct_words(const std::vector<std::string>& words,
                                                    const Vocabulary& vocab) {
  std::vector<std::string> out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(spell_correct(w, vocab));
  return out;
}

}  // namespace evb
