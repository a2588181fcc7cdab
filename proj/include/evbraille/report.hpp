#pragma once

// Human-readable reports: aligned text tables mirroring the character and
// word result tables, confusion matrix CSV, and an SVG heatmap.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "evbraille/metrics.hpp"
#include "evbraille/model.hpp"

namespace evb {

struct CharReportRow {
  std::string configuration;  // Raw / Norm / Aug / NormAug
  double accuracy_pct = 0.0;
  double f1 = 0.0;
  double loss = 0.0;
};

inline std::string render_char_table(const std::vector<CharReportRow>& rows) {
  std::ostringstream os;
  char buf[128];
  os << "Configuration   Accuracy (%)   F1-score     Loss\n";
  os << "-------------   ------------   --------   ------\n";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-15s %12.2f   %8.4f   %6.4f\n",
                  r.configuration.c_str(), r.accuracy_pct, r.f1, r.loss);
    os << buf;
  }
  return os.str();
}

struct WordReportRow {
  std::string condition;  // e.g. "8 mm/s" or "8 mm/s w spell"
  WordMetrics metrics;
};

inline std::string render_word_table(const std::vector<WordReportRow>& rows) {
  std::ostringstream os;
  char buf[160];
  os << "Condition         Words/Line   Letters/Word   Correct Words   Correct Letters\n";
  os << "---------------   ----------   ------------   -------------   ---------------\n";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-17s %10.3f   %12.3f   %13.3f   %15.3f\n",
                  r.condition.c_str(), r.metrics.words_per_line, r.metrics.letters_per_word,
                  r.metrics.correct_words, r.metrics.correct_letters);
    os << buf;
  }
  return os.str();
}

inline std::string confusion_csv(const std::vector<std::vector<int>>& confusion) {
  std::ostringstream os;
  const int k = static_cast<int>(confusion.size());
  os << "true\\pred";
  for (int c = 0; c < k; ++c) os << ',' << static_cast<char>('A' + c);
  os << '\n';
  for (int r = 0; r < k; ++r) {
    os << static_cast<char>('A' + r);
    for (int c = 0; c < k; ++c) os << ',' << confusion[r][c];
    os << '\n';
  }
  return os.str();
}

// Row-normalized heatmap with per-cell counts; rows are true labels.
inline std::string confusion_svg(const std::vector<std::vector<int>>& confusion) {
  const int k = static_cast<int>(confusion.size());
  const int cell = 22, margin = 40;
  const int size = margin + k * cell + 10;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\""
     << size << "\" font-family=\"monospace\" font-size=\"10\">\n";
  os << "<text x=\"4\" y=\"14\">true \\ predicted</text>\n";
  for (int i = 0; i < k; ++i) {
    os << "<text x=\"" << margin + i * cell + cell / 2 - 3 << "\" y=\"" << margin - 6
       << "\">" << static_cast<char>('A' + i) << "</text>\n";
    os << "<text x=\"" << margin - 14 << "\" y=\"" << margin + i * cell + cell / 2 + 4
       << "\">" << static_cast<char>('A' + i) << "</text>\n";
  }
  for (int r = 0; r < k; ++r) {
    int row_total = 0;
    for (int c = 0; c < k; ++c) row_total += confusion[r][c];
    for (int c = 0; c < k; ++c) {
      const double frac = row_total ? static_cast<double>(confusion[r][c]) / row_total : 0.0;
      const int blue = static_cast<int>(255 - 205 * frac);
      char color[16];
      std::snprintf(color, sizeof(color), "#%02x%02xff", blue, blue);
      os << "<rect x=\"" << margin + c * cell << "\" y=\"" << margin + r * cell
         << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"" << color
         << "\" stroke=\"#ccc\"/>\n";
      if (confusion[r][c] > 0) {
        os << "<text x=\"" << margin + c * cell + 3 << "\" y=\""
           << margin + r * cell + cell / 2 + 4 << "\">" << confusion[r][c] << "</text>\n";
      }
    }
  }
  os << "</svg>\n";
  return os.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << content;
  if (!os) throw std::runtime_error("write failed: " + path);
}

}  // namespace evb
