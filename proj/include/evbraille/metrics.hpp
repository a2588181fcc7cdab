#pragma once

// Hierarchical word-reading metrics. The four fractions are conditional:
// each is evaluated only on the subset that satisfied the previous criterion.
//   (1) words_per_line:   lines whose predicted word count is correct
//   (2) letters_per_word: words (in passing lines) with the correct length
//   (3) correct_words:    exactly-correct words among the length-correct ones
//   (4) correct_letters:  positionally correct letters within those words

#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace evb {

struct WordMetrics {
  double words_per_line = 0.0;
  double letters_per_word = 0.0;
  double correct_words = 0.0;
  double correct_letters = 0.0;
  // raw tallies, for aggregation and reporting
  int lines = 0, lines_passing = 0;
  int words_considered = 0, words_passing = 0;
  int words_exact = 0;
  int letters_considered = 0, letters_correct = 0;
};

inline std::vector<std::string> split_words(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  std::string w;
  while (ss >> w) out.push_back(w);
  return out;
}

inline WordMetrics compute_word_metrics(const std::vector<std::string>& predicted_lines,
                                        const std::vector<std::string>& truth_lines) {
  if (truth_lines.empty()) throw std::invalid_argument("compute_word_metrics: empty ground truth");
  if (predicted_lines.size() != truth_lines.size()) {
    throw std::invalid_argument("compute_word_metrics: line count mismatch");
  }
  WordMetrics m;
  m.lines = static_cast<int>(truth_lines.size());
  for (std::size_t li = 0; li < truth_lines.size(); ++li) {
    const auto truth = split_words(truth_lines[li]);
    const auto pred = split_words(predicted_lines[li]);
    if (truth.empty()) throw std::invalid_argument("compute_word_metrics: empty ground-truth line");
    if (pred.size() != truth.size()) continue;
    m.lines_passing += 1;
    for (std::size_t wi = 0; wi < truth.size(); ++wi) {
      m.words_considered += 1;
      if (pred[wi].size() != truth[wi].size()) continue;
      m.words_passing += 1;
      if (pred[wi] == truth[wi]) m.words_exact += 1;
      for (std::size_t ci = 0; ci < truth[wi].size(); ++ci) {
        m.letters_considered += 1;
        if (pred[wi][ci] == truth[wi][ci]) m.letters_correct += 1;
      }
    }
  }
  // empty denominators report 0 (nothing survived the preceding criterion)
  m.words_per_line = m.lines ? static_cast<double>(m.lines_passing) / m.lines : 0.0;
  m.letters_per_word =
      m.words_considered ? static_cast<double>(m.words_passing) / m.words_considered : 0.0;
  m.correct_words =
      m.words_passing ? static_cast<double>(m.words_exact) / m.words_passing : 0.0;
  m.correct_letters =
      m.letters_considered ? static_cast<double>(m.letters_correct) / m.letters_considered : 0.0;
  return m;
}

}  // namespace evb
