#pragma once

// Grade 1 Braille encoding and parametric board layouts.
//
// Cell numbering is the standard one: column 1 top-to-bottom is dots 1,2,3,
// column 2 top-to-bottom is dots 4,5,6. Boards are rows of uppercase text
// where a space stands for a word gap of `word_gap_cells` empty cells.

#include <array>
#include <cctype>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace evb {

struct DotPattern {
  std::uint8_t bits = 0;  // bit d-1 set iff dot d raised, d in 1..6

  static DotPattern of(std::initializer_list<int> dots) {
    DotPattern p;
    for (int d : dots) {
      if (d < 1 || d > 6) throw std::invalid_argument("dot number out of 1..6");
      p.bits |= static_cast<std::uint8_t>(1u << (d - 1));
    }
    return p;
  }

  bool has(int dot) const { return (bits >> (dot - 1)) & 1u; }
  int count() const { return __builtin_popcount(bits); }

  friend bool operator==(const DotPattern&, const DotPattern&) = default;
};

// Grade 1 alphabet, A..Z.
inline DotPattern encode_char(char letter) {
  static const std::array<std::uint8_t, 26> table = [] {
    std::array<std::uint8_t, 26> t{};
    auto set = [&t](char c, std::initializer_list<int> dots) {
      t[c - 'A'] = DotPattern::of(dots).bits;
    };
    set('A', {1});          set('B', {1, 2});       set('C', {1, 4});
    set('D', {1, 4, 5});    set('E', {1, 5});       set('F', {1, 2, 4});
    set('G', {1, 2, 4, 5}); set('H', {1, 2, 5});    set('I', {2, 4});
    set('J', {2, 4, 5});    set('K', {1, 3});       set('L', {1, 2, 3});
    set('M', {1, 3, 4});    set('N', {1, 3, 4, 5}); set('O', {1, 3, 5});
    set('P', {1, 2, 3, 4}); set('Q', {1, 2, 3, 4, 5});
    set('R', {1, 2, 3, 5}); set('S', {2, 3, 4});    set('T', {2, 3, 4, 5});
    set('U', {1, 3, 6});    set('V', {1, 2, 3, 6}); set('W', {2, 4, 5, 6});
    set('X', {1, 3, 4, 6}); set('Y', {1, 3, 4, 5, 6});
    set('Z', {1, 3, 5, 6});
    return t;
  }();
  if (letter < 'A' || letter > 'Z') {
    throw std::invalid_argument(std::string("encode_char: not an uppercase letter: '") +
                                letter + "'");
  }
  return DotPattern{table[letter - 'A']};
}

// True iff the pattern uses only column-1 dots {1,2,3}: the letters A, B, K, L.
inline bool is_single_column(DotPattern p) {
  return p.bits != 0 && (p.bits & 0b111000u) == 0;
}

struct BoardLayout {
  std::string name;
  std::vector<std::string> rows;   // uppercase A-Z and spaces
  double dot_diameter_mm = 0.5;
  double dot_spacing_mm = 2.5;     // intra-cell spacing between dots
  double cell_pitch_mm = 7.5;      // inter-character spacing
  double row_length_mm = 195.0;
  int word_gap_cells = 4;          // empty cells per space

  void validate() const {
    if (rows.empty()) throw std::invalid_argument("board has no rows");
    if (dot_diameter_mm <= 0 || dot_spacing_mm <= 0 || cell_pitch_mm <= 0 ||
        row_length_mm <= 0 || word_gap_cells <= 0) {
      throw std::invalid_argument("board geometry must be strictly positive");
    }
    for (std::size_t r = 0; r < rows.size(); ++r) {
      int cells = 0;
      for (char c : rows[r]) {
        if (c == ' ') {
          cells += word_gap_cells;
        } else if (c >= 'A' && c <= 'Z') {
          cells += 1;
        } else {
          throw std::invalid_argument("row " + std::to_string(r) +
                                      ": invalid character '" + std::string(1, c) +
                                      "' (only A-Z and space)");
        }
      }
      if (cells * cell_pitch_mm > row_length_mm) {
        throw std::invalid_argument("row " + std::to_string(r) +
                                    " does not fit within row_length_mm");
      }
    }
  }

  // Cell offset (in pitch units) of the character at string index `i`.
  int cell_offset(int row, int char_index) const {
    const std::string& s = rows.at(row);
    if (char_index < 0 || char_index >= static_cast<int>(s.size())) {
      throw std::out_of_range("char_index out of range");
    }
    int cells = 0;
    for (int i = 0; i < char_index; ++i) {
      cells += (s[i] == ' ') ? word_gap_cells : 1;
    }
    return cells;
  }

  int num_chars(int row) const {
    int n = 0;
    for (char c : rows.at(row)) n += (c != ' ');
    return n;
  }
};

// Physical centers (x_mm, y_mm) of the raised dots of one character,
// in board coordinates. Dot 1 of a character at cell offset 0 sits at the
// origin; column 2 is offset by dot_spacing in x, dots 2/3 (5/6) descend
// in y by dot_spacing steps. Returned in dot-number order.
inline std::vector<std::pair<double, double>> dot_positions(const BoardLayout& board,
                                                            int row, int char_index) {
  if (row < 0 || row >= static_cast<int>(board.rows.size())) {
    throw std::out_of_range("row index out of range");
  }
  const char c = board.rows[row].at(static_cast<std::size_t>(char_index));
  if (c == ' ') throw std::invalid_argument("dot_positions: index points at a word gap");
  const DotPattern p = encode_char(c);
  const double x0 = board.cell_offset(row, char_index) * board.cell_pitch_mm;
  std::vector<std::pair<double, double>> out;
  out.reserve(p.count());
  for (int d = 1; d <= 6; ++d) {
    if (!p.has(d)) continue;
    const int col = (d <= 3) ? 0 : 1;
    const int vpos = (d - 1) % 3;
    out.emplace_back(x0 + col * board.dot_spacing_mm, vpos * board.dot_spacing_mm);
  }
  return out;
}

enum class PresetBoard { SAB, UN, RAB, EV };

inline PresetBoard parse_preset(const std::string& name) {
  if (name == "SAB") return PresetBoard::SAB;
  if (name == "UN") return PresetBoard::UN;
  if (name == "RAB") return PresetBoard::RAB;
  if (name == "EV") return PresetBoard::EV;
  throw std::invalid_argument("unknown preset board: " + name);
}

// SAB: alphabet in order over three rows. RAB: the same 26 letters in a
// fixed seeded random order. UN: "UNIVERSITY" / "OF" / a configurable word.
// EV: two rows of daily-living words (4 and 5 words, first word RIGHT).
inline BoardLayout preset_board(PresetBoard which,
                                const std::string& un_third_row = "WORD") {
  BoardLayout b;
  switch (which) {
    case PresetBoard::SAB:
      b.name = "SAB";
      b.rows = {"ABCDEFGHI", "JKLMNOPQR", "STUVWXYZ"};
      break;
    case PresetBoard::RAB: {
      b.name = "RAB";
      std::string letters = "ABCDEFGHIJKLMNOPQRSTUVWXYZ";
      std::mt19937_64 rng(0x5ab0bda5u);  // fixed: the board is a single artifact
      std::shuffle(letters.begin(), letters.end(), rng);
      b.rows = {letters.substr(0, 9), letters.substr(9, 9), letters.substr(18, 8)};
      break;
    }
    case PresetBoard::UN:
      b.name = "UN";
      b.rows = {"UNIVERSITY", "OF", un_third_row};
      break;
    case PresetBoard::EV:
      b.name = "EV";
      b.rows = {"RIGHT TEA CUP JAM", "EGG MILK SOUP FISH PIE"};
      b.row_length_mm = 255.0;  // 34 cells at 7.5 mm pitch
      break;
  }
  b.validate();
  return b;
}

inline BoardLayout preset_board(const std::string& name,
                                const std::string& un_third_row = "WORD") {
  return preset_board(parse_preset(name), un_third_row);
}

// Board file: JSON object with name, rows[], dot_diameter_mm, dot_spacing_mm,
// cell_pitch_mm, row_length_mm, word_gap_cells. Missing geometry fields take
// the defaults above; name and rows are required.
inline void save_board(const BoardLayout& board, const std::string& path) {
  board.validate();
  nlohmann::json j;
  j["name"] = board.name;
  j["rows"] = board.rows;
  j["dot_diameter_mm"] = board.dot_diameter_mm;
  j["dot_spacing_mm"] = board.dot_spacing_mm;
  j["cell_pitch_mm"] = board.cell_pitch_mm;
  j["row_length_mm"] = board.row_length_mm;
  j["word_gap_cells"] = board.word_gap_cells;
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << j.dump(2) << '\n';
}

inline BoardLayout load_board(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(path + ": board file parse error: " + e.what());
  }
  BoardLayout b;
  try {
    b.name = j.at("name").get<std::string>();
    b.rows = j.at("rows").get<std::vector<std::string>>();
    b.dot_diameter_mm = j.value("dot_diameter_mm", b.dot_diameter_mm);
    b.dot_spacing_mm = j.value("dot_spacing_mm", b.dot_spacing_mm);
    b.cell_pitch_mm = j.value("cell_pitch_mm", b.cell_pitch_mm);
    b.row_length_mm = j.value("row_length_mm", b.row_length_mm);
    b.word_gap_cells = j.value("word_gap_cells", b.word_gap_cells);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": board schema violation: " + e.what());
  }
  try {
    b.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  return b;
}

}  // namespace evb
