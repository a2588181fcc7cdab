#pragma once

// Event file formats.
//
// Text:    CSV with header "t_us,x,y,p", p in {0,1} (0=OFF, 1=ON).
// Binary:  .evb — magic "EVB1", little-endian u32 width, u32 height,
//          u64 event count, then (u64 t_us, u16 x, u16 y, u8 p) records.
//          Round-trips are bit-exact.

#include <array>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "evbraille/events.hpp"

namespace evb {

namespace detail {

template <typename T>
void write_le(std::ostream& os, T value) {
  std::array<unsigned char, sizeof(T)> buf{};
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    buf[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff);
  }
  os.write(reinterpret_cast<const char*>(buf.data()), buf.size());
}

template <typename T>
T read_le(std::istream& is) {
  std::array<unsigned char, sizeof(T)> buf{};
  is.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (!is) throw std::runtime_error("unexpected end of file");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  }
  return static_cast<T>(v);
}

}  // namespace detail

inline void write_events_csv(const EventStream& stream, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "t_us,x,y,p\n";
  for (const Event& e : stream.events) {
    os << e.t_us << ',' << e.x << ',' << e.y << ','
       << static_cast<int>(e.polarity) << '\n';
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline EventStream read_events_csv(const std::string& path,
                                   std::uint16_t sensor_width = 640,
                                   std::uint16_t sensor_height = 480) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::string line;
  if (!std::getline(is, line) || line != "t_us,x,y,p") {
    throw std::runtime_error(path + ": missing or malformed CSV header (want t_us,x,y,p)");
  }
  EventStream stream;
  stream.sensor_width = sensor_width;
  stream.sensor_height = sensor_height;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    unsigned long long t;
    unsigned x, y, p;
    if (std::sscanf(line.c_str(), "%llu,%u,%u,%u", &t, &x, &y, &p) != 4) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed event row");
    }
    if (p > 1) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": polarity must be 0 or 1");
    }
    stream.events.push_back(Event{t, static_cast<std::uint16_t>(x),
                                  static_cast<std::uint16_t>(y),
                                  static_cast<Polarity>(p)});
  }
  stream.validate();
  return stream;
}

inline void write_events_evb(const EventStream& stream, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write("EVB1", 4);
  detail::write_le<std::uint32_t>(os, stream.sensor_width);
  detail::write_le<std::uint32_t>(os, stream.sensor_height);
  detail::write_le<std::uint64_t>(os, stream.events.size());
  for (const Event& e : stream.events) {
    detail::write_le<std::uint64_t>(os, e.t_us);
    detail::write_le<std::uint16_t>(os, e.x);
    detail::write_le<std::uint16_t>(os, e.y);
    detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(e.polarity));
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline EventStream read_events_evb(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "EVB1", 4) != 0) {
    throw std::runtime_error(path + ": bad magic, not an EVB1 file");
  }
  EventStream stream;
  const auto width = detail::read_le<std::uint32_t>(is);
  const auto height = detail::read_le<std::uint32_t>(is);
  if (width == 0 || width > 0xffff || height == 0 || height > 0xffff) {
    throw std::runtime_error(path + ": implausible sensor geometry");
  }
  stream.sensor_width = static_cast<std::uint16_t>(width);
  stream.sensor_height = static_cast<std::uint16_t>(height);
  const auto count = detail::read_le<std::uint64_t>(is);
  stream.events.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    Event e;
    e.t_us = detail::read_le<std::uint64_t>(is);
    e.x = detail::read_le<std::uint16_t>(is);
    e.y = detail::read_le<std::uint16_t>(is);
    const auto p = detail::read_le<std::uint8_t>(is);
    if (p > 1) throw std::runtime_error(path + ": polarity byte must be 0 or 1");
    e.polarity = static_cast<Polarity>(p);
    stream.events.push_back(e);
  }
  stream.validate();
  return stream;
}

}  // namespace evb
