#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "rsdg/error.hpp"
#include "rsdg/rir.hpp"
#include "rsdg/signal.hpp"

namespace rsdg {

// 16-bit PCM mono WAV at 16 kHz. Anything else is rejected with a
// descriptive error; resampling is out of scope.

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

inline void put_u16(std::ostream& os, std::uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  os.write(b, 2);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  require(static_cast<bool>(is), "wav: truncated file");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  require(static_cast<bool>(is), "wav: truncated file");
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

}  // namespace detail

inline void write_wav(const std::string& path, const Waveform& w) {
  require(w.sample_rate_hz == kDefaultSampleRate,
          "wav: only 16 kHz supported, got " + std::to_string(w.sample_rate_hz));
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), "wav: cannot open for write: " + path);
  const std::uint32_t n = static_cast<std::uint32_t>(w.size());
  const std::uint32_t data_bytes = n * 2;
  os.write("RIFF", 4);
  detail::put_u32(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  detail::put_u32(os, 16);
  detail::put_u16(os, 1);  // PCM
  detail::put_u16(os, 1);  // mono
  detail::put_u32(os, static_cast<std::uint32_t>(w.sample_rate_hz));
  detail::put_u32(os, static_cast<std::uint32_t>(w.sample_rate_hz) * 2);
  detail::put_u16(os, 2);
  detail::put_u16(os, 16);
  os.write("data", 4);
  detail::put_u32(os, data_bytes);
  for (std::uint32_t i = 0; i < n; ++i) {
    double x = std::clamp(w.samples[i], -1.0, 1.0);
    const int s = static_cast<int>(std::lround(x * 32767.0));
    detail::put_u16(os, static_cast<std::uint16_t>(static_cast<std::int16_t>(s)));
  }
  require(static_cast<bool>(os), "wav: write failed: " + path);
}

inline Waveform read_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), "wav: cannot open: " + path);
  char tag[4];
  is.read(tag, 4);
  require(is && std::string(tag, 4) == "RIFF", "wav: not a RIFF file: " + path);
  detail::get_u32(is);
  is.read(tag, 4);
  require(is && std::string(tag, 4) == "WAVE", "wav: not a WAVE file: " + path);

  int sample_rate = 0, channels = 0, bits = 0, fmt = 0;
  std::vector<double> samples;
  bool have_fmt = false, have_data = false;
  while (is && !(have_fmt && have_data)) {
    is.read(tag, 4);
    if (!is) break;
    const std::uint32_t size = detail::get_u32(is);
    const std::string id(tag, 4);
    if (id == "fmt ") {
      fmt = detail::get_u16(is);
      channels = detail::get_u16(is);
      sample_rate = static_cast<int>(detail::get_u32(is));
      detail::get_u32(is);
      detail::get_u16(is);
      bits = detail::get_u16(is);
      if (size > 16) is.seekg(size - 16, std::ios::cur);
      have_fmt = true;
    } else if (id == "data") {
      require(have_fmt, "wav: data chunk before fmt: " + path);
      require(fmt == 1, "wav: only PCM supported: " + path);
      require(channels == 1, "wav: only mono supported: " + path);
      require(bits == 16, "wav: only 16-bit supported: " + path);
      require(sample_rate == kDefaultSampleRate, "wav: only 16 kHz supported: " + path);
      const std::uint32_t n = size / 2;
      samples.resize(n);
      for (std::uint32_t i = 0; i < n; ++i) {
        const std::int16_t s = static_cast<std::int16_t>(detail::get_u16(is));
        samples[i] = s / 32767.0;
      }
      have_data = true;
    } else {
      is.seekg(size + (size & 1), std::ios::cur);
    }
  }
  require(have_data, "wav: no data chunk: " + path);
  return Waveform(std::move(samples), sample_rate);
}

// ---------------------------------------------------------------------------
// RirBank directory format: one WAV per impulse plus a metadata file with
// one "filename rt60" line per filter.
// ---------------------------------------------------------------------------

inline void save_rir_bank(const RirBank& bank, const std::string& dir) {
  bank.validate();
  std::filesystem::create_directories(dir);
  std::ofstream meta(dir + "/bank.txt");
  require(static_cast<bool>(meta), "rir bank: cannot write metadata in " + dir);
  for (std::size_t i = 0; i < bank.filters.size(); ++i) {
    const std::string name = "rir_" + std::to_string(i) + ".wav";
    const RirFilter& h = bank.filters[i];
    // Scale into the 16-bit range; energy is restored on load.
    double peak = 0.0;
    for (double v : h.impulse) peak = std::max(peak, std::abs(v));
    require(peak > 0.0, "rir bank: zero impulse");
    Waveform w;
    w.sample_rate_hz = h.sample_rate_hz;
    w.samples.reserve(h.impulse.size());
    for (double v : h.impulse) w.samples.push_back(v / peak * 0.99);
    write_wav(dir + "/" + name, w);
    meta << name << " " << h.rt60_s << "\n";
  }
}

inline RirBank load_rir_bank(const std::string& dir, int profile_frame_len = 512) {
  std::ifstream meta(dir + "/bank.txt");
  require(static_cast<bool>(meta), "rir bank: missing metadata file in " + dir);
  RirBank bank;
  bank.profile_frame_len = profile_frame_len;
  std::string line;
  while (std::getline(meta, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string name;
    double rt60 = 0.0;
    ss >> name >> rt60;
    require(!name.empty() && rt60 > 0.0, "rir bank: bad metadata line: " + line);
    const Waveform w = read_wav(dir + "/" + name);
    RirFilter h;
    h.rt60_s = rt60;
    h.sample_rate_hz = w.sample_rate_hz;
    h.impulse = w.samples;
    // Quantization broke the unit-energy invariant; restore it.
    const double e = h.energy();
    require(e > 0.0, "rir bank: zero-energy impulse: " + name);
    const double s = 1.0 / std::sqrt(e);
    for (double& v : h.impulse) v *= s;
    bank.filters.push_back(std::move(h));
  }
  require(!bank.filters.empty(), "rir bank: no filters listed in " + dir);
  bank.power_profile = rir_power_profile(bank.filters, profile_frame_len);
  bank.validate();
  return bank;
}

}  // namespace rsdg
