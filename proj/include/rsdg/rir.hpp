#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "rsdg/error.hpp"
#include "rsdg/rng.hpp"
#include "rsdg/signal.hpp"

namespace rsdg {

// Exponentially decaying noise model of a room impulse response. The decay
// constant 6.91 = ln(10^3) realizes the -60 dB definition of RT60.
struct RirFilter {
  std::vector<double> impulse;
  double rt60_s = 0.0;
  int sample_rate_hz = kDefaultSampleRate;

  double energy() const {
    double e = 0.0;
    for (double v : impulse) e += v * v;
    return e;
  }
};

inline RirFilter simulate_rir(double rt60_s, std::uint64_t seed, int sample_rate_hz) {
  require(rt60_s > 0.05 && rt60_s <= 2.0, "rt60 out of range (0.05, 2.0]");
  require(sample_rate_hz > 0, "sample rate must be positive");
  const int len = static_cast<int>(std::ceil(rt60_s * sample_rate_hz));
  Rng rng(mix_seed(seed, 0x7172u));
  RirFilter h;
  h.rt60_s = rt60_s;
  h.sample_rate_hz = sample_rate_hz;
  h.impulse.resize(static_cast<std::size_t>(len));
  const double k = 6.91 / (rt60_s * sample_rate_hz);
  double energy = 0.0;
  for (int n = 0; n < len; ++n) {
    h.impulse[n] = rng.normal() * std::exp(-k * n);
    energy += h.impulse[n] * h.impulse[n];
  }
  require(energy > 0.0, "degenerate rir draw");
  const double s = 1.0 / std::sqrt(energy);
  for (double& v : h.impulse) v *= s;
  return h;
}

// Identity kernel wrapped as a filter; used as the degenerate EOT transform.
inline RirFilter unit_impulse_rir(int sample_rate_hz) {
  RirFilter h;
  h.impulse = {1.0};
  h.rt60_s = 1.0 / sample_rate_hz;
  h.sample_rate_hz = sample_rate_hz;
  return h;
}

// The direct sum wins for short filters; long room filters go through the
// FFT path.
constexpr std::size_t kRirFftThreshold = 1u << 18;

// Full linear convolution truncated to the input length.
inline Waveform apply_rir(const Waveform& w, const RirFilter& h) {
  require(w.sample_rate_hz == h.sample_rate_hz, "sample-rate mismatch");
  require(!h.impulse.empty(), "empty rir impulse");
  const std::size_t n = w.size();
  const std::size_t hl = h.impulse.size();
  std::vector<double> out(n, 0.0);
  if (n * hl > kRirFftThreshold) {
    std::vector<double> full = fft_full_convolution(w.samples, h.impulse);
    full.resize(n);
    out = std::move(full);
  } else {
    for (std::size_t m = 0; m < n; ++m) {
      const std::size_t kmax = std::min(hl - 1, m);
      double acc = 0.0;
      for (std::size_t k = 0; k <= kmax; ++k) acc += h.impulse[k] * w.samples[m - k];
      out[m] = acc;
    }
  }
  return Waveform(std::move(out), w.sample_rate_hz);
}

// Adjoint of apply_rir: maps d(loss)/d(output) to d(loss)/d(input).
inline std::vector<double> apply_rir_adjoint(const std::vector<double>& dout,
                                             const RirFilter& h) {
  const std::size_t n = dout.size();
  const std::size_t hl = h.impulse.size();
  std::vector<double> din(n, 0.0);
  if (n * hl > kRirFftThreshold) {
    // Correlation as a convolution with the reversed filter.
    std::vector<double> rev(h.impulse.rbegin(), h.impulse.rend());
    const std::vector<double> full = fft_full_convolution(rev, dout);
    for (std::size_t j = 0; j < n; ++j) din[j] = full[j + hl - 1];
  } else {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      const std::size_t kmax = std::min(hl - 1, n - 1 - j);
      for (std::size_t k = 0; k <= kmax; ++k) acc += h.impulse[k] * dout[j + k];
      din[j] = acc;
    }
  }
  return din;
}

// Mean one-sided periodogram of a filter at the given analysis length.
inline std::vector<double> rir_power_profile(const std::vector<RirFilter>& filters,
                                             int frame_len) {
  require(!filters.empty(), "empty bank");
  require(frame_len > 0 && (frame_len & (frame_len - 1)) == 0,
          "frame_len must be a power of two");
  const int n_bins = frame_len / 2 + 1;
  std::vector<double> profile(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(frame_len));
  int n_chunks_total = 0;
  for (const RirFilter& h : filters) {
    const std::size_t len = h.impulse.size();
    const std::size_t chunks = (len + frame_len - 1) / frame_len;
    for (std::size_t c = 0; c < chunks; ++c) {
      for (int n = 0; n < frame_len; ++n) {
        const std::size_t idx = c * frame_len + n;
        buf[n] = {idx < len ? h.impulse[idx] : 0.0, 0.0};
      }
      detail::fft(buf, false);
      for (int k = 0; k < n_bins; ++k) profile[k] += std::norm(buf[k]);
      ++n_chunks_total;
    }
  }
  for (double& p : profile) p = std::max(p / n_chunks_total, 1e-12);
  return profile;
}

// A set of simulated room filters plus their average spectral power profile.
struct RirBank {
  std::vector<RirFilter> filters;
  std::vector<double> power_profile;  // one-sided, strictly positive
  int profile_frame_len = 512;

  void validate() const {
    require(!filters.empty(), "empty bank");
    require(static_cast<int>(power_profile.size()) == profile_frame_len / 2 + 1,
            "bank profile size mismatch");
    for (double p : power_profile) require(p > 0.0, "bank profile must be strictly positive");
  }
};

inline RirBank make_rir_bank(int n_filters, double rt60_lo, double rt60_hi, std::uint64_t seed,
                             int sample_rate_hz, int profile_frame_len = 512) {
  require(n_filters >= 1, "bank needs at least one filter");
  require(rt60_lo <= rt60_hi, "rt60 range inverted");
  RirBank bank;
  bank.profile_frame_len = profile_frame_len;
  for (int i = 0; i < n_filters; ++i) {
    const double t = n_filters == 1 ? 0.0 : static_cast<double>(i) / (n_filters - 1);
    const double rt60 = rt60_lo + t * (rt60_hi - rt60_lo);
    bank.filters.push_back(simulate_rir(rt60, mix_seed(seed, 0xba43u + i), sample_rate_hz));
  }
  bank.power_profile = rir_power_profile(bank.filters, profile_frame_len);
  bank.validate();
  return bank;
}

}  // namespace rsdg
