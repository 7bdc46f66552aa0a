#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <map>
#include <vector>

#include "rsdg/error.hpp"

namespace rsdg {

constexpr int kDefaultSampleRate = 16000;

// 1-D real sample sequence. Samples are dimensionless amplitudes with a
// nominal range of [-1, 1].
struct Waveform {
  std::vector<double> samples;
  int sample_rate_hz = kDefaultSampleRate;

  Waveform() = default;
  Waveform(std::vector<double> s, int rate) : samples(std::move(s)), sample_rate_hz(rate) {
    require(rate > 0, "sample rate must be positive");
  }

  std::size_t size() const { return samples.size(); }

  bool finite() const {
    for (double x : samples)
      if (!std::isfinite(x)) return false;
    return true;
  }
};

enum class Window { kHann, kRectangular };

struct FrameSpec {
  int frame_len = 512;
  int hop_len = 128;
  Window window = Window::kHann;

  void validate() const {
    require(frame_len > 0 && (frame_len & (frame_len - 1)) == 0,
            "frame_len must be a power of two");
    require(hop_len > 0 && hop_len <= frame_len, "0 < hop_len <= frame_len required");
  }
};

inline std::vector<double> make_window(const FrameSpec& spec) {
  std::vector<double> w(static_cast<std::size_t>(spec.frame_len), 1.0);
  if (spec.window == Window::kHann) {
    // Periodic Hann; sums to a constant under hop = frame/4 overlap-add.
    const double c = 2.0 * M_PI / spec.frame_len;
    for (int n = 0; n < spec.frame_len; ++n) w[n] = 0.5 - 0.5 * std::cos(c * n);
  }
  return w;
}

// ---------------------------------------------------------------------------
// Radix-2 FFT with a per-size twiddle cache.
// ---------------------------------------------------------------------------

namespace detail {

struct FftPlan {
  int n = 0;
  std::vector<int> rev;
  std::vector<std::complex<double>> tw;  // forward twiddles per stage, concatenated

  explicit FftPlan(int size) : n(size) {
    rev.resize(n);
    int log2n = 0;
    while ((1 << log2n) < n) ++log2n;
    for (int i = 0; i < n; ++i) {
      int r = 0;
      for (int b = 0; b < log2n; ++b)
        if (i & (1 << b)) r |= 1 << (log2n - 1 - b);
      rev[i] = r;
    }
    for (int len = 2; len <= n; len <<= 1) {
      const double ang = -2.0 * M_PI / len;
      for (int k = 0; k < len / 2; ++k) tw.emplace_back(std::cos(ang * k), std::sin(ang * k));
    }
  }
};

inline const FftPlan& fft_plan(int n) {
  thread_local std::map<int, FftPlan> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, FftPlan(n)).first;
  return it->second;
}

// In-place transform. inverse=true applies the conjugate transform and the
// 1/n scale.
inline void fft(std::vector<std::complex<double>>& a, bool inverse) {
  const int n = static_cast<int>(a.size());
  require(n > 0 && (n & (n - 1)) == 0, "fft size must be a power of two");
  const FftPlan& plan = fft_plan(n);
  for (int i = 0; i < n; ++i)
    if (i < plan.rev[i]) std::swap(a[i], a[plan.rev[i]]);
  std::size_t tw_off = 0;
  for (int len = 2; len <= n; len <<= 1) {
    for (int i = 0; i < n; i += len) {
      for (int k = 0; k < len / 2; ++k) {
        std::complex<double> w = plan.tw[tw_off + k];
        if (inverse) w = std::conj(w);
        const std::complex<double> u = a[i + k];
        const std::complex<double> t = a[i + k + len / 2] * w;
        a[i + k] = u + t;
        a[i + k + len / 2] = u - t;
      }
    }
    tw_off += len / 2;
  }
  if (inverse) {
    const double s = 1.0 / n;
    for (auto& x : a) x *= s;
  }
}

}  // namespace detail

// Full linear convolution (length |a| + |b| - 1) via a single zero-padded
// FFT; used by the long-filter paths where the direct sum is too slow.
inline std::vector<double> fft_full_convolution(const std::vector<double>& a,
                                                const std::vector<double>& b) {
  require(!a.empty() && !b.empty(), "convolution of empty sequences");
  const std::size_t out_len = a.size() + b.size() - 1;
  std::size_t n = 1;
  while (n < out_len) n <<= 1;
  std::vector<std::complex<double>> fa(n, {0.0, 0.0}), fb(n, {0.0, 0.0});
  for (std::size_t i = 0; i < a.size(); ++i) fa[i] = a[i];
  for (std::size_t i = 0; i < b.size(); ++i) fb[i] = b[i];
  detail::fft(fa, false);
  detail::fft(fb, false);
  for (std::size_t i = 0; i < n; ++i) fa[i] *= fb[i];
  detail::fft(fa, true);
  std::vector<double> out(out_len);
  for (std::size_t i = 0; i < out_len; ++i) out[i] = fa[i].real();
  return out;
}

// ---------------------------------------------------------------------------
// Spectrogram
// ---------------------------------------------------------------------------

// One-sided complex STFT output: n_frames x n_bins with n_bins = frame/2 + 1.
struct Spectrogram {
  std::vector<std::complex<double>> bins;  // row-major, n_frames x n_bins
  int n_frames = 0;
  int n_bins = 0;
  FrameSpec spec;
  int sample_rate_hz = kDefaultSampleRate;

  std::complex<double>& at(int frame, int bin) { return bins[frame * n_bins + bin]; }
  const std::complex<double>& at(int frame, int bin) const { return bins[frame * n_bins + bin]; }

  bool finite() const {
    for (const auto& b : bins)
      if (!std::isfinite(b.real()) || !std::isfinite(b.imag())) return false;
    return true;
  }
};

inline int stft_frame_count(std::size_t n_samples, const FrameSpec& spec) {
  if (n_samples < static_cast<std::size_t>(spec.frame_len)) return 0;
  return static_cast<int>((n_samples - spec.frame_len) / spec.hop_len) + 1;
}

inline Spectrogram stft(const Waveform& w, const FrameSpec& spec) {
  spec.validate();
  require(w.size() >= static_cast<std::size_t>(spec.frame_len), "signal too short");
  const int n_frames = stft_frame_count(w.size(), spec);
  const int n_bins = spec.frame_len / 2 + 1;
  const std::vector<double> win = make_window(spec);

  Spectrogram s;
  s.n_frames = n_frames;
  s.n_bins = n_bins;
  s.spec = spec;
  s.sample_rate_hz = w.sample_rate_hz;
  s.bins.resize(static_cast<std::size_t>(n_frames) * n_bins);

  std::vector<std::complex<double>> buf(static_cast<std::size_t>(spec.frame_len));
  for (int t = 0; t < n_frames; ++t) {
    const int off = t * spec.hop_len;
    for (int n = 0; n < spec.frame_len; ++n) buf[n] = {win[n] * w.samples[off + n], 0.0};
    detail::fft(buf, false);
    for (int k = 0; k < n_bins; ++k) s.bins[t * n_bins + k] = buf[k];
  }
  return s;
}

// Overlap-add inverse with per-sample window-power normalization. Exact
// (up to roundoff) wherever the window power sum is nonzero; with a Hann
// window the first and last few samples are outside that region, which is
// why round-trip checks exclude the edges.
inline Waveform istft(const Spectrogram& s) {
  s.spec.validate();
  require(s.n_bins == s.spec.frame_len / 2 + 1, "inconsistent spec: bin count");
  require(static_cast<int>(s.bins.size()) == s.n_frames * s.n_bins,
          "inconsistent spec: bin storage");
  require(s.n_frames >= 1, "inconsistent spec: empty spectrogram");
  if (s.spec.window == Window::kHann)
    require(s.spec.hop_len <= s.spec.frame_len / 2,
            "inconsistent spec: hann istft requires hop <= frame/2");
  require(s.finite(), "inconsistent spec: non-finite bins");

  const int frame = s.spec.frame_len;
  const int hop = s.spec.hop_len;
  const std::vector<double> win = make_window(s.spec);
  const std::size_t out_len = static_cast<std::size_t>(s.n_frames - 1) * hop + frame;

  std::vector<double> acc(out_len, 0.0), den(out_len, 0.0);
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(frame));
  for (int t = 0; t < s.n_frames; ++t) {
    for (int k = 0; k <= frame / 2; ++k) buf[k] = s.at(t, k);
    for (int k = 1; k < frame / 2; ++k) buf[frame - k] = std::conj(s.at(t, k));
    detail::fft(buf, true);
    const int off = t * hop;
    for (int n = 0; n < frame; ++n) {
      acc[off + n] += win[n] * buf[n].real();
      den[off + n] += win[n] * win[n];
    }
  }
  for (std::size_t i = 0; i < out_len; ++i) acc[i] = den[i] > 1e-12 ? acc[i] / den[i] : 0.0;
  return Waveform(std::move(acc), s.sample_rate_hz);
}

// Adjoint of istft as a real-linear map from one-sided complex bins to the
// output samples. Feeds gradients from waveform space back into spectrogram
// space. The returned matrix matches the bins layout of the forward call.
inline std::vector<std::complex<double>> istft_adjoint(const std::vector<double>& dout,
                                                       const FrameSpec& spec, int n_frames,
                                                       std::size_t out_len) {
  spec.validate();
  const int frame = spec.frame_len;
  const int hop = spec.hop_len;
  const int n_bins = frame / 2 + 1;
  const std::vector<double> win = make_window(spec);
  require(dout.size() == out_len, "istft_adjoint: upstream length mismatch");
  require(out_len == static_cast<std::size_t>(n_frames - 1) * hop + frame,
          "istft_adjoint: frame count mismatch");

  // Rebuild the normalization used by the forward pass.
  std::vector<double> den(out_len, 0.0);
  for (int t = 0; t < n_frames; ++t)
    for (int n = 0; n < frame; ++n) den[t * hop + n] += win[n] * win[n];

  std::vector<std::complex<double>> dbins(static_cast<std::size_t>(n_frames) * n_bins);
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(frame));
  for (int t = 0; t < n_frames; ++t) {
    const int off = t * hop;
    for (int n = 0; n < frame; ++n) {
      const double d = den[off + n];
      buf[n] = {d > 1e-12 ? dout[off + n] * win[n] / d : 0.0, 0.0};
    }
    // d/d full[k] of (1/N) sum_k full[k] e^{+i...} taken through Re().
    detail::fft(buf, false);
    for (int k = 0; k < n_bins; ++k) {
      std::complex<double> d = buf[k] / static_cast<double>(frame);
      if (k != 0 && k != frame / 2) d += std::conj(buf[frame - k]) / static_cast<double>(frame);
      dbins[t * n_bins + k] = d;
    }
  }
  return dbins;
}

// ---------------------------------------------------------------------------
// MFCC
// ---------------------------------------------------------------------------

struct MfccSequence {
  std::vector<double> frames;  // row-major, n_frames x n_coeffs
  int n_frames = 0;
  int n_coeffs = 13;

  double& at(int frame, int coeff) { return frames[frame * n_coeffs + coeff]; }
  double at(int frame, int coeff) const { return frames[frame * n_coeffs + coeff]; }
};

constexpr double kMfccPowerEps = 1e-12;
constexpr double kMfccLogFloor = 1e-10;

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// Triangular mel filterbank over the one-sided bins, n_mels x n_bins.
inline std::vector<double> mel_filterbank(int n_mels, int n_bins, int frame_len,
                                          int sample_rate_hz) {
  const double f_max = sample_rate_hz / 2.0;
  const double mel_max = hz_to_mel(f_max);
  std::vector<double> centers(static_cast<std::size_t>(n_mels) + 2);
  for (int i = 0; i < n_mels + 2; ++i) centers[i] = mel_to_hz(mel_max * i / (n_mels + 1));

  std::vector<double> fb(static_cast<std::size_t>(n_mels) * n_bins, 0.0);
  for (int j = 0; j < n_mels; ++j) {
    const double lo = centers[j], mid = centers[j + 1], hi = centers[j + 2];
    for (int k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate_hz / frame_len;
      double wgt = 0.0;
      if (f > lo && f < mid)
        wgt = (f - lo) / (mid - lo);
      else if (f >= mid && f < hi)
        wgt = (hi - f) / (hi - mid);
      fb[j * n_bins + k] = wgt;
    }
  }
  return fb;
}

// Orthonormal DCT-II matrix, n_coeffs x n_mels.
inline std::vector<double> dct_matrix(int n_coeffs, int n_mels) {
  std::vector<double> d(static_cast<std::size_t>(n_coeffs) * n_mels);
  for (int i = 0; i < n_coeffs; ++i) {
    const double s = (i == 0) ? std::sqrt(1.0 / n_mels) : std::sqrt(2.0 / n_mels);
    for (int j = 0; j < n_mels; ++j)
      d[i * n_mels + j] = s * std::cos(M_PI * i * (2 * j + 1) / (2.0 * n_mels));
  }
  return d;
}

// MFCC forward pass with every intermediate cached, so the chain can be
// replayed backwards to get d(loss)/d(samples). Attacks and the projection
// defense both need that path.
struct MfccGraph {
  FrameSpec spec;
  int n_mels = 26;
  int n_coeffs = 13;
  int sample_rate_hz = kDefaultSampleRate;
  int n_frames = 0;
  std::size_t n_samples = 0;

  std::vector<double> fb;    // n_mels x n_bins
  std::vector<double> dct;   // n_coeffs x n_mels
  std::vector<std::complex<double>> spectra;  // n_frames x n_bins
  std::vector<double> mel;   // n_frames x n_mels (pre-log, floored power through fb)
  MfccSequence out;

  MfccGraph(const FrameSpec& s, int mels, int coeffs) : spec(s), n_mels(mels), n_coeffs(coeffs) {
    require(coeffs <= mels, "n_coeffs must not exceed n_mels");
  }

  const MfccSequence& forward(const Waveform& w) {
    spec.validate();
    require(w.size() >= static_cast<std::size_t>(spec.frame_len), "signal too short");
    sample_rate_hz = w.sample_rate_hz;
    n_samples = w.size();
    const int n_bins = spec.frame_len / 2 + 1;
    if (fb.empty()) fb = mel_filterbank(n_mels, n_bins, spec.frame_len, sample_rate_hz);
    if (dct.empty()) dct = dct_matrix(n_coeffs, n_mels);

    const Spectrogram s = stft(w, spec);
    n_frames = s.n_frames;
    spectra = s.bins;
    mel.assign(static_cast<std::size_t>(n_frames) * n_mels, 0.0);
    out.n_frames = n_frames;
    out.n_coeffs = n_coeffs;
    out.frames.assign(static_cast<std::size_t>(n_frames) * n_coeffs, 0.0);

    std::vector<double> logmel(static_cast<std::size_t>(n_mels));
    for (int t = 0; t < n_frames; ++t) {
      for (int j = 0; j < n_mels; ++j) {
        double acc = 0.0;
        for (int k = 0; k < n_bins; ++k) {
          const std::complex<double>& x = s.bins[t * n_bins + k];
          acc += fb[j * n_bins + k] * (x.real() * x.real() + x.imag() * x.imag() + kMfccPowerEps);
        }
        mel[t * n_mels + j] = acc;
        logmel[j] = std::log(acc + kMfccLogFloor);
      }
      for (int i = 0; i < n_coeffs; ++i) {
        double acc = 0.0;
        for (int j = 0; j < n_mels; ++j) acc += dct[i * n_mels + j] * logmel[j];
        out.frames[t * n_coeffs + i] = acc;
      }
    }
    return out;
  }

  // dcoeffs: n_frames x n_coeffs upstream gradient. Returns d(loss)/d(samples).
  std::vector<double> backward(const std::vector<double>& dcoeffs) const {
    require(dcoeffs.size() == out.frames.size(), "mfcc backward: upstream size mismatch");
    const int n_bins = spec.frame_len / 2 + 1;
    const std::vector<double> win = make_window(spec);
    std::vector<double> dw(n_samples, 0.0);

    std::vector<double> dlog(static_cast<std::size_t>(n_mels));
    std::vector<double> dpow(static_cast<std::size_t>(n_bins));
    std::vector<std::complex<double>> buf(static_cast<std::size_t>(spec.frame_len));
    for (int t = 0; t < n_frames; ++t) {
      for (int j = 0; j < n_mels; ++j) {
        double acc = 0.0;
        for (int i = 0; i < n_coeffs; ++i) acc += dct[i * n_mels + j] * dcoeffs[t * n_coeffs + i];
        dlog[j] = acc / (mel[t * n_mels + j] + kMfccLogFloor);
      }
      for (int k = 0; k < n_bins; ++k) {
        double acc = 0.0;
        for (int j = 0; j < n_mels; ++j) acc += fb[j * n_bins + k] * dlog[j];
        dpow[k] = acc;
      }
      // Through |X|^2 and the one-sided forward DFT back to the frame.
      std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
      for (int k = 0; k < n_bins; ++k) {
        const std::complex<double>& x = spectra[t * n_bins + k];
        buf[k] = {2.0 * x.real() * dpow[k], 2.0 * x.imag() * dpow[k]};
      }
      detail::fft(buf, true);  // conjugate transform; x N/N cancels, see below
      const int off = t * spec.hop_len;
      for (int n = 0; n < spec.frame_len; ++n) {
        // inverse fft applied a 1/N scale; the adjoint of the unscaled DFT
        // needs the plain conjugate transform, so scale back by N.
        dw[off + n] += win[n] * buf[n].real() * spec.frame_len;
      }
    }
    return dw;
  }
};

inline MfccSequence mfcc(const Waveform& w, const FrameSpec& spec, int n_mels = 26,
                         int n_coeffs = 13) {
  MfccGraph graph(spec, n_mels, n_coeffs);
  graph.forward(w);
  return graph.out;
}

// ---------------------------------------------------------------------------
// Loudness
// ---------------------------------------------------------------------------

// Peak-ratio loudness of a perturbation relative to its carrier, in dB.
// Negative values mean the perturbation is quieter than the carrier.
inline double loudness_db(const Waveform& delta, const Waveform& x_org) {
  require(delta.size() == x_org.size(), "loudness_db: length mismatch");
  double pd = 0.0, px = 0.0;
  for (double v : delta.samples) pd = std::max(pd, std::abs(v));
  for (double v : x_org.samples) px = std::max(px, std::abs(v));
  require(px > 0.0, "undefined reference loudness");
  if (pd == 0.0) return -std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(pd) - 20.0 * std::log10(px);
}

}  // namespace rsdg
