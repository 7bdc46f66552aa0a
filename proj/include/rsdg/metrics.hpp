#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <utility>
#include <vector>

#include "rsdg/error.hpp"
#include "rsdg/signal.hpp"
#include "rsdg/victim.hpp"

namespace rsdg {

// ---------------------------------------------------------------------------
// WER
// ---------------------------------------------------------------------------

struct WerResult {
  double pct = 0.0;
  int substitutions = 0;
  int insertions = 0;
  int deletions = 0;
};

// Token-level Levenshtein alignment with unit costs. Ties between optimal
// paths are broken deterministically: prefer substitutions, then
// insertions, then deletions.
inline WerResult wer(const Transcript& ref, const Transcript& hyp) {
  require(!ref.empty(), "undefined WER: empty reference");
  const int m = static_cast<int>(ref.size());
  const int n = static_cast<int>(hyp.size());

  struct Cell {
    int cost = 0, subs = 0, ins = 0, dels = 0;
  };
  // Ordering: lower cost, then more substitutions, then more insertions.
  auto better = [](const Cell& a, const Cell& b) {
    if (a.cost != b.cost) return a.cost < b.cost;
    if (a.subs != b.subs) return a.subs > b.subs;
    return a.ins > b.ins;
  };

  std::vector<Cell> prev(static_cast<std::size_t>(n) + 1), cur(static_cast<std::size_t>(n) + 1);
  for (int j = 0; j <= n; ++j) prev[j] = {j, 0, j, 0};
  for (int i = 1; i <= m; ++i) {
    cur[0] = {i, 0, 0, i};
    for (int j = 1; j <= n; ++j) {
      const bool match = ref[i - 1] == hyp[j - 1];
      Cell diag = prev[j - 1];
      if (!match) {
        diag.cost += 1;
        diag.subs += 1;
      }
      Cell ins = cur[j - 1];
      ins.cost += 1;
      ins.ins += 1;
      Cell del = prev[j];
      del.cost += 1;
      del.dels += 1;

      Cell best = diag;
      if (better(ins, best)) best = ins;
      if (better(del, best)) best = del;
      cur[j] = best;
    }
    std::swap(prev, cur);
  }
  const Cell& out = prev[n];
  WerResult r;
  r.substitutions = out.subs;
  r.insertions = out.ins;
  r.deletions = out.dels;
  r.pct = 100.0 * (out.subs + out.ins + out.dels) / static_cast<double>(m);
  return r;
}

// ---------------------------------------------------------------------------
// SLA
// ---------------------------------------------------------------------------

// Sentence-level accuracy: percentage of exact transcript matches.
inline double sla(const std::vector<std::pair<Transcript, Transcript>>& results) {
  require(!results.empty(), "sla: empty result set");
  int correct = 0;
  for (const auto& [hyp, truth] : results) correct += (hyp == truth) ? 1 : 0;
  return 100.0 * correct / static_cast<double>(results.size());
}

// ---------------------------------------------------------------------------
// Segmental SNR
// ---------------------------------------------------------------------------

constexpr double kSegSnrFloorDb = -10.0;
constexpr double kSegSnrCeilDb = 35.0;

// Frame-averaged clamped SNR over frames whose clean energy exceeds
// -60 dBFS (full scale = 1.0).
inline double seg_snr(const Waveform& clean, const Waveform& processed, int frame_len) {
  require(clean.size() == processed.size(), "seg_snr: length mismatch");
  require(frame_len >= 1, "seg_snr: frame_len must be positive");
  require(clean.size() >= static_cast<std::size_t>(frame_len), "seg_snr: signal too short");

  const int n_frames = static_cast<int>(clean.size()) / frame_len;
  double acc = 0.0;
  int used = 0;
  for (int t = 0; t < n_frames; ++t) {
    double sig = 0.0, err = 0.0;
    for (int i = 0; i < frame_len; ++i) {
      const double c = clean.samples[t * frame_len + i];
      const double e = c - processed.samples[t * frame_len + i];
      sig += c * c;
      err += e * e;
    }
    if (sig / frame_len <= 1e-6) continue;  // below -60 dBFS
    double db;
    if (err == 0.0)
      db = kSegSnrCeilDb;
    else
      db = std::clamp(10.0 * std::log10(sig / err), kSegSnrFloorDb, kSegSnrCeilDb);
    acc += db;
    ++used;
  }
  require(used > 0, "seg_snr: no frames above the energy gate");
  return acc / used;
}

// ---------------------------------------------------------------------------
// STOI
// ---------------------------------------------------------------------------

namespace stoi_detail {

constexpr int kBands = 15;
constexpr double kLowestBandHz = 150.0;
constexpr int kSegmentFrames = 24;  // 384 ms at a 16 ms hop
constexpr double kBetaDb = -15.0;
constexpr double kSilenceRangeDb = 40.0;

struct BandFrames {
  std::vector<double> e;  // n_frames x kBands
  int n_frames = 0;
};

inline BandFrames band_decompose(const Spectrogram& s) {
  BandFrames out;
  out.n_frames = s.n_frames;
  out.e.assign(static_cast<std::size_t>(s.n_frames) * kBands, 0.0);
  const double bin_hz = static_cast<double>(s.sample_rate_hz) / s.spec.frame_len;
  for (int b = 0; b < kBands; ++b) {
    const double cf = kLowestBandHz * std::pow(2.0, b / 3.0);
    const double lo = cf * std::pow(2.0, -1.0 / 6.0);
    const double hi = cf * std::pow(2.0, 1.0 / 6.0);
    const int k_lo = std::max(1, static_cast<int>(std::ceil(lo / bin_hz)));
    const int k_hi = std::min(s.n_bins - 1, static_cast<int>(std::floor(hi / bin_hz)));
    for (int t = 0; t < s.n_frames; ++t) {
      double acc = 0.0;
      for (int k = k_lo; k <= k_hi; ++k) acc += std::norm(s.at(t, k));
      out.e[t * kBands + b] = std::sqrt(acc);
    }
  }
  return out;
}

}  // namespace stoi_detail

// Short-time objective intelligibility: one-third-octave band envelopes
// (15 bands from 150 Hz), 384 ms segments, clipped normalized correlation
// averaged over bands and segments, clamped to [0, 1]. Works on 16 kHz
// input only.
inline double stoi(const Waveform& clean, const Waveform& processed) {
  require(clean.sample_rate_hz == kDefaultSampleRate &&
              processed.sample_rate_hz == kDefaultSampleRate,
          "stoi: only 16 kHz input supported");
  require(clean.size() == processed.size(), "stoi: length mismatch");

  const FrameSpec spec{512, 256, Window::kHann};
  require(clean.size() >= static_cast<std::size_t>(spec.frame_len +
                                                   (stoi_detail::kSegmentFrames - 1) * spec.hop_len),
          "stoi: signal shorter than one analysis segment");

  const Spectrogram sc = stft(clean, spec);
  const Spectrogram sp = stft(processed, spec);

  // Remove frames more than 40 dB below the loudest clean frame.
  std::vector<double> frame_energy(static_cast<std::size_t>(sc.n_frames), 0.0);
  double max_energy = 0.0;
  for (int t = 0; t < sc.n_frames; ++t) {
    double acc = 0.0;
    for (int k = 0; k < sc.n_bins; ++k) acc += std::norm(sc.at(t, k));
    frame_energy[t] = acc;
    max_energy = std::max(max_energy, acc);
  }
  const double gate = max_energy * std::pow(10.0, -stoi_detail::kSilenceRangeDb / 10.0);
  std::vector<int> keep;
  for (int t = 0; t < sc.n_frames; ++t)
    if (frame_energy[t] >= gate) keep.push_back(t);
  require(static_cast<int>(keep.size()) >= stoi_detail::kSegmentFrames,
          "stoi: too few active frames");

  const stoi_detail::BandFrames bc = stoi_detail::band_decompose(sc);
  const stoi_detail::BandFrames bp = stoi_detail::band_decompose(sp);

  const int n = stoi_detail::kSegmentFrames;
  const double clip_gain = 1.0 + std::pow(10.0, -stoi_detail::kBetaDb / 20.0);
  double acc = 0.0;
  int count = 0;
  std::vector<double> x(static_cast<std::size_t>(n)), y(static_cast<std::size_t>(n));
  for (std::size_t seg_end = n; seg_end <= keep.size(); ++seg_end) {
    for (int b = 0; b < stoi_detail::kBands; ++b) {
      double nx = 0.0, ny = 0.0;
      for (int i = 0; i < n; ++i) {
        x[i] = bc.e[keep[seg_end - n + i] * stoi_detail::kBands + b];
        y[i] = bp.e[keep[seg_end - n + i] * stoi_detail::kBands + b];
        nx += x[i] * x[i];
        ny += y[i] * y[i];
      }
      const double scale = ny > 0.0 ? std::sqrt(nx / ny) : 0.0;
      for (int i = 0; i < n; ++i) y[i] = std::min(y[i] * scale, clip_gain * x[i]);

      double mx = 0.0, my = 0.0;
      for (int i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
      }
      mx /= n;
      my /= n;
      double cov = 0.0, vx = 0.0, vy = 0.0;
      for (int i = 0; i < n; ++i) {
        cov += (x[i] - mx) * (y[i] - my);
        vx += (x[i] - mx) * (x[i] - mx);
        vy += (y[i] - my) * (y[i] - my);
      }
      if (vx > 0.0 && vy > 0.0) acc += cov / std::sqrt(vx * vy);
      ++count;
    }
  }
  require(count > 0, "stoi: no band segments");
  return std::clamp(acc / count, 0.0, 1.0);
}

// Full metric row for one evaluation set.
struct MetricsReport {
  double wer_pct = 0.0;
  double sla_pct = 0.0;
  double seg_snr_db = 0.0;
  double stoi_score = 0.0;
  int n_correct = 0;
  int n_total = 0;
  int substitutions = 0;
  int insertions = 0;
  int deletions = 0;
};

}  // namespace rsdg
