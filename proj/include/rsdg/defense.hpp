#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "rsdg/error.hpp"
#include "rsdg/nn.hpp"
#include "rsdg/rng.hpp"
#include "rsdg/signal.hpp"
#include "rsdg/victim.hpp"

namespace rsdg {

// ---------------------------------------------------------------------------
// Patch codec: waveform segments <-> normalized log-magnitude patches
// ---------------------------------------------------------------------------

// The generator models the low frequency band of a segment's spectrogram as
// a (frames x bins) patch in (-1, 1). Keyword energy sits below 1 kHz, so
// the dropped bins carry only the noise floor.
struct PatchCodec {
  FrameSpec spec{512, 128, Window::kHann};
  int patch_bins = 32;
  int segment_len = 4000;
  double log_lo = -11.5;
  double log_hi = 4.0;
  static constexpr double kMagEps = 1e-5;

  int patch_frames() const { return stft_frame_count(segment_len, spec); }
  Shape patch_shape() const { return {patch_frames(), patch_bins}; }

  double c0() const { return 0.5 * (log_lo + log_hi); }
  double c1() const { return 0.5 * (log_hi - log_lo); }

  struct Encoded {
    Tensor patch;                                  // (frames, bins) in (-1, 1)
    std::vector<std::complex<double>> phases;      // unit phasors, frames x bins
    int n_frames = 0;
  };

  Encoded encode(const Waveform& segment) const {
    require(static_cast<int>(segment.size()) >= segment_len, "segment too short to encode");
    Waveform head(std::vector<double>(segment.samples.begin(),
                                      segment.samples.begin() + segment_len),
                  segment.sample_rate_hz);
    const Spectrogram s = stft(head, spec);
    Encoded enc;
    enc.n_frames = s.n_frames;
    enc.patch = Tensor::zeros(patch_shape());
    enc.phases.assign(static_cast<std::size_t>(s.n_frames) * patch_bins, {1.0, 0.0});
    for (int t = 0; t < s.n_frames; ++t)
      for (int b = 0; b < patch_bins; ++b) {
        const std::complex<double> v = s.at(t, b);
        const double mag = std::abs(v);
        enc.patch.v[t * patch_bins + b] =
            std::clamp((std::log(mag + kMagEps) - c0()) / c1(), -1.0, 1.0);
        enc.phases[t * patch_bins + b] = mag > 0.0 ? v / mag : std::complex<double>(1.0, 0.0);
      }
    return enc;
  }

  // Reconstructs a segment from a patch, borrowing the given phases. Bins
  // beyond the modeled band are zero; the istft tail is zero-padded back to
  // the segment length.
  Waveform decode(const Tensor& patch, const std::vector<std::complex<double>>& phases,
                  int sample_rate_hz) const {
    require(patch.shape == patch_shape(), "decode: patch shape mismatch");
    Spectrogram s;
    s.n_frames = patch_frames();
    s.n_bins = spec.frame_len / 2 + 1;
    s.spec = spec;
    s.sample_rate_hz = sample_rate_hz;
    s.bins.assign(static_cast<std::size_t>(s.n_frames) * s.n_bins, {0.0, 0.0});
    for (int t = 0; t < s.n_frames; ++t)
      for (int b = 0; b < patch_bins; ++b) {
        const double mag =
            std::max(std::exp(c1() * patch.v[t * patch_bins + b] + c0()) - kMagEps, 0.0);
        s.bins[t * s.n_bins + b] = mag * phases[t * patch_bins + b];
      }
    Waveform w = istft(s);
    w.samples.resize(static_cast<std::size_t>(segment_len), 0.0);
    return w;
  }

  // Gradient of a loss through decode: d(loss)/d(samples) -> d(loss)/d(patch).
  Tensor decode_adjoint(const Tensor& patch, const std::vector<std::complex<double>>& phases,
                        const std::vector<double>& dsamples) const {
    const int n_frames = patch_frames();
    const std::size_t istft_len =
        static_cast<std::size_t>(n_frames - 1) * spec.hop_len + spec.frame_len;
    std::vector<double> dout(istft_len, 0.0);
    for (std::size_t i = 0; i < istft_len && i < dsamples.size(); ++i) dout[i] = dsamples[i];
    const std::vector<std::complex<double>> dbins =
        istft_adjoint(dout, spec, n_frames, istft_len);

    const int full_bins = spec.frame_len / 2 + 1;
    Tensor dpatch = Tensor::zeros(patch_shape());
    for (int t = 0; t < n_frames; ++t)
      for (int b = 0; b < patch_bins; ++b) {
        const std::complex<double> ph = phases[t * patch_bins + b];
        const std::complex<double> db = dbins[t * full_bins + b];
        const double dmag = db.real() * ph.real() + db.imag() * ph.imag();
        const double mag_plus = std::exp(c1() * patch.v[t * patch_bins + b] + c0());
        if (mag_plus - kMagEps > 0.0)
          dpatch.v[t * patch_bins + b] = dmag * c1() * mag_plus;
      }
    return dpatch;
  }
};

// ---------------------------------------------------------------------------
// Latent projection
// ---------------------------------------------------------------------------

enum class DistanceSpace { kMfcc, kSpectrogram };

struct ProjectionConfig {
  int n_restarts = 4;
  int steps_per_restart = 300;
  double lr = 0.05;
  int latent_dim = 64;
  DistanceSpace distance = DistanceSpace::kMfcc;
  std::uint64_t seed = 1;
  PatchCodec codec;
  int mfcc_mels = 26;
  int mfcc_coeffs = 13;

  void validate() const {
    require(n_restarts >= 1, "projection needs at least one restart");
    require(steps_per_restart >= 1, "projection needs at least one step");
    require(lr > 0.0, "projection lr must be positive");
    require(latent_dim >= 1, "latent dim must be positive");
  }
};

struct DefenseResult {
  Waveform x_syn;
  double residual = 0.0;             // squared distance summed over segments
  std::vector<double> z_star;        // per-segment latents, concatenated
  Transcript transcript_in;
  Transcript transcript_out;
};

namespace defense_detail {

struct SegmentObjective {
  const ProjectionConfig& config;
  const PatchCodec::Encoded& target_enc;
  std::vector<double> target_repr;  // mfcc frames or patch values of x_in
  int sample_rate_hz;

  SegmentObjective(const ProjectionConfig& cfg, const PatchCodec::Encoded& enc,
                   const Waveform& segment)
      : config(cfg), target_enc(enc), sample_rate_hz(segment.sample_rate_hz) {
    if (config.distance == DistanceSpace::kSpectrogram) {
      target_repr = enc.patch.v;
    } else {
      MfccGraph graph(config.codec.spec, config.mfcc_mels, config.mfcc_coeffs);
      Waveform head(std::vector<double>(segment.samples.begin(),
                                        segment.samples.begin() + config.codec.segment_len),
                    segment.sample_rate_hz);
      graph.forward(head);
      target_repr = graph.out.frames;
    }
  }

  // Squared distance and its gradient with respect to the generator output.
  std::pair<double, Tensor> value_and_patch_grad(const Tensor& patch) const {
    if (config.distance == DistanceSpace::kSpectrogram) {
      Tensor dpatch = Tensor::zeros(patch.shape);
      double acc = 0.0;
      for (std::size_t i = 0; i < patch.v.size(); ++i) {
        const double r = patch.v[i] - target_repr[i];
        acc += r * r;
        dpatch.v[i] = 2.0 * r;
      }
      return {acc, std::move(dpatch)};
    }
    const Waveform w = config.codec.decode(patch, target_enc.phases, sample_rate_hz);
    MfccGraph graph(config.codec.spec, config.mfcc_mels, config.mfcc_coeffs);
    graph.forward(w);
    require(graph.out.frames.size() == target_repr.size(), "projection repr size mismatch");
    double acc = 0.0;
    std::vector<double> dmfcc(target_repr.size());
    for (std::size_t i = 0; i < target_repr.size(); ++i) {
      const double r = graph.out.frames[i] - target_repr[i];
      acc += r * r;
      dmfcc[i] = 2.0 * r;
    }
    const std::vector<double> dsamples = graph.backward(dmfcc);
    return {acc, config.codec.decode_adjoint(patch, target_enc.phases, dsamples)};
  }
};

}  // namespace defense_detail

// Per-restart Adam descent on ||repr(G(z)) - repr(x_in)||^2 from seeded
// standard-normal starts; returns the best final iterate across restarts.
inline std::pair<std::vector<double>, double> project_latent(Network& generator,
                                                             const Waveform& x_in,
                                                             const ProjectionConfig& config) {
  config.validate();
  require(shape_numel(generator.input_shape()) == config.latent_dim,
          "generator latent dim does not match the projection config");
  require(static_cast<int>(x_in.size()) >= config.codec.segment_len,
          "projection input shorter than one segment");
  require(generator.output_shape() == config.codec.patch_shape(),
          "generator output does not match the patch shape");

  const PatchCodec::Encoded enc = config.codec.encode(x_in);
  const defense_detail::SegmentObjective objective(config, enc, x_in);

  std::vector<double> best_z;
  double best_residual = std::numeric_limits<double>::infinity();

  for (int restart = 0; restart < config.n_restarts; ++restart) {
    Rng rng(mix_seed(config.seed, 0x9a03 + 131ull * restart));
    std::vector<double> z(static_cast<std::size_t>(config.latent_dim));
    for (double& v : z) v = rng.normal();
    AdamState adam;

    double residual = std::numeric_limits<double>::infinity();
    for (int step = 0; step < config.steps_per_restart; ++step) {
      Tensor zt({config.latent_dim}, z);
      const Tensor patch = generator.forward(zt);
      auto [value, dpatch] = objective.value_and_patch_grad(patch);
      residual = value;
      generator.zero_grads();
      const Tensor dz = generator.backward(dpatch);
      adam_step(z, dz.v, adam, config.lr);
    }
    // Residual of the final iterate.
    Tensor zt({config.latent_dim}, z);
    const Tensor patch = generator.forward(zt);
    residual = objective.value_and_patch_grad(patch).first;
    if (residual < best_residual) {
      best_residual = residual;
      best_z = z;
    }
  }
  return {best_z, best_residual};
}

// Independent recomputation of the projection distance for a given latent.
inline double projection_residual(Network& generator, const Waveform& x_in,
                                  const std::vector<double>& z, const ProjectionConfig& config) {
  const PatchCodec::Encoded enc = config.codec.encode(x_in);
  const defense_detail::SegmentObjective objective(config, enc, x_in);
  Tensor zt({config.latent_dim}, z);
  const Tensor patch = generator.forward(zt);
  return objective.value_and_patch_grad(patch).first;
}

// Projects every segment of the input onto the generator's range,
// re-synthesizes with the input's phases, and transcribes both signals.
inline DefenseResult defend(Network& generator, const VictimModel& victim, const Waveform& x_in,
                            const ProjectionConfig& config) {
  config.validate();
  require(!x_in.samples.empty(), "defend: zero-length input");
  const int seg_len = config.codec.segment_len;
  require(seg_len == victim.segment_len(), "codec segment must match the victim segment");
  const int n_segs = static_cast<int>(x_in.size()) / seg_len;
  require(n_segs >= 1, "defend: input shorter than one segment");

  DefenseResult result;
  result.x_syn = Waveform(std::vector<double>(x_in.size(), 0.0), x_in.sample_rate_hz);

  for (int s = 0; s < n_segs; ++s) {
    Waveform segment(std::vector<double>(
                         x_in.samples.begin() + static_cast<std::ptrdiff_t>(s) * seg_len,
                         x_in.samples.begin() + static_cast<std::ptrdiff_t>(s + 1) * seg_len),
                     x_in.sample_rate_hz);
    ProjectionConfig seg_config = config;
    seg_config.seed = mix_seed(config.seed, 0xd3f + static_cast<std::uint64_t>(s));
    auto [z, residual] = project_latent(generator, segment, seg_config);

    const PatchCodec::Encoded enc = config.codec.encode(segment);
    Tensor zt({config.latent_dim}, z);
    const Tensor patch = generator.forward(zt);
    const Waveform synth = config.codec.decode(patch, enc.phases, x_in.sample_rate_hz);
    for (int i = 0; i < seg_len; ++i) result.x_syn.samples[s * seg_len + i] = synth.samples[i];

    result.residual += residual;
    result.z_star.insert(result.z_star.end(), z.begin(), z.end());
  }

  // Trailing samples beyond the last whole segment pass through unchanged.
  for (std::size_t i = static_cast<std::size_t>(n_segs) * seg_len; i < x_in.size(); ++i)
    result.x_syn.samples[i] = x_in.samples[i];

  result.transcript_in = transcribe(victim, x_in);
  result.transcript_out = transcribe(victim, result.x_syn);
  return result;
}

}  // namespace rsdg
