#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "rsdg/error.hpp"
#include "rsdg/linalg.hpp"
#include "rsdg/nn.hpp"
#include "rsdg/rir.hpp"
#include "rsdg/rng.hpp"
#include "rsdg/signal.hpp"
#include "rsdg/tensor.hpp"

namespace rsdg {

using Batch = std::vector<Tensor>;

// Items drawn from the 50/50 mixture of the data and generator
// distributions, with per-item provenance flags.
struct MuBatch {
  Batch items;
  std::vector<bool> is_real;
};

inline MuBatch mixture_sample(const Batch& real_batch, const Batch& fake_batch,
                              std::uint64_t seed) {
  require(!real_batch.empty() && !fake_batch.empty(), "mixture_sample: empty batches");
  require(real_batch.size() == fake_batch.size(), "mixture_sample: batch size mismatch");
  Rng rng(mix_seed(seed, 0x3135));
  MuBatch mu;
  mu.items.reserve(real_batch.size());
  mu.is_real.reserve(real_batch.size());
  for (std::size_t i = 0; i < real_batch.size(); ++i) {
    const bool pick_real = rng.uniform() < 0.5;
    mu.items.push_back(pick_real ? real_batch[i] : fake_batch[i]);
    mu.is_real.push_back(pick_real);
  }
  return mu;
}

// Critic-side quantities of one objective evaluation.
struct SipmEstimate {
  double ipm_value = 0.0;
  double sobolev_term = 0.0;  // E_mu ||grad_x f||^2
  double penalty = 0.0;
  double eta = 1.0;
};

enum class MatrixMode { kFeatureGram, kGradientGram };

struct RegularizerConfig {
  double eta = 1.0;
  int eigen_dim = 16;
  MatrixMode matrix_mode = MatrixMode::kFeatureGram;
  double rho = 10.0;  // hinge penalty weight in the critic loss

  void validate(std::size_t batch_size) const {
    require(eta > 0.0, "eta must be positive");
    require(rho > 0.0, "rho must be positive");
    require(eigen_dim >= 1, "eigen_dim must be positive");
    require(static_cast<std::size_t>(eigen_dim) <= batch_size,
            "eigen_dim must not exceed the batch size");
  }
};

inline double critic_value(Network& critic, const Tensor& x) {
  const Tensor y = critic.forward(x);
  require(y.v.size() == 1, "critic must produce a scalar");
  return y.v[0];
}

// Gradient of the critic output with respect to its input. Parameter
// gradients accumulate as a side effect; callers manage grad hygiene.
inline Tensor critic_input_gradient(Network& critic, const Tensor& x) {
  critic.forward(x);
  Tensor up = Tensor::zeros({1});
  up.v[0] = 1.0;
  return critic.backward(up);
}

// ipm_value = mean f(real) - mean f(fake); sobolev_term = E_mu ||grad f||^2.
// The training loop drives the constraint toward sobolev_term = 1 via an
// augmented Lagrangian; this function only measures.
inline SipmEstimate sipm_objective(Network& critic, const Batch& real_batch,
                                   const Batch& fake_batch, const MuBatch& mu,
                                   double eta = 1.0) {
  require(!real_batch.empty() && !fake_batch.empty(), "sipm_objective: empty batches");
  SipmEstimate est;
  est.eta = eta;
  double mr = 0.0, mf = 0.0;
  for (const Tensor& x : real_batch) mr += critic_value(critic, x);
  for (const Tensor& x : fake_batch) mf += critic_value(critic, x);
  est.ipm_value = mr / real_batch.size() - mf / fake_batch.size();

  double sob = 0.0;
  for (const Tensor& x : mu.items) {
    critic.zero_grads();
    const Tensor g = critic_input_gradient(critic, x);
    double s = 0.0;
    for (double v : g.v) s += v * v;
    sob += s;
  }
  est.sobolev_term = mu.items.empty() ? 0.0 : sob / mu.items.size();
  return est;
}

// ---------------------------------------------------------------------------
// Eigenvalue spectra of the batch Gram operators
// ---------------------------------------------------------------------------

// Fixed band-pooling basis: averages a tensor's trailing axis (frequency
// bins for patches) into n contiguous bands; flat inputs pool over
// contiguous index groups.
inline std::vector<double> band_pool(const Tensor& t, int n) {
  const int bins = t.shape.back();
  require(bins >= n, "band_pool: need at least n trailing bins, got " + std::to_string(bins));
  const int lead = t.numel() / bins;
  std::vector<double> out(static_cast<std::size_t>(n), 0.0);
  for (int b = 0; b < n; ++b) {
    const int lo = b * bins / n;
    const int hi = (b + 1) * bins / n;
    double acc = 0.0;
    for (int l = 0; l < lead; ++l)
      for (int k = lo; k < hi; ++k) acc += t.v[l * bins + k];
    out[b] = acc / (static_cast<double>(lead) * (hi - lo));
  }
  return out;
}

// A_f = F^T F / b for the b x n matrix F of penultimate critic features
// (first n feature dimensions).
inline SquareMatrix feature_gram(Network& critic, const Batch& batch, int n) {
  require(!batch.empty(), "feature_gram: empty batch");
  std::vector<std::vector<double>> rows;
  rows.reserve(batch.size());
  for (const Tensor& x : batch) {
    critic.forward(x);
    const Tensor& f = critic.features();
    require(static_cast<int>(f.v.size()) >= n,
            "feature dimension " + std::to_string(f.v.size()) + " below eigen_dim " +
                std::to_string(n));
    rows.emplace_back(f.v.begin(), f.v.begin() + n);
  }
  SquareMatrix a(n);
  for (const auto& row : rows)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) a.at(i, j) += row[i] * row[j];
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (double& v : a.a) v *= inv_b;
  return a;
}

// A_grad = G^T G / b where row i of G is the critic input gradient at
// mu-item i, band-pooled to n dimensions.
inline SquareMatrix gradient_gram(Network& critic, const MuBatch& mu, int n) {
  require(!mu.items.empty(), "gradient_gram: empty batch");
  SquareMatrix a(n);
  for (const Tensor& x : mu.items) {
    critic.zero_grads();
    const Tensor g = critic_input_gradient(critic, x);
    const std::vector<double> row = band_pool(g, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) a.at(i, j) += row[i] * row[j];
  }
  const double inv_b = 1.0 / static_cast<double>(mu.items.size());
  for (double& v : a.a) v *= inv_b;
  return a;
}

inline EigenSpectrum critic_eigen_spectrum(Network& critic, const Batch& batch, int n) {
  return eigenvalues(feature_gram(critic, batch, n));
}

inline EigenSpectrum gradient_eigen_spectrum(Network& critic, const MuBatch& mu, int n) {
  return eigenvalues(gradient_gram(critic, mu, n));
}

// ---------------------------------------------------------------------------
// Theta
// ---------------------------------------------------------------------------

// Spectral-magnitude weighting derived from noise shaped like the bank's
// room responses: white noise filtered to the bank's per-bin power profile,
// analyzed by stft, pooled into per-band weights.
struct ThetaMatrix {
  std::vector<double> magnitudes;  // n_frames x n_bins
  int n_frames = 0;
  int n_bins = 0;
  std::vector<double> band_weights;  // length n, strictly positive
};

inline ThetaMatrix build_theta(const RirBank& bank, std::uint64_t seed, int n_frames, int n_bins,
                               int n) {
  bank.validate();
  require(n_frames >= 1 && n_bins >= 2, "theta dimensions too small");
  require(n >= 1 && n <= n_bins, "band count must be in [1, n_bins]");
  const int frame = 2 * (n_bins - 1);
  FrameSpec spec{frame, frame / 4, Window::kHann};
  spec.validate();

  // Resample the bank profile onto this analysis resolution.
  const int src_bins = static_cast<int>(bank.power_profile.size());
  std::vector<double> profile(static_cast<std::size_t>(n_bins));
  for (int k = 0; k < n_bins; ++k) {
    const double pos = static_cast<double>(k) * (src_bins - 1) / (n_bins - 1);
    const int i0 = static_cast<int>(pos);
    const int i1 = std::min(i0 + 1, src_bins - 1);
    const double frac = pos - i0;
    profile[k] = (1.0 - frac) * bank.power_profile[i0] + frac * bank.power_profile[i1];
  }

  // Linear-phase shaping filter with |H(f)| = sqrt(profile).
  std::vector<std::complex<double>> hbuf(static_cast<std::size_t>(frame));
  for (int k = 0; k < n_bins; ++k) hbuf[k] = std::sqrt(profile[k]);
  for (int k = 1; k < n_bins - 1; ++k) hbuf[frame - k] = hbuf[k];
  detail::fft(hbuf, true);
  std::vector<double> kernel(static_cast<std::size_t>(frame));
  for (int i = 0; i < frame; ++i)
    kernel[i] = hbuf[(i + frame / 2) % frame].real();  // center the impulse

  const std::size_t len = static_cast<std::size_t>(n_frames - 1) * spec.hop_len + frame;
  Rng rng(mix_seed(seed, 0x7e7a));
  std::vector<double> white(len + frame);
  for (double& v : white) v = rng.normal();
  std::vector<double> shaped(len, 0.0);
  for (std::size_t m = 0; m < len; ++m) {
    double acc = 0.0;
    for (int k = 0; k < frame; ++k) acc += kernel[k] * white[m + frame - k];
    shaped[m] = acc;
  }

  const Spectrogram s = stft(Waveform(std::move(shaped), kDefaultSampleRate), spec);
  require(s.n_frames == n_frames, "theta frame count mismatch");

  ThetaMatrix theta;
  theta.n_frames = n_frames;
  theta.n_bins = n_bins;
  theta.magnitudes.resize(static_cast<std::size_t>(n_frames) * n_bins);
  for (std::size_t i = 0; i < theta.magnitudes.size(); ++i)
    theta.magnitudes[i] = std::abs(s.bins[i]);

  theta.band_weights.assign(static_cast<std::size_t>(n), 0.0);
  for (int b = 0; b < n; ++b) {
    const int lo = b * n_bins / n;
    const int hi = (b + 1) * n_bins / n;
    double acc = 0.0;
    for (int t = 0; t < n_frames; ++t)
      for (int k = lo; k < hi; ++k) acc += theta.magnitudes[t * n_bins + k];
    theta.band_weights[b] = std::max(acc / (static_cast<double>(n_frames) * (hi - lo)), 1e-6);
  }
  return theta;
}

inline void save_band_weights_csv(const ThetaMatrix& theta, const std::string& path) {
  std::ofstream os(path);
  require(static_cast<bool>(os), "cannot write band weights: " + path);
  os << "band,weight\n";
  for (std::size_t i = 0; i < theta.band_weights.size(); ++i)
    os << i << "," << theta.band_weights[i] << "\n";
}

// ---------------------------------------------------------------------------
// Regularizer
// ---------------------------------------------------------------------------

// Hinge penalty max(0, sum_i |lf_i - lg_i| - eta * ||w o lf||_F): positive
// exactly when the eigenvalue displacement exceeds its Theta-weighted
// budget, so adding it to the critic loss enforces the bound softly.
inline double regularizer_penalty(const EigenSpectrum& lf, const EigenSpectrum& lg,
                                  const ThetaMatrix& theta, double eta) {
  require(lf.values.size() == lg.values.size(), "regularizer_penalty: spectrum length mismatch");
  require(lf.values.size() == theta.band_weights.size(),
          "regularizer_penalty: band weight length mismatch");
  double gap = 0.0;
  for (std::size_t i = 0; i < lf.values.size(); ++i) gap += std::abs(lf.values[i] - lg.values[i]);
  double wnorm = 0.0;
  for (std::size_t i = 0; i < lf.values.size(); ++i) {
    const double w = theta.band_weights[i] * std::abs(lf.values[i]);
    wnorm += w * w;
  }
  return std::max(0.0, gap - eta * std::sqrt(wnorm));
}

}  // namespace rsdg
