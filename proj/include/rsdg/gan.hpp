#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "rsdg/checkpoint.hpp"
#include "rsdg/error.hpp"
#include "rsdg/nn.hpp"
#include "rsdg/rir.hpp"
#include "rsdg/rng.hpp"
#include "rsdg/sobolev.hpp"
#include "rsdg/tensor.hpp"

namespace rsdg {

// ---------------------------------------------------------------------------
// Datasets and mode bookkeeping
// ---------------------------------------------------------------------------

// Mode centers in data space with an assignment radius; a generated sample
// counts toward a mode when it lands within the radius of its center.
struct ModeSpec {
  std::vector<std::vector<double>> centers;
  double radius = 0.0;

  void validate() const {
    require(centers.size() >= 2, "mode spec needs at least two centers");
    require(radius > 0.0, "mode radius must be positive");
    for (std::size_t i = 0; i < centers.size(); ++i)
      for (std::size_t j = i + 1; j < centers.size(); ++j) {
        double d = 0.0;
        for (std::size_t k = 0; k < centers[i].size(); ++k) {
          const double t = centers[i][k] - centers[j][k];
          d += t * t;
        }
        require(std::sqrt(d) > 2.0 * radius, "mode centers closer than twice the radius");
      }
  }
};

enum class DatasetKind { kRing, kPatches };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::kRing;
  // Ring of Gaussians.
  int ring_modes = 8;
  double ring_radius = 2.0;
  double ring_sigma = 0.05;
  // Patch pool (tensors of shape patch_shape) for spectrogram training.
  Batch patch_pool;
  Shape patch_shape;

  Shape data_shape() const {
    return kind == DatasetKind::kRing ? Shape{2} : patch_shape;
  }

  ModeSpec ring_mode_spec() const {
    ModeSpec ms;
    for (int k = 0; k < ring_modes; ++k) {
      const double a = 2.0 * M_PI * k / ring_modes;
      ms.centers.push_back({ring_radius * std::cos(a), ring_radius * std::sin(a)});
    }
    // Adjacent centers sit 2 R sin(pi/K) apart; stay safely inside half that.
    ms.radius = 0.45 * 2.0 * ring_radius * std::sin(M_PI / ring_modes);
    ms.validate();
    return ms;
  }
};

struct TrainConfig {
  int batch_size = 512;
  int critic_steps_per_gen_step = 1;
  int total_iters = 1000;
  double lr_gen = 1e-3;
  double lr_critic = 1e-3;
  double eta = 1.0;
  double rho = 10.0;
  bool regularizer_on = true;
  bool sobolev_constraint_on = true;
  double al_rho = 0.005;        // multiplier (integral) rate for the constraint
  double al_scale_rate = 0.025; // log-space rate of the critic-scale update
  int eigen_dim = 2;
  std::uint64_t seed = 1;
  DatasetSpec dataset;

  int latent_dim = 8;
  std::vector<int> gen_hidden = {64, 64};
  std::vector<int> critic_hidden = {64, 64};

  // RIR bank behind Theta.
  int bank_filters = 8;
  double bank_rt60_lo = 0.1;
  double bank_rt60_hi = 0.4;
  int theta_frames = 32;

  int collapse_window = 50;
  double diversity_floor_frac = 0.1;

  std::string abort_checkpoint_dir;  // when set, checkpoints are written on NaN abort

  void validate() const {
    require(batch_size >= 2, "batch_size must be >= 2");
    require(critic_steps_per_gen_step >= 1, "critic steps must be >= 1");
    require(total_iters >= 0, "total_iters must be >= 0");
    require(lr_gen > 0.0 && lr_critic > 0.0, "learning rates must be positive");
    require(eigen_dim >= 1 && eigen_dim <= batch_size, "eigen_dim must be in [1, batch_size]");
  }
};

struct IterRecord {
  int iter = 0;
  double ipm_value = 0.0;
  double sobolev_term = 0.0;
  double penalty = 0.0;
  double diversity = 0.0;
  double modes = 0.0;
  long long gc_cum = 0;
};

struct StabilityStats {
  std::optional<int> iterations_to_collapse;
  double modes_learned_per_batch = 0.0;
  int gc_per_batch = 0;
};

struct TrainResult {
  Network generator;
  Network critic;
  StabilityStats stats;
  std::vector<IterRecord> log;
  double lagrange_multiplier = 0.0;
};

// ---------------------------------------------------------------------------
// Telemetry operations
// ---------------------------------------------------------------------------

inline double count_modes_in_batch(const Batch& samples, const ModeSpec& modes) {
  std::vector<bool> hit(modes.centers.size(), false);
  for (const Tensor& s : samples) {
    int best = -1;
    double best_d = 1e300;
    for (std::size_t c = 0; c < modes.centers.size(); ++c) {
      double d = 0.0;
      for (std::size_t k = 0; k < modes.centers[c].size(); ++k) {
        const double t = s.v[k] - modes.centers[c][k];
        d += t * t;
      }
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    if (best >= 0 && std::sqrt(best_d) <= modes.radius) hit[best] = true;
  }
  int n = 0;
  for (bool h : hit) n += h ? 1 : 0;
  return static_cast<double>(n);
}

// Samples n latents through the generator and counts distinct modes hit.
inline double count_modes(Network& generator, const ModeSpec& modes, int n_samples,
                          std::uint64_t seed) {
  require(n_samples >= static_cast<int>(modes.centers.size()),
          "count_modes: need at least one sample per mode");
  modes.validate();
  Rng rng(mix_seed(seed, 0x30de));
  const int dz = shape_numel(generator.input_shape());
  Batch out;
  out.reserve(n_samples);
  for (int i = 0; i < n_samples; ++i) {
    Tensor z = Tensor::zeros(generator.input_shape());
    for (double& v : z.v) v = rng.normal();
    (void)dz;
    out.push_back(generator.forward(z));
  }
  return count_modes_in_batch(out, modes);
}

// First index at which the rolling mean (width = window) of the per-batch
// diversity series falls below the floor; nullopt when it never does or the
// log is shorter than one window.
inline std::optional<int> detect_collapse(const std::vector<IterRecord>& log, int window,
                                          double diversity_floor) {
  require(!log.empty(), "detect_collapse: empty log");
  require(window >= 1, "detect_collapse: window must be positive");
  if (static_cast<int>(log.size()) < window) return std::nullopt;
  double acc = 0.0;
  for (int i = 0; i < window; ++i) acc += log[i].diversity;
  if (acc / window < diversity_floor) return window - 1;
  for (std::size_t t = window; t < log.size(); ++t) {
    acc += log[t].diversity - log[t - window].diversity;
    if (acc / window < diversity_floor) return static_cast<int>(t);
  }
  return std::nullopt;
}

// Exact critic backward passes per batch; the log must show a constant
// per-iteration rate.
inline int gc_count(const std::vector<IterRecord>& log) {
  require(!log.empty(), "gc_count: empty log");
  long long prev = 0;
  long long delta = log[0].gc_cum;
  for (const IterRecord& r : log) {
    require(r.gc_cum - prev == delta, "gc_count: non-constant per-batch rate");
    prev = r.gc_cum;
  }
  return static_cast<int>(delta);
}

// Analytic per-batch pass count: one objective round per critic step, one
// input-gradient round when the constraint or the regularizer needs it, and
// one feature-path round for the regularizer.
inline int gc_per_batch_formula(int critic_steps, bool constraint_on, bool regularizer_on) {
  int per_step = 1;
  if (constraint_on || regularizer_on) per_step += 1;
  if (regularizer_on) per_step += 1;
  return critic_steps * per_step;
}

inline void write_train_log(const std::vector<IterRecord>& log, const std::string& path) {
  std::ofstream os(path);
  require(static_cast<bool>(os), "cannot write train log: " + path);
  char buf[512];
  for (const IterRecord& r : log) {
    std::snprintf(buf, sizeof(buf),
                  "{\"iter\":%d,\"ipm_value\":%.17g,\"sobolev_term\":%.17g,\"penalty\":%.17g,"
                  "\"diversity\":%.17g,\"gc_cum\":%lld}\n",
                  r.iter, r.ipm_value, r.sobolev_term, r.penalty, r.diversity, r.gc_cum);
    os << buf;
  }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace gan_detail {

inline Network make_generator(const TrainConfig& cfg) {
  const Shape out_shape = cfg.dataset.data_shape();
  const int out_dim = shape_numel(out_shape);
  std::vector<LayerPtr> layers;
  int prev = cfg.latent_dim;
  for (int h : cfg.gen_hidden) {
    layers.push_back(std::make_unique<DenseLayer>(prev, h, true));
    layers.push_back(std::make_unique<TanhLayer>());
    prev = h;
  }
  layers.push_back(std::make_unique<DenseLayer>(prev, out_dim, true));
  if (cfg.dataset.kind == DatasetKind::kPatches) {
    layers.push_back(std::make_unique<TanhLayer>());  // patches live in (-1, 1)
    layers.push_back(std::make_unique<ReshapeLayer>(out_shape));
  }
  return Network({cfg.latent_dim}, std::move(layers), mix_seed(cfg.seed, 0x6e4));
}

inline Network make_critic(const TrainConfig& cfg) {
  const Shape in_shape = cfg.dataset.data_shape();
  const int in_dim = shape_numel(in_shape);
  std::vector<LayerPtr> layers;
  int prev = in_dim;
  for (int h : cfg.critic_hidden) {
    layers.push_back(std::make_unique<DenseLayer>(prev, h, true));
    layers.push_back(std::make_unique<TanhLayer>());
    prev = h;
  }
  layers.push_back(std::make_unique<DenseLayer>(prev, 1, true));
  return Network(in_shape, std::move(layers), mix_seed(cfg.seed, 0xc217));
}

inline Tensor sample_real(const DatasetSpec& ds, Rng& rng) {
  if (ds.kind == DatasetKind::kRing) {
    const int k = static_cast<int>(rng.below(static_cast<std::uint64_t>(ds.ring_modes)));
    const double a = 2.0 * M_PI * k / ds.ring_modes;
    Tensor t = Tensor::zeros({2});
    t.v[0] = ds.ring_radius * std::cos(a) + ds.ring_sigma * rng.normal();
    t.v[1] = ds.ring_radius * std::sin(a) + ds.ring_sigma * rng.normal();
    return t;
  }
  require(!ds.patch_pool.empty(), "patch dataset has an empty pool");
  return ds.patch_pool[rng.below(ds.patch_pool.size())];
}

inline double mean_pairwise_distance(const Batch& samples, int cap = 32) {
  const int m = std::min<int>(cap, static_cast<int>(samples.size()));
  if (m < 2) return 0.0;
  double acc = 0.0;
  int pairs = 0;
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < samples[i].v.size(); ++k) {
        const double t = samples[i].v[k] - samples[j].v[k];
        d += t * t;
      }
      acc += std::sqrt(d);
      ++pairs;
    }
  return acc / pairs;
}

// Eigenvectors of a symmetric PSD matrix, columns sorted to match the
// descending eigenvalue order used everywhere else.
inline void symmetric_eigensystem(const SquareMatrix& a, std::vector<double>& values,
                                  SquareMatrix& vectors) {
  const SchurForm sf = schur_decompose(a);
  const int n = a.n;
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](int x, int y) { return sf.t.at(x, x) > sf.t.at(y, y); });
  values.resize(static_cast<std::size_t>(n));
  vectors = SquareMatrix(n);
  for (int c = 0; c < n; ++c) {
    values[c] = sf.t.at(order[c], order[c]);
    for (int r = 0; r < n; ++r) vectors.at(r, c) = sf.q.at(r, order[c]);
  }
}

}  // namespace gan_detail

// The bank and Theta a training run derives from its seed; exposed so the
// weighting used during training can be rebuilt and exported.
inline RirBank train_rir_bank(const TrainConfig& cfg) {
  return make_rir_bank(cfg.bank_filters, cfg.bank_rt60_lo, cfg.bank_rt60_hi,
                       mix_seed(cfg.seed, 0xba4e), kDefaultSampleRate);
}

inline ThetaMatrix train_theta(const TrainConfig& cfg, const RirBank& bank) {
  const int data_bins = cfg.dataset.data_shape().back();
  int theta_bins = 33;
  while (theta_bins - 1 < data_bins) theta_bins = 2 * (theta_bins - 1) + 1;
  return build_theta(bank, mix_seed(cfg.seed, 0x7e7a), cfg.theta_frames, theta_bins,
                     cfg.eigen_dim);
}

// Alternating critic/generator updates with the constraint driven by an
// augmented Lagrangian on the critic's output scale and the eigenvalue
// penalty fed back through the feature path. Fully deterministic per seed on
// one thread.
inline TrainResult train(const TrainConfig& cfg) {
  cfg.validate();
  Network generator = gan_detail::make_generator(cfg);
  Network critic = gan_detail::make_critic(cfg);
  const int scale_idx = critic.final_scale_param_index();
  require(scale_idx >= 0, "critic must end in a weight-normalized scalar head");

  const RirBank bank = train_rir_bank(cfg);
  const ThetaMatrix theta = train_theta(cfg, bank);

  std::optional<ModeSpec> modes;
  if (cfg.dataset.kind == DatasetKind::kRing) modes = cfg.dataset.ring_mode_spec();

  Rng rng_data(mix_seed(cfg.seed, 0xda7a));
  Rng rng_z(mix_seed(cfg.seed, 0x1a7e));

  AdamState gen_adam, critic_adam;
  double lambda = 0.0;  // constraint multiplier
  long long gc_cum = 0;
  std::vector<IterRecord> log;
  log.reserve(static_cast<std::size_t>(cfg.total_iters));

  const int b = cfg.batch_size;
  std::vector<double> critic_total_grads(critic.params().size(), 0.0);

  auto sample_z = [&]() {
    Tensor z = Tensor::zeros({cfg.latent_dim});
    for (double& v : z.v) v = rng_z.normal();
    return z;
  };

  for (int iter = 0; iter < cfg.total_iters; ++iter) {
    IterRecord rec;
    rec.iter = iter;

    for (int step = 0; step < cfg.critic_steps_per_gen_step; ++step) {
      Batch real, fake;
      real.reserve(b);
      fake.reserve(b);
      for (int i = 0; i < b; ++i) real.push_back(gan_detail::sample_real(cfg.dataset, rng_data));
      for (int i = 0; i < b; ++i) fake.push_back(generator.forward(sample_z()));
      const MuBatch mu =
          mixture_sample(real, fake, mix_seed(cfg.seed, 0x3135 + 977ull * iter + step));

      std::fill(critic_total_grads.begin(), critic_total_grads.end(), 0.0);

      // Round 1: objective. Critic maximizes mean f(real) - mean f(fake),
      // so the loss gradient uses the opposite signs.
      critic.zero_grads();
      double mean_real = 0.0, mean_fake = 0.0;
      Tensor up = Tensor::zeros({1});
      for (const Tensor& x : real) {
        mean_real += critic.forward(x).v[0];
        up.v[0] = -1.0 / b;
        critic.backward(up);
      }
      for (const Tensor& x : fake) {
        mean_fake += critic.forward(x).v[0];
        up.v[0] = 1.0 / b;
        critic.backward(up);
      }
      ++gc_cum;
      for (std::size_t i = 0; i < critic_total_grads.size(); ++i)
        critic_total_grads[i] += critic.grads()[i];
      rec.ipm_value = mean_real / b - mean_fake / b;

      const bool need_input_grads = cfg.sobolev_constraint_on || cfg.regularizer_on;
      std::vector<std::vector<double>> grad_rows, feat_rows;
      double sobolev = 0.0;
      if (need_input_grads) {
        // Round 2: input gradients over the mixture batch.
        grad_rows.reserve(mu.items.size());
        feat_rows.reserve(mu.items.size());
        for (const Tensor& x : mu.items) {
          critic.zero_grads();
          const Tensor g = critic_input_gradient(critic, x);
          double s = 0.0;
          for (double v : g.v) s += v * v;
          sobolev += s;
          if (cfg.regularizer_on) {
            grad_rows.push_back(band_pool(g, cfg.eigen_dim));
            const Tensor& f = critic.features();
            require(static_cast<int>(f.v.size()) >= cfg.eigen_dim,
                    "feature dimension below eigen_dim");
            feat_rows.emplace_back(f.v.begin(), f.v.begin() + cfg.eigen_dim);
          }
        }
        ++gc_cum;
        sobolev /= static_cast<double>(mu.items.size());
        rec.sobolev_term = sobolev;

        if (cfg.sobolev_constraint_on) {
          // Augmented Lagrangian on ln(omega) = 0, acting on the critic
          // output scale s (the critic is linear in s, so d ln(omega) /
          // d ln s = 2). Runs outside Adam so the accumulated multiplier
          // keeps its authority over the objective pull on s.
          const double log_err = std::clamp(std::log(std::max(sobolev, 1e-12)), -4.0, 4.0);
          const double force = lambda + log_err;
          const double step = std::clamp(-cfg.al_scale_rate * force * 2.0, -0.05, 0.05);
          double& s_val = critic.params()[scale_idx];
          if (std::abs(s_val) < 1e-8) s_val = (s_val < 0.0 ? -1e-8 : 1e-8);
          s_val *= std::exp(step);
          lambda += cfg.al_rho * log_err;
        }
      }

      if (cfg.regularizer_on) {
        // Round 3: eigenvalue penalty, gradient through the feature grams.
        const int n = cfg.eigen_dim;
        SquareMatrix a_grad(n);
        for (const auto& row : grad_rows)
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) a_grad.at(i, j) += row[i] * row[j];
        for (double& v : a_grad.a) v /= static_cast<double>(grad_rows.size());

        SquareMatrix a_feat(n);
        for (const auto& row : feat_rows)
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) a_feat.at(i, j) += row[i] * row[j];
        for (double& v : a_feat.a) v /= static_cast<double>(feat_rows.size());

        std::vector<double> lam_f, lam_g;
        SquareMatrix vec_f(n), vec_g(n);
        gan_detail::symmetric_eigensystem(a_feat, lam_f, vec_f);
        gan_detail::symmetric_eigensystem(a_grad, lam_g, vec_g);

        double gap = 0.0, wnorm_sq = 0.0;
        for (int i = 0; i < n; ++i) {
          gap += std::abs(lam_f[i] - lam_g[i]);
          const double w = theta.band_weights[i] * lam_f[i];
          wnorm_sq += w * w;
        }
        const double wnorm = std::sqrt(wnorm_sq);
        const double penalty = std::max(0.0, gap - cfg.eta * wnorm);
        rec.penalty = penalty;

        // d(penalty)/d(lambda_f,i) through the eigen-gap term only: the
        // gradient spectrum and the Theta budget are measured quantities,
        // so descent closes the gap instead of inflating the feature
        // energies to widen the budget.
        std::vector<double> coef(static_cast<std::size_t>(n), 0.0);
        if (penalty > 0.0) {
          for (int i = 0; i < n; ++i)
            coef[i] = (lam_f[i] > lam_g[i] ? 1.0 : (lam_f[i] < lam_g[i] ? -1.0 : 0.0));
        }
        SquareMatrix dpen_da(n);
        for (int i = 0; i < n; ++i)
          if (coef[i] != 0.0)
            for (int r = 0; r < n; ++r)
              for (int c = 0; c < n; ++c)
                dpen_da.at(r, c) += coef[i] * vec_f.at(r, i) * vec_f.at(c, i);

        critic.zero_grads();
        const double scale = cfg.rho * 2.0 / static_cast<double>(feat_rows.size());
        for (std::size_t item = 0; item < mu.items.size(); ++item) {
          critic.forward(mu.items[item]);
          Tensor upf = Tensor::zeros(critic.features().shape);
          for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int i = 0; i < n; ++i) acc += feat_rows[item][i] * dpen_da.at(i, j);
            upf.v[j] = scale * acc;
          }
          critic.backward_from_features(upf);
        }
        ++gc_cum;
        for (std::size_t i = 0; i < critic_total_grads.size(); ++i)
          critic_total_grads[i] += critic.grads()[i];
      }

      adam_step(critic.params(), critic_total_grads, critic_adam, cfg.lr_critic);
      critic.renormalize_weight_norm();
    }

    // Generator step: minimize -mean f(G(z)).
    Batch gen_batch;
    gen_batch.reserve(b);
    generator.zero_grads();
    Tensor up = Tensor::zeros({1});
    for (int i = 0; i < b; ++i) {
      const Tensor z = sample_z();
      const Tensor xf = generator.forward(z);
      critic.zero_grads();
      critic.forward(xf);
      up.v[0] = -1.0 / b;
      const Tensor dxf = critic.backward(up);
      generator.backward(dxf);
      gen_batch.push_back(xf);
    }
    adam_step(generator.params(), generator.grads(), gen_adam, cfg.lr_gen);
    generator.renormalize_weight_norm();

    rec.diversity = gan_detail::mean_pairwise_distance(gen_batch);
    if (modes) rec.modes = count_modes_in_batch(gen_batch, *modes);
    rec.gc_cum = gc_cum;

    if (!std::isfinite(rec.ipm_value) || !std::isfinite(rec.sobolev_term) ||
        !std::isfinite(rec.penalty) || !std::isfinite(rec.diversity)) {
      if (!cfg.abort_checkpoint_dir.empty()) {
        save_checkpoint(cfg.abort_checkpoint_dir + "/generator_abort.ckpt", generator);
        save_checkpoint(cfg.abort_checkpoint_dir + "/critic_abort.ckpt", critic);
      }
      throw Error("nan loss at iteration " + std::to_string(iter));
    }
    log.push_back(rec);
  }

  TrainResult result{std::move(generator), std::move(critic), StabilityStats{}, std::move(log),
                     lambda};
  if (!result.log.empty()) {
    result.stats.gc_per_batch = gc_per_batch_formula(
        cfg.critic_steps_per_gen_step, cfg.sobolev_constraint_on, cfg.regularizer_on);
    require(gc_count(result.log) == result.stats.gc_per_batch,
            "instrumented gc disagrees with the analytic formula");
    double mode_acc = 0.0;
    double div_acc = 0.0;
    for (const IterRecord& r : result.log) {
      mode_acc += r.modes;
      div_acc += r.diversity;
    }
    result.stats.modes_learned_per_batch = mode_acc / result.log.size();

    // Collapse floor: fraction of the dataset's own mean pairwise spread.
    Rng probe(mix_seed(cfg.seed, 0xd1f));
    Batch ref;
    for (int i = 0; i < 64; ++i) ref.push_back(gan_detail::sample_real(cfg.dataset, probe));
    const double floor = cfg.diversity_floor_frac * gan_detail::mean_pairwise_distance(ref, 64);
    result.stats.iterations_to_collapse =
        detect_collapse(result.log, cfg.collapse_window, floor);
  }
  return result;
}

}  // namespace rsdg
