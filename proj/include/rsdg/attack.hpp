#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "rsdg/error.hpp"
#include "rsdg/nn.hpp"
#include "rsdg/rir.hpp"
#include "rsdg/rng.hpp"
#include "rsdg/signal.hpp"
#include "rsdg/victim.hpp"

namespace rsdg {

struct AttackConfig {
  double eps_db = -15.0;                            // audibility threshold on the perturbation
  std::vector<double> c_schedule = {0.1, 1.0, 10.0, 100.0};
  int max_iters = 3000;
  double lr = 2e-3;
  std::uint64_t seed = 1;

  void validate() const {
    require(max_iters >= 1, "attack needs at least one iteration");
    require(!c_schedule.empty(), "c schedule must be non-empty");
    require(lr > 0.0, "attack lr must be positive");
  }
};

struct EotConfig {
  RirBank bank;
  double noise_sigma = 0.001;
  double alpha_k = 0.05;
  int n_mc = 4;

  void validate() const {
    require(n_mc >= 1, "n_mc must be >= 1");
    require(noise_sigma >= 0.0, "noise sigma must be >= 0");
    require(alpha_k > 0.0, "alpha_k must be positive");
    bank.validate();
  }
};

struct AdversarialExample {
  Waveform x_adv;
  Waveform delta;
  Transcript target;
  bool success = false;
  double l_db = -std::numeric_limits<double>::infinity();
  int iters_used = 0;
};

// ---------------------------------------------------------------------------
// Target assignment
// ---------------------------------------------------------------------------

// Seeded incorrect phrases per sample: each differs from the truth in at
// least one token and varies in length by at most one.
inline std::vector<std::vector<Transcript>> assign_targets(const Corpus& dataset, int n_targets,
                                                           const Vocabulary& vocab,
                                                           std::uint64_t seed) {
  require(vocab.size() >= 2, "target assignment needs a vocabulary of at least 2");
  require(n_targets >= 1, "n_targets must be positive");
  Rng rng(mix_seed(seed, 0x7a46));
  std::vector<std::vector<Transcript>> out;
  out.reserve(dataset.size());
  for (const LabeledUtterance& u : dataset) {
    std::vector<Transcript> targets;
    for (int t = 0; t < n_targets; ++t) {
      Transcript cand;
      for (int attempt = 0; attempt < 100; ++attempt) {
        const int base_len = static_cast<int>(u.transcript.size());
        const int len = std::max(1, base_len - 1 + static_cast<int>(rng.below(3)));
        cand.assign(static_cast<std::size_t>(len), 0);
        for (int& tok : cand) tok = static_cast<int>(rng.below(vocab.size()));
        if (cand != u.transcript) break;
        cand.clear();
      }
      require(!cand.empty(), "failed to draw a distinct target phrase");
      targets.push_back(std::move(cand));
    }
    out.push_back(std::move(targets));
  }
  return out;
}

// Targets for campaigns against the per-segment victim, which can only ever
// emit transcripts matching the segment count: redraws any length-mismatched
// phrases deterministically.
inline std::vector<std::vector<Transcript>> matched_length_targets(const Corpus& dataset,
                                                                   int n_targets,
                                                                   const Vocabulary& vocab,
                                                                   std::uint64_t seed) {
  auto targets = assign_targets(dataset, n_targets, vocab, seed);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    for (int t = 0; t < n_targets; ++t) {
      std::uint64_t attempt = 1;
      while (targets[i][t].size() != dataset[i].transcript.size()) {
        require(attempt < 200, "failed to draw a length-matched target");
        const Corpus one = {dataset[i]};
        targets[i][t] = assign_targets(one, 1, vocab, mix_seed(seed, 0x5a0 + attempt))[0][0];
        ++attempt;
      }
    }
  }
  return targets;
}

// ---------------------------------------------------------------------------
// Attack internals
// ---------------------------------------------------------------------------

namespace attack_detail {

inline double delta_fro_norm(const std::vector<double>& d) {
  double s = 0.0;
  for (double v : d) s += v * v;
  return std::sqrt(s);
}

// Feasibility per the adversarial-example contract: the victim transcribes
// the target and the perturbation stays under the loudness threshold.
inline bool feasible(const VictimModel& victim, const Waveform& x_org, const Waveform& delta,
                     const Transcript& target, double eps_db, double* l_db_out) {
  double peak = 0.0;
  for (double v : delta.samples) peak = std::max(peak, std::abs(v));
  const double l_db = peak == 0.0 ? -std::numeric_limits<double>::infinity()
                                  : loudness_db(delta, x_org);
  if (l_db_out != nullptr) *l_db_out = l_db;
  if (!(l_db < eps_db)) return false;
  Waveform x_adv = x_org;
  for (std::size_t i = 0; i < x_adv.size(); ++i) x_adv.samples[i] += delta.samples[i];
  return transcribe(victim, x_adv) == target;
}

struct BestIterate {
  bool found = false;
  std::vector<double> delta;
  double fro = std::numeric_limits<double>::infinity();
  double l_db = -std::numeric_limits<double>::infinity();

  void offer(const std::vector<double>& d, double l_db_val) {
    const double f = delta_fro_norm(d);
    if (!found || f < fro) {
      found = true;
      delta = d;
      fro = f;
      l_db = l_db_val;
    }
  }
};

inline AdversarialExample finish(const Waveform& x_org, const Transcript& target,
                                 const BestIterate& best, const std::vector<double>& last_delta,
                                 int iters_used) {
  AdversarialExample ex;
  ex.target = target;
  ex.iters_used = iters_used;
  ex.success = best.found;
  const std::vector<double>& d = best.found ? best.delta : last_delta;
  ex.delta = Waveform(d, x_org.sample_rate_hz);
  ex.x_adv = x_org;
  for (std::size_t i = 0; i < ex.x_adv.size(); ++i) ex.x_adv.samples[i] += d[i];
  double peak = 0.0;
  for (double v : d) peak = std::max(peak, std::abs(v));
  ex.l_db = peak == 0.0 ? -std::numeric_limits<double>::infinity()
                        : loudness_db(ex.delta, x_org);
  return ex;
}

}  // namespace attack_detail

// Deterministic held-out room draw for robustness evaluation: same recipe
// for every attack under a given seed, never a member of the bank.
inline RirFilter holdout_rir(const RirBank& bank, std::uint64_t seed) {
  double rt60_acc = 0.0;
  for (const RirFilter& h : bank.filters) rt60_acc += h.rt60_s;
  const double rt60 = std::clamp(rt60_acc / bank.filters.size(), 0.06, 2.0);
  return simulate_rir(rt60, mix_seed(seed, 0x401d), bank.filters[0].sample_rate_hz);
}

// ---------------------------------------------------------------------------
// C&W attack: minimize ||delta||_F + c * L(x + delta, target), escalating c
// through the schedule, with x_adv clipped to [-1, 1].
// ---------------------------------------------------------------------------

inline AdversarialExample cw_attack(const VictimModel& victim, const Waveform& x_org,
                                    const Transcript& target, const AttackConfig& config) {
  config.validate();
  const std::size_t n = x_org.size();
  const int n_segs = static_cast<int>(n) / victim.segment_len();
  require(static_cast<int>(target.size()) == n_segs,
          "cw_attack: target length must match segment count");

  std::vector<double> delta(n, 0.0);
  attack_detail::BestIterate best;

  // The zero perturbation might already satisfy the constraint.
  {
    double l_db = 0.0;
    const Waveform d0(std::vector<double>(n, 0.0), x_org.sample_rate_hz);
    if (attack_detail::feasible(victim, x_org, d0, target, config.eps_db, &l_db))
      best.offer(d0.samples, l_db);
    if (best.found) return attack_detail::finish(x_org, target, best, delta, 0);
  }

  AdamState adam;
  int iters_used = 0;
  const int per_stage = std::max(1, config.max_iters / static_cast<int>(config.c_schedule.size()));
  const double feasibility_loss_gate = std::log(2.0) * n_segs;

  for (double c : config.c_schedule) {
    for (int it = 0; it < per_stage && iters_used < config.max_iters; ++it, ++iters_used) {
      Waveform x_adv = x_org;
      for (std::size_t i = 0; i < n; ++i) x_adv.samples[i] += delta[i];
      const auto [loss, grad] = victim_loss_and_grad(victim, x_adv, target);

      const double fro = attack_detail::delta_fro_norm(delta);
      std::vector<double> obj_grad(n);
      for (std::size_t i = 0; i < n; ++i)
        obj_grad[i] = (fro > 1e-12 ? delta[i] / fro : 0.0) + c * grad.samples[i];

      adam_step(delta, obj_grad, adam, config.lr);
      for (std::size_t i = 0; i < n; ++i)
        delta[i] = std::clamp(x_org.samples[i] + delta[i], -1.0, 1.0) - x_org.samples[i];

      // Cheap gate first: summed cross-entropy below log 2 guarantees the
      // target transcript, otherwise confirm periodically.
      if (loss < feasibility_loss_gate || (iters_used & 15) == 15) {
        double l_db = 0.0;
        const Waveform d(delta, x_org.sample_rate_hz);
        if (attack_detail::feasible(victim, x_org, d, target, config.eps_db, &l_db))
          best.offer(delta, l_db);
      }
    }
    // Larger c values only trade perturbation size for loss; once the
    // constraint is met there is nothing left to escalate for.
    if (best.found) break;
  }
  return attack_detail::finish(x_org, target, best, delta, iters_used);
}

// ---------------------------------------------------------------------------
// EOT attack: averages gradients of L(victim(apply_rir(x + delta, h) + w),
// target) + alpha ||delta|| over Monte-Carlo draws of the room filter and
// the noise.
// ---------------------------------------------------------------------------

// One EOT step's loss and gradient; exposed so tests can compare the
// degenerate configuration against the plain objective.
inline std::pair<double, std::vector<double>> eot_gradient(const VictimModel& victim,
                                                           const Waveform& x_org,
                                                           const std::vector<double>& delta,
                                                           const Transcript& target,
                                                           const EotConfig& eot, Rng& rng) {
  const std::size_t n = x_org.size();
  std::vector<double> mean_grad(n, 0.0);
  double mean_loss = 0.0;
  Waveform x_adv = x_org;
  for (std::size_t i = 0; i < n; ++i) x_adv.samples[i] += delta[i];

  for (int j = 0; j < eot.n_mc; ++j) {
    const RirFilter& h = eot.bank.filters[rng.below(eot.bank.filters.size())];
    Waveform x_t = apply_rir(x_adv, h);
    if (eot.noise_sigma > 0.0)
      for (double& v : x_t.samples) v += eot.noise_sigma * rng.normal();
    const auto [loss, grad] = victim_loss_and_grad(victim, x_t, target);
    const std::vector<double> g = apply_rir_adjoint(grad.samples, h);
    for (std::size_t i = 0; i < n; ++i) mean_grad[i] += g[i] / eot.n_mc;
    mean_loss += loss / eot.n_mc;
  }

  const double fro = attack_detail::delta_fro_norm(delta);
  std::vector<double> obj_grad(n);
  for (std::size_t i = 0; i < n; ++i)
    obj_grad[i] = mean_grad[i] + eot.alpha_k * (fro > 1e-12 ? delta[i] / fro : 0.0);
  const double obj_loss = mean_loss + eot.alpha_k * fro;
  return {obj_loss, std::move(obj_grad)};
}

// Success additionally requires the target transcription to survive a
// held-out room draw.
inline AdversarialExample eot_attack(const VictimModel& victim, const Waveform& x_org,
                                     const Transcript& target, const AttackConfig& config,
                                     const EotConfig& eot) {
  config.validate();
  eot.validate();
  const std::size_t n = x_org.size();
  const int n_segs = static_cast<int>(n) / victim.segment_len();
  require(static_cast<int>(target.size()) == n_segs,
          "eot_attack: target length must match segment count");

  const RirFilter holdout = holdout_rir(eot.bank, config.seed);
  auto robust_feasible = [&](const std::vector<double>& d, double* l_db_out) {
    const Waveform dw(d, x_org.sample_rate_hz);
    if (!attack_detail::feasible(victim, x_org, dw, target, config.eps_db, l_db_out))
      return false;
    Waveform x_adv = x_org;
    for (std::size_t i = 0; i < n; ++i) x_adv.samples[i] += d[i];
    return transcribe(victim, apply_rir(x_adv, holdout)) == target;
  };

  std::vector<double> delta(n, 0.0);
  attack_detail::BestIterate best;
  {
    double l_db = 0.0;
    if (robust_feasible(delta, &l_db)) best.offer(delta, l_db);
    if (best.found) return attack_detail::finish(x_org, target, best, delta, 0);
  }

  Rng rng(mix_seed(config.seed, 0xe07));
  AdamState adam;
  int iters_used = 0;
  const double gate = std::log(2.0) * n_segs;
  for (; iters_used < config.max_iters; ++iters_used) {
    const auto [loss, grad] = eot_gradient(victim, x_org, delta, target, eot, rng);
    adam_step(delta, grad, adam, config.lr);
    for (std::size_t i = 0; i < n; ++i)
      delta[i] = std::clamp(x_org.samples[i] + delta[i], -1.0, 1.0) - x_org.samples[i];

    if (loss < gate || (iters_used & 31) == 31) {
      double l_db = 0.0;
      if (robust_feasible(delta, &l_db)) {
        best.offer(delta, l_db);
        ++iters_used;
        break;  // robust constraint met; nothing left to optimize for
      }
    }
  }
  return attack_detail::finish(x_org, target, best, delta, iters_used);
}

}  // namespace rsdg
