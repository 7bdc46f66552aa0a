#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "rsdg/attack.hpp"
#include "rsdg/victim.hpp"

using namespace rsdg;

namespace {

struct Fixture {
  Vocabulary vocab = default_vocabulary();
  Corpus corpus;
  VictimModel model;

  Fixture()
      : corpus(synth_corpus(vocab, 10, 3, 3, 0xf1)),
        model([&] {
          VictimTrainConfig cfg;
          cfg.seed = 0xf2;
          return train_victim(corpus, cfg, vocab);
        }()) {}
};

const Fixture& fixture() {
  static Fixture f;
  return f;
}

// A training utterance the model transcribes exactly.
const LabeledUtterance& clean_case(int skip = 0) {
  const Fixture& f = fixture();
  int seen = 0;
  for (const auto& u : f.corpus) {
    if (transcribe(f.model, u.audio) == u.transcript) {
      if (seen == skip) return u;
      ++seen;
    }
  }
  throw std::runtime_error("no clean case found");
}

Transcript wrong_target(const Transcript& truth, int vocab_size) {
  Transcript t = truth;
  t[0] = (t[0] + 1) % vocab_size;
  return t;
}

}  // namespace

TEST_CASE("assign_targets produces distinct seeded phrases") {
  const Fixture& f = fixture();
  const auto targets = assign_targets(f.corpus, 15, f.vocab, 0x7a);
  REQUIRE(targets.size() == f.corpus.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    REQUIRE(targets[i].size() == 15);
    for (const Transcript& t : targets[i]) {
      REQUIRE(t != f.corpus[i].transcript);
      const int diff = std::abs(static_cast<int>(t.size()) -
                                static_cast<int>(f.corpus[i].transcript.size()));
      REQUIRE(diff <= 1);
      REQUIRE(!t.empty());
    }
  }
  const auto again = assign_targets(f.corpus, 15, f.vocab, 0x7a);
  REQUIRE(again == targets);
}

TEST_CASE("cw attack with the true transcript succeeds immediately") {
  const Fixture& f = fixture();
  const LabeledUtterance& u = clean_case();
  AttackConfig cfg;
  cfg.max_iters = 10;
  const AdversarialExample ex = cw_attack(f.model, u.audio, u.transcript, cfg);
  REQUIRE(ex.success);
  REQUIRE(ex.iters_used == 0);
  REQUIRE(ex.l_db == -std::numeric_limits<double>::infinity());
  for (double v : ex.delta.samples) REQUIRE(v == 0.0);
}

TEST_CASE("cw attack under an impossible loudness budget reports failure") {
  const Fixture& f = fixture();
  const LabeledUtterance& u = clean_case();
  AttackConfig cfg;
  cfg.eps_db = -200.0;
  cfg.max_iters = 40;
  const AdversarialExample ex =
      cw_attack(f.model, u.audio, wrong_target(u.transcript, f.vocab.size()), cfg);
  REQUIRE_FALSE(ex.success);
  // The samplewise identity holds regardless of success.
  for (std::size_t i = 0; i < ex.x_adv.size(); ++i)
    REQUIRE(ex.x_adv.samples[i] == u.audio.samples[i] + ex.delta.samples[i]);
}

TEST_CASE("cw attack finds a quiet targeted perturbation") {
  const Fixture& f = fixture();
  const LabeledUtterance& u = clean_case();
  AttackConfig cfg;
  cfg.max_iters = 2000;
  cfg.seed = 0xca11;
  const Transcript target = wrong_target(u.transcript, f.vocab.size());
  const AdversarialExample ex = cw_attack(f.model, u.audio, target, cfg);
  REQUIRE(ex.success);
  REQUIRE(ex.l_db < cfg.eps_db);
  // Success implies independent re-verification passes.
  REQUIRE(transcribe(f.model, ex.x_adv) == target);
  REQUIRE(loudness_db(ex.delta, u.audio) < cfg.eps_db);

  // Determinism of the full attack.
  const AdversarialExample again = cw_attack(f.model, u.audio, target, cfg);
  REQUIRE(again.delta.samples == ex.delta.samples);
  REQUIRE(again.iters_used == ex.iters_used);
}

TEST_CASE("degenerate eot gradient equals the plain objective gradient") {
  const Fixture& f = fixture();
  const LabeledUtterance& u = clean_case(1);
  const Transcript target = wrong_target(u.transcript, f.vocab.size());

  EotConfig eot;
  eot.bank.filters = {unit_impulse_rir(kDefaultSampleRate)};
  eot.bank.profile_frame_len = 512;
  eot.bank.power_profile.assign(257, 1.0);
  eot.noise_sigma = 0.0;
  eot.alpha_k = 0.05;
  eot.n_mc = 1;

  Rng delta_rng(0xde17a);
  std::vector<double> delta(u.audio.size());
  for (double& v : delta) v = 0.01 * delta_rng.normal();

  Rng rng(1);
  const auto [loss, grad] = eot_gradient(f.model, u.audio, delta, target, eot, rng);

  Waveform x_adv = u.audio;
  for (std::size_t i = 0; i < delta.size(); ++i) x_adv.samples[i] += delta[i];
  const auto [plain_loss, plain_grad] = victim_loss_and_grad(f.model, x_adv, target);
  double fro = 0.0;
  for (double v : delta) fro += v * v;
  fro = std::sqrt(fro);

  REQUIRE(std::abs(loss - (plain_loss + eot.alpha_k * fro)) < 1e-9);
  for (std::size_t i = 0; i < delta.size(); ++i) {
    const double expected = plain_grad.samples[i] + eot.alpha_k * delta[i] / fro;
    REQUIRE(std::abs(grad[i] - expected) < 1e-9);
  }
}

TEST_CASE("eot gradient with n_mc draws averages the single-draw gradients") {
  const Fixture& f = fixture();
  const LabeledUtterance& u = clean_case(1);
  const Transcript target = wrong_target(u.transcript, f.vocab.size());

  EotConfig eot;
  eot.bank = make_rir_bank(4, 0.08, 0.15, 0xbb, kDefaultSampleRate);
  eot.noise_sigma = 0.002;
  eot.alpha_k = 0.05;
  eot.n_mc = 8;

  std::vector<double> delta(u.audio.size(), 0.0);
  Rng delta_rng(0xde17b);
  for (double& v : delta) v = 0.005 * delta_rng.normal();

  Rng rng_all(42);
  const auto [loss8, grad8] = eot_gradient(f.model, u.audio, delta, target, eot, rng_all);

  // Replaying the same stream one draw at a time must reproduce the average.
  EotConfig single = eot;
  single.n_mc = 1;
  Rng rng_seq(42);
  std::vector<double> acc(delta.size(), 0.0);
  double loss_acc = 0.0;
  double fro = 0.0;
  for (double v : delta) fro += v * v;
  fro = std::sqrt(fro);
  for (int j = 0; j < 8; ++j) {
    const auto [l, g] = eot_gradient(f.model, u.audio, delta, target, single, rng_seq);
    loss_acc += (l - single.alpha_k * fro) / 8.0;
    for (std::size_t i = 0; i < acc.size(); ++i)
      acc[i] += (g[i] - single.alpha_k * delta[i] / fro) / 8.0;
  }
  REQUIRE(std::abs(loss8 - (loss_acc + eot.alpha_k * fro)) < 1e-12);
  for (std::size_t i = 0; i < acc.size(); ++i)
    REQUIRE(std::abs(grad8[i] - (acc[i] + eot.alpha_k * delta[i] / fro)) < 1e-12);
}

TEST_CASE("eot attack respects the robustness success definition") {
  const Fixture& f = fixture();
  const LabeledUtterance& u = clean_case();
  AttackConfig cfg;
  cfg.max_iters = 60;  // smoke budget; the campaign criterion runs elsewhere
  cfg.seed = 0xe0;
  EotConfig eot;
  eot.bank = make_rir_bank(4, 0.08, 0.12, 0xbc, kDefaultSampleRate);
  eot.n_mc = 2;
  const Transcript target = wrong_target(u.transcript, f.vocab.size());
  const AdversarialExample ex = eot_attack(f.model, u.audio, target, cfg, eot);
  for (std::size_t i = 0; i < ex.x_adv.size(); ++i)
    REQUIRE(ex.x_adv.samples[i] == u.audio.samples[i] + ex.delta.samples[i]);
  if (ex.success) {
    REQUIRE(transcribe(f.model, ex.x_adv) == target);
    REQUIRE(loudness_db(ex.delta, u.audio) < cfg.eps_db);
    const RirFilter hold = holdout_rir(eot.bank, cfg.seed);
    REQUIRE(transcribe(f.model, apply_rir(ex.x_adv, hold)) == target);
  }
}
