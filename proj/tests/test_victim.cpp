#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <vector>

#include "rsdg/rng.hpp"
#include "rsdg/victim.hpp"

using namespace rsdg;

namespace {

VictimModel trained_model(const Vocabulary& vocab, const Corpus& corpus, std::uint64_t seed) {
  VictimTrainConfig cfg;
  cfg.seed = seed;
  return train_victim(corpus, cfg, vocab);
}

}  // namespace

TEST_CASE("synth_corpus is deterministic and sized correctly") {
  const Vocabulary vocab = default_vocabulary();
  const Corpus a = synth_corpus(vocab, 2, 3, 3, 99);
  const Corpus b = synth_corpus(vocab, 2, 3, 3, 99);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].audio.samples == b[i].audio.samples);
    REQUIRE(a[i].transcript == b[i].transcript);
  }
  // Three tokens at 0.25 s and 16 kHz.
  REQUIRE(a[0].audio.size() == 12000);
  REQUIRE(a[0].transcript.size() == 3);
}

TEST_CASE("per-class spectral peak sits at the fundamental") {
  const Vocabulary vocab = default_vocabulary();
  const Corpus corpus = synth_corpus(vocab, 1, 1, 1, 7);
  for (int k = 0; k < vocab.size(); ++k) {
    const LabeledUtterance& u = corpus[k];
    REQUIRE(u.transcript[0] == k);
    const int n = static_cast<int>(u.audio.size());
    // Direct DFT peak pick over 50..1000 Hz.
    const double bin_hz = static_cast<double>(kDefaultSampleRate) / n;
    int best_bin = 0;
    double best_mag = 0.0;
    for (int bin = static_cast<int>(50 / bin_hz); bin <= static_cast<int>(1000 / bin_hz); ++bin) {
      std::complex<double> acc(0.0, 0.0);
      for (int i = 0; i < n; ++i) {
        const double ang = -2.0 * M_PI * bin * i / n;
        acc += u.audio.samples[i] * std::complex<double>(std::cos(ang), std::sin(ang));
      }
      if (std::abs(acc) > best_mag) {
        best_mag = std::abs(acc);
        best_bin = bin;
      }
    }
    const double f0 = vocab.keywords[k].fundamental_hz;
    REQUIRE(std::abs(best_bin * bin_hz - f0) <= bin_hz + 1e-9);
  }
}

TEST_CASE("victim training reaches the held-out target on a 2-class corpus") {
  const Vocabulary vocab = default_vocabulary();
  // Utterances drawn from keywords {0, 1} only.
  Corpus corpus;
  Rng rng(123);
  for (int rep = 0; rep < 20; ++rep) {
    Transcript t;
    for (int i = 0; i < 3; ++i) t.push_back(static_cast<int>(rng.below(2)));
    std::vector<double> audio;
    for (int tok : t) {
      const auto seg = synth_segment(vocab.keywords[tok], rng, kDefaultSampleRate);
      audio.insert(audio.end(), seg.begin(), seg.end());
    }
    corpus.push_back({Waveform(std::move(audio), kDefaultSampleRate), std::move(t)});
  }
  const VictimModel model = trained_model(vocab, corpus, 5);  // throws below target
  int correct = 0, total = 0;
  for (const auto& u : corpus) {
    const Transcript got = transcribe(model, u.audio);
    for (std::size_t i = 0; i < got.size(); ++i) {
      correct += (got[i] == u.transcript[i]) ? 1 : 0;
      ++total;
    }
  }
  REQUIRE(static_cast<double>(correct) / total >= 0.95);
}

TEST_CASE("victim training is deterministic and rejects an empty dataset") {
  const Vocabulary vocab = default_vocabulary();
  const Corpus corpus = synth_corpus(vocab, 6, 2, 3, 11);
  const VictimModel m1 = trained_model(vocab, corpus, 6);
  const VictimModel m2 = trained_model(vocab, corpus, 6);
  REQUIRE(m1.net.params() == m2.net.params());

  VictimTrainConfig cfg;
  REQUIRE_THROWS_AS(train_victim(Corpus{}, cfg, vocab), Error);
}

TEST_CASE("transcribe recovers clean training utterances") {
  const Vocabulary vocab = default_vocabulary();
  const Corpus corpus = synth_corpus(vocab, 8, 3, 3, 21);
  const VictimModel model = trained_model(vocab, corpus, 22);

  int exact = 0;
  for (const auto& u : corpus) exact += (transcribe(model, u.audio) == u.transcript) ? 1 : 0;
  REQUIRE(static_cast<double>(exact) / corpus.size() >= 0.8);
  REQUIRE(exact >= 1);

  // Silence transcribes consistently.
  Waveform silence(std::vector<double>(model.segment_len() * 2, 0.0), kDefaultSampleRate);
  const Transcript s1 = transcribe(model, silence);
  const Transcript s2 = transcribe(model, silence);
  REQUIRE(s1 == s2);
  REQUIRE(s1[0] == s1[1]);

  // Per-segment independence: transcription concatenates.
  const Waveform& a = corpus[0].audio;
  const Waveform& b = corpus[1].audio;
  Waveform ab = a;
  ab.samples.insert(ab.samples.end(), b.samples.begin(), b.samples.end());
  Transcript want = transcribe(model, a);
  const Transcript tb = transcribe(model, b);
  want.insert(want.end(), tb.begin(), tb.end());
  REQUIRE(transcribe(model, ab) == want);

  Waveform tiny(std::vector<double>(10, 0.0), kDefaultSampleRate);
  REQUIRE_THROWS_AS(transcribe(model, tiny), Error);
}

TEST_CASE("victim loss is small on confident predictions and additive per segment") {
  const Vocabulary vocab = default_vocabulary();
  const Corpus corpus = synth_corpus(vocab, 8, 3, 3, 31);
  const VictimModel model = trained_model(vocab, corpus, 32);

  // Pick a correctly transcribed utterance.
  const LabeledUtterance* pick = nullptr;
  for (const auto& u : corpus)
    if (transcribe(model, u.audio) == u.transcript) {
      pick = &u;
      break;
    }
  REQUIRE(pick != nullptr);
  const auto [loss, grad] = victim_loss_and_grad(model, pick->audio, pick->transcript);
  REQUIRE(loss >= 0.0);
  REQUIRE(loss < std::log(2.0) * pick->transcript.size());

  // Two identical segments contribute identically.
  Rng rng(33);
  const auto seg = synth_segment(vocab.keywords[2], rng, kDefaultSampleRate);
  std::vector<double> twice = seg;
  twice.insert(twice.end(), seg.begin(), seg.end());
  const Waveform w2(twice, kDefaultSampleRate);
  const Waveform w1(seg, kDefaultSampleRate);
  const double l2 = victim_loss_and_grad(model, w2, {2, 2}).first;
  const double l1 = victim_loss_and_grad(model, w1, {2}).first;
  REQUIRE(l2 == Catch::Approx(2.0 * l1).margin(1e-12));

  REQUIRE_THROWS_AS(victim_loss_and_grad(model, w1, {2, 2}), Error);
}

TEST_CASE("victim gradient matches central finite differences through the mfcc chain") {
  const Vocabulary vocab = default_vocabulary();
  const Corpus corpus = synth_corpus(vocab, 4, 2, 2, 41);
  const VictimModel model = trained_model(vocab, corpus, 42);

  const Waveform& w = corpus[1].audio;
  Transcript target = corpus[1].transcript;
  target[0] = (target[0] + 1) % vocab.size();  // push toward a wrong phrase

  const auto [loss, grad] = victim_loss_and_grad(model, w, target);
  REQUIRE(loss > 0.0);

  Rng pick(43);
  const double h = 1e-6;
  for (int probe = 0; probe < 32; ++probe) {
    const std::size_t idx = pick.below(w.size());
    Waveform wp = w, wm = w;
    wp.samples[idx] += h;
    wm.samples[idx] -= h;
    const double lp = victim_loss_and_grad(model, wp, target).first;
    const double lm = victim_loss_and_grad(model, wm, target).first;
    const double fd = (lp - lm) / (2.0 * h);
    REQUIRE(std::abs(fd - grad.samples[idx]) <= 1e-3 * std::max(1.0, std::abs(fd)));
  }
}
