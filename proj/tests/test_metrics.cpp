#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "rsdg/metrics.hpp"
#include "rsdg/rng.hpp"

using namespace rsdg;

namespace {

// Exhaustive edit-path enumeration with the same deterministic tie-break
// as the scorer: minimal cost, then most substitutions, then insertions.
struct PathCounts {
  int cost, subs, ins, dels;
};

bool path_better(const PathCounts& a, const PathCounts& b) {
  if (a.cost != b.cost) return a.cost < b.cost;
  if (a.subs != b.subs) return a.subs > b.subs;
  return a.ins > b.ins;
}

PathCounts enumerate_best(const Transcript& ref, const Transcript& hyp, std::size_t i,
                          std::size_t j) {
  if (i == ref.size() && j == hyp.size()) return {0, 0, 0, 0};
  PathCounts best{1 << 20, 0, 0, 0};
  if (i < ref.size() && j < hyp.size()) {
    PathCounts c = enumerate_best(ref, hyp, i + 1, j + 1);
    if (ref[i] != hyp[j]) {
      c.cost += 1;
      c.subs += 1;
    }
    if (path_better(c, best)) best = c;
  }
  if (j < hyp.size()) {
    PathCounts c = enumerate_best(ref, hyp, i, j + 1);
    c.cost += 1;
    c.ins += 1;
    if (path_better(c, best)) best = c;
  }
  if (i < ref.size()) {
    PathCounts c = enumerate_best(ref, hyp, i + 1, j);
    c.cost += 1;
    c.dels += 1;
    if (path_better(c, best)) best = c;
  }
  return best;
}

Waveform speech_like(std::size_t n, std::uint64_t seed, double amp = 0.4) {
  Rng rng(seed);
  std::vector<double> s(n);
  const double f0 = 220.0 + 40.0 * rng.uniform();
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / kDefaultSampleRate;
    const double env = 0.55 + 0.45 * std::sin(2.0 * M_PI * 3.7 * t + 0.3);
    s[i] = amp * env *
           (std::sin(2.0 * M_PI * f0 * t) + 0.5 * std::sin(2.0 * M_PI * 2 * f0 * t + 0.9) +
            0.25 * std::sin(2.0 * M_PI * 3 * f0 * t + 1.7));
    s[i] += 0.004 * rng.normal();
  }
  return Waveform(std::move(s), kDefaultSampleRate);
}

}  // namespace

TEST_CASE("wer basics") {
  REQUIRE(wer({1, 2, 3}, {1, 2, 3}).pct == 0.0);

  const WerResult sub = wer({0, 1, 2}, {0, 9, 2});
  REQUIRE(sub.substitutions == 1);
  REQUIRE(sub.insertions == 0);
  REQUIRE(sub.deletions == 0);
  REQUIRE(sub.pct == Catch::Approx(33.3333333).margin(1e-4));

  const WerResult ins = wer({5}, {5, 6, 7});
  REQUIRE(ins.insertions == 2);
  REQUIRE(ins.substitutions == 0);
  REQUIRE(ins.deletions == 0);
  REQUIRE(ins.pct == Catch::Approx(200.0).margin(1e-12));

  REQUIRE_THROWS_WITH(wer({}, {1}), Catch::Matchers::ContainsSubstring("undefined WER"));
}

TEST_CASE("wer matches exhaustive edit-path enumeration") {
  // All pairs up to 3 tokens over a 3-token alphabet, plus seeded longer
  // pairs; the acceptance suite runs the full 5-token sweep.
  std::vector<Transcript> shorts;
  shorts.push_back({});
  for (int a = 0; a < 3; ++a) {
    shorts.push_back({a});
    for (int b = 0; b < 3; ++b) {
      shorts.push_back({a, b});
      for (int c = 0; c < 3; ++c) shorts.push_back({a, b, c});
    }
  }
  for (const Transcript& ref : shorts) {
    if (ref.empty()) continue;
    for (const Transcript& hyp : shorts) {
      const WerResult got = wer(ref, hyp);
      const PathCounts want = enumerate_best(ref, hyp, 0, 0);
      REQUIRE(got.substitutions == want.subs);
      REQUIRE(got.insertions == want.ins);
      REQUIRE(got.deletions == want.dels);
      REQUIRE(got.substitutions + got.insertions + got.deletions == want.cost);
    }
  }

  Rng rng(0x6e5);
  for (int trial = 0; trial < 200; ++trial) {
    Transcript ref(1 + rng.below(5)), hyp(rng.below(6));
    for (int& t : ref) t = static_cast<int>(rng.below(3));
    for (int& t : hyp) t = static_cast<int>(rng.below(3));
    const WerResult got = wer(ref, hyp);
    const PathCounts want = enumerate_best(ref, hyp, 0, 0);
    REQUIRE(got.substitutions == want.subs);
    REQUIRE(got.insertions == want.ins);
    REQUIRE(got.deletions == want.dels);
  }
}

TEST_CASE("sla counts exact matches and ignores order") {
  std::vector<std::pair<Transcript, Transcript>> results = {
      {{1, 2}, {1, 2}}, {{1}, {1}}, {{2, 2}, {2, 3}}, {{0}, {0}}};
  REQUIRE(sla(results) == 75.0);
  std::rotate(results.begin(), results.begin() + 2, results.end());
  REQUIRE(sla(results) == 75.0);

  REQUIRE(sla({{{1}, {1}}}) == 100.0);
  REQUIRE(sla({{{1}, {2}}}) == 0.0);
  REQUIRE_THROWS_AS(sla({}), Error);
}

TEST_CASE("seg_snr analytic cases") {
  const Waveform clean = speech_like(8000, 21);
  REQUIRE(seg_snr(clean, clean, 256) == Catch::Approx(35.0));

  // Noise scaled frame-by-frame to the clean power lands at 0 dB.
  Rng rng(22);
  Waveform noisy = clean;
  const int frame = 256;
  for (int t = 0; t < 8000 / frame; ++t) {
    double sig = 0.0;
    std::vector<double> n(frame);
    double npow = 0.0;
    for (int i = 0; i < frame; ++i) {
      sig += clean.samples[t * frame + i] * clean.samples[t * frame + i];
      n[i] = rng.normal();
      npow += n[i] * n[i];
    }
    const double scale = std::sqrt(sig / npow);
    for (int i = 0; i < frame; ++i) noisy.samples[t * frame + i] += scale * n[i];
  }
  REQUIRE(std::abs(seg_snr(clean, noisy, frame)) < 0.5);

  Waveform flipped = clean;
  for (double& v : flipped.samples) v = -v;
  REQUIRE(seg_snr(clean, flipped, frame) ==
          Catch::Approx(10.0 * std::log10(0.25)).margin(1e-9));

  // Scale invariance.
  Waveform c2 = clean, n2 = noisy;
  for (double& v : c2.samples) v *= 3.7;
  for (double& v : n2.samples) v *= 3.7;
  REQUIRE(std::abs(seg_snr(c2, n2, frame) - seg_snr(clean, noisy, frame)) < 1e-9);

  Waveform shorter(std::vector<double>(4000, 0.1), kDefaultSampleRate);
  REQUIRE_THROWS_AS(seg_snr(clean, shorter, frame), Error);
}

TEST_CASE("stoi analytic cases") {
  const Waveform clean = speech_like(12000, 31);
  REQUIRE(stoi(clean, clean) >= 0.99);

  Waveform half = clean;
  for (double& v : half.samples) v *= 0.5;
  REQUIRE(stoi(clean, half) >= 0.99);

  Rng rng(32);
  Waveform noise = clean;
  for (double& v : noise.samples) v = 0.3 * rng.normal();
  REQUIRE(stoi(clean, noise) <= 0.3);

  // Non-strict monotonicity under growing additive noise.
  double prev = 1.1;
  for (double sigma : {0.0, 0.02, 0.1, 0.3, 0.8}) {
    Rng nrng(33);
    Waveform noisy = clean;
    for (double& v : noisy.samples) v += sigma * nrng.normal();
    const double score = stoi(clean, noisy);
    REQUIRE(score <= prev + 1e-9);
    prev = score;
  }

  Waveform short_sig(std::vector<double>(1000, 0.1), kDefaultSampleRate);
  REQUIRE_THROWS_AS(stoi(short_sig, short_sig), Error);
  Waveform wrong_rate = clean;
  wrong_rate.sample_rate_hz = 8000;
  REQUIRE_THROWS_AS(stoi(clean, wrong_rate), Error);
}
