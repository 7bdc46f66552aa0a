#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "rsdg/error.hpp"
#include "rsdg/nn.hpp"
#include "rsdg/rng.hpp"
#include "rsdg/signal.hpp"
#include "rsdg/wav.hpp"

namespace rsdg {

// ---------------------------------------------------------------------------
// Vocabulary and corpus
// ---------------------------------------------------------------------------

struct KeywordSignature {
  std::string label;
  double fundamental_hz = 0.0;
  std::vector<double> harmonic_amps;  // amplitude per harmonic, fundamental first
};

struct Vocabulary {
  std::vector<KeywordSignature> keywords;

  int size() const { return static_cast<int>(keywords.size()); }

  void validate() const {
    require(size() >= 4, "vocabulary needs at least 4 keywords");
    for (std::size_t i = 0; i < keywords.size(); ++i)
      for (std::size_t j = i + 1; j < keywords.size(); ++j)
        require(std::abs(keywords[i].fundamental_hz - keywords[j].fundamental_hz) >= 40.0,
                "keyword fundamentals closer than 40 Hz");
  }
};

// Fundamentals and their second harmonics all sit below 1 kHz, which keeps
// every class distinguishable inside the low-band spectrogram patches the
// defense generator models.
inline Vocabulary default_vocabulary(int k = 4) {
  static const char* names[] = {"alpha", "bravo", "charlie", "delta",
                                "echo",  "foxtrot", "golf",  "hotel"};
  require(k >= 4 && k <= 8, "default vocabulary supports 4..8 keywords");
  Vocabulary v;
  for (int i = 0; i < k; ++i)
    v.keywords.push_back({names[i], 200.0 + 80.0 * i, {1.0, 0.5}});
  v.validate();
  return v;
}

// Token sequence over a vocabulary; may be empty.
using Transcript = std::vector<int>;

inline std::string transcript_to_string(const Transcript& t, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < t.size(); ++i) {
    require(t[i] >= 0 && t[i] < vocab.size(), "transcript token out of range");
    if (i) out += " ";
    out += vocab.keywords[t[i]].label;
  }
  return out;
}

inline Transcript transcript_from_string(const std::string& s, const Vocabulary& vocab) {
  Transcript t;
  std::istringstream ss(s);
  std::string tok;
  while (ss >> tok) {
    int id = -1;
    for (int i = 0; i < vocab.size(); ++i)
      if (vocab.keywords[i].label == tok) id = i;
    require(id >= 0, "unknown token: " + tok);
    t.push_back(id);
  }
  return t;
}

constexpr double kSegmentSeconds = 0.25;

inline int segment_samples(int sample_rate_hz) {
  return static_cast<int>(kSegmentSeconds * sample_rate_hz);
}

struct LabeledUtterance {
  Waveform audio;
  Transcript transcript;
};

using Corpus = std::vector<LabeledUtterance>;

// One keyword segment: a harmonic stack with seeded amplitude/phase jitter,
// peak-normalized to 0.5, over a -40 dB noise floor.
inline std::vector<double> synth_segment(const KeywordSignature& kw, Rng& rng,
                                         int sample_rate_hz) {
  const int n = segment_samples(sample_rate_hz);
  std::vector<double> seg(static_cast<std::size_t>(n), 0.0);
  std::vector<double> amps(kw.harmonic_amps.size());
  std::vector<double> phases(kw.harmonic_amps.size());
  for (std::size_t h = 0; h < amps.size(); ++h) {
    amps[h] = kw.harmonic_amps[h] * (1.0 + 0.1 * rng.normal());
    phases[h] = rng.uniform(0.0, 2.0 * M_PI);
  }
  double peak = 0.0;
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t h = 0; h < amps.size(); ++h)
      s += amps[h] * std::sin(2.0 * M_PI * kw.fundamental_hz * (h + 1) * i / sample_rate_hz +
                              phases[h]);
    seg[i] = s;
    peak = std::max(peak, std::abs(s));
  }
  const double scale = peak > 0.0 ? 0.5 / peak : 0.0;
  const double noise = 0.5 * std::pow(10.0, -40.0 / 20.0);
  for (int i = 0; i < n; ++i) seg[i] = seg[i] * scale + noise * rng.normal();
  return seg;
}

// Synthetic keyword corpus: n_per_class utterances lead with each keyword,
// followed by seeded random tokens up to the drawn length.
inline Corpus synth_corpus(const Vocabulary& vocab, int n_per_class, int min_tokens,
                           int max_tokens, std::uint64_t seed,
                           int sample_rate_hz = kDefaultSampleRate) {
  vocab.validate();
  require(n_per_class >= 1, "n_per_class must be positive");
  require(min_tokens >= 1 && min_tokens <= max_tokens, "bad utterance length range");
  Corpus corpus;
  Rng rng(mix_seed(seed, 0xc02b));
  for (int k = 0; k < vocab.size(); ++k) {
    for (int rep = 0; rep < n_per_class; ++rep) {
      const int len =
          min_tokens + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_tokens - min_tokens + 1)));
      Transcript t;
      t.push_back(k);
      for (int i = 1; i < len; ++i) t.push_back(static_cast<int>(rng.below(vocab.size())));

      std::vector<double> audio;
      audio.reserve(static_cast<std::size_t>(len) * segment_samples(sample_rate_hz));
      for (int tok : t) {
        const std::vector<double> seg = synth_segment(vocab.keywords[tok], rng, sample_rate_hz);
        audio.insert(audio.end(), seg.begin(), seg.end());
      }
      corpus.push_back({Waveform(std::move(audio), sample_rate_hz), std::move(t)});
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Victim model
// ---------------------------------------------------------------------------

// Per-segment keyword classifier over an mfcc front-end. Stands in for a
// full speech-to-text system: white-box attacks need its loss and input
// gradients, nothing more.
struct VictimModel {
  FrameSpec frontend{512, 256, Window::kHann};
  int n_mels = 26;
  int n_coeffs = 13;
  int sample_rate_hz = kDefaultSampleRate;
  Vocabulary vocab;
  Network net;

  VictimModel(Vocabulary v, Network n) : vocab(std::move(v)), net(std::move(n)) {}

  int segment_len() const { return segment_samples(sample_rate_hz); }
  int frames_per_segment() const {
    return stft_frame_count(static_cast<std::size_t>(segment_len()), frontend);
  }
  int feature_dim() const { return frames_per_segment() * n_coeffs; }
};

struct VictimTrainConfig {
  int hidden = 32;
  int max_epochs = 60;
  double lr = 3e-3;
  double target_accuracy = 0.95;
  std::uint64_t seed = 1;
};

// Feature width of the default front-end; fixed so victim networks can be
// rebuilt for checkpoint loading without a corpus at hand.
inline int victim_feature_dim(int n_coeffs = 13) {
  const FrameSpec fe{512, 256, Window::kHann};
  return stft_frame_count(static_cast<std::size_t>(segment_samples(kDefaultSampleRate)), fe) *
         n_coeffs;
}

inline VictimModel make_victim(Vocabulary vocab, int hidden, std::uint64_t seed) {
  Network net = build_mlp({victim_feature_dim(), hidden, vocab.size()}, seed, MlpHead::kSoftmax);
  return VictimModel(std::move(vocab), std::move(net));
}

namespace victim_detail {

inline std::vector<double> segment_features(const VictimModel& model, const double* samples) {
  MfccGraph graph(model.frontend, model.n_mels, model.n_coeffs);
  Waveform seg(std::vector<double>(samples, samples + model.segment_len()),
               model.sample_rate_hz);
  graph.forward(seg);
  return graph.out.frames;
}

}  // namespace victim_detail

// Cross-entropy training to the target held-out segment accuracy; throws
// with the final accuracy when the budget runs out.
inline VictimModel train_victim(const Corpus& dataset, const VictimTrainConfig& config,
                                const Vocabulary& vocab) {
  require(!dataset.empty(), "train_victim: empty dataset");
  vocab.validate();

  VictimModel model = make_victim(vocab, config.hidden, mix_seed(config.seed, 0x11c));
  const int feat_dim = model.feature_dim();

  // Flatten utterances into labeled segments and precompute features.
  std::vector<std::vector<double>> feats;
  std::vector<int> labels;
  for (const LabeledUtterance& u : dataset) {
    const int n_segs = static_cast<int>(u.audio.size()) / model.segment_len();
    require(n_segs == static_cast<int>(u.transcript.size()),
            "utterance length does not match its transcript");
    for (int s = 0; s < n_segs; ++s) {
      feats.push_back(victim_detail::segment_features(
          model, u.audio.samples.data() + static_cast<std::size_t>(s) * model.segment_len()));
      labels.push_back(u.transcript[s]);
    }
  }

  // Every fifth segment is held out.
  std::vector<int> train_idx, hold_idx;
  for (std::size_t i = 0; i < feats.size(); ++i)
    (i % 5 == 4 ? hold_idx : train_idx).push_back(static_cast<int>(i));
  require(!train_idx.empty() && !hold_idx.empty(), "dataset too small to split");

  AdamState adam;
  Rng shuffle_rng(mix_seed(config.seed, 0x5421));
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::vector<int> order = train_idx;
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    for (int idx : order) {
      Tensor x({feat_dim}, feats[idx]);
      model.net.zero_grads();
      const Tensor p = model.net.forward(x);
      Tensor up = Tensor::zeros(p.shape);
      up.v[labels[idx]] = -1.0 / std::max(p.v[labels[idx]], 1e-12);
      model.net.backward(up);
      adam_step(model.net.params(), model.net.grads(), adam, config.lr);
    }

    int correct = 0;
    for (int idx : hold_idx) {
      Tensor x({feat_dim}, feats[idx]);
      const Tensor p = model.net.forward(x);
      const int pred = static_cast<int>(std::max_element(p.v.begin(), p.v.end()) - p.v.begin());
      correct += (pred == labels[idx]) ? 1 : 0;
    }
    const double acc = static_cast<double>(correct) / hold_idx.size();
    if (acc >= config.target_accuracy) return model;
  }

  int correct = 0;
  for (int idx : hold_idx) {
    Tensor x({feat_dim}, feats[idx]);
    const Tensor p = model.net.forward(x);
    const int pred = static_cast<int>(std::max_element(p.v.begin(), p.v.end()) - p.v.begin());
    correct += (pred == labels[idx]) ? 1 : 0;
  }
  throw Error("victim training missed target accuracy: reached " +
              std::to_string(static_cast<double>(correct) / hold_idx.size()));
}

inline Transcript transcribe(const VictimModel& model, const Waveform& w) {
  require(w.sample_rate_hz == model.sample_rate_hz, "transcribe: sample-rate mismatch");
  const int seg_len = model.segment_len();
  require(static_cast<int>(w.size()) >= seg_len, "transcribe: waveform shorter than one segment");
  const int n_segs = static_cast<int>(w.size()) / seg_len;
  Transcript out;
  Network& net = const_cast<Network&>(model.net);  // forward caching only
  for (int s = 0; s < n_segs; ++s) {
    const std::vector<double> f = victim_detail::segment_features(
        model, w.samples.data() + static_cast<std::size_t>(s) * seg_len);
    Tensor x({model.feature_dim()}, f);
    const Tensor p = net.forward(x);
    out.push_back(static_cast<int>(std::max_element(p.v.begin(), p.v.end()) - p.v.begin()));
  }
  return out;
}

// Summed per-segment cross-entropy toward the target transcript, with the
// gradient taken all the way back to the raw samples through the mfcc chain.
inline std::pair<double, Waveform> victim_loss_and_grad(const VictimModel& model,
                                                        const Waveform& w,
                                                        const Transcript& target) {
  require(w.sample_rate_hz == model.sample_rate_hz, "victim loss: sample-rate mismatch");
  const int seg_len = model.segment_len();
  const int n_segs = static_cast<int>(w.size()) / seg_len;
  require(n_segs == static_cast<int>(target.size()),
          "victim loss: target length does not match segment count");

  double loss = 0.0;
  Waveform grad(std::vector<double>(w.size(), 0.0), w.sample_rate_hz);
  Network& net = const_cast<Network&>(model.net);
  for (int s = 0; s < n_segs; ++s) {
    require(target[s] >= 0 && target[s] < model.vocab.size(), "victim loss: bad target token");
    MfccGraph graph(model.frontend, model.n_mels, model.n_coeffs);
    Waveform seg(std::vector<double>(
                     w.samples.begin() + static_cast<std::ptrdiff_t>(s) * seg_len,
                     w.samples.begin() + static_cast<std::ptrdiff_t>(s + 1) * seg_len),
                 model.sample_rate_hz);
    graph.forward(seg);

    Tensor x({model.feature_dim()}, graph.out.frames);
    net.zero_grads();
    const Tensor p = net.forward(x);
    const double pt = std::max(p.v[target[s]], 1e-300);
    loss += -std::log(pt);

    Tensor up = Tensor::zeros(p.shape);
    up.v[target[s]] = -1.0 / pt;
    const Tensor dfeat = net.backward(up);
    const std::vector<double> dseg = graph.backward(dfeat.v);
    for (int i = 0; i < seg_len; ++i) grad.samples[s * seg_len + i] = dseg[i];
  }
  return {loss, std::move(grad)};
}

// ---------------------------------------------------------------------------
// Corpus export (WAV files plus a manifest of "path token token ..." lines)
// ---------------------------------------------------------------------------

inline void save_corpus(const Corpus& corpus, const Vocabulary& vocab, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream manifest(dir + "/manifest.txt");
  require(static_cast<bool>(manifest), "cannot write corpus manifest in " + dir);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const std::string name = "utt_" + std::to_string(i) + ".wav";
    write_wav(dir + "/" + name, corpus[i].audio);
    manifest << name << " " << transcript_to_string(corpus[i].transcript, vocab) << "\n";
  }
}

}  // namespace rsdg
