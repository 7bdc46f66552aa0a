#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "rsdg/attack.hpp"
#include "rsdg/checkpoint.hpp"
#include "rsdg/config.hpp"
#include "rsdg/defense.hpp"
#include "rsdg/gan.hpp"
#include "rsdg/metrics.hpp"
#include "rsdg/report.hpp"
#include "rsdg/victim.hpp"
#include "rsdg/wav.hpp"

namespace rsdg {

// Stage orchestration: each stage reads its inputs from the output
// directory of earlier stages and writes its own artifacts, so reruns with
// identical configs reproduce identical bytes.

namespace exp_detail {

namespace fs = std::filesystem;
using nlohmann::json;

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  require(static_cast<bool>(os), "cannot write: " + path);
  os << text;
}

inline json load_json(const std::string& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), "cannot open: " + path);
  json j;
  is >> j;
  return j;
}

inline void save_json(const std::string& path, const json& j) {
  std::ofstream os(path);
  require(static_cast<bool>(os), "cannot write: " + path);
  os << j.dump(2) << "\n";
}

inline void save_corpus_with_hash(const Corpus& corpus, const Vocabulary& vocab,
                                  const std::string& dir, const std::string& hash) {
  fs::create_directories(dir);
  std::ofstream manifest(dir + "/manifest.txt");
  require(static_cast<bool>(manifest), "cannot write manifest in " + dir);
  manifest << "# config_hash=" << hash << "\n";
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const std::string name = "utt_" + std::to_string(i) + ".wav";
    write_wav(dir + "/" + name, corpus[i].audio);
    manifest << name << " " << transcript_to_string(corpus[i].transcript, vocab) << "\n";
  }
}

inline Corpus load_corpus(const std::string& dir, const Vocabulary& vocab) {
  std::ifstream manifest(dir + "/manifest.txt");
  require(static_cast<bool>(manifest), "missing corpus manifest in " + dir);
  Corpus corpus;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto space = line.find(' ');
    require(space != std::string::npos, "bad manifest line: " + line);
    const std::string name = line.substr(0, space);
    LabeledUtterance u;
    u.audio = read_wav(dir + "/" + name);
    u.transcript = transcript_from_string(line.substr(space + 1), vocab);
    corpus.push_back(std::move(u));
  }
  require(!corpus.empty(), "empty corpus in " + dir);
  return corpus;
}

inline Vocabulary load_vocab(const std::string& path) {
  const json j = load_json(path);
  Vocabulary v;
  for (const auto& kw : j.at("keywords")) {
    KeywordSignature sig;
    sig.label = kw.at("label").get<std::string>();
    sig.fundamental_hz = kw.at("fundamental_hz").get<double>();
    sig.harmonic_amps = kw.at("harmonic_amps").get<std::vector<double>>();
    v.keywords.push_back(std::move(sig));
  }
  v.validate();
  return v;
}

inline TrainConfig gan_train_config(const ExperimentConfig& cfg, bool regularizer_on) {
  const PatchCodec codec;
  TrainConfig tc;
  tc.batch_size = cfg.gan_batch_size;
  tc.critic_steps_per_gen_step = cfg.gan_critic_steps;
  tc.total_iters = cfg.gan_total_iters;
  tc.lr_gen = cfg.gan_lr_gen;
  tc.lr_critic = cfg.gan_lr_critic;
  tc.eta = cfg.gan_eta;
  tc.rho = cfg.gan_rho;
  tc.regularizer_on = regularizer_on;
  tc.eigen_dim = cfg.gan_eigen_dim;
  tc.seed = mix_seed(cfg.seed, regularizer_on ? 0x6a50 : 0x6a51);
  tc.latent_dim = cfg.gan_latent_dim;
  tc.gen_hidden = {cfg.gan_hidden, cfg.gan_hidden};
  tc.critic_hidden = {cfg.gan_hidden, cfg.gan_hidden};
  tc.bank_filters = cfg.gan_bank_filters;
  tc.bank_rt60_lo = cfg.gan_bank_rt60_lo;
  tc.bank_rt60_hi = cfg.gan_bank_rt60_hi;
  tc.dataset.kind = DatasetKind::kPatches;
  tc.dataset.patch_shape = codec.patch_shape();
  return tc;
}

inline Network load_generator(const ExperimentConfig& cfg, const std::string& gan_dir,
                              bool regularizer_on) {
  TrainConfig tc = gan_train_config(cfg, regularizer_on);
  // Rebuild the architecture, then load trained parameters.
  tc.dataset.patch_pool.push_back(Tensor::zeros(tc.dataset.patch_shape));
  tc.total_iters = 0;
  TrainResult shell = train(tc);
  Network gen = std::move(shell.generator);
  load_checkpoint(gan_dir + "/generator.ckpt", gen);
  return gen;
}

inline ProjectionConfig projection_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  ProjectionConfig pc;
  pc.n_restarts = cfg.defense_restarts;
  pc.steps_per_restart = cfg.defense_steps;
  pc.lr = cfg.defense_lr;
  pc.latent_dim = cfg.gan_latent_dim;
  pc.distance =
      cfg.defense_distance == "mfcc" ? DistanceSpace::kMfcc : DistanceSpace::kSpectrogram;
  pc.seed = seed;
  return pc;
}

struct AdversarialRecord {
  std::string wav;
  int orig_index = 0;
  Transcript target;
  bool success = false;
  bool holdout_success = false;
  double l_db = 0.0;
  int iters = 0;
};

inline void save_attack_manifest(const std::vector<AdversarialRecord>& records,
                                 const Vocabulary& vocab, const std::string& dir,
                                 const std::string& hash) {
  std::ofstream os(dir + "/manifest.txt");
  require(static_cast<bool>(os), "cannot write attack manifest in " + dir);
  os << "# config_hash=" << hash << "\n";
  os << "# wav|orig_index|target|success|holdout_success|l_db|iters\n";
  char buf[64];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof(buf), "%.6f", r.l_db);
    os << r.wav << "|" << r.orig_index << "|" << transcript_to_string(r.target, vocab) << "|"
       << (r.success ? 1 : 0) << "|" << (r.holdout_success ? 1 : 0) << "|" << buf << "|"
       << r.iters << "\n";
  }
}

inline std::vector<AdversarialRecord> load_attack_manifest(const std::string& dir,
                                                           const Vocabulary& vocab) {
  std::ifstream is(dir + "/manifest.txt");
  require(static_cast<bool>(is), "missing attack manifest in " + dir);
  std::vector<AdversarialRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> parts;
    std::size_t pos = 0;
    while (true) {
      const auto bar = line.find('|', pos);
      parts.push_back(line.substr(pos, bar == std::string::npos ? std::string::npos : bar - pos));
      if (bar == std::string::npos) break;
      pos = bar + 1;
    }
    require(parts.size() == 7, "bad attack manifest line: " + line);
    AdversarialRecord r;
    r.wav = parts[0];
    r.orig_index = std::stoi(parts[1]);
    r.target = transcript_from_string(parts[2], vocab);
    r.success = parts[3] == "1";
    r.holdout_success = parts[4] == "1";
    r.l_db = std::stod(parts[5]);
    r.iters = std::stoi(parts[6]);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace exp_detail

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

inline void stage_corpus(const ExperimentConfig& cfg, const std::string& out) {
  namespace fs = std::filesystem;
  const std::string hash = config_hash(cfg);
  const Vocabulary vocab = default_vocabulary(cfg.vocab_size);
  fs::create_directories(out);

  nlohmann::json vj;
  for (const auto& kw : vocab.keywords)
    vj["keywords"].push_back({{"label", kw.label},
                              {"fundamental_hz", kw.fundamental_hz},
                              {"harmonic_amps", kw.harmonic_amps}});
  vj["config_hash"] = hash;
  exp_detail::save_json(out + "/vocab.json", vj);

  const Corpus train = synth_corpus(vocab, cfg.train_per_class, cfg.min_tokens, cfg.max_tokens,
                                    mix_seed(cfg.seed, 0x7121));
  exp_detail::save_corpus_with_hash(train, vocab, out + "/corpus_train", hash);

  // Round-robin across leading classes so truncation keeps the balance.
  const int per_class = (cfg.eval_utterances + vocab.size() - 1) / vocab.size();
  const Corpus eval_raw = synth_corpus(vocab, per_class, cfg.min_tokens, cfg.max_tokens,
                                       mix_seed(cfg.seed, 0xe7a1));
  Corpus eval_set;
  for (int rep = 0; rep < per_class && static_cast<int>(eval_set.size()) < cfg.eval_utterances;
       ++rep)
    for (int k = 0; k < vocab.size() && static_cast<int>(eval_set.size()) < cfg.eval_utterances;
         ++k)
      eval_set.push_back(eval_raw[static_cast<std::size_t>(k) * per_class + rep]);
  exp_detail::save_corpus_with_hash(eval_set, vocab, out + "/corpus_eval", hash);
}

inline void stage_train_victim(const ExperimentConfig& cfg, const std::string& out) {
  const Vocabulary vocab = exp_detail::load_vocab(out + "/vocab.json");
  const Corpus train = exp_detail::load_corpus(out + "/corpus_train", vocab);
  VictimTrainConfig vc;
  vc.hidden = cfg.victim_hidden;
  vc.max_epochs = cfg.victim_max_epochs;
  vc.lr = cfg.victim_lr;
  vc.target_accuracy = cfg.victim_target_accuracy;
  vc.seed = mix_seed(cfg.seed, 0x71c7);
  const VictimModel model = train_victim(train, vc, vocab);
  save_checkpoint(out + "/victim.ckpt", model.net);
  nlohmann::json j{{"hidden", cfg.victim_hidden},
                   {"vocab_size", vocab.size()},
                   {"config_hash", config_hash(cfg)}};
  exp_detail::save_json(out + "/victim.json", j);
}

inline VictimModel load_victim_model(const ExperimentConfig& cfg, const std::string& out) {
  const Vocabulary vocab = exp_detail::load_vocab(out + "/vocab.json");
  const nlohmann::json j = exp_detail::load_json(out + "/victim.json");
  VictimModel model = make_victim(vocab, j.at("hidden").get<int>(), 0);
  load_checkpoint(out + "/victim.ckpt", model.net);
  (void)cfg;
  return model;
}

inline void stage_train_gan(const ExperimentConfig& cfg, const std::string& out) {
  namespace fs = std::filesystem;
  const Vocabulary vocab = exp_detail::load_vocab(out + "/vocab.json");
  const Corpus train_set = exp_detail::load_corpus(out + "/corpus_train", vocab);
  const PatchCodec codec;

  Batch pool;
  for (const LabeledUtterance& u : train_set) {
    const int n_segs = static_cast<int>(u.audio.size()) / codec.segment_len;
    for (int s = 0; s < n_segs; ++s) {
      Waveform seg(std::vector<double>(
                       u.audio.samples.begin() + static_cast<std::ptrdiff_t>(s) * codec.segment_len,
                       u.audio.samples.begin() +
                           static_cast<std::ptrdiff_t>(s + 1) * codec.segment_len),
                   u.audio.sample_rate_hz);
      pool.push_back(codec.encode(seg).patch);
    }
  }

  const bool variants[] = {true, false};
  for (bool reg_on : variants) {
    if (!reg_on && !cfg.gan_train_ablation) continue;
    TrainConfig tc = exp_detail::gan_train_config(cfg, reg_on);
    tc.dataset.patch_pool = pool;
    const std::string dir = out + (reg_on ? "/gan" : "/gan_ablation");
    fs::create_directories(dir);
    tc.abort_checkpoint_dir = dir;
    const TrainResult result = train(tc);

    save_checkpoint(dir + "/generator.ckpt", result.generator);
    save_checkpoint(dir + "/critic.ckpt", result.critic);
    save_architecture_json(dir + "/generator_arch.json", result.generator, config_hash(cfg));
    write_train_log(result.log, dir + "/train_log.jsonl");
    save_band_weights_csv(train_theta(tc, train_rir_bank(tc)), dir + "/theta_band_weights.csv");

    nlohmann::json stats{
        {"iterations_to_collapse", result.stats.iterations_to_collapse
                                       ? nlohmann::json(*result.stats.iterations_to_collapse)
                                       : nlohmann::json(nullptr)},
        {"modes_learned_per_batch", result.stats.modes_learned_per_batch},
        {"gc_per_batch", result.stats.gc_per_batch},
        {"total_iters", tc.total_iters},
        {"config_hash", config_hash(cfg)}};
    exp_detail::save_json(dir + "/stats.json", stats);
  }
}

inline void stage_attack(const ExperimentConfig& cfg, const std::string& out) {
  namespace fs = std::filesystem;
  const Vocabulary vocab = exp_detail::load_vocab(out + "/vocab.json");
  const VictimModel victim = load_victim_model(cfg, out);
  const Corpus eval_set = exp_detail::load_corpus(out + "/corpus_eval", vocab);
  const std::string hash = config_hash(cfg);

  const RirBank bank = make_rir_bank(cfg.gan_bank_filters, cfg.gan_bank_rt60_lo,
                                     cfg.gan_bank_rt60_hi, mix_seed(cfg.seed, 0xa7cb),
                                     kDefaultSampleRate);

  for (int rep = 0; rep < cfg.repetitions; ++rep) {
    const std::uint64_t rep_seed = mix_seed(cfg.seed, 5000 + rep);
    const int n = std::min<int>(cfg.attack_samples, static_cast<int>(eval_set.size()));
    Corpus samples(eval_set.begin(), eval_set.begin() + n);
    const auto targets = matched_length_targets(samples, cfg.attack_n_targets, vocab, rep_seed);

    AttackConfig ac;
    ac.eps_db = cfg.attack_eps_db;
    ac.max_iters = cfg.attack_max_iters;
    ac.lr = cfg.attack_lr;
    ac.seed = rep_seed;

    EotConfig ec;
    ec.bank = bank;
    ec.noise_sigma = cfg.eot_noise_sigma;
    ec.alpha_k = cfg.eot_alpha;
    ec.n_mc = cfg.eot_n_mc;

    const RirFilter holdout = holdout_rir(bank, ac.seed);
    auto holdout_ok = [&](const Waveform& x_adv, const Transcript& target) {
      return transcribe(victim, apply_rir(x_adv, holdout)) == target;
    };

    const std::string rep_dir = out + "/rep" + std::to_string(rep);
    for (const char* kind : {"cw", "eot"}) {
      if (std::string(kind) == "eot" && !cfg.attack_run_eot) continue;
      const std::string dir = rep_dir + "/attack_" + kind;
      fs::create_directories(dir);
      std::vector<exp_detail::AdversarialRecord> records;
      for (int i = 0; i < n; ++i) {
        for (int t = 0; t < cfg.attack_n_targets; ++t) {
          const Transcript& target = targets[i][t];
          const AdversarialExample ex =
              std::string(kind) == "cw"
                  ? cw_attack(victim, samples[i].audio, target, ac)
                  : eot_attack(victim, samples[i].audio, target, ac, ec);
          exp_detail::AdversarialRecord r;
          r.wav = "adv_" + std::to_string(i) + "_" + std::to_string(t) + ".wav";
          r.orig_index = i;
          r.target = target;
          r.success = ex.success;
          r.holdout_success = holdout_ok(ex.x_adv, target);
          r.l_db = std::isfinite(ex.l_db) ? ex.l_db : -999.0;
          r.iters = ex.iters_used;
          write_wav(dir + "/" + r.wav, ex.x_adv);
          records.push_back(std::move(r));
        }
      }
      exp_detail::save_attack_manifest(records, vocab, dir, hash);
    }
  }
}

inline void stage_defend(const ExperimentConfig& cfg, const std::string& out) {
  namespace fs = std::filesystem;
  const Vocabulary vocab = exp_detail::load_vocab(out + "/vocab.json");
  const VictimModel victim = load_victim_model(cfg, out);
  const Corpus eval_set = exp_detail::load_corpus(out + "/corpus_eval", vocab);
  const std::string gan_dir = cfg.defense_use_ablation ? out + "/gan_ablation" : out + "/gan";
  Network generator = exp_detail::load_generator(cfg, gan_dir, !cfg.defense_use_ablation);
  const std::string hash = config_hash(cfg);

  for (int rep = 0; rep < cfg.repetitions; ++rep) {
    const std::string rep_dir = out + "/rep" + std::to_string(rep);
    const ProjectionConfig pc =
        exp_detail::projection_config(cfg, mix_seed(cfg.seed, 6000 + rep));

    // Clean pass-through set.
    {
      const std::string dir = rep_dir + "/defense_clean";
      fs::create_directories(dir);
      nlohmann::json rows = nlohmann::json::array();
      const int n = std::min<int>(cfg.attack_samples, static_cast<int>(eval_set.size()));
      for (int i = 0; i < n; ++i) {
        const DefenseResult res = defend(generator, victim, eval_set[i].audio, pc);
        const std::string wav = "def_" + std::to_string(i) + ".wav";
        write_wav(dir + "/" + wav, res.x_syn);
        rows.push_back({{"wav", wav},
                        {"orig_index", i},
                        {"residual", res.residual},
                        {"transcript_in", transcript_to_string(res.transcript_in, vocab)},
                        {"transcript_out", transcript_to_string(res.transcript_out, vocab)},
                        {"truth", transcript_to_string(eval_set[i].transcript, vocab)},
                        {"seg_snr_db", seg_snr(eval_set[i].audio, res.x_syn, 256)},
                        {"stoi", stoi(eval_set[i].audio, res.x_syn)}});
      }
      exp_detail::save_json(dir + "/report.json",
                            nlohmann::json{{"config_hash", hash}, {"rows", rows}});
    }

    // Adversarial sets.
    for (const char* kind : {"cw", "eot"}) {
      const std::string adv_dir = rep_dir + "/attack_" + std::string(kind);
      if (!fs::exists(adv_dir + "/manifest.txt")) continue;
      const auto records = exp_detail::load_attack_manifest(adv_dir, vocab);
      const std::string dir = rep_dir + "/defense_" + std::string(kind);
      fs::create_directories(dir);
      nlohmann::json rows = nlohmann::json::array();
      for (std::size_t i = 0; i < records.size(); ++i) {
        const Waveform x_adv = read_wav(adv_dir + "/" + records[i].wav);
        const DefenseResult res = defend(generator, victim, x_adv, pc);
        const std::string wav = "def_" + std::to_string(i) + ".wav";
        write_wav(dir + "/" + wav, res.x_syn);
        const Waveform& clean = eval_set[records[i].orig_index].audio;
        rows.push_back(
            {{"wav", wav},
             {"adv_wav", records[i].wav},
             {"orig_index", records[i].orig_index},
             {"residual", res.residual},
             {"transcript_in", transcript_to_string(res.transcript_in, vocab)},
             {"transcript_out", transcript_to_string(res.transcript_out, vocab)},
             {"truth",
              transcript_to_string(eval_set[records[i].orig_index].transcript, vocab)},
             {"seg_snr_db", seg_snr(clean, res.x_syn, 256)},
             {"stoi", stoi(clean, res.x_syn)}});
      }
      exp_detail::save_json(dir + "/report.json",
                            nlohmann::json{{"config_hash", hash}, {"rows", rows}});
    }
  }
}

inline void stage_evaluate(const ExperimentConfig& cfg, const std::string& out) {
  const Vocabulary vocab = exp_detail::load_vocab(out + "/vocab.json");
  const VictimModel victim = load_victim_model(cfg, out);
  const Corpus eval_set = exp_detail::load_corpus(out + "/corpus_eval", vocab);

  const nlohmann::json gan_stats = exp_detail::load_json(out + "/gan/stats.json");

  for (int rep = 0; rep < cfg.repetitions; ++rep) {
    const std::string rep_dir = out + "/rep" + std::to_string(rep);
    std::vector<ReportRow> rows;

    // Pooled token counts for corpus-level WER.
    struct SetMetrics {
      int sub = 0, ins = 0, del = 0, ref_len = 0;
      std::vector<std::pair<Transcript, Transcript>> sla_pairs;
      double seg_acc = 0.0, stoi_acc = 0.0;
      int n = 0;

      void add(const Transcript& truth, const Transcript& hyp, double snr, double st) {
        const WerResult w = wer(truth, hyp);
        sub += w.substitutions;
        ins += w.insertions;
        del += w.deletions;
        ref_len += static_cast<int>(truth.size());
        sla_pairs.push_back({hyp, truth});
        seg_acc += snr;
        stoi_acc += st;
        ++n;
      }

      void fill(ReportRow& row) const {
        row.wer_pct = 100.0 * (sub + ins + del) / std::max(1, ref_len);
        row.sla_pct = sla(sla_pairs);
        row.seg_snr_db = seg_acc / std::max(1, n);
        row.stoi = stoi_acc / std::max(1, n);
      }
    };

    // Undefended adversarial signals against the ground truth.
    {
      const auto records =
          exp_detail::load_attack_manifest(rep_dir + "/attack_cw", vocab);
      SetMetrics m;
      for (const auto& r : records) {
        const Waveform x_adv = read_wav(rep_dir + "/attack_cw/" + r.wav);
        const Waveform& clean = eval_set[r.orig_index].audio;
        m.add(eval_set[r.orig_index].transcript, transcribe(victim, x_adv),
              seg_snr(clean, x_adv, 256), stoi(clean, x_adv));
      }
      ReportRow row;
      row.defense = "undefended";
      m.fill(row);
      rows.push_back(row);
    }

    // Defended rows from the defense reports.
    auto defended_row = [&](const std::string& report_path, const std::string& name,
                            bool with_stats) {
      const nlohmann::json rj = exp_detail::load_json(report_path);
      SetMetrics m;
      for (const auto& r : rj.at("rows")) {
        m.add(transcript_from_string(r.at("truth").get<std::string>(), vocab),
              transcript_from_string(r.at("transcript_out").get<std::string>(), vocab),
              r.at("seg_snr_db").get<double>(), r.at("stoi").get<double>());
      }
      ReportRow row;
      row.defense = name;
      m.fill(row);
      if (with_stats) {
        if (!gan_stats.at("iterations_to_collapse").is_null())
          row.iterations_to_collapse = gan_stats.at("iterations_to_collapse").get<double>();
        else
          row.iterations_to_collapse = gan_stats.at("total_iters").get<double>();
        row.modes = gan_stats.at("modes_learned_per_batch").get<double>();
        row.gc = gan_stats.at("gc_per_batch").get<double>();
      }
      rows.push_back(row);
    };
    defended_row(rep_dir + "/defense_cw/report.json", "rsd-gan", true);
    if (std::filesystem::exists(rep_dir + "/defense_eot/report.json"))
      defended_row(rep_dir + "/defense_eot/report.json", "rsd-gan-eot", true);

    // Serialize raw rows at full precision for the report stage.
    std::ostringstream csv;
    csv << "# config_hash=" << config_hash(cfg) << "\n";
    char buf[64];
    for (const ReportRow& r : rows) {
      csv << r.defense;
      for (double v : {r.iterations_to_collapse, r.modes, r.gc, r.wer_pct, r.sla_pct,
                       r.seg_snr_db, r.stoi}) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        csv << "," << buf;
      }
      csv << "\n";
    }
    exp_detail::write_text(rep_dir + "/rows.csv", csv.str());
  }
}

inline void stage_report(const ExperimentConfig& cfg, const std::string& out) {
  std::vector<ReportRow> rows;
  for (int rep = 0; rep < cfg.repetitions; ++rep) {
    std::ifstream is(out + "/rep" + std::to_string(rep) + "/rows.csv");
    require(static_cast<bool>(is), "missing evaluation rows for rep " + std::to_string(rep));
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ss(line);
      std::string field;
      ReportRow r;
      std::getline(ss, r.defense, ',');
      double* fields[] = {&r.iterations_to_collapse, &r.modes,      &r.gc,  &r.wer_pct,
                          &r.sla_pct,                &r.seg_snr_db, &r.stoi};
      for (double* f : fields) {
        require(static_cast<bool>(std::getline(ss, field, ',')), "bad rows.csv line: " + line);
        *f = std::stod(field);
      }
      rows.push_back(std::move(r));
    }
  }
  if (cfg.report_include_reference)
    for (const ReportRow& r : reference_rows()) rows.push_back(r);
  const RenderedReport rendered = render_report(rows, config_hash(cfg));
  save_report(rendered, out + "/report.csv", out + "/report.txt");
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& stage_order() {
  static const std::vector<std::string> order = {
      "corpus", "train-victim", "train-gan", "attack", "defend", "evaluate", "report"};
  return order;
}

// Executes the requested stages in dependency order. Throws Error with the
// failing stage's name; artifacts written before the failure remain.
inline void run(const ExperimentConfig& cfg, const std::vector<std::string>& stages,
                const std::string& out) {
  for (const std::string& s : stages)
    require(std::find(stage_order().begin(), stage_order().end(), s) != stage_order().end(),
            "unknown stage: " + s);
  for (const std::string& stage : stage_order()) {
    if (std::find(stages.begin(), stages.end(), stage) == stages.end()) continue;
    try {
      if (stage == "corpus")
        stage_corpus(cfg, out);
      else if (stage == "train-victim")
        stage_train_victim(cfg, out);
      else if (stage == "train-gan")
        stage_train_gan(cfg, out);
      else if (stage == "attack")
        stage_attack(cfg, out);
      else if (stage == "defend")
        stage_defend(cfg, out);
      else if (stage == "evaluate")
        stage_evaluate(cfg, out);
      else if (stage == "report")
        stage_report(cfg, out);
    } catch (const Error& e) {
      throw Error("stage " + stage + " failed: " + e.what());
    }
  }
}

}  // namespace rsdg
