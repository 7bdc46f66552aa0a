#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "rsdg/config.hpp"
#include "rsdg/experiment.hpp"
#include "rsdg/report.hpp"

using namespace rsdg;

namespace {

std::string file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(static_cast<bool>(is));
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

ExperimentConfig smoke_config() {
  return parse_config_text(R"(
[run]
seed = 11
repetitions = 1

[corpus]
vocab_size = 4
train_per_class = 6
eval_utterances = 6
min_tokens = 2
max_tokens = 2

[gan]
batch_size = 16
total_iters = 50
hidden = 32
latent_dim = 8
eigen_dim = 8
train_ablation = false

[attack]
samples = 2
max_iters = 120
n_targets = 1
eot_n_mc = 2

[defense]
restarts = 1
steps = 20
distance = spectrogram
)");
}

}  // namespace

TEST_CASE("config parsing accepts known keys and rejects unknown ones") {
  const ExperimentConfig cfg = parse_config_text("[run]\nseed = 42\nrepetitions = 2\n");
  REQUIRE(cfg.seed == 42);
  REQUIRE(cfg.repetitions == 2);
  REQUIRE(cfg.vocab_size == 4);  // default untouched

  REQUIRE_THROWS_WITH(parse_config_text("[run]\nbogus = 1\n"),
                      Catch::Matchers::ContainsSubstring("unknown key"));
  REQUIRE_THROWS_WITH(parse_config_text("[nope]\nseed = 1\n"),
                      Catch::Matchers::ContainsSubstring("unknown key"));
  REQUIRE_THROWS_AS(parse_config_text("[run]\nseed = abc\n"), Error);
  REQUIRE_THROWS_WITH(parse_config_text("seed = 1\n"),
                      Catch::Matchers::ContainsSubstring("outside any section"));
}

TEST_CASE("config hash is stable and sensitive") {
  const ExperimentConfig a = parse_config_text("[run]\nseed = 1\n");
  const ExperimentConfig b = parse_config_text("[run]\nseed = 1\n");
  const ExperimentConfig c = parse_config_text("[run]\nseed = 2\n");
  REQUIRE(config_hash(a) == config_hash(b));
  REQUIRE(config_hash(a) != config_hash(c));
  REQUIRE(config_hash(a).size() == 16);
}

TEST_CASE("render_report reproduces the published fixture row verbatim") {
  const RenderedReport r = render_report(reference_rows());
  REQUIRE(r.text.find("RSD-GAN (ref)") != std::string::npos);
  // 6.11 / 75.88 / 34.12 / 0.96 / 211 on one row.
  std::istringstream lines(r.text);
  std::string line;
  bool found = false;
  while (std::getline(lines, line)) {
    if (line.find("RSD-GAN (ref)") == std::string::npos) continue;
    found = true;
    REQUIRE(line.find("6.11") != std::string::npos);
    REQUIRE(line.find("75.88") != std::string::npos);
    REQUIRE(line.find("34.12") != std::string::npos);
    REQUIRE(line.find("0.96") != std::string::npos);
    REQUIRE(line.find("211") != std::string::npos);
  }
  REQUIRE(found);
}

TEST_CASE("render_report aggregates repetitions with sample standard deviation") {
  ReportRow a;
  a.defense = "x";
  a.wer_pct = 10.0;
  a.sla_pct = 50.0;
  ReportRow b = a;
  b.wer_pct = 14.0;
  b.sla_pct = 70.0;

  const RenderedReport two = render_report({a, b});
  // Hand average: wer (10+14)/2 = 12.00, std = sqrt(8) = 2.83; sla 60 +/- 14.14.
  REQUIRE(two.csv.find("x,n/a,n/a,n/a,n/a,n/a,n/a,12.00,2.83,60.00,14.14") != std::string::npos);

  const RenderedReport one = render_report({a});
  REQUIRE(one.csv.find("x,n/a,n/a,n/a,n/a,n/a,n/a,10.00,n/a,50.00,n/a") != std::string::npos);
}

TEST_CASE("render_report rejects an empty row set") {
  REQUIRE_THROWS_AS(render_report({}), Error);
}

TEST_CASE("unknown stages are rejected and empty stage lists do nothing") {
  const ExperimentConfig cfg = smoke_config();
  REQUIRE_THROWS_WITH(run(cfg, {"bogus"}, "/tmp/rsdg_nowhere"),
                      Catch::Matchers::ContainsSubstring("unknown stage"));
  run(cfg, {}, "/tmp/rsdg_nowhere");  // no-op
  REQUIRE_FALSE(std::filesystem::exists("/tmp/rsdg_nowhere"));
}

TEST_CASE("smoke pipeline end to end is deterministic") {
  namespace fs = std::filesystem;
  const ExperimentConfig cfg = smoke_config();
  const std::string out_a = fs::temp_directory_path() / "rsdg_smoke_a";
  const std::string out_b = fs::temp_directory_path() / "rsdg_smoke_b";
  fs::remove_all(out_a);
  fs::remove_all(out_b);

  const std::vector<std::string> all = {"corpus", "train-victim", "train-gan", "attack",
                                        "defend",  "evaluate",    "report"};
  run(cfg, all, out_a);

  REQUIRE(fs::exists(out_a + "/corpus_train/manifest.txt"));
  REQUIRE(fs::exists(out_a + "/victim.ckpt"));
  REQUIRE(fs::exists(out_a + "/gan/generator.ckpt"));
  REQUIRE(fs::exists(out_a + "/gan/train_log.jsonl"));
  REQUIRE(fs::exists(out_a + "/gan/theta_band_weights.csv"));
  REQUIRE(fs::exists(out_a + "/rep0/attack_cw/manifest.txt"));
  REQUIRE(fs::exists(out_a + "/rep0/defense_cw/report.json"));
  REQUIRE(fs::exists(out_a + "/report.csv"));

  // One aggregated line per defense variant (undefended, rsd-gan,
  // rsd-gan-eot) plus reference rows and the header.
  const std::string csv = file_bytes(out_a + "/report.csv");
  REQUIRE(csv.find("undefended,") != std::string::npos);
  REQUIRE(csv.find("rsd-gan,") != std::string::npos);
  REQUIRE(csv.find("rsd-gan-eot,") != std::string::npos);
  REQUIRE(csv.find("RSD-GAN (ref),") != std::string::npos);

  run(cfg, all, out_b);
  REQUIRE(file_bytes(out_a + "/report.csv") == file_bytes(out_b + "/report.csv"));
  REQUIRE(file_bytes(out_a + "/rep0/rows.csv") == file_bytes(out_b + "/rep0/rows.csv"));
  fs::remove_all(out_a);
  fs::remove_all(out_b);
}
