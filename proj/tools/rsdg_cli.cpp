// Experiment driver: builds the synthetic corpus, trains the victim and the
// defense GAN, runs attack campaigns, applies the projection defense, and
// renders metric reports.
//
// Exit codes: 0 success, 1 stage failure, 2 configuration error.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rsdg/config.hpp"
#include "rsdg/experiment.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "configuration file")->required();
  cmd->add_option("--out", opts.out_dir, "output directory");
  cmd->add_option("--seed", opts.seed, "override run.seed")
      ->each([&opts](const std::string&) { opts.seed_set = true; });
}

int run_stages(const CommonOpts& opts, const std::vector<std::string>& stages) {
  rsdg::ExperimentConfig cfg;
  try {
    cfg = rsdg::load_config(opts.config_path);
    if (opts.seed_set) cfg.seed = opts.seed;
  } catch (const rsdg::Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
  if (stages.empty()) {
    std::cout << "no stages selected; nothing to do\n";
    return 0;
  }
  try {
    rsdg::run(cfg, stages, opts.out_dir);
  } catch (const rsdg::Error& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  for (const std::string& s : stages) std::cout << "stage " << s << ": done\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"regularized Sobolev defense pipeline"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::vector<std::string> run_stage_list;

  CLI::App* cmd_corpus = app.add_subcommand("corpus", "synthesize the keyword corpus");
  CLI::App* cmd_victim = app.add_subcommand("train-victim", "train the segment transcriber");
  CLI::App* cmd_gan = app.add_subcommand("train-gan", "train the defense generator(s)");
  CLI::App* cmd_attack = app.add_subcommand("attack", "run the attack campaigns");
  CLI::App* cmd_defend = app.add_subcommand("defend", "project inputs through the generator");
  CLI::App* cmd_eval = app.add_subcommand("evaluate", "score transcripts and signal quality");
  CLI::App* cmd_report = app.add_subcommand("report", "render the metric tables");
  CLI::App* cmd_run = app.add_subcommand("run", "run selected stages in dependency order");
  for (CLI::App* cmd : {cmd_corpus, cmd_victim, cmd_gan, cmd_attack, cmd_defend, cmd_eval,
                        cmd_report, cmd_run})
    add_common(cmd, opts);
  cmd_run->add_option("--stage", run_stage_list, "stage to run (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  if (cmd_corpus->parsed()) return run_stages(opts, {"corpus"});
  if (cmd_victim->parsed()) return run_stages(opts, {"train-victim"});
  if (cmd_gan->parsed()) return run_stages(opts, {"train-gan"});
  if (cmd_attack->parsed()) return run_stages(opts, {"attack"});
  if (cmd_defend->parsed()) return run_stages(opts, {"defend"});
  if (cmd_eval->parsed()) return run_stages(opts, {"evaluate"});
  if (cmd_report->parsed()) return run_stages(opts, {"report"});
  if (cmd_run->parsed()) return run_stages(opts, run_stage_list);
  return 2;
}
