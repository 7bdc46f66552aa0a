#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "rsdg/gan.hpp"

using namespace rsdg;

namespace {

TrainConfig small_ring_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.total_iters = 30;
  cfg.latent_dim = 4;
  cfg.gen_hidden = {16, 16};
  cfg.critic_hidden = {16, 16};
  cfg.eigen_dim = 2;
  cfg.seed = seed;
  cfg.collapse_window = 10;
  return cfg;
}

std::string file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("zero iterations returns initialized networks and zero gc") {
  TrainConfig cfg = small_ring_config(3);
  cfg.total_iters = 0;
  const TrainResult r = train(cfg);
  REQUIRE(r.log.empty());
  REQUIRE(r.stats.gc_per_batch == 0);
  REQUIRE_FALSE(r.stats.iterations_to_collapse.has_value());
  REQUIRE(r.generator.param_count() > 0);
  REQUIRE(r.critic.param_count() > 0);
}

TEST_CASE("seeded training logs are bit identical across runs") {
  namespace fs = std::filesystem;
  const std::string dir = fs::temp_directory_path() / "rsdg_gan_log";
  fs::create_directories(dir);

  TrainConfig cfg = small_ring_config(17);
  cfg.total_iters = 200;
  const TrainResult a = train(cfg);
  const TrainResult b = train(cfg);
  write_train_log(a.log, dir + "/a.jsonl");
  write_train_log(b.log, dir + "/b.jsonl");
  REQUIRE(file_bytes(dir + "/a.jsonl") == file_bytes(dir + "/b.jsonl"));
  REQUIRE(a.generator.params() == b.generator.params());
  REQUIRE(a.critic.params() == b.critic.params());
  fs::remove_all(dir);

  // Stats integrity on the same run.
  REQUIRE(a.stats.modes_learned_per_batch <= cfg.dataset.ring_modes);
  if (a.stats.iterations_to_collapse)
    REQUIRE(*a.stats.iterations_to_collapse < cfg.total_iters);
}

TEST_CASE("mode counting on constructed sample sets") {
  DatasetSpec ds;
  const ModeSpec modes = ds.ring_mode_spec();
  const int k = static_cast<int>(modes.centers.size());

  Batch all_centers;
  for (const auto& c : modes.centers) all_centers.push_back(Tensor({2}, {c[0], c[1]}));
  REQUIRE(count_modes_in_batch(all_centers, modes) == static_cast<double>(k));

  Batch one_center(8, Tensor({2}, {modes.centers[3][0], modes.centers[3][1]}));
  REQUIRE(count_modes_in_batch(one_center, modes) == 1.0);

  Batch far;
  Rng rng(5);
  for (int i = 0; i < 16; ++i)
    far.push_back(Tensor({2}, {100.0 + rng.normal(), 100.0 + rng.normal()}));
  REQUIRE(count_modes_in_batch(far, modes) == 0.0);

  // Invariant under permutation of the centers.
  ModeSpec permuted = modes;
  std::rotate(permuted.centers.begin(), permuted.centers.begin() + 3, permuted.centers.end());
  Batch mixed = all_centers;
  mixed.resize(5);
  REQUIRE(count_modes_in_batch(mixed, modes) == count_modes_in_batch(mixed, permuted));
}

TEST_CASE("count_modes runs a generator and respects the sample floor") {
  TrainConfig cfg = small_ring_config(23);
  cfg.total_iters = 0;
  TrainResult r = train(cfg);
  const ModeSpec modes = cfg.dataset.ring_mode_spec();
  const double m = count_modes(r.generator, modes, 64, 9);
  REQUIRE(m >= 0.0);
  REQUIRE(m <= static_cast<double>(modes.centers.size()));
  REQUIRE_THROWS_AS(count_modes(r.generator, modes, 2, 9), Error);
}

TEST_CASE("collapse detection follows the rolling-mean definition") {
  std::vector<IterRecord> log;
  for (int i = 0; i < 700; ++i) {
    IterRecord r;
    r.iter = i;
    r.diversity = (i < 500) ? 1.0 : 0.0;
    log.push_back(r);
  }
  // Mixed windows keep the mean at k/10 >= 0.1 > floor until the window is
  // entirely inside the dropped region.
  REQUIRE(detect_collapse(log, 10, 0.05).value() == 509);

  std::vector<IterRecord> flat;
  for (int i = 0; i < 100; ++i) {
    IterRecord r;
    r.diversity = 0.8;
    flat.push_back(r);
  }
  REQUIRE_FALSE(detect_collapse(flat, 10, 0.05).has_value());
  REQUIRE_FALSE(detect_collapse(flat, 200, 0.05).has_value());
}

TEST_CASE("gc accounting matches the pass structure") {
  struct Case {
    bool constraint;
    bool reg;
    int steps;
    int expected;
  };
  const Case cases[] = {
      {false, false, 1, 1}, {true, false, 1, 2}, {false, true, 1, 3},
      {true, true, 1, 3},   {true, true, 2, 6},  {false, false, 3, 3},
  };
  for (const Case& c : cases) {
    TrainConfig cfg = small_ring_config(31);
    cfg.total_iters = 4;
    cfg.sobolev_constraint_on = c.constraint;
    cfg.regularizer_on = c.reg;
    cfg.critic_steps_per_gen_step = c.steps;
    const TrainResult r = train(cfg);
    REQUIRE(gc_count(r.log) == c.expected);
    REQUIRE(r.stats.gc_per_batch == c.expected);
    REQUIRE(r.stats.gc_per_batch >= cfg.critic_steps_per_gen_step);
  }

  // Monotonicity: adding a loss term never lowers the per-batch count.
  REQUIRE(gc_per_batch_formula(1, true, false) >= gc_per_batch_formula(1, false, false));
  REQUIRE(gc_per_batch_formula(1, true, true) >= gc_per_batch_formula(1, true, false));
  REQUIRE(gc_per_batch_formula(2, false, true) >= gc_per_batch_formula(2, false, false));
}

TEST_CASE("training stays finite and tracks the sobolev term") {
  TrainConfig cfg = small_ring_config(41);
  cfg.total_iters = 120;
  cfg.batch_size = 24;
  const TrainResult r = train(cfg);
  REQUIRE(r.log.size() == 120);
  for (const IterRecord& rec : r.log) {
    REQUIRE(std::isfinite(rec.ipm_value));
    REQUIRE(rec.sobolev_term >= 0.0);
    REQUIRE(rec.penalty >= 0.0);
  }
}
