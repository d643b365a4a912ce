#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "par/config.hpp"
#include "par/train.hpp"

using namespace par;

namespace {

std::vector<Sample> tiny_train_set(int n, std::uint64_t seed) {
  CorpusSpec spec;
  spec.n_train = n;
  spec.n_clean = 0;
  spec.n_eval = 0;
  spec.image_size = 16;
  spec.seed = seed;
  return build_corpus(spec);
}

EncoderDims tiny_dims(int vocab_size) {
  EncoderDims dims;
  dims.image_size = 16;
  dims.patch = 8;
  dims.d_h = 16;
  dims.d = 8;
  dims.vocab_size = vocab_size;
  dims.max_len = 16;
  return dims;
}

}  // namespace

TEST_CASE("schedule pins the documented rates") {
  Schedule s;
  s.kind = ScheduleKind::par_custom;
  s.start_lr = 3e-5;
  s.mid_lr = 3e-6;
  s.final_lr = 1e-9;
  s.total_steps = 1000;
  s.mid_step = 500;
  CHECK(lr_at(s, 0) == 3e-5);
  CHECK(lr_at(s, 500) == 3e-6);
  CHECK(lr_at(s, 1000) == doctest::Approx(1e-9).epsilon(1e-12));
  // the cosine segment passes through its midpoint average
  CHECK(lr_at(s, 750) == doctest::Approx((3e-6 + 1e-9) / 2.0).epsilon(1e-12));
  // linear first segment
  CHECK(lr_at(s, 250) == doctest::Approx((3e-5 + 3e-6) / 2.0).epsilon(1e-12));
}

TEST_CASE("schedule is continuous at the midpoint") {
  Schedule s;
  s.kind = ScheduleKind::par_custom;
  s.start_lr = 1e-3;
  s.mid_lr = 1e-4;
  s.final_lr = 1e-7;
  s.total_steps = 200;
  s.mid_step = 77;
  const double before = lr_at(s, 76);
  const double at = lr_at(s, 77);
  const double after = lr_at(s, 78);
  CHECK(std::abs(before - at) < (s.start_lr - s.mid_lr) / 50.0);
  CHECK(std::abs(after - at) < (s.start_lr - s.mid_lr) / 50.0);
  CHECK(before > at);
  CHECK(at > after);
}

TEST_CASE("cosine and constant schedules") {
  Schedule s;
  s.kind = ScheduleKind::cosine;
  s.start_lr = 2e-3;
  s.final_lr = 2e-5;
  s.total_steps = 100;
  CHECK(lr_at(s, 0) == 2e-3);
  CHECK(lr_at(s, 100) == doctest::Approx(2e-5).epsilon(1e-12));
  CHECK(lr_at(s, 50) == doctest::Approx((2e-3 + 2e-5) / 2.0).epsilon(1e-12));
  CHECK_THROWS_AS(lr_at(s, 101), std::out_of_range);
  CHECK_THROWS_AS(lr_at(s, -1), std::out_of_range);

  s.kind = ScheduleKind::constant;
  CHECK(lr_at(s, 0) == 2e-3);
  CHECK(lr_at(s, 100) == 2e-3);
}

TEST_CASE("schedule validation rejects a midpoint on the boundary") {
  Schedule s;
  s.kind = ScheduleKind::par_custom;
  s.total_steps = 10;
  s.mid_step = 0;  // 0 means "resolve to total/2", which is valid here
  CHECK_NOTHROW(validate(s));
  CHECK(lr_at(s, 5) == s.mid_lr);
  s.mid_step = 10;
  CHECK_THROWS_AS(validate(s), std::invalid_argument);
  s.mid_step = -2;
  CHECK_THROWS_AS(validate(s), std::invalid_argument);
  s.mid_step = 5;
  CHECK_NOTHROW(validate(s));
  s.start_lr = 0.0;
  CHECK_THROWS_AS(validate(s), std::invalid_argument);
  s.start_lr = 1e-3;
  s.total_steps = 1;
  CHECK_THROWS_AS(validate(s), std::invalid_argument);  // no interior midpoint exists
}

TEST_CASE("schedule kind names round-trip") {
  for (ScheduleKind k : {ScheduleKind::par_custom, ScheduleKind::cosine, ScheduleKind::constant}) {
    CHECK(schedule_kind_from_string(to_string(k)) == k);
  }
  CHECK_THROWS_AS(schedule_kind_from_string("warmup"), std::invalid_argument);
}

TEST_CASE("adamw zero-gradient steps are pure decoupled decay") {
  AdamW opt(3, 1e-2);
  Eigen::VectorXd w(3);
  w << 1.0, -2.0, 0.5;
  const Eigen::VectorXd w0 = w;
  opt.step(w, Eigen::VectorXd::Zero(3), 0.1);
  const Eigen::VectorXd want = w0 - 0.1 * 1e-2 * w0;
  CHECK((w - want).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("adamw first step moves by roughly lr against the gradient sign") {
  AdamW opt(2, 0.0);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(2);
  Eigen::VectorXd g(2);
  g << 0.5, -3.0;
  opt.step(w, g, 0.01);
  // bias-corrected first step: m_hat = g, v_hat = g^2 -> step = lr * g/|g|
  CHECK(w[0] == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(w[1] == doctest::Approx(0.01).epsilon(1e-6));
}

TEST_CASE("adamw rejects mismatched sizes") {
  AdamW opt(3);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(opt.step(w, Eigen::VectorXd::Zero(4), 0.1), std::invalid_argument);
}

TEST_CASE("training loop is bit-reproducible per seed") {
  const std::vector<Sample> data = tiny_train_set(64, 21);
  const Vocabulary vocab = corpus_vocabulary(data, 16);
  const EncoderDims dims = tiny_dims(vocab.size());
  Schedule schedule;
  schedule.kind = ScheduleKind::cosine;
  schedule.start_lr = 1e-3;
  schedule.final_lr = 1e-5;
  const StepObjective objective = [](const Batch& batch, const DualEncoderParams& p, Rng&) {
    return clip_objective(batch, p, true);
  };
  const DualEncoderParams init = init_params(3, dims);
  const LoopResult a = training_loop(init, data, vocab, schedule, 16, 2, 5, true, objective, true,
                                     "test");
  const LoopResult b = training_loop(init, data, vocab, schedule, 16, 2, 5, true, objective, true,
                                     "test");
  const LoopResult c = training_loop(init, data, vocab, schedule, 16, 2, 6, true, objective, true,
                                     "test");
  CHECK(a.params.to_flat() == b.params.to_flat());
  CHECK(a.params.to_flat() != c.params.to_flat());
  CHECK_FALSE(a.diverged);
  REQUIRE(a.diagnostics.size() == b.diagnostics.size());
  for (std::size_t i = 0; i < a.diagnostics.size(); ++i) {
    REQUIRE(a.diagnostics[i].l_clip == b.diagnostics[i].l_clip);
    REQUIRE(a.diagnostics[i].lr == b.diagnostics[i].lr);
  }
  // 64 samples, batch 16, 2 epochs -> 8 steps, contiguous numbering
  REQUIRE(a.diagnostics.size() == 8);
  for (std::size_t i = 0; i < a.diagnostics.size(); ++i) {
    CHECK(a.diagnostics[i].step == static_cast<long>(i));
  }
}

TEST_CASE("training loop actually reduces the loss on a tiny set") {
  const std::vector<Sample> data = tiny_train_set(32, 22);
  const Vocabulary vocab = corpus_vocabulary(data, 16);
  const EncoderDims dims = tiny_dims(vocab.size());
  Schedule schedule;
  schedule.kind = ScheduleKind::constant;
  schedule.start_lr = 3e-3;
  const StepObjective objective = [](const Batch& batch, const DualEncoderParams& p, Rng&) {
    return clip_objective(batch, p, true);
  };
  const LoopResult res = training_loop(init_params(4, dims), data, vocab, schedule, 16, 8, 5, true,
                                       objective, true, "test");
  const double first = res.diagnostics.front().l_clip;
  const double last = res.diagnostics.back().l_clip;
  CHECK(last < first);
}

TEST_CASE("fixed temperature never moves during the loop") {
  const std::vector<Sample> data = tiny_train_set(32, 23);
  const Vocabulary vocab = corpus_vocabulary(data, 16);
  const EncoderDims dims = tiny_dims(vocab.size());
  Schedule schedule;
  schedule.kind = ScheduleKind::constant;
  schedule.start_lr = 1e-3;
  const StepObjective objective = [](const Batch& batch, const DualEncoderParams& p, Rng&) {
    return clip_objective(batch, p, false);
  };
  DualEncoderParams init = init_params(5, dims);
  init.temperature_logit = 0.0;
  const LoopResult res = training_loop(init, data, vocab, schedule, 16, 3, 5, false, objective,
                                       true, "test");
  CHECK(res.params.temperature_logit == 0.0);
}

TEST_CASE("a non-finite loss aborts without applying the step") {
  const std::vector<Sample> data = tiny_train_set(32, 24);
  const Vocabulary vocab = corpus_vocabulary(data, 16);
  const EncoderDims dims = tiny_dims(vocab.size());
  Schedule schedule;
  schedule.kind = ScheduleKind::constant;
  schedule.start_lr = 1e-3;
  int calls = 0;
  Eigen::VectorXd last_good;
  const StepObjective objective = [&](const Batch& batch, const DualEncoderParams& p, Rng&) {
    ++calls;
    ObjectiveResult res = clip_objective(batch, p, true);
    if (calls == 3) {
      last_good = p.to_flat();
      res.value = std::numeric_limits<double>::quiet_NaN();
    }
    return res;
  };
  const LoopResult res = training_loop(init_params(6, dims), data, vocab, schedule, 16, 4, 5, true,
                                       objective, true, "test");
  CHECK(res.diverged);
  CHECK(calls == 3);
  CHECK(res.params.to_flat() == last_good);
  CHECK(res.diagnostics.size() == 2);  // the poisoned step is not recorded
}

TEST_CASE("effective poison batch shrinks for small train splits") {
  CHECK(effective_poison_batch(256, 4000) == 256);
  CHECK(effective_poison_batch(256, 3999) == 128);
  CHECK(effective_poison_batch(64, 3999) == 64);
  CHECK(effective_poison_batch(256, 4001) == 256);
}

TEST_CASE("diagnostics csv round-trips bit-exactly") {
  std::vector<DiagnosticsRow> rows;
  Rng rng(31);
  for (int i = 0; i < 20; ++i) {
    DiagnosticsRow r;
    r.step = i;
    r.l_clip = rng.normal(2.0, 1.0);
    r.l_pert = rng.uniform();
    r.s_phi = rng.uniform(0.0, 4.0);
    r.s_psi = rng.uniform(0.0, 4.0);
    r.lr = std::pow(10.0, rng.uniform(-9.0, -2.0));
    rows.push_back(r);
  }
  const std::string path =
      "/tmp/par_test_diag_" + std::to_string(getpid()) + ".csv";
  write_diagnostics_csv(rows, path);
  const std::vector<DiagnosticsRow> loaded = read_diagnostics_csv(path);
  REQUIRE(loaded.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    REQUIRE(loaded[i].step == rows[i].step);
    REQUIRE(loaded[i].l_clip == rows[i].l_clip);
    REQUIRE(loaded[i].l_pert == rows[i].l_pert);
    REQUIRE(loaded[i].s_phi == rows[i].s_phi);
    REQUIRE(loaded[i].s_psi == rows[i].s_psi);
    REQUIRE(loaded[i].lr == rows[i].lr);
  }
  std::filesystem::remove(path);
}

TEST_CASE("pretraining caches and reloads the same checkpoint") {
  const std::string dir = "/tmp/par_test_pretrain_" + std::to_string(getpid());
  std::filesystem::remove_all(dir);

  CorpusSpec spec;
  spec.n_train = 48;
  spec.n_clean = 24;
  spec.n_eval = 24;
  spec.image_size = 16;
  spec.seed = 77;
  const std::vector<Sample> corpus = build_corpus(spec);
  save_corpus(corpus, dir);

  RunConfig cfg;
  cfg.corpus_dir = dir;
  cfg.cache_dir = dir + "/cache";
  cfg.model.image_size = 16;
  cfg.model.patch_size = 8;
  cfg.model.d_h = 16;
  cfg.model.d = 8;
  cfg.pretrain.epochs = 2;
  cfg.pretrain.batch_size = 16;

  const Checkpoint first = pretrain_or_load(cfg, corpus, true);
  CHECK(std::filesystem::exists(dir + "/cache"));
  const Checkpoint second = pretrain_or_load(cfg, corpus, true);
  CHECK(first.params.to_flat() == second.params.to_flat());
  CHECK(first.vocab.words == second.vocab.words);

  // different pretrain settings key a different cache entry
  RunConfig other = cfg;
  other.pretrain.epochs = 3;
  const Checkpoint third = pretrain_or_load(other, corpus, true);
  CHECK(third.params.to_flat() != first.params.to_flat());
  std::filesystem::remove_all(dir);
}
