#include "par/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace par {

void write_diagnostics_csv(const std::vector<DiagnosticsRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_diagnostics_csv: cannot open " + path);
  out << "step,L_clip,L_pert,S_phi,S_psi,lr\n";
  for (const auto& r : rows) {
    out << r.step << "," << format_double(r.l_clip) << "," << format_double(r.l_pert) << ","
        << format_double(r.s_phi) << "," << format_double(r.s_psi) << "," << format_double(r.lr)
        << "\n";
  }
}

std::vector<DiagnosticsRow> read_diagnostics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_diagnostics_csv: cannot open " + path);
  std::vector<DiagnosticsRow> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    DiagnosticsRow r;
    std::istringstream ss(line);
    char comma;
    ss >> r.step >> comma >> r.l_clip >> comma >> r.l_pert >> comma >> r.s_phi >> comma >>
        r.s_psi >> comma >> r.lr;
    if (ss.fail()) throw std::runtime_error("read_diagnostics_csv: malformed row in " + path);
    rows.push_back(r);
  }
  return rows;
}

Vocabulary corpus_vocabulary(const std::vector<Sample>& corpus, int max_len) {
  return build_vocabulary(vocabulary_texts(corpus), max_len);
}

LoopResult training_loop(DualEncoderParams params, const std::vector<Sample>& data,
                         const Vocabulary& vocab, Schedule schedule, int batch_size, int epochs,
                         std::uint64_t seed, bool learnable_temperature,
                         const StepObjective& objective, bool quiet, const char* tag) {
  if (data.empty()) throw std::invalid_argument("training_loop: no training samples");
  if (batch_size < 2) throw std::invalid_argument("training_loop: batch_size must be >= 2");
  if (epochs < 1) throw std::invalid_argument("training_loop: epochs must be >= 1");

  const long n = static_cast<long>(data.size());
  const long full = n / batch_size;
  const long rem = n % batch_size;
  const long steps_per_epoch = full + (rem >= 2 ? 1 : 0);
  if (steps_per_epoch == 0) {
    throw std::invalid_argument("training_loop: not enough samples for one batch of 2");
  }
  schedule.total_steps = static_cast<long>(epochs) * steps_per_epoch;
  if (schedule.kind == ScheduleKind::par_custom) {
    if (schedule.total_steps < 2) {
      schedule.kind = ScheduleKind::cosine;  // no room for a midpoint
    } else if (schedule.mid_step == 0 || schedule.mid_step >= schedule.total_steps) {
      schedule.mid_step = std::max<long>(1, schedule.total_steps / 2);
    }
  }
  validate(schedule);

  std::vector<std::vector<int>> tokens(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) tokens[i] = tokenize(data[i].caption, vocab);

  const Rng root(seed);
  Eigen::VectorXd w = params.to_flat();
  AdamW opt(w.size());

  LoopResult result;
  result.diagnostics.reserve(static_cast<std::size_t>(schedule.total_steps));
  std::vector<int> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  long step = 0;
  for (int epoch = 0; epoch < epochs && !result.diverged; ++epoch) {
    Rng shuffle_rng = root.split(static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(static_cast<std::int64_t>(i))]);
    }
    for (long b = 0; b < steps_per_epoch; ++b) {
      const long begin = b * batch_size;
      const long size = std::min<long>(batch_size, n - begin);
      Batch batch;
      batch.images.reserve(size);
      batch.tokens.reserve(size);
      for (long i = begin; i < begin + size; ++i) {
        batch.images.push_back(data[order[i]].image);
        batch.tokens.push_back(tokens[order[i]]);
      }
      Rng step_rng = root.split(0x100000ULL + static_cast<std::uint64_t>(step));
      const ObjectiveResult res = objective(batch, params, step_rng);
      const Eigen::VectorXd g = res.grad.to_flat();
      if (!std::isfinite(res.value) || !g.allFinite()) {
        std::cerr << tag << ": non-finite loss or gradient at step " << step
                  << "; stopping with the last finite parameters\n";
        result.diverged = true;
        break;
      }
      const double lr = lr_at(schedule, step);
      const double frozen_logit = params.temperature_logit;
      opt.step(w, g, lr);
      if (!learnable_temperature) w[w.size() - 1] = frozen_logit;
      params.from_flat(w);
      result.diagnostics.push_back({step, res.l_clip, res.l_pert, res.s_phi, res.s_psi, lr});
      ++step;
    }
    if (!quiet && !result.diverged) {
      std::printf("%s: epoch %d/%d  loss %.4f  lr %.3g\n", tag, epoch + 1, epochs,
                  result.diagnostics.back().l_clip - result.diagnostics.back().l_pert,
                  result.diagnostics.back().lr);
      std::fflush(stdout);
    }
  }
  result.params = std::move(params);
  return result;
}

namespace {

EncoderDims dims_from_config(const RunConfig& cfg, int vocab_size) {
  EncoderDims dims;
  dims.image_size = cfg.model.image_size;
  dims.patch = cfg.model.patch_size;
  dims.d_h = cfg.model.d_h;
  dims.d = cfg.model.d;
  dims.vocab_size = vocab_size;
  dims.max_len = cfg.model.max_len;
  return dims;
}

std::string pretrain_cache_key(const RunConfig& cfg) {
  std::ifstream manifest(cfg.corpus_dir + "/manifest.jsonl", std::ios::binary);
  if (!manifest) {
    throw std::runtime_error("pretrain: missing manifest.jsonl in " + cfg.corpus_dir);
  }
  std::ostringstream bytes;
  bytes << manifest.rdbuf();
  std::uint64_t h = fnv1a64(bytes.str().data(), bytes.str().size());
  std::ostringstream settings;
  settings << cfg.model.image_size << "|" << cfg.model.patch_size << "|" << cfg.model.d_h << "|"
           << cfg.model.d << "|" << cfg.model.max_len << "|" << cfg.pretrain.epochs << "|"
           << cfg.pretrain.lr << "|" << cfg.pretrain.batch_size << "|" << cfg.pretrain.seed << "|"
           << cfg.temperature;
  h = fnv1a64(settings.str().data(), settings.str().size(), h);
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

}  // namespace

int effective_poison_batch(int requested, int n_train) {
  return n_train < 4000 ? std::min(requested, 128) : requested;
}

Checkpoint pretrain_or_load(const RunConfig& cfg, const std::vector<Sample>& corpus, bool quiet) {
  const std::string key = pretrain_cache_key(cfg);
  const std::string path = cfg.cache_dir + "/pretrain_" + key + ".ckpt";
  if (std::filesystem::exists(path)) {
    Checkpoint ckpt = load_checkpoint(path);
    if (!quiet) std::printf("pretrain: loaded cached checkpoint %s\n", path.c_str());
    return ckpt;
  }

  const Vocabulary vocab = corpus_vocabulary(corpus, cfg.model.max_len);
  DualEncoderParams params = init_params(cfg.pretrain.seed, dims_from_config(cfg, vocab.size()));
  if (!cfg.learnable_temperature()) params.temperature_logit = 0.0;

  const std::vector<Sample> train = split_of(corpus, Split::train);
  Schedule schedule;
  schedule.kind = ScheduleKind::cosine;
  schedule.start_lr = cfg.pretrain.lr;
  schedule.final_lr = cfg.pretrain.lr / 100.0;
  const bool learnable = cfg.learnable_temperature();
  LoopResult loop = training_loop(
      std::move(params), train, vocab, schedule,
      effective_poison_batch(cfg.pretrain.batch_size, static_cast<int>(train.size())),
      cfg.pretrain.epochs, cfg.pretrain.seed, learnable,
      [learnable](const Batch& batch, const DualEncoderParams& p, Rng&) {
        return clip_objective(batch, p, learnable);
      },
      quiet, "pretrain");
  if (loop.diverged) throw std::runtime_error("pretrain: training diverged");

  Checkpoint ckpt;
  ckpt.params = std::move(loop.params);
  ckpt.vocab = vocab;
  ckpt.temperature_mode = cfg.temperature;
  ckpt.seed = cfg.pretrain.seed;
  ckpt.config_hash = key;
  std::filesystem::create_directories(cfg.cache_dir);
  save_checkpoint(ckpt, path);
  if (!quiet) std::printf("pretrain: cached checkpoint at %s\n", path.c_str());
  return ckpt;
}

TrainRunResult train_poison(const RunConfig& cfg, bool quiet) {
  const std::vector<Sample> corpus = load_corpus(cfg.corpus_dir);
  if (!corpus.empty() && corpus.front().image.width != cfg.model.image_size) {
    throw std::runtime_error("train_poison: corpus image size " +
                             std::to_string(corpus.front().image.width) +
                             " differs from configured " + std::to_string(cfg.model.image_size));
  }
  const Checkpoint pretrained = pretrain_or_load(cfg, corpus, quiet);
  return train_poison(cfg, corpus, pretrained, quiet);
}

TrainRunResult train_poison(const RunConfig& cfg, const std::vector<Sample>& corpus,
                            const Checkpoint& pretrained, bool quiet) {
  Checkpoint base = pretrained;

  PoisonConfig poison_cfg = cfg.poison;
  poison_cfg.trigger = cfg.trigger;
  const PoisonResult poisoned = poison_corpus(corpus, poison_cfg);
  const std::vector<Sample> train = split_of(poisoned.samples, Split::train);

  Schedule schedule;
  schedule.kind = cfg.train.schedule;
  schedule.start_lr = cfg.train.start_lr;
  schedule.mid_lr = cfg.train.mid_lr > 0 ? cfg.train.mid_lr : cfg.train.start_lr / 10.0;
  schedule.final_lr = cfg.train.final_lr;

  const bool learnable = cfg.learnable_temperature();
  if (!learnable) base.params.temperature_logit = 0.0;
  LoopResult loop = training_loop(
      base.params, train, base.vocab, schedule,
      effective_poison_batch(cfg.train.batch_size, static_cast<int>(train.size())),
      cfg.train.epochs, cfg.seed, learnable,
      [learnable](const Batch& batch, const DualEncoderParams& p, Rng&) {
        return clip_objective(batch, p, learnable);
      },
      quiet, "poison");

  TrainRunResult result;
  result.checkpoint.params = std::move(loop.params);
  result.checkpoint.vocab = base.vocab;
  result.checkpoint.temperature_mode = cfg.temperature;
  result.checkpoint.seed = cfg.seed;
  result.checkpoint.config_hash = config_hash(cfg);
  result.diagnostics = std::move(loop.diagnostics);
  result.poisoned_indices = poisoned.poisoned_indices;
  result.diverged = loop.diverged;
  return result;
}

TrainRunResult train_clean(const RunConfig& cfg, bool quiet) {
  if (cfg.init_checkpoint.empty()) {
    throw std::runtime_error("train_clean: init_checkpoint is required");
  }
  const std::vector<Sample> corpus = load_corpus(cfg.corpus_dir);
  const Checkpoint base = load_checkpoint(cfg.init_checkpoint);
  return train_clean(cfg, corpus, base, quiet);
}

TrainRunResult train_clean(const RunConfig& cfg, const std::vector<Sample>& corpus,
                           const Checkpoint& init, bool quiet) {
  if (cfg.mode != "clean_par" && cfg.mode != "clean_baseline") {
    throw std::invalid_argument("train_clean: mode must be clean_par or clean_baseline, got " +
                                cfg.mode);
  }
  Checkpoint base = init;
  const EncoderDims expected = dims_from_config(cfg, base.params.dims.vocab_size);
  if (!(base.params.dims == expected)) {
    throw std::runtime_error("train_clean: checkpoint dims do not match the configured model");
  }
  if (base.temperature_mode != cfg.temperature) {
    throw std::runtime_error("train_clean: checkpoint temperature mode '" + base.temperature_mode +
                             "' differs from configured '" + cfg.temperature + "'");
  }

  const std::vector<Sample> clean_split = split_of(corpus, Split::clean);
  const DualEncoderParams reference = snapshot(base.params);

  Schedule schedule;
  schedule.kind = cfg.train.schedule;
  schedule.start_lr = cfg.train.start_lr;
  schedule.mid_lr = cfg.train.mid_lr > 0 ? cfg.train.mid_lr : cfg.train.start_lr / 10.0;
  schedule.final_lr = cfg.train.final_lr;

  const bool learnable = cfg.learnable_temperature();
  StepObjective objective;
  if (cfg.mode == "clean_par") {
    const ParLossConfig par_cfg = cfg.par;
    objective = [par_cfg, &reference, learnable](const Batch& batch, const DualEncoderParams& p,
                                                 Rng& rng) {
      return par_objective(batch, p, reference, par_cfg, learnable, rng);
    };
  } else {
    const CleanClipConfig cc_cfg = cfg.cleanclip;
    objective = [cc_cfg, learnable](const Batch& batch, const DualEncoderParams& p, Rng& rng) {
      return cleanclip_objective(batch, p, cc_cfg, learnable, rng);
    };
  }

  LoopResult loop =
      training_loop(base.params, clean_split, base.vocab, schedule, cfg.train.batch_size,
                    cfg.train.epochs, cfg.seed, learnable, objective, quiet, cfg.mode.c_str());

  TrainRunResult result;
  result.checkpoint.params = std::move(loop.params);
  result.checkpoint.vocab = base.vocab;
  result.checkpoint.temperature_mode = cfg.temperature;
  result.checkpoint.seed = cfg.seed;
  result.checkpoint.config_hash = config_hash(cfg);
  result.diagnostics = std::move(loop.diagnostics);
  result.diverged = loop.diverged;
  return result;
}

}  // namespace par
