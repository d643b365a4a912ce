#include "par/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace fs = std::filesystem;

namespace par {

namespace {

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed for " + path);
}

void write_config_echo(const std::string& dir, const RunConfig& cfg) {
  write_text(dir + "/config.json", to_json(cfg).dump(2) + "\n");
}

void ensure_image_size(const std::vector<Sample>& corpus, const RunConfig& cfg) {
  if (!corpus.empty() && corpus.front().image.width != cfg.model.image_size) {
    throw std::runtime_error("corpus image size " +
                             std::to_string(corpus.front().image.width) +
                             " differs from configured " + std::to_string(cfg.model.image_size));
  }
}

std::string format_num(double v) { return format_double(v); }

/// Writes checkpoint.bin, diagnostics.csv and metrics.json for a finished
/// training run, then reports divergence as a failure: the artifacts stay
/// on disk for inspection.
Metrics write_train_artifacts(const std::string& run_dir, const RunConfig& cfg,
                              const TrainRunResult& result, const std::vector<Sample>& corpus) {
  const std::string ckpt_path = run_dir + "/checkpoint.bin";
  save_checkpoint(result.checkpoint, ckpt_path);
  write_diagnostics_csv(result.diagnostics, run_dir + "/diagnostics.csv");
  const Metrics metrics = evaluate_checkpoint(cfg, result.checkpoint, corpus);
  write_text(run_dir + "/metrics.json",
             metrics_json(metrics, cfg.seed, checkpoint_hash(ckpt_path)).dump(2) + "\n");
  if (result.diverged) {
    throw std::runtime_error("training diverged; last finite checkpoint kept in " + run_dir);
  }
  return metrics;
}

void print_metrics(const char* tag, const Metrics& m, bool quiet) {
  if (quiet) return;
  std::printf("[%s] clean_acc=%.4f asr=%.4f p@%d=%.4f retrieval_asr=%.4f n_eval=%d\n", tag,
              m.clean_acc, m.asr, m.k, m.retrieval_p_at_k, m.retrieval_asr, m.n_eval);
  std::fflush(stdout);
}

int worker_count(std::size_t n_tasks) {
  unsigned n = std::thread::hardware_concurrency();
  if (n == 0) n = 1;
  if (const char* env = std::getenv("PAR_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) {
      throw ConfigError("PAR_THREADS must be a positive integer, got '" + std::string(env) + "'");
    }
    n = static_cast<unsigned>(v);
  }
  return static_cast<int>(std::min<std::size_t>(n, std::max<std::size_t>(n_tasks, 1)));
}

/// Runs tasks[i]() over a small pool; collects the first error per task.
void run_parallel(const std::vector<std::function<void()>>& tasks) {
  const int n_workers = worker_count(tasks.size());
  std::vector<std::string> errors(tasks.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      try {
        tasks[i]();
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  if (n_workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (!errors[i].empty()) {
      throw std::runtime_error("sweep child " + std::to_string(i) + " failed: " + errors[i]);
    }
  }
}

std::vector<std::uint64_t> sweep_seeds(const RunConfig& cfg) {
  if (cfg.sweep.seeds.empty()) return {cfg.seed};
  return cfg.sweep.seeds;
}

const Checkpoint& require_checkpoint(const RunConfig& cfg, Checkpoint& storage) {
  if (cfg.init_checkpoint.empty()) {
    throw ConfigError("init_checkpoint is required for this subcommand");
  }
  storage = load_checkpoint(cfg.init_checkpoint);
  return storage;
}

}  // namespace

nlohmann::json load_raw_config(const CommandOptions& opts) {
  nlohmann::json raw = nlohmann::json::object();
  if (!opts.config_path.empty()) {
    std::ifstream in(opts.config_path);
    if (!in) throw ConfigError("cannot open config file " + opts.config_path);
    try {
      in >> raw;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config file " + opts.config_path + " is not valid JSON: " + e.what());
    }
    if (!raw.is_object()) throw ConfigError("config file must hold a JSON object");
  }
  for (const std::string& kv : opts.overrides) apply_override(raw, kv);
  if (opts.seed) raw["seed"] = *opts.seed;
  return raw;
}

RunConfig resolve_config(const std::string& subcommand, const CommandOptions& opts) {
  nlohmann::json raw = load_raw_config(opts);
  if (subcommand == "poison" || subcommand == "sweep-rate") {
    raw["mode"] = "poison";
  } else if (subcommand == "sweep-tau") {
    raw["mode"] = "clean_par";
  } else if (subcommand == "clean") {
    const std::string mode = raw.value("mode", "clean_par");
    if (mode != "clean_par" && mode != "clean_baseline") {
      throw ConfigError("clean subcommand needs mode clean_par or clean_baseline, got '" + mode +
                        "'");
    }
    raw["mode"] = mode;
  }
  return parse_config(raw);
}

std::string make_run_dir(const std::string& out_dir, const std::string& subcommand,
                         const RunConfig& cfg) {
  fs::create_directories(out_dir);
  const std::string stem = out_dir + "/" + subcommand + "-" +
                           std::to_string(static_cast<long long>(std::time(nullptr))) + "-" +
                           std::to_string(cfg.seed);
  std::string dir = stem;
  for (int suffix = 2; fs::exists(dir); ++suffix) dir = stem + "-" + std::to_string(suffix);
  fs::create_directories(dir);
  write_config_echo(dir, cfg);
  return dir;
}

Metrics evaluate_checkpoint(const RunConfig& cfg, const Checkpoint& ckpt,
                            const std::vector<Sample>& corpus) {
  const std::vector<Sample> eval_set = split_of(corpus, Split::eval);
  if (eval_set.empty()) throw std::runtime_error("corpus has no eval split");
  const std::optional<TriggerSpec> trigger = cfg.trigger;
  const ZeroShotResult zs = zero_shot_eval(ckpt.params, ckpt.vocab, eval_set, trigger,
                                           cfg.poison.target_label, cfg.eval.seed);
  const RetrievalResult rt = retrieval_eval(ckpt.params, ckpt.vocab, eval_set, cfg.eval.k, trigger,
                                            cfg.poison.target_label, cfg.eval.seed);
  Metrics m;
  m.clean_acc = zs.clean_acc;
  m.asr = zs.asr;
  m.retrieval_p_at_k = rt.p_at_k;
  m.retrieval_asr = rt.retrieval_asr;
  m.k = cfg.eval.k;
  m.n_eval = static_cast<int>(eval_set.size());
  return m;
}

std::string cmd_make_data(const RunConfig& cfg, bool quiet) {
  CorpusSpec spec;
  spec.n_train = cfg.data.n_train;
  spec.n_clean = cfg.data.n_clean;
  spec.n_eval = cfg.data.n_eval;
  spec.image_size = cfg.model.image_size;
  spec.seed = cfg.seed;
  spec.stratified = cfg.data.stratified;
  const std::vector<Sample> corpus = build_corpus(spec);
  save_corpus(corpus, cfg.corpus_dir);
  if (!quiet) {
    std::printf("[make-data] wrote %zu samples (%d/%d/%d) to %s\n", corpus.size(), spec.n_train,
                spec.n_clean, spec.n_eval, cfg.corpus_dir.c_str());
  }
  return cfg.corpus_dir;
}

std::string cmd_poison(const RunConfig& cfg, const std::string& out_dir, bool quiet) {
  const std::string run_dir = make_run_dir(out_dir, "poison", cfg);
  const std::vector<Sample> corpus = load_corpus(cfg.corpus_dir);
  ensure_image_size(corpus, cfg);
  const Checkpoint pretrained = pretrain_or_load(cfg, corpus, quiet);
  const TrainRunResult result = train_poison(cfg, corpus, pretrained, quiet);

  nlohmann::json manifest;
  manifest["count"] = result.poisoned_indices.size();
  manifest["target_label"] = cfg.poison.target_label;
  manifest["indices"] = result.poisoned_indices;
  write_text(run_dir + "/poison_manifest.json", manifest.dump(2) + "\n");

  const Metrics m = write_train_artifacts(run_dir, cfg, result, corpus);
  print_metrics("poison", m, quiet);
  return run_dir;
}

std::string cmd_clean(const RunConfig& cfg, const std::string& out_dir, bool quiet) {
  Checkpoint base_storage;
  const Checkpoint& base = require_checkpoint(cfg, base_storage);
  const std::string run_dir = make_run_dir(out_dir, "clean", cfg);
  const std::vector<Sample> corpus = load_corpus(cfg.corpus_dir);
  ensure_image_size(corpus, cfg);
  const TrainRunResult result = train_clean(cfg, corpus, base, quiet);
  const Metrics m = write_train_artifacts(run_dir, cfg, result, corpus);
  print_metrics(cfg.mode.c_str(), m, quiet);
  return run_dir;
}

std::string cmd_eval(const RunConfig& cfg, const std::string& out_dir, bool quiet) {
  Checkpoint ckpt_storage;
  const Checkpoint& ckpt = require_checkpoint(cfg, ckpt_storage);
  const std::string run_dir = make_run_dir(out_dir, "eval", cfg);
  const std::vector<Sample> corpus = load_corpus(cfg.corpus_dir);
  ensure_image_size(corpus, cfg);
  const Metrics m = evaluate_checkpoint(cfg, ckpt, corpus);
  write_text(run_dir + "/metrics.json",
             metrics_json(m, cfg.seed, checkpoint_hash(cfg.init_checkpoint)).dump(2) + "\n");
  print_metrics("eval", m, quiet);
  return run_dir;
}

std::string cmd_sweep_tau(const RunConfig& cfg, const std::string& out_dir, bool quiet) {
  if (cfg.sweep.taus.empty()) throw ConfigError("sweep.taus must not be empty");
  std::vector<double> taus = cfg.sweep.taus;
  std::sort(taus.begin(), taus.end());
  taus.erase(std::unique(taus.begin(), taus.end()), taus.end());
  for (double t : taus) {
    if (!(t > 0.0 && t <= 4.0)) {
      throw ConfigError("sweep.taus entries must lie in (0, 4], got " + format_num(t));
    }
  }
  const std::vector<std::uint64_t> seeds = sweep_seeds(cfg);

  Checkpoint base_storage;
  const Checkpoint& base = require_checkpoint(cfg, base_storage);
  const std::string run_dir = make_run_dir(out_dir, "sweep-tau", cfg);
  const std::vector<Sample> corpus = load_corpus(cfg.corpus_dir);
  ensure_image_size(corpus, cfg);

  struct Cell {
    double tau = 0.0;
    std::uint64_t seed = 0;
    Metrics metrics;
  };
  std::vector<Cell> cells(taus.size() * seeds.size());
  std::vector<std::function<void()>> tasks;
  std::mutex log_mutex;
  for (std::size_t ti = 0; ti < taus.size(); ++ti) {
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      const std::size_t slot = ti * seeds.size() + si;
      cells[slot].tau = taus[ti];
      cells[slot].seed = seeds[si];
      tasks.push_back([&, slot] {
        RunConfig child = cfg;
        child.par.tau = cells[slot].tau;
        child.seed = cells[slot].seed;
        const std::string child_dir = run_dir + "/tau-" + format_num(child.par.tau) + "-seed-" +
                                      std::to_string(child.seed);
        fs::create_directories(child_dir);
        write_config_echo(child_dir, child);
        const TrainRunResult result = train_clean(child, corpus, base, true);
        cells[slot].metrics = write_train_artifacts(child_dir, child, result, corpus);
        if (!quiet) {
          std::lock_guard<std::mutex> lock(log_mutex);
          std::printf("[sweep-tau] tau=%g seed=%llu clean_acc=%.4f asr=%.4f\n", child.par.tau,
                      static_cast<unsigned long long>(child.seed), cells[slot].metrics.clean_acc,
                      cells[slot].metrics.asr);
          std::fflush(stdout);
        }
      });
    }
  }
  run_parallel(tasks);

  std::string runs_csv = "tau,seed,clean_acc,asr\n";
  std::string mean_csv = "tau,clean_acc,asr\n";
  for (std::size_t ti = 0; ti < taus.size(); ++ti) {
    double acc = 0.0;
    double asr = 0.0;
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      const Cell& c = cells[ti * seeds.size() + si];
      acc += c.metrics.clean_acc;
      asr += c.metrics.asr;
      runs_csv += format_num(c.tau) + "," + std::to_string(c.seed) + "," +
                  format_num(c.metrics.clean_acc) + "," + format_num(c.metrics.asr) + "\n";
    }
    const double n = static_cast<double>(seeds.size());
    mean_csv += format_num(taus[ti]) + "," + format_num(acc / n) + "," + format_num(asr / n) + "\n";
  }
  write_text(run_dir + "/sweep_runs.csv", runs_csv);
  write_text(run_dir + "/sweep.csv", mean_csv);
  if (!quiet) std::printf("[sweep-tau] wrote %s/sweep.csv\n", run_dir.c_str());
  return run_dir;
}

std::string cmd_sweep_rate(const nlohmann::json& raw, const std::string& out_dir, bool quiet) {
  nlohmann::json raw_poison = raw;
  raw_poison["mode"] = "poison";
  nlohmann::json raw_clean = raw;
  raw_clean["mode"] = "clean_par";
  const RunConfig poison_cfg = parse_config(raw_poison);
  const RunConfig clean_cfg = parse_config(raw_clean);
  if (poison_cfg.sweep.rates.empty()) throw ConfigError("sweep.rates must not be empty");
  std::vector<double> rates = poison_cfg.sweep.rates;
  std::sort(rates.begin(), rates.end());
  rates.erase(std::unique(rates.begin(), rates.end()), rates.end());
  for (double r : rates) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("sweep.rates entries must lie in [0, 1]");
  }

  const std::string run_dir = make_run_dir(out_dir, "sweep-rate", poison_cfg);
  const std::vector<Sample> corpus = load_corpus(poison_cfg.corpus_dir);
  ensure_image_size(corpus, poison_cfg);
  const Checkpoint pretrained = pretrain_or_load(poison_cfg, corpus, quiet);

  struct Cell {
    double rate = 0.0;
    double asr_poisoned = 0.0;
    double asr_cleaned = 0.0;
  };
  std::vector<Cell> cells(rates.size());
  std::vector<std::function<void()>> tasks;
  std::mutex log_mutex;
  for (std::size_t ri = 0; ri < rates.size(); ++ri) {
    cells[ri].rate = rates[ri];
    tasks.push_back([&, ri] {
      const std::string rate_dir = run_dir + "/rate-" + format_num(rates[ri]);
      RunConfig pcfg = poison_cfg;
      pcfg.poison.rate = rates[ri];
      const std::string poison_dir = rate_dir + "/poison";
      fs::create_directories(poison_dir);
      write_config_echo(poison_dir, pcfg);
      const TrainRunResult pres = train_poison(pcfg, corpus, pretrained, true);
      const Metrics pm = write_train_artifacts(poison_dir, pcfg, pres, corpus);

      RunConfig ccfg = clean_cfg;
      ccfg.poison.rate = rates[ri];
      ccfg.init_checkpoint = poison_dir + "/checkpoint.bin";
      const std::string clean_dir = rate_dir + "/clean";
      fs::create_directories(clean_dir);
      write_config_echo(clean_dir, ccfg);
      const TrainRunResult cres = train_clean(ccfg, corpus, pres.checkpoint, true);
      const Metrics cm = write_train_artifacts(clean_dir, ccfg, cres, corpus);

      cells[ri].asr_poisoned = pm.asr;
      cells[ri].asr_cleaned = cm.asr;
      if (!quiet) {
        std::lock_guard<std::mutex> lock(log_mutex);
        std::printf("[sweep-rate] rate=%g asr_poisoned=%.4f asr_cleaned=%.4f\n", rates[ri], pm.asr,
                    cm.asr);
        std::fflush(stdout);
      }
    });
  }
  run_parallel(tasks);

  std::string csv = "rate,asr_poisoned,asr_cleaned\n";
  for (const Cell& c : cells) {
    csv += format_num(c.rate) + "," + format_num(c.asr_poisoned) + "," +
           format_num(c.asr_cleaned) + "\n";
  }
  write_text(run_dir + "/sweep.csv", csv);
  if (!quiet) std::printf("[sweep-rate] wrote %s/sweep.csv\n", run_dir.c_str());
  return run_dir;
}

std::string cmd_export_proj(const RunConfig& cfg, const std::string& out_dir, bool quiet) {
  Checkpoint ckpt_storage;
  const Checkpoint& ckpt = require_checkpoint(cfg, ckpt_storage);
  const std::string run_dir = make_run_dir(out_dir, "export-proj", cfg);
  const std::vector<Sample> corpus = load_corpus(cfg.corpus_dir);
  ensure_image_size(corpus, cfg);
  const std::vector<Sample> eval_set = split_of(corpus, Split::eval);
  if (eval_set.empty()) throw std::runtime_error("corpus has no eval split");

  std::vector<Image> images;
  std::vector<std::uint8_t> poisoned;
  std::vector<int> class_ids;
  images.reserve(eval_set.size() * 2);
  for (const Sample& s : eval_set) {
    images.push_back(s.image);
    poisoned.push_back(0);
    class_ids.push_back(s.class_id);
    images.push_back(eval_triggered_copy(s.image, cfg.trigger, cfg.eval.seed));
    poisoned.push_back(1);
    class_ids.push_back(s.class_id);
  }
  const ProjectionResult proj = export_projection(ckpt.params, images, poisoned, class_ids);
  write_projection_csv(proj, run_dir + "/projection.csv");
  nlohmann::json sep;
  sep["separation"] = proj.separation;
  sep["n_points"] = proj.points.size();
  write_text(run_dir + "/separation.json", sep.dump(2) + "\n");
  if (!quiet) std::printf("[export-proj] separation=%.6f points=%zu\n", proj.separation,
                          proj.points.size());
  return run_dir;
}

int run_command(const std::string& subcommand, const CommandOptions& opts) {
  try {
    if (subcommand == "make-data") {
      cmd_make_data(resolve_config(subcommand, opts), opts.quiet);
    } else if (subcommand == "poison") {
      cmd_poison(resolve_config(subcommand, opts), opts.out_dir, opts.quiet);
    } else if (subcommand == "clean") {
      cmd_clean(resolve_config(subcommand, opts), opts.out_dir, opts.quiet);
    } else if (subcommand == "eval") {
      cmd_eval(resolve_config(subcommand, opts), opts.out_dir, opts.quiet);
    } else if (subcommand == "sweep-tau") {
      cmd_sweep_tau(resolve_config(subcommand, opts), opts.out_dir, opts.quiet);
    } else if (subcommand == "sweep-rate") {
      cmd_sweep_rate(load_raw_config(opts), opts.out_dir, opts.quiet);
    } else if (subcommand == "export-proj") {
      cmd_export_proj(resolve_config(subcommand, opts), opts.out_dir, opts.quiet);
    } else {
      std::fprintf(stderr, "unknown subcommand '%s'\n", subcommand.c_str());
      return 2;
    }
    return 0;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace par
