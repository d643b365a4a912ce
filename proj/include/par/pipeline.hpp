#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "par/config.hpp"
#include "par/eval.hpp"
#include "par/model.hpp"
#include "par/synthdata.hpp"
#include "par/train.hpp"

namespace par {

/// Everything a CLI invocation carries besides the subcommand itself.
struct CommandOptions {
  std::string config_path;             // empty: defaults only
  std::vector<std::string> overrides;  // dotted.path=value, applied in order
  std::string out_dir = "runs";
  std::optional<std::uint64_t> seed;  // overrides cfg.seed when set
  bool quiet = false;
};

/// The raw config JSON after file load, --set overrides and --seed, before
/// validation. Throws ConfigError on unreadable files or bad overrides.
nlohmann::json load_raw_config(const CommandOptions& opts);

/// Parses load_raw_config output with the mode implied by the subcommand
/// forced (poison and sweeps pin their modes; clean defaults to clean_par
/// but accepts clean_baseline from the file). Throws ConfigError.
RunConfig resolve_config(const std::string& subcommand, const CommandOptions& opts);

/// Creates <out_dir>/<subcommand>-<unixtime>-<seed> (suffixing -2, -3, ...
/// on collision) and writes the config echo into it.
std::string make_run_dir(const std::string& out_dir, const std::string& subcommand,
                         const RunConfig& cfg);

/// Clean accuracy / ASR / retrieval metrics of a checkpoint on the eval
/// split, against the configured trigger and poison target.
Metrics evaluate_checkpoint(const RunConfig& cfg, const Checkpoint& ckpt,
                            const std::vector<Sample>& corpus);

/// Renders the corpus into cfg.corpus_dir. Returns the corpus dir.
std::string cmd_make_data(const RunConfig& cfg, bool quiet);

/// Pretrain-or-load, poison, finetune, evaluate; writes checkpoint.bin,
/// diagnostics.csv, poison_manifest.json and metrics.json. Returns the
/// run dir.
std::string cmd_poison(const RunConfig& cfg, const std::string& out_dir, bool quiet);

/// Cleaning run from cfg.init_checkpoint with the mode's objective;
/// artifacts as in cmd_poison (minus the poison manifest).
std::string cmd_clean(const RunConfig& cfg, const std::string& out_dir, bool quiet);

/// Re-evaluates cfg.init_checkpoint and writes metrics.json; byte-stable
/// for a fixed checkpoint, corpus and config.
std::string cmd_eval(const RunConfig& cfg, const std::string& out_dir, bool quiet);

/// Cleans cfg.init_checkpoint once per (tau, seed) grid point, children
/// in parallel capped by PAR_THREADS; writes per-tau averaged sweep.csv
/// plus per-run sweep_runs.csv.
std::string cmd_sweep_tau(const RunConfig& cfg, const std::string& out_dir, bool quiet);

/// Poison-then-clean for every poison rate in the grid; sweep.csv rows
/// are (rate, asr_poisoned, asr_cleaned). Takes the raw config because the
/// two phases resolve different per-mode training defaults from it.
std::string cmd_sweep_rate(const nlohmann::json& raw, const std::string& out_dir, bool quiet);

/// 2D principal-component projection of clean and triggered eval
/// embeddings under cfg.init_checkpoint; writes projection.csv and
/// separation.json.
std::string cmd_export_proj(const RunConfig& cfg, const std::string& out_dir, bool quiet);

/// Dispatches a subcommand and maps failures to exit codes: 0 success,
/// 1 pipeline failure, 2 config/usage error.
int run_command(const std::string& subcommand, const CommandOptions& opts);

}  // namespace par
