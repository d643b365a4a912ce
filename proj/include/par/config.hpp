#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "par/losses.hpp"
#include "par/schedule.hpp"
#include "par/synthdata.hpp"
#include "par/triggers.hpp"

namespace par {

/// Schema violations: unknown keys, wrong types, out-of-range values.
/// The CLI maps these to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ModelConfig {
  int image_size = 32;
  int patch_size = 8;
  int d_h = 128;
  int d = 64;
  int max_len = 16;
};

struct DataConfig {
  int n_train = 4000;
  int n_clean = 2000;
  int n_eval = 480;
  bool stratified = true;
};

/// Training-loop knobs. Schedule and rates left unset in the file resolve
/// to per-mode defaults (see mode_train_defaults in config.cpp).
struct TrainConfig {
  int batch_size = 256;
  int epochs = 0;
  ScheduleKind schedule = ScheduleKind::cosine;
  double start_lr = 0.0;
  double mid_lr = 0.0;
  double final_lr = 0.0;
};

struct PretrainConfig {
  int epochs = 20;
  double lr = 1e-3;
  int batch_size = 256;
  std::uint64_t seed = 11;
};

struct EvalConfig {
  int k = 5;
  std::uint64_t seed = 2024;
};

struct SweepConfig {
  std::vector<double> taus = {0.5, 1.0, 1.5, 2.15, 2.5, 3.0};
  std::vector<double> rates = {0.0005, 0.00125, 0.0025, 0.005};
  std::vector<std::uint64_t> seeds;  // empty: just the top-level seed
};

/// One experiment, fully determined. Serialized as strict JSON: unknown
/// keys are rejected with their dotted path.
struct RunConfig {
  std::string mode = "poison";  // poison | clean_par | clean_baseline
  std::string corpus_dir = "corpus";
  std::string cache_dir;  // resolved to <corpus_dir>/cache when empty
  std::uint64_t seed = 1;
  std::string temperature = "learnable";  // or "fixed"
  std::string init_checkpoint;            // clean modes and eval

  ModelConfig model;
  DataConfig data;
  TriggerSpec trigger = default_trigger_spec(TriggerVariant::badnet_stripes);
  PoisonConfig poison;  // .trigger field is filled from `trigger` on parse
  ParLossConfig par;
  CleanClipConfig cleanclip;
  TrainConfig train;
  PretrainConfig pretrain;
  EvalConfig eval;
  SweepConfig sweep;

  bool learnable_temperature() const { return temperature == "learnable"; }
};

/// The effective configuration as JSON (stable key order), the exact
/// content echoed to config.json in every run directory.
nlohmann::json to_json(const RunConfig& cfg);

/// Parses and validates. Missing keys take defaults (train rates resolve
/// per mode); unknown keys or invalid values throw ConfigError naming the
/// dotted field path.
RunConfig parse_config(const nlohmann::json& user);

/// Reads and parses a JSON config file.
RunConfig load_config_file(const std::string& path);

/// Applies one "dotted.path=value" override onto raw JSON before parsing.
/// The value is parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& raw, const std::string& key_value);

/// FNV-1a over the canonical serialization, as fixed-width hex.
std::string config_hash(const RunConfig& cfg);

}  // namespace par
