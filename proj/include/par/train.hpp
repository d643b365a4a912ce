#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "par/config.hpp"
#include "par/losses.hpp"
#include "par/model.hpp"
#include "par/optimizer.hpp"
#include "par/schedule.hpp"
#include "par/synthdata.hpp"

namespace par {

/// One diagnostics CSV row; every step of every training mode emits one
/// (the S and pert columns stay zero outside the perturb-and-recover mode).
struct DiagnosticsRow {
  long step = 0;
  double l_clip = 0.0;
  double l_pert = 0.0;
  double s_phi = 0.0;
  double s_psi = 0.0;
  double lr = 0.0;
};

void write_diagnostics_csv(const std::vector<DiagnosticsRow>& rows, const std::string& path);
std::vector<DiagnosticsRow> read_diagnostics_csv(const std::string& path);

/// Vocabulary shared across a corpus's whole experiment chain.
Vocabulary corpus_vocabulary(const std::vector<Sample>& corpus, int max_len);

/// Objective evaluated per step; rng is the step's private stream.
using StepObjective =
    std::function<ObjectiveResult(const Batch& batch, const DualEncoderParams& params, Rng& rng)>;

struct LoopResult {
  DualEncoderParams params;
  std::vector<DiagnosticsRow> diagnostics;
  bool diverged = false;
};

/// Generic epoch/batch AdamW loop. Batches are reshuffled per epoch from
/// seed-derived streams; a partial trailing batch is kept when it has at
/// least 2 samples. On a non-finite loss or gradient the loop stops
/// without applying the step and returns the last finite parameters.
/// schedule.total_steps/mid_step are resolved from the actual step count.
LoopResult training_loop(DualEncoderParams params, const std::vector<Sample>& data,
                         const Vocabulary& vocab, Schedule schedule, int batch_size, int epochs,
                         std::uint64_t seed, bool learnable_temperature,
                         const StepObjective& objective, bool quiet, const char* tag);

/// 20-epoch contrastive pretraining on the clean train split, cached under
/// cache_dir keyed by (manifest bytes, dims, pretrain settings,
/// temperature mode); the stand-in for a published pretrained model.
Checkpoint pretrain_or_load(const RunConfig& cfg, const std::vector<Sample>& corpus, bool quiet);

struct TrainRunResult {
  Checkpoint checkpoint;
  std::vector<DiagnosticsRow> diagnostics;
  std::vector<int> poisoned_indices;  // poison mode only
  bool diverged = false;
};

/// Poison pipeline: pretrain-or-load, inject the configured poison into
/// the train split, fine-tune with the plain contrastive objective. The
/// corpus-taking overload skips the disk load (shared corpora in sweeps).
TrainRunResult train_poison(const RunConfig& cfg, bool quiet);
TrainRunResult train_poison(const RunConfig& cfg, const std::vector<Sample>& corpus,
                            const Checkpoint& pretrained, bool quiet);

/// Cleaning pipeline from a poisoned checkpoint on the clean-finetune
/// split; cfg.mode picks the perturb-and-recover objective or the
/// augmentation-baseline objective. Throws on a dims mismatch between the
/// config and the checkpoint.
TrainRunResult train_clean(const RunConfig& cfg, bool quiet);
TrainRunResult train_clean(const RunConfig& cfg, const std::vector<Sample>& corpus,
                           const Checkpoint& base, bool quiet);

/// Batch-size rule for poison-phase training: scaled down to 128 when the
/// train split is smaller than 4000 samples.
int effective_poison_batch(int requested, int n_train);

}  // namespace par
