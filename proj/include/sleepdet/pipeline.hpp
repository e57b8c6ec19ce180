#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sleepdet/clinical.hpp"
#include "sleepdet/model.hpp"
#include "sleepdet/synth.hpp"
#include "sleepdet/training.hpp"

// Top-level pipeline: synth -> prepare -> train per fold -> ensemble ->
// evaluate -> report, plus the ablation suite. Every stage is deterministic
// in (config, seed), writes its resolved configuration next to its outputs,
// and refuses to overwrite existing outputs unless forced.

namespace sleepdet::cli {

struct RunConfig {
  uint64_t seed = 1;
  int n_records = 20;
  int64_t record_duration_s = 1200;
  int64_t pad_seconds = 1200;
  int records_per_epoch = 8;
  int max_epochs = 60;
  int patience = 50;
  bool checkpoint_on_auroc_too = false;
  bool mask_nontarget_eval = true;
  std::vector<int> folds = {1, 2, 3, 4};
  double apnea_threshold = report::kApneaThreshold;
  double arousal_threshold = report::kArousalThreshold;
  double sleep_threshold = report::kSleepThreshold;
  net::ModelConfig model = net::ModelConfig::desk_scale();

  void validate() const;
  static RunConfig desk_default() { return RunConfig{}; }
};

std::string run_config_to_json(const RunConfig& config);
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& file);
void write_resolved_config(const RunConfig& config, const std::filesystem::path& out_dir);

/// Throws unless the path is absent, or force is set.
void require_fresh(const std::filesystem::path& path, bool force);

uint64_t split_seed(uint64_t root, uint64_t stream, uint64_t index = 0);

// Stages. Directories use one subdirectory per record, named r000, r001, ...
void stage_synth(const RunConfig& config, const std::filesystem::path& out_dir, bool force);
void stage_prepare(const RunConfig& config, const std::filesystem::path& raw_dir,
                   const std::filesystem::path& out_dir, bool force, int workers = 1);

struct FoldOutcome {
  int fold_number = 0;
  train::TrainResult result;
  std::filesystem::path checkpoint;  // best-average-precision model
};

FoldOutcome stage_train_fold(const RunConfig& config, const train::TrainingSet& data,
                             int fold_number, const std::filesystem::path& out_dir,
                             bool force);

/// Per-record clinical truth tracks at 1 Hz from the 200 Hz labels.
struct TruthTracks {
  std::vector<uint8_t> sleep, arousal, apnea;
  int64_t seconds = 0;
};
TruthTracks truth_tracks(const dsp::PreparedRecord& record);
TruthTracks truth_tracks(const io::RawRecord& record);

report::ClinicalSummary summary_from_prediction(const RunConfig& config,
                                                const PredictionTrack& track);
report::ClinicalSummary summary_from_truth(const TruthTracks& truth);

std::string format_scores_block(const std::string& title, const train::ValidationScores& s);
std::string scores_jsonl(const std::string& tag, const train::ValidationScores& s);

struct EndToEndResult {
  std::vector<FoldOutcome> folds;
  train::ValidationScores ensemble_test_scores;
  report::CohortStats clinical;
  std::filesystem::path out_root;
};

EndToEndResult end_to_end(const RunConfig& config, const std::filesystem::path& out_root,
                          bool force);

struct AblationRow {
  int experiment = 0;
  std::string description;
  bool ok = false;
  std::string error;
  bool aux_valid = true;  // single-task runs leave the auxiliary heads untrained
  train::ValidationScores validation;
  train::ValidationScores testing;
};

std::vector<AblationRow> run_ablation_suite(const RunConfig& config,
                                            const std::vector<int>& experiments,
                                            const std::filesystem::path& out_root, bool force);
std::string format_ablation_table(const std::vector<AblationRow>& rows,
                                  bool validation_split);

}  // namespace sleepdet::cli
