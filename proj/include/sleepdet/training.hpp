#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <vector>

#include "sleepdet/label_remap.hpp"
#include "sleepdet/model.hpp"
#include "sleepdet/prediction.hpp"
#include "sleepdet/signal_prep.hpp"

// Fold construction over a seeded shuffle, record-sampling epochs with Adam,
// checkpoint-on-improvement against validation average precision, and the
// four-model ensemble. An epoch is records_per_epoch sampled-with-replacement
// records, each applied as one full-record update.

namespace sleepdet::train {

struct FoldPlan {
  int fold_number = 0;
  std::vector<int> training;
  std::vector<int> validation;
  std::vector<int> testing;
};

/// Four folds over a seeded shuffle of 0..n-1. At n = 994 the slice
/// boundaries are the reference ones (794/100/100 with a consistent test
/// slice); other sizes scale the boundaries proportionally.
std::array<FoldPlan, 4> make_folds(int n_records, uint64_t seed);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;  // no weight decay
};

class Adam {
 public:
  Adam(const net::DrcnnParams<float>& params, AdamConfig cfg = {});
  /// grads is aligned with params.entries; non-learnable entries are skipped.
  void step(net::DrcnnParams<float>& params, std::vector<Tensor<float>>& grads);
  int64_t steps() const { return t_; }

 private:
  AdamConfig cfg_;
  int64_t t_ = 0;
  std::vector<Tensor<float>> m_, v_;
};

struct TaskScores {
  double auroc = std::numeric_limits<double>::quiet_NaN();
  double auprc = std::numeric_limits<double>::quiet_NaN();
};

struct ValidationScores {
  TaskScores arousal, apnea, sleep;
};

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0;
  ValidationScores val;
  bool checkpointed = false;
};

struct TrainResult {
  int epochs_run = 0;
  int best_epoch = -1;
  double best_arousal_auprc = 0;
  ValidationScores best_scores;
  std::vector<EpochLog> log;
};

struct TrainOptions {
  int records_per_epoch = 100;
  int max_epochs = 500;
  int patience = 50;  // epochs without validation improvement
  uint64_t seed = 1;
  AdamConfig adam;
  bool checkpoint_on_auroc_too = false;  // extra snapshot on AUROC improvement
  bool mask_nontarget_eval = true;
  bins::TaskWeights loss_weights{2.0, 1.0, 1.0};
};

/// All prepared records of a dataset directory, ordered by source id.
struct TrainingSet {
  std::vector<dsp::PreparedRecord> records;
};
TrainingSet load_prepared_dir(const std::filesystem::path& dir);

PredictionTrack predict_record(const net::ModelConfig& config,
                               net::DrcnnParams<float>& params,
                               const dsp::PreparedRecord& record);

/// Pooled challenge-style scores over a set of records at 200 Hz.
ValidationScores evaluate_pooled(const net::ModelConfig& config,
                                 net::DrcnnParams<float>& params,
                                 const TrainingSet& data, const std::vector<int>& indices,
                                 bool mask_nontarget);
ValidationScores evaluate_predictions(const std::vector<PredictionTrack>& tracks,
                                      const TrainingSet& data,
                                      const std::vector<int>& indices, bool mask_nontarget);

class Trainer {
 public:
  Trainer(const net::ModelConfig& config, const TrainOptions& opts, const TrainingSet& data,
          const FoldPlan& fold);

  /// Full loop with checkpoint-on-improvement into checkpoint_dir ("best/"
  /// for average precision, "best_auroc/" when the extra snapshot is on).
  TrainResult run(const std::filesystem::path& checkpoint_dir);

  double train_epoch();
  ValidationScores validate();

  net::DrcnnParams<float>& params() { return params_; }
  const net::ModelConfig& config() const { return config_; }

 private:
  net::ModelConfig config_;
  TrainOptions opts_;
  const TrainingSet& data_;
  FoldPlan fold_;
  net::DrcnnParams<float> params_;
  std::vector<Tensor<float>> grads_;
  Adam adam_;
  std::mt19937_64 sample_rng_;
  int epoch_ = 0;
};

}  // namespace sleepdet::train
