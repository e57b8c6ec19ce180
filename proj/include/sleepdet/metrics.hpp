#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sleepdet/errors.hpp"

// Threshold-free scoring over large per-sample tracks: average precision
// (step-interpolated AUPRC) and rank-based AUROC, each a single sort with
// tied scores moved as one group. Confusion matrices and one-vs-all
// sensitivity/specificity cover the grade-estimation tables.

namespace sleepdet::eval {

struct ScoredTrack {
  std::vector<float> scores;
  std::vector<uint8_t> labels;  // 0/1
  std::vector<uint8_t> valid;   // empty means all valid

  int64_t size() const { return static_cast<int64_t>(scores.size()); }
  void check() const;
};

/// Average precision: sum of precision at each recall increment, threshold
/// groups descending. Requires at least one valid positive.
double auprc(const ScoredTrack& track);

/// Mann-Whitney AUROC; ties count one half. Requires at least one valid
/// positive and one valid negative.
double auroc(const ScoredTrack& track);

/// Sample-and-hold upsampling of a per-second track by an integer rate.
std::vector<float> upsample_hold(std::span<const float> per_second, int rate,
                                 int64_t out_samples);

/// Challenge-style arousal track: the 1 Hz arousal probability repeated to
/// 200 Hz against the original labels; positives are label 1 and, when
/// mask_nontarget is set, label -1 samples are excluded from scoring.
ScoredTrack challenge_arousal_track(std::span<const float> arousal_prob_1hz,
                                    std::span<const int8_t> labels_200hz,
                                    bool mask_nontarget);

/// Same shape for the auxiliary tasks: apnea scores every sample; sleep
/// always excludes the undefined (-1) stage.
ScoredTrack challenge_apnea_track(std::span<const float> apnea_prob_1hz,
                                  std::span<const int8_t> labels_200hz);
ScoredTrack challenge_sleep_track(std::span<const float> sleep_prob_1hz,
                                  std::span<const int8_t> labels_200hz);

using ConfusionMatrix = std::vector<std::vector<int64_t>>;

ConfusionMatrix confusion_matrix(std::span<const int> predicted, std::span<const int> truth,
                                 int num_classes);

struct SensSpec {
  double sensitivity = 0;  // NaN when the class has no true members
  double specificity = 0;  // NaN when every sample is in the class
};

std::vector<SensSpec> one_vs_all_sens_spec(const ConfusionMatrix& cm);

}  // namespace sleepdet::eval
