#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sleepdet/tensor.hpp"

// Per-second joint probabilities over the four output bins, with derived
// task marginals. Stored as a single file: a short text header, a `data`
// separator line, then 4 x seconds little-endian float32 values.

namespace sleepdet {

struct PredictionTrack {
  std::string source_id;
  int64_t seconds = 0;
  int64_t valid_seconds = 0;
  Tensor<float> probs;  // 4 x seconds, channels wake/apnea/normal/target

  void validate() const;

  std::vector<float> arousal_marginal() const;  // P(target arousal)
  std::vector<float> apnea_marginal() const;    // P(apnea-hypopnea)
  std::vector<float> sleep_marginal() const;    // P(asleep)
  std::vector<float> wake_marginal() const;
};

/// Elementwise mean of the members' probability tracks; renormalizes a
/// column only if its sum drifts beyond 1e-6.
PredictionTrack ensemble_mean(const std::vector<PredictionTrack>& members);

void write_prediction(const PredictionTrack& track, const std::filesystem::path& file);
PredictionTrack read_prediction(const std::filesystem::path& file);

}  // namespace sleepdet
