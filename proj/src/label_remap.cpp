#include "sleepdet/label_remap.hpp"

#include <algorithm>
#include <cmath>

namespace sleepdet::bins {

namespace {

// The twelve combinations that occur, as full 18-way indices in ascending
// order; their positions here are the renumbered bin codes 0..11.
constexpr std::array<int, 12> kNonEmptyFullIndex = {0, 1, 2, 3, 4, 5, 6, 8, 9, 12, 14, 15};

constexpr std::array<OutputBin, 12> kRemap12 = {
    OutputBin::ignore,          // 0: non-target arousal, undefined sleep
    OutputBin::wake,            // 1: wakefulness
    OutputBin::wake,            // 2: non-target arousal in sleep -> wake
    OutputBin::ignore,          // 3: apnea, undefined sleep
    OutputBin::apnea_hypopnea,  // 4: apnea in a wake-scored epoch -> apnea
    OutputBin::apnea_hypopnea,  // 5: apnea-hypopnea
    OutputBin::ignore,          // 6: undefined sleep, no events
    OutputBin::normal_sleep,    // 7: normal sleep
    OutputBin::ignore,          // 8: apnea flag with undefined sleep
    OutputBin::ignore,          // 9: target arousal, undefined sleep
    OutputBin::target_arousal,  // 10: target arousal
    OutputBin::ignore,          // 11: target arousal + apnea flags, undefined sleep
};

}  // namespace

int channel_of(OutputBin b) {
  switch (b) {
    case OutputBin::wake:
      return 0;
    case OutputBin::apnea_hypopnea:
      return 1;
    case OutputBin::normal_sleep:
      return 2;
    case OutputBin::target_arousal:
      return 3;
    case OutputBin::ignore:
      return -1;
  }
  return -1;
}

OutputBin bin_of_channel(int channel) {
  switch (channel) {
    case 0:
      return OutputBin::wake;
    case 1:
      return OutputBin::apnea_hypopnea;
    case 2:
      return OutputBin::normal_sleep;
    case 3:
      return OutputBin::target_arousal;
    default:
      throw ValidationError("bin_of_channel: channel must be 0..3");
  }
}

int full_combination_index(TaskLabels l) {
  if (l.arousal < -1 || l.arousal > 1)
    throw ValidationError("labels: arousal must be in {-1,0,1}");
  if (l.apnea < 0 || l.apnea > 1) throw ValidationError("labels: apnea must be in {0,1}");
  if (l.sleep < -1 || l.sleep > 1)
    throw ValidationError("labels: sleep must be in {-1,0,1}");
  return (l.arousal + 1) * 6 + l.apnea * 3 + (l.sleep + 1);
}

int encode_bin12(TaskLabels l) {
  const int full = full_combination_index(l);
  const auto it =
      std::lower_bound(kNonEmptyFullIndex.begin(), kNonEmptyFullIndex.end(), full);
  if (it == kNonEmptyFullIndex.end() || *it != full)
    throw ValidationError(
        "labels: combination (arousal=" + std::to_string(l.arousal) +
        ", apnea=" + std::to_string(l.apnea) + ", sleep=" + std::to_string(l.sleep) +
        ") cannot occur; a sleep disorder is impossible while the subject is awake");
  return static_cast<int>(it - kNonEmptyFullIndex.begin());
}

OutputBin remap(int bin12) {
  if (bin12 < 0 || bin12 > 11) throw ValidationError("remap: bin must be in 0..11");
  return kRemap12[static_cast<size_t>(bin12)];
}

OutputBin output_bin(TaskLabels labels) { return remap(encode_bin12(labels)); }

TaskMarginals marginals(const std::array<double, 4>& joint) {
  double sum = 0;
  for (double p : joint) {
    if (p < 0 || !std::isfinite(p))
      throw ValidationError("marginals: probabilities must be finite and non-negative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw ValidationError("marginals: probabilities must sum to 1 within 1e-6");
  return TaskMarginals{
      joint[3],
      joint[1],
      joint[1] + joint[2] + joint[3],
  };
}

}  // namespace sleepdet::bins
