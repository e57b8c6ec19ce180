#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sleepdet/metrics.hpp"

// Clinical summary statistics from per-second event tracks: sleep efficiency
// TST/TRT, arousal index and apnea-hypopnea index as qualifying events per
// hour of sleep, the four-way AHI severity grade, and the cohort comparison
// numbers (MAE, grade confusion, over-/under-estimation rates).

namespace sleepdet::report {

inline constexpr double kApneaThreshold = 0.2;    // from the evaluated operating point
inline constexpr double kArousalThreshold = 0.5;  // auxiliary tracks; not paper-specified
inline constexpr double kSleepThreshold = 0.5;
inline constexpr int kMinEventSeconds = 10;  // events must be strictly longer

/// score >= threshold -> 1.
std::vector<uint8_t> binarize(std::span<const float> probs, double threshold);

/// Number of maximal runs of ones strictly longer than min_duration_s at
/// 1 Hz (an exactly-10-second run does not count).
int64_t count_events(std::span<const uint8_t> binary_1hz, int min_duration_s = kMinEventSeconds);

enum class AhiGrade { normal = 0, mild = 1, moderate = 2, severe = 3 };

const char* grade_name(AhiGrade g);

/// Half-open boundaries: [0,5) normal, [5,15) mild, [15,30) moderate,
/// [30,inf) severe.
AhiGrade grade_ahi(double ahi);

struct ClinicalSummary {
  double tst_min = 0;
  double trt_min = 0;
  double se = 0;
  double ai = 0;
  double ahi = 0;
  AhiGrade grade = AhiGrade::normal;
  bool indices_defined = true;  // false when TST is zero
};

/// sleep/arousal/apnea are binary per-second tracks covering trt_s seconds.
ClinicalSummary compute_summary(std::span<const uint8_t> sleep_track,
                                std::span<const uint8_t> arousal_track,
                                std::span<const uint8_t> apnea_track, double trt_s);

struct CohortStats {
  int64_t records = 0;
  double se_mae = 0, ai_mae = 0, ahi_mae = 0;
  double se_actual_avg = 0, se_predicted_avg = 0;
  double ai_actual_avg = 0, ai_predicted_avg = 0;
  double ahi_actual_avg = 0, ahi_predicted_avg = 0;
  eval::ConfusionMatrix grade_confusion;  // 4 x 4, rows = true grade
  double accuracy = 0;
  double normal_osr = 0;                    // true normal predicted any higher
  std::vector<double> usr = {0, 0, 0, 0};   // per grade, fraction predicted lower
  std::vector<eval::SensSpec> grade_sens_spec;
};

CohortStats cohort_stats(std::span<const ClinicalSummary> predicted,
                         std::span<const ClinicalSummary> actual);

/// Plain-text report mirroring the MAE / confusion / rate / sens-spec table
/// stack.
std::string format_cohort_report(const CohortStats& stats);

}  // namespace sleepdet::report
