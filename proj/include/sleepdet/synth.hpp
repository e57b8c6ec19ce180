#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sleepdet/record.hpp"

// Synthetic full-montage records. An event plan gives the sample-precise
// ground truth: sleep-task intervals carry the true wake(0)/sleep(1) state,
// apnea and target-arousal intervals sit inside true sleep. The stored sleep
// labels are quantized to 30-second scoring epochs by majority vote, which is
// what makes the two transition bins (apnea in a wake-scored epoch,
// non-target arousal during scored sleep) reachable, exactly as epoch-based
// scoring produces them in real recordings. Non-target arousal (-1) covers
// apnea samples, a short post-apnea arousal tail, and every wake-scored
// sample. Channel signatures are simple and documented: event-locked
// amplitude and frequency shifts, airflow suppression inside apnea, and a
// lagged SaO2 desaturation, strong enough to be learnable.

namespace sleepdet::io {

inline constexpr int64_t kScoringEpochSamples = 30 * kRawSampleRate;

struct EventPlan {
  std::vector<AnnotationInterval> intervals;
};

/// Validates plan consistency against the label semantics: per-task sorted
/// non-overlapping intervals inside the record, apnea and target arousal
/// confined to true sleep, no apnea/arousal overlap. Throws ValidationError
/// (a sleep disorder while the subject is awake is impossible).
void validate_plan(const EventPlan& plan, int64_t duration_samples);

/// Deterministic randomized plan: an undefined prefix, alternating sleep
/// blocks and wake periods with brief awakenings, apnea counts drawn wide
/// enough to cover every severity grade, and one apnea pinned to a scoring
/// epoch that quantizes to wake.
EventPlan make_default_plan(uint64_t seed, int64_t duration_s);

EventPlan read_plan(const std::filesystem::path& file);
void write_plan(const EventPlan& plan, const std::filesystem::path& file);

RawRecord generate_synthetic(uint64_t record_seed, int64_t duration_s,
                             const EventPlan& plan);

}  // namespace sleepdet::io
