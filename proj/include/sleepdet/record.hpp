#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sleepdet/errors.hpp"

// On-disk record container: a directory holding a human-readable `manifest`,
// one raw little-endian float32 file per channel, and one text interval file
// per annotation task (`start end value` lines). Samples covered by no
// interval default to arousal 0, apnea 0, sleep -1.

namespace sleepdet::io {

enum class Task { arousal, apnea, sleep };

const char* task_name(Task t);
Task task_from_name(const std::string& name);

struct AnnotationInterval {
  Task task;
  int64_t start_sample;  // inclusive
  int64_t end_sample;    // exclusive
  int value;
};

/// The 13 channel names produced by the recording setup, ECG last among the
/// exclusions and SaO2 the only non-normalized channel.
extern const std::vector<std::string> kStandardChannels;

inline constexpr int kRawSampleRate = 200;
inline constexpr int8_t kDefaultArousal = 0;
inline constexpr int8_t kDefaultApnea = 0;
inline constexpr int8_t kDefaultSleep = -1;

struct RawRecord {
  std::string record_id;
  int sample_rate = kRawSampleRate;
  std::map<std::string, std::vector<float>> channels;
  std::vector<int8_t> arousal_labels;  // {-1,0,1}
  std::vector<int8_t> apnea_labels;    // {0,1}
  std::vector<int8_t> sleep_labels;    // {-1,0,1}
  int64_t duration_samples = 0;

  /// Container-level invariants: consistent lengths, label ranges, finite
  /// samples. With require_standard_channels, additionally the full
  /// 13-channel montage.
  void validate(bool require_standard_channels = false) const;
};

RawRecord read_record(const std::filesystem::path& dir);
void write_record(const RawRecord& record, const std::filesystem::path& dir);

/// Run-length encoding of a label vector; runs at the default value are
/// omitted, which the expansion restores.
std::vector<AnnotationInterval> labels_to_intervals(Task task,
                                                    const std::vector<int8_t>& labels,
                                                    int8_t default_value);
std::vector<int8_t> expand_intervals(Task task,
                                     const std::vector<AnnotationInterval>& intervals,
                                     int64_t duration_samples, int8_t default_value);

// Shared low-level helpers for the other containers in this format family.
std::vector<float> read_f32_file(const std::filesystem::path& file, int64_t expected_count);
void write_f32_file(const std::filesystem::path& file, const float* data, int64_t count);
std::vector<AnnotationInterval> read_interval_file(const std::filesystem::path& file,
                                                   Task task);
void write_interval_file(const std::filesystem::path& file,
                         const std::vector<AnnotationInterval>& intervals);
/// Sorted key/value manifest lines; repeated keys (channels) keep order.
std::vector<std::pair<std::string, std::string>> read_manifest(
    const std::filesystem::path& file, const std::string& expected_magic);
void write_manifest(const std::filesystem::path& file, const std::string& magic,
                    const std::vector<std::pair<std::string, std::string>>& entries);

}  // namespace sleepdet::io
