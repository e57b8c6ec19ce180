#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "sleepdet/label_remap.hpp"
#include "sleepdet/record.hpp"
#include "sleepdet/tensor.hpp"

// Preprocessing: anti-alias FIR, x4 decimation to 50 Hz with DC removal,
// moving-window mean/RMS normalization via FFT convolution (18-minute
// window), SaO2 min-max scaling into [-0.5, 0.5], and zero padding to a
// fixed duration with ignore labels on the pad.

namespace sleepdet::dsp {

inline constexpr int kPreparedRate = 50;
inline constexpr int kDecimation = 4;
inline constexpr int64_t kFullNightSeconds = 7 * 3600;
inline constexpr int64_t kNormalizeWindowSeconds = 1080;  // 18 minutes
inline constexpr double kNormalizeEps = 1e-6;

struct FilterKernel {
  std::vector<double> taps;  // odd count, symmetric, unit DC gain
  double sample_rate;
  double nominal_cutoff;
};

/// Hamming-windowed sinc, internally tuned so the measured magnitude
/// response at `cutoff_hz` is -3 dB. Taps are normalized to unit DC gain.
FilterKernel design_antialias_fir(double sample_rate, double cutoff_hz, int num_taps);

/// Magnitude response |H(f)| of a kernel at one frequency.
double kernel_response(const FilterKernel& kernel, double freq_hz);

/// Zero-phase FIR (reflective edges) then every factor-th sample, then mean
/// subtraction over the whole record. Output length ceil(n / factor).
std::vector<double> filter_decimate(std::span<const float> signal, const FilterKernel& kernel,
                                    int factor);

/// (x - moving mean) / max(moving RMS of the centered signal, 1e-6), both
/// moments over a centered boxcar with reflective padding, computed with
/// FFT convolution.
std::vector<double> moving_normalize(std::span<const double> signal, int64_t window_samples);

/// Reference path: same definition evaluated with literal sliding windows,
/// O(n * window). Kept for equivalence and speed comparisons.
std::vector<double> moving_normalize_direct(std::span<const double> signal,
                                            int64_t window_samples);

/// Per-record min-max map onto [-0.5, 0.5]; a constant channel maps to zero.
std::vector<double> scale_sao2(std::span<const double> signal);

struct PrepareOptions {
  int64_t pad_seconds = kFullNightSeconds;
  bool moving_normalization = true;  // ablation: raw (DC-removed) channels
  int64_t window_seconds = kNormalizeWindowSeconds;
  double fir_cutoff_hz = 28.29;
  int fir_num_taps = 241;
};

struct PreparedRecord {
  std::string source_id;
  int64_t pad_seconds = kFullNightSeconds;
  int64_t valid_seconds = 0;
  Tensor<float> signals;  // 12 x (pad_seconds * 50), ECG dropped
  std::vector<bins::OutputBin> bin_labels_1hz;  // length pad_seconds
  // Original annotations carried through for evaluation at 200 Hz.
  int64_t source_duration_samples = 0;
  std::vector<io::AnnotationInterval> source_intervals;

  int64_t samples() const { return pad_seconds * kPreparedRate; }
  void validate() const;
  std::vector<int8_t> labels_200hz(io::Task task) const;
};

/// The 12 model input channels in row order (the standard montage without
/// ECG); SaO2 is the last row.
const std::vector<std::string>& prepared_channel_order();

PreparedRecord prepare_record(const io::RawRecord& record, const PrepareOptions& opts = {});

/// One-second label reduction at 200 Hz: the center sample represents the
/// second unless any sample in it is a target arousal, in which case the
/// first such sample does (recall-preserving tie-break).
bins::OutputBin second_bin(const io::RawRecord& record, int64_t second);

PreparedRecord read_prepared(const std::filesystem::path& dir);
void write_prepared(const PreparedRecord& prepared, const std::filesystem::path& dir);

}  // namespace sleepdet::dsp
