#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "sleepdet/autodiff.hpp"
#include "sleepdet/errors.hpp"

// Three per-sample task labels are folded into 18 combination bins; the 12
// combinations that occur in practice are renumbered 0..11, and those are
// remapped onto the 4 joint output classes (plus an ignore class that is
// excluded from the loss). Per-task marginal probabilities are sums of the
// joint probabilities.

namespace sleepdet::bins {

struct TaskLabels {
  int arousal;  // -1 non-target, 0 normal, 1 target
  int apnea;    // 0 normal, 1 apnea/hypopnea
  int sleep;    // -1 undefined, 0 wake, 1 asleep
};

enum class OutputBin : uint8_t {
  ignore = 0,
  wake = 1,
  apnea_hypopnea = 5,
  normal_sleep = 7,
  target_arousal = 10,
};

/// Joint-output channel order: wake, apnea-hypopnea, normal sleep, target
/// arousal. Returns -1 for the ignore bin.
int channel_of(OutputBin b);
OutputBin bin_of_channel(int channel);

/// Full 18-way combination index: (arousal+1)*6 + apnea*3 + (sleep+1).
int full_combination_index(TaskLabels labels);

/// Renumbered non-empty bin in 0..11. Throws ValidationError for the six
/// combinations that cannot occur (a disorder while the subject is awake,
/// target arousal during apnea, ...).
int encode_bin12(TaskLabels labels);

/// 12-bin code to output bin: undefined-sleep bins collapse to ignore, the
/// two transition bins move to their consistent neighbours, the four main
/// bins are fixed points.
OutputBin remap(int bin12);

/// encode + remap; same error behaviour as encode_bin12.
OutputBin output_bin(TaskLabels labels);

struct TaskMarginals {
  double arousal;  // P(target arousal)
  double apnea;    // P(apnea/hypopnea)
  double sleep;    // P(asleep)
};

/// Marginals of a joint probability 4-vector in channel order. Validates
/// non-negativity and unit sum within 1e-6.
TaskMarginals marginals(const std::array<double, 4>& joint);

struct TaskWeights {
  double arousal = 2.0;
  double apnea = 1.0;
  double sleep = 1.0;
};

struct LossBreakdown {
  double total = 0.0;
  double arousal = 0.0, apnea = 0.0, sleep = 0.0;
  int64_t valid_samples = 0;  // 0 means every sample was in the ignore bin
};

/// Sum of per-task binary cross-entropies on the marginals, weighted and
/// averaged over non-ignored samples. Ignored samples contribute zero loss
/// and zero gradient. probs is a 4 x N node of joint probabilities.
template <typename T>
ad::NodePtr<T> multitask_loss(ad::Graph<T>& g, ad::NodePtr<T> probs,
                              std::span<const OutputBin> sample_bins,
                              TaskWeights weights = {}, LossBreakdown* breakdown = nullptr);

inline constexpr double kProbClamp = 1e-12;

namespace detail {

inline double clamped_log(double p) {
  return std::log(p < kProbClamp ? kProbClamp : p);
}

inline double bce(double p, bool positive) {
  return positive ? -clamped_log(p) : -clamped_log(1.0 - p);
}

// d bce / d p with the same clamping as the forward value.
inline double bce_grad(double p, bool positive) {
  if (positive) return -1.0 / (p < kProbClamp ? kProbClamp : p);
  return 1.0 / (1.0 - p < kProbClamp ? kProbClamp : 1.0 - p);
}

}  // namespace detail

template <typename T>
ad::NodePtr<T> multitask_loss(ad::Graph<T>& g, ad::NodePtr<T> probs,
                              std::span<const OutputBin> sample_bins, TaskWeights weights,
                              LossBreakdown* breakdown) {
  if (probs->value.rank() != 2 || probs->value.dim(0) != 4)
    throw ValidationError("multitask_loss: expected 4 x N probabilities");
  const int64_t n = probs->value.dim(1);
  if (static_cast<int64_t>(sample_bins.size()) != n)
    throw ValidationError("multitask_loss: label count does not match prediction length");

  int64_t valid = 0;
  double acc_total = 0, acc_ar = 0, acc_ap = 0, acc_sl = 0;
  for (int64_t i = 0; i < n; ++i) {
    const OutputBin b = sample_bins[static_cast<size_t>(i)];
    if (b == OutputBin::ignore) continue;
    ++valid;
    const double p_ar = static_cast<double>(probs->value.at2(3, i));
    const double p_ap = static_cast<double>(probs->value.at2(1, i));
    const double p_sl = p_ap + static_cast<double>(probs->value.at2(2, i)) + p_ar;
    const bool y_ar = b == OutputBin::target_arousal;
    const bool y_ap = b == OutputBin::apnea_hypopnea;
    const bool y_sl = b != OutputBin::wake;
    acc_ar += detail::bce(p_ar, y_ar);
    acc_ap += detail::bce(p_ap, y_ap);
    acc_sl += detail::bce(p_sl, y_sl);
  }
  const double inv = valid > 0 ? 1.0 / static_cast<double>(valid) : 0.0;
  acc_total = weights.arousal * acc_ar + weights.apnea * acc_ap + weights.sleep * acc_sl;
  if (breakdown) {
    breakdown->total = acc_total * inv;
    breakdown->arousal = acc_ar * inv;
    breakdown->apnea = acc_ap * inv;
    breakdown->sleep = acc_sl * inv;
    breakdown->valid_samples = valid;
  }

  Tensor<T> out = Tensor<T>::full({1}, static_cast<T>(acc_total * inv));
  std::vector<OutputBin> bins_copy(sample_bins.begin(), sample_bins.end());
  auto bp = [probs, bins_copy, weights, inv, n](ad::Node<T>& node) {
    if (!probs->requires_grad) return;
    probs->ensure_grad();
    const double up = static_cast<double>(node.grad.data[0]) * inv;
    for (int64_t i = 0; i < n; ++i) {
      const OutputBin b = bins_copy[static_cast<size_t>(i)];
      if (b == OutputBin::ignore) continue;
      const double p_ar = static_cast<double>(probs->value.at2(3, i));
      const double p_ap = static_cast<double>(probs->value.at2(1, i));
      const double p_sl = p_ap + static_cast<double>(probs->value.at2(2, i)) + p_ar;
      const double d_ar = weights.arousal * detail::bce_grad(p_ar, b == OutputBin::target_arousal);
      const double d_ap = weights.apnea * detail::bce_grad(p_ap, b == OutputBin::apnea_hypopnea);
      const double d_sl = weights.sleep * detail::bce_grad(p_sl, b != OutputBin::wake);
      // marginal -> joint chain: arousal hits channel 3, apnea channel 1,
      // sleep channels 1..3.
      probs->grad.at2(1, i) += static_cast<T>(up * (d_ap + d_sl));
      probs->grad.at2(2, i) += static_cast<T>(up * d_sl);
      probs->grad.at2(3, i) += static_cast<T>(up * (d_ar + d_sl));
    }
  };
  return g.record(std::move(out), {probs}, std::move(bp));
}

}  // namespace sleepdet::bins
