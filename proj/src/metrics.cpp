#include "sleepdet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace sleepdet::eval {

void ScoredTrack::check() const {
  if (labels.size() != scores.size())
    throw ValidationError("scored track: score/label length mismatch");
  if (!valid.empty() && valid.size() != scores.size())
    throw ValidationError("scored track: mask length mismatch");
  for (float s : scores)
    if (!std::isfinite(s)) throw NumericalError("scored track: non-finite score");
}

namespace {

// Sorted (score desc) indices of the valid samples.
std::vector<int64_t> sorted_valid(const ScoredTrack& t) {
  std::vector<int64_t> idx;
  idx.reserve(t.scores.size());
  for (int64_t i = 0; i < t.size(); ++i)
    if (t.valid.empty() || t.valid[static_cast<size_t>(i)]) idx.push_back(i);
  std::sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
    return t.scores[static_cast<size_t>(a)] > t.scores[static_cast<size_t>(b)];
  });
  return idx;
}

}  // namespace

double auprc(const ScoredTrack& track) {
  track.check();
  const auto idx = sorted_valid(track);
  int64_t total_pos = 0;
  for (int64_t i : idx) total_pos += track.labels[static_cast<size_t>(i)];
  if (total_pos == 0) throw ValidationError("auprc: no valid positive samples");

  double ap = 0;
  int64_t tp = 0, seen = 0;
  size_t g = 0;
  while (g < idx.size()) {
    // One tied-score group moves together.
    size_t h = g;
    int64_t group_pos = 0;
    const float s = track.scores[static_cast<size_t>(idx[g])];
    while (h < idx.size() && track.scores[static_cast<size_t>(idx[h])] == s) {
      group_pos += track.labels[static_cast<size_t>(idx[h])];
      ++h;
    }
    tp += group_pos;
    seen += static_cast<int64_t>(h - g);
    if (group_pos > 0) {
      const double precision = static_cast<double>(tp) / static_cast<double>(seen);
      const double recall_step =
          static_cast<double>(group_pos) / static_cast<double>(total_pos);
      ap += precision * recall_step;
    }
    g = h;
  }
  return ap;
}

double auroc(const ScoredTrack& track) {
  track.check();
  const auto idx = sorted_valid(track);
  int64_t pos = 0;
  for (int64_t i : idx) pos += track.labels[static_cast<size_t>(i)];
  const int64_t neg = static_cast<int64_t>(idx.size()) - pos;
  if (pos == 0 || neg == 0)
    throw ValidationError("auroc: needs at least one valid positive and one valid negative");

  // Rank-sum with midranks for ties (descending order here, so convert).
  double rank_sum_pos = 0;  // ranks in ascending-score order
  const int64_t n = static_cast<int64_t>(idx.size());
  size_t g = 0;
  while (g < idx.size()) {
    size_t h = g;
    int64_t group_pos = 0;
    const float s = track.scores[static_cast<size_t>(idx[g])];
    while (h < idx.size() && track.scores[static_cast<size_t>(idx[h])] == s) {
      group_pos += track.labels[static_cast<size_t>(idx[h])];
      ++h;
    }
    // Descending positions g..h-1 correspond to ascending ranks n-h+1..n-g.
    const double midrank =
        (static_cast<double>(n - h + 1) + static_cast<double>(n - g)) / 2.0;
    rank_sum_pos += midrank * static_cast<double>(group_pos);
    g = h;
  }
  const double u = rank_sum_pos - static_cast<double>(pos) * (static_cast<double>(pos) + 1.0) / 2.0;
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

std::vector<float> upsample_hold(std::span<const float> per_second, int rate,
                                 int64_t out_samples) {
  if (per_second.empty()) throw ValidationError("upsample: empty track");
  if (out_samples > static_cast<int64_t>(per_second.size()) * rate)
    throw ValidationError("upsample: prediction shorter than the label track");
  std::vector<float> out(static_cast<size_t>(out_samples));
  for (int64_t i = 0; i < out_samples; ++i)
    out[static_cast<size_t>(i)] = per_second[static_cast<size_t>(i / rate)];
  return out;
}

namespace {

constexpr int kLabelRate = 200;

}  // namespace

ScoredTrack challenge_arousal_track(std::span<const float> arousal_prob_1hz,
                                    std::span<const int8_t> labels_200hz,
                                    bool mask_nontarget) {
  ScoredTrack t;
  const int64_t n = static_cast<int64_t>(labels_200hz.size());
  t.scores = upsample_hold(arousal_prob_1hz, kLabelRate, n);
  t.labels.resize(static_cast<size_t>(n));
  if (mask_nontarget) t.valid.assign(static_cast<size_t>(n), 1);
  for (int64_t i = 0; i < n; ++i) {
    const int8_t l = labels_200hz[static_cast<size_t>(i)];
    t.labels[static_cast<size_t>(i)] = l == 1 ? 1 : 0;
    if (mask_nontarget && l == -1) t.valid[static_cast<size_t>(i)] = 0;
  }
  return t;
}

ScoredTrack challenge_apnea_track(std::span<const float> apnea_prob_1hz,
                                  std::span<const int8_t> labels_200hz) {
  ScoredTrack t;
  const int64_t n = static_cast<int64_t>(labels_200hz.size());
  t.scores = upsample_hold(apnea_prob_1hz, kLabelRate, n);
  t.labels.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    t.labels[static_cast<size_t>(i)] = labels_200hz[static_cast<size_t>(i)] == 1 ? 1 : 0;
  return t;
}

ScoredTrack challenge_sleep_track(std::span<const float> sleep_prob_1hz,
                                  std::span<const int8_t> labels_200hz) {
  ScoredTrack t;
  const int64_t n = static_cast<int64_t>(labels_200hz.size());
  t.scores = upsample_hold(sleep_prob_1hz, kLabelRate, n);
  t.labels.resize(static_cast<size_t>(n));
  t.valid.assign(static_cast<size_t>(n), 1);
  for (int64_t i = 0; i < n; ++i) {
    const int8_t l = labels_200hz[static_cast<size_t>(i)];
    t.labels[static_cast<size_t>(i)] = l == 1 ? 1 : 0;
    if (l == -1) t.valid[static_cast<size_t>(i)] = 0;  // undefined stage is unscored
  }
  return t;
}

ConfusionMatrix confusion_matrix(std::span<const int> predicted, std::span<const int> truth,
                                 int num_classes) {
  if (predicted.size() != truth.size())
    throw ValidationError("confusion_matrix: length mismatch");
  ConfusionMatrix cm(static_cast<size_t>(num_classes),
                     std::vector<int64_t>(static_cast<size_t>(num_classes), 0));
  for (size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= num_classes || predicted[i] < 0 ||
        predicted[i] >= num_classes)
      throw ValidationError("confusion_matrix: class index out of range");
    ++cm[static_cast<size_t>(truth[i])][static_cast<size_t>(predicted[i])];
  }
  return cm;
}

std::vector<SensSpec> one_vs_all_sens_spec(const ConfusionMatrix& cm) {
  const size_t k = cm.size();
  int64_t total = 0;
  std::vector<int64_t> row_sum(k, 0), col_sum(k, 0), diag(k, 0);
  for (size_t r = 0; r < k; ++r) {
    if (cm[r].size() != k) throw ValidationError("one_vs_all: matrix not square");
    for (size_t c = 0; c < k; ++c) {
      row_sum[r] += cm[r][c];
      col_sum[c] += cm[r][c];
      total += cm[r][c];
    }
    diag[r] = cm[r][r];
  }
  std::vector<SensSpec> out(k);
  for (size_t c = 0; c < k; ++c) {
    const int64_t tp = diag[c];
    const int64_t fn = row_sum[c] - tp;
    const int64_t fp = col_sum[c] - tp;
    const int64_t tn = total - tp - fn - fp;
    out[c].sensitivity = row_sum[c] == 0
                             ? std::numeric_limits<double>::quiet_NaN()
                             : static_cast<double>(tp) / static_cast<double>(tp + fn);
    out[c].specificity = (tn + fp) == 0
                             ? std::numeric_limits<double>::quiet_NaN()
                             : static_cast<double>(tn) / static_cast<double>(tn + fp);
  }
  return out;
}

}  // namespace sleepdet::eval
