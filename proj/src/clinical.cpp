#include "sleepdet/clinical.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace sleepdet::report {

std::vector<uint8_t> binarize(std::span<const float> probs, double threshold) {
  std::vector<uint8_t> out(probs.size());
  for (size_t i = 0; i < probs.size(); ++i) {
    if (!std::isfinite(probs[i])) throw NumericalError("binarize: non-finite probability");
    out[i] = static_cast<double>(probs[i]) >= threshold ? 1 : 0;
  }
  return out;
}

int64_t count_events(std::span<const uint8_t> binary_1hz, int min_duration_s) {
  int64_t events = 0, run = 0;
  for (size_t i = 0; i <= binary_1hz.size(); ++i) {
    const bool on = i < binary_1hz.size() && binary_1hz[i];
    if (on) {
      ++run;
    } else {
      if (run > min_duration_s) ++events;
      run = 0;
    }
  }
  return events;
}

const char* grade_name(AhiGrade g) {
  switch (g) {
    case AhiGrade::normal:
      return "normal";
    case AhiGrade::mild:
      return "mild";
    case AhiGrade::moderate:
      return "moderate";
    case AhiGrade::severe:
      return "severe";
  }
  return "?";
}

AhiGrade grade_ahi(double ahi) {
  if (ahi < 0 || !std::isfinite(ahi)) throw ValidationError("grade_ahi: bad index");
  if (ahi < 5.0) return AhiGrade::normal;
  if (ahi < 15.0) return AhiGrade::mild;
  if (ahi < 30.0) return AhiGrade::moderate;
  return AhiGrade::severe;
}

ClinicalSummary compute_summary(std::span<const uint8_t> sleep_track,
                                std::span<const uint8_t> arousal_track,
                                std::span<const uint8_t> apnea_track, double trt_s) {
  if (sleep_track.size() != arousal_track.size() || sleep_track.size() != apnea_track.size())
    throw ValidationError("compute_summary: track length mismatch");
  if (trt_s <= 0 || static_cast<double>(sleep_track.size()) > trt_s)
    throw ValidationError("compute_summary: recording time shorter than the tracks");
  ClinicalSummary s;
  int64_t asleep = 0;
  for (uint8_t v : sleep_track) asleep += v;
  s.tst_min = static_cast<double>(asleep) / 60.0;
  s.trt_min = trt_s / 60.0;
  s.se = s.tst_min / s.trt_min;
  if (asleep == 0) {
    s.indices_defined = false;
    s.ai = s.ahi = 0;
    s.grade = AhiGrade::normal;
    return s;
  }
  const double arousals = static_cast<double>(count_events(arousal_track));
  const double apneas = static_cast<double>(count_events(apnea_track));
  s.ai = arousals * 60.0 / s.tst_min;
  s.ahi = apneas * 60.0 / s.tst_min;
  s.grade = grade_ahi(s.ahi);
  return s;
}

CohortStats cohort_stats(std::span<const ClinicalSummary> predicted,
                         std::span<const ClinicalSummary> actual) {
  if (predicted.size() != actual.size() || predicted.empty())
    throw ValidationError("cohort_stats: need matching non-empty cohorts");
  CohortStats st;
  st.records = static_cast<int64_t>(predicted.size());
  std::vector<int> pred_grades, true_grades;
  for (size_t i = 0; i < predicted.size(); ++i) {
    st.se_mae += std::abs(predicted[i].se - actual[i].se);
    st.ai_mae += std::abs(predicted[i].ai - actual[i].ai);
    st.ahi_mae += std::abs(predicted[i].ahi - actual[i].ahi);
    st.se_actual_avg += actual[i].se;
    st.se_predicted_avg += predicted[i].se;
    st.ai_actual_avg += actual[i].ai;
    st.ai_predicted_avg += predicted[i].ai;
    st.ahi_actual_avg += actual[i].ahi;
    st.ahi_predicted_avg += predicted[i].ahi;
    pred_grades.push_back(static_cast<int>(predicted[i].grade));
    true_grades.push_back(static_cast<int>(actual[i].grade));
  }
  const double inv = 1.0 / static_cast<double>(st.records);
  st.se_mae *= inv;
  st.ai_mae *= inv;
  st.ahi_mae *= inv;
  st.se_actual_avg *= inv;
  st.se_predicted_avg *= inv;
  st.ai_actual_avg *= inv;
  st.ai_predicted_avg *= inv;
  st.ahi_actual_avg *= inv;
  st.ahi_predicted_avg *= inv;

  st.grade_confusion = eval::confusion_matrix(pred_grades, true_grades, 4);
  int64_t correct = 0;
  for (int g = 0; g < 4; ++g) correct += st.grade_confusion[static_cast<size_t>(g)][static_cast<size_t>(g)];
  st.accuracy = static_cast<double>(correct) * inv;

  // Normal over-estimation: any higher predicted grade. Under-estimation of
  // grade g: any lower predicted grade.
  int64_t normal_total = 0, normal_over = 0;
  for (int c = 0; c < 4; ++c) {
    normal_total += st.grade_confusion[0][static_cast<size_t>(c)];
    if (c > 0) normal_over += st.grade_confusion[0][static_cast<size_t>(c)];
  }
  st.normal_osr = normal_total == 0 ? 0.0
                                    : static_cast<double>(normal_over) /
                                          static_cast<double>(normal_total);
  st.usr.assign(4, 0.0);
  for (int g = 1; g < 4; ++g) {
    int64_t total = 0, under = 0;
    for (int c = 0; c < 4; ++c) {
      total += st.grade_confusion[static_cast<size_t>(g)][static_cast<size_t>(c)];
      if (c < g) under += st.grade_confusion[static_cast<size_t>(g)][static_cast<size_t>(c)];
    }
    st.usr[static_cast<size_t>(g)] =
        total == 0 ? 0.0 : static_cast<double>(under) / static_cast<double>(total);
  }
  st.grade_sens_spec = eval::one_vs_all_sens_spec(st.grade_confusion);
  return st;
}

std::string format_cohort_report(const CohortStats& st) {
  std::ostringstream out;
  char buf[160];
  out << "== Clinical summary comparison (" << st.records << " records) ==\n\n";
  out << "Metric            MAE      actual-avg  predicted-avg\n";
  std::snprintf(buf, sizeof buf, "SE    %12.4f %12.4f %14.4f\n", st.se_mae, st.se_actual_avg,
                st.se_predicted_avg);
  out << buf;
  std::snprintf(buf, sizeof buf, "AI    %12.4f %12.4f %14.4f\n", st.ai_mae, st.ai_actual_avg,
                st.ai_predicted_avg);
  out << buf;
  std::snprintf(buf, sizeof buf, "AHI   %12.4f %12.4f %14.4f\n", st.ahi_mae,
                st.ahi_actual_avg, st.ahi_predicted_avg);
  out << buf;

  out << "\nAHI grade confusion matrix (rows = actual, cols = predicted)\n";
  out << "                normal   mild     moderate severe\n";
  for (int g = 0; g < 4; ++g) {
    std::snprintf(buf, sizeof buf, "%-14s", grade_name(static_cast<AhiGrade>(g)));
    out << buf;
    for (int c = 0; c < 4; ++c) {
      std::snprintf(buf, sizeof buf, " %-8lld",
                    static_cast<long long>(st.grade_confusion[static_cast<size_t>(g)]
                                                             [static_cast<size_t>(c)]));
      out << buf;
    }
    out << "\n";
  }

  std::snprintf(buf, sizeof buf, "\nOverall accuracy   %.4f\n", st.accuracy);
  out << buf;
  std::snprintf(buf, sizeof buf, "Normal grade OSR   %.4f\n", st.normal_osr);
  out << buf;
  for (int g = 1; g < 4; ++g) {
    std::snprintf(buf, sizeof buf, "%-8s grade USR %9.4f\n",
                  grade_name(static_cast<AhiGrade>(g)), st.usr[static_cast<size_t>(g)]);
    out << buf;
  }

  out << "\nGrade      sensitivity  specificity\n";
  for (int g = 0; g < 4; ++g) {
    const auto& ss = st.grade_sens_spec[static_cast<size_t>(g)];
    std::snprintf(buf, sizeof buf, "%-10s %11.3f %12.3f\n",
                  grade_name(static_cast<AhiGrade>(g)), ss.sensitivity, ss.specificity);
    out << buf;
  }
  return out.str();
}

}  // namespace sleepdet::report
