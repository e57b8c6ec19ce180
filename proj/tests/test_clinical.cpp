#include <random>

#include "doctest.h"
#include "sleepdet/clinical.hpp"
#include "sleepdet/record.hpp"
#include "sleepdet/synth.hpp"

using namespace sleepdet;
using namespace sleepdet::report;

TEST_CASE("binarize is threshold-inclusive") {
  std::vector<float> p{0.1f, 0.2f, 0.3f};
  CHECK(binarize(p, 0.2) == std::vector<uint8_t>{0, 1, 1});
  CHECK(binarize(std::vector<float>(4, 0.0f), 0.2) == std::vector<uint8_t>{0, 0, 0, 0});
  CHECK(binarize(p, 0.0) == std::vector<uint8_t>{1, 1, 1});
}

TEST_CASE("count_events requires runs strictly longer than the minimum") {
  std::vector<uint8_t> run11(40, 0);
  for (int i = 5; i < 16; ++i) run11[static_cast<size_t>(i)] = 1;
  CHECK(count_events(run11) == 1);

  std::vector<uint8_t> run10(40, 0);
  for (int i = 5; i < 15; ++i) run10[static_cast<size_t>(i)] = 1;
  CHECK(count_events(run10) == 0);

  std::vector<uint8_t> two(40, 1);
  two[20] = 0;  // two 15+ second runs split by one zero
  two.resize(36);
  CHECK(count_events(two) == 2);

  std::vector<uint8_t> alternating(50);
  for (size_t i = 0; i < alternating.size(); ++i) alternating[i] = i % 2;
  CHECK(count_events(alternating) == 0);
}

TEST_CASE("count_events ignores trailing zeros") {
  std::vector<uint8_t> t(30, 0);
  for (int i = 0; i < 12; ++i) t[static_cast<size_t>(i)] = 1;
  const auto base = count_events(t);
  t.insert(t.end(), 100, 0);
  CHECK(count_events(t) == base);
}

TEST_CASE("summary formulas on hand-built tracks") {
  // TST equal to TRT gives SE 1.
  std::vector<uint8_t> all_sleep(600, 1), none(600, 0);
  auto s = compute_summary(all_sleep, none, none, 600);
  CHECK(s.se == doctest::Approx(1.0));
  CHECK(s.tst_min == doctest::Approx(10.0));

  // Three qualifying arousals in six hours of sleep: AI = 3*60/360 = 0.5.
  std::vector<uint8_t> sleep6h(6 * 3600, 1), quiet(6 * 3600, 0), ar(6 * 3600, 0);
  for (int e = 0; e < 3; ++e)
    for (int i = 0; i < 20; ++i) ar[static_cast<size_t>(e * 4000 + i)] = 1;
  auto s6 = compute_summary(sleep6h, ar, quiet, 6 * 3600);
  CHECK(s6.ai == doctest::Approx(0.5));

  // Eighteen qualifying apneas in one hour of sleep: AHI 18, moderate.
  std::vector<uint8_t> sleep1h(3600, 1), none1h(3600, 0), ap(3600, 0);
  for (int e = 0; e < 18; ++e)
    for (int i = 0; i < 15; ++i) ap[static_cast<size_t>(e * 200 + i)] = 1;
  auto s1 = compute_summary(sleep1h, none1h, ap, 3600);
  CHECK(s1.ahi == doctest::Approx(18.0));
  CHECK(s1.grade == AhiGrade::moderate);
}

TEST_CASE("zero sleep time flags the indices as undefined") {
  std::vector<uint8_t> wake(100, 0);
  auto s = compute_summary(wake, wake, wake, 100);
  CHECK(!s.indices_defined);
  CHECK(s.se == 0.0);
}

TEST_CASE("grade boundaries are half-open and monotone") {
  CHECK(grade_ahi(0.0) == AhiGrade::normal);
  CHECK(grade_ahi(4.99) == AhiGrade::normal);
  CHECK(grade_ahi(5.0) == AhiGrade::mild);
  CHECK(grade_ahi(14.999) == AhiGrade::mild);
  CHECK(grade_ahi(15.0) == AhiGrade::moderate);
  CHECK(grade_ahi(30.0) == AhiGrade::severe);
  CHECK(grade_ahi(100.0) == AhiGrade::severe);
  double prev = -1;
  for (double ahi = 0; ahi < 60; ahi += 0.25) {
    const double g = static_cast<double>(grade_ahi(ahi));
    CHECK(g >= prev);
    prev = g;
  }
}

namespace {

ClinicalSummary with_grade(double ahi) {
  ClinicalSummary s;
  s.ahi = ahi;
  s.grade = grade_ahi(ahi);
  s.se = 0.8;
  s.ai = 5;
  return s;
}

}  // namespace

TEST_CASE("cohort stats reproduce the hand-checked rates") {
  // Rebuild the validation grade confusion counts via AHI values.
  const double rep[4] = {2.0, 10.0, 20.0, 40.0};
  const int64_t counts[4][4] = {{12, 2, 0, 0}, {4, 20, 3, 0}, {0, 6, 35, 8}, {0, 0, 2, 8}};
  std::vector<ClinicalSummary> pred, truth;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      for (int64_t k = 0; k < counts[r][c]; ++k) {
        truth.push_back(with_grade(rep[r]));
        pred.push_back(with_grade(rep[c]));
      }
  auto st = cohort_stats(pred, truth);
  CHECK(st.accuracy == doctest::Approx(0.75));
  CHECK(st.normal_osr == doctest::Approx(2.0 / 14.0).epsilon(1e-9));
  CHECK(st.usr[1] == doctest::Approx(4.0 / 27.0).epsilon(1e-9));
  CHECK(st.usr[2] == doctest::Approx(6.0 / 49.0).epsilon(1e-9));
  CHECK(st.usr[3] == doctest::Approx(2.0 / 10.0).epsilon(1e-9));
  CHECK(st.grade_sens_spec[0].sensitivity == doctest::Approx(12.0 / 14.0));

  // Counting identity: accuracy plus all off-diagonal mass equals one.
  int64_t off = 0, total = 0;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) {
      total += st.grade_confusion[static_cast<size_t>(r)][static_cast<size_t>(c)];
      if (r != c) off += st.grade_confusion[static_cast<size_t>(r)][static_cast<size_t>(c)];
    }
  CHECK(st.accuracy + static_cast<double>(off) / static_cast<double>(total) ==
        doctest::Approx(1.0));
}

TEST_CASE("perfect predictions give zero errors") {
  std::vector<ClinicalSummary> cohort;
  for (double ahi : {1.0, 7.0, 20.0, 45.0}) cohort.push_back(with_grade(ahi));
  auto st = cohort_stats(cohort, cohort);
  CHECK(st.se_mae == 0.0);
  CHECK(st.ahi_mae == 0.0);
  CHECK(st.accuracy == 1.0);
  CHECK(st.normal_osr == 0.0);
  for (double u : st.usr) CHECK(u == 0.0);
}

TEST_CASE("ground-truth tracks reproduce the planted event plan") {
  for (uint64_t seed : {80ULL, 81ULL}) {
    auto plan = io::make_default_plan(seed, 900);
    auto rec = io::generate_synthetic(seed, 900, plan);
    // Per-second truth tracks (center-sample reduction for sleep/apnea).
    const int64_t secs = 900;
    std::vector<uint8_t> sleep(secs), arousal(secs), apnea(secs);
    for (int64_t s = 0; s < secs; ++s) {
      const int64_t c = s * 200 + 100;
      sleep[static_cast<size_t>(s)] = rec.sleep_labels[static_cast<size_t>(c)] == 1;
      apnea[static_cast<size_t>(s)] = rec.apnea_labels[static_cast<size_t>(c)] == 1;
      bool any = false;
      for (int64_t i = s * 200; i < (s + 1) * 200; ++i)
        any = any || rec.arousal_labels[static_cast<size_t>(i)] == 1;
      arousal[static_cast<size_t>(s)] = any;
    }
    auto s = compute_summary(sleep, arousal, apnea, 900);
    // Count events the plan itself plants, using the same >10 s rule.
    int64_t planned_apneas = 0;
    for (const auto& iv : plan.intervals)
      if (iv.task == io::Task::apnea && iv.end_sample - iv.start_sample > 10 * 200)
        ++planned_apneas;
    CHECK(count_events(apnea) == planned_apneas);
    CHECK(s.indices_defined);
  }
}
