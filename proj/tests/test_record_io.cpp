#include <cstdio>
#include <filesystem>
#include <random>
#include <set>

#include "doctest.h"
#include "sleepdet/label_remap.hpp"
#include "sleepdet/record.hpp"
#include "sleepdet/synth.hpp"

using namespace sleepdet;
using namespace sleepdet::io;

namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
  auto p = fs::temp_directory_path() / (std::string("sleepdet_test_") + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RawRecord random_small_record(uint64_t seed, int64_t n, int n_channels) {
  RawRecord rec;
  rec.record_id = "r" + std::to_string(seed);
  rec.duration_samples = n;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-3.f, 3.f);
  for (int c = 0; c < n_channels; ++c) {
    std::vector<float> sig(static_cast<size_t>(n));
    for (auto& v : sig) v = u(rng);
    rec.channels["ch" + std::to_string(c)] = std::move(sig);
  }
  auto rand_labels = [&](std::initializer_list<int8_t> values) {
    std::vector<int8_t> out(static_cast<size_t>(n));
    std::vector<int8_t> vals(values);
    std::uniform_int_distribution<size_t> pick(0, vals.size() - 1);
    int64_t i = 0;
    while (i < n) {
      const int8_t v = vals[pick(rng)];
      const int64_t run = std::min<int64_t>(n - i, 1 + static_cast<int64_t>(rng() % 50));
      for (int64_t j = 0; j < run; ++j) out[static_cast<size_t>(i + j)] = v;
      i += run;
    }
    return out;
  };
  rec.arousal_labels = rand_labels({-1, 0, 1});
  rec.apnea_labels = rand_labels({0, 1});
  rec.sleep_labels = rand_labels({-1, 0, 1});
  return rec;
}

bool records_equal(const RawRecord& a, const RawRecord& b) {
  if (a.record_id != b.record_id || a.sample_rate != b.sample_rate ||
      a.duration_samples != b.duration_samples)
    return false;
  if (a.channels.size() != b.channels.size()) return false;
  for (const auto& [name, sig] : a.channels) {
    auto it = b.channels.find(name);
    if (it == b.channels.end() || it->second != sig) return false;  // bit-exact
  }
  return a.arousal_labels == b.arousal_labels && a.apnea_labels == b.apnea_labels &&
         a.sleep_labels == b.sleep_labels;
}

}  // namespace

TEST_CASE("labels default to arousal 0 / apnea 0 / sleep -1") {
  const auto dir = temp_dir("defaults");
  RawRecord rec;
  rec.record_id = "r0";
  rec.duration_samples = 1000;
  for (const auto& name : kStandardChannels)
    rec.channels[name] = std::vector<float>(1000, 0.5f);
  rec.arousal_labels.assign(1000, 0);
  rec.apnea_labels.assign(1000, 0);
  rec.sleep_labels.assign(1000, -1);
  write_record(rec, dir);
  auto back = read_record(dir);
  CHECK(back.channels.size() == 13);
  for (int8_t v : back.sleep_labels) CHECK(v == -1);
  for (int8_t v : back.arousal_labels) CHECK(v == 0);
}

TEST_CASE("interval expansion covers exactly the annotated samples") {
  std::vector<AnnotationInterval> ivs{{Task::arousal, 100, 200, 1}};
  auto labels = expand_intervals(Task::arousal, ivs, 300, kDefaultArousal);
  CHECK(labels[150] == 1);
  CHECK(labels[99] == 0);
  CHECK(labels[100] == 1);
  CHECK(labels[199] == 1);
  CHECK(labels[200] == 0);
}

TEST_CASE("interval validation rejects out-of-bounds and overlap") {
  CHECK_THROWS_AS(
      expand_intervals(Task::apnea, {{Task::apnea, 10, 400, 1}}, 300, kDefaultApnea),
      ValidationError);
  CHECK_THROWS_AS(expand_intervals(Task::apnea,
                                   {{Task::apnea, 10, 50, 1}, {Task::apnea, 40, 80, 1}}, 300,
                                   kDefaultApnea),
                  ValidationError);
  CHECK_THROWS_AS(
      expand_intervals(Task::apnea, {{Task::apnea, 50, 40, 1}}, 300, kDefaultApnea),
      ValidationError);
}

TEST_CASE("write then read is the identity on random records") {
  for (uint64_t seed : {11ULL, 12ULL, 13ULL, 14ULL, 15ULL}) {
    const auto dir = temp_dir(("rt" + std::to_string(seed)).c_str());
    auto rec = random_small_record(seed, 400 + static_cast<int64_t>(seed) * 37, 3);
    write_record(rec, dir);
    auto back = read_record(dir);
    CHECK(records_equal(rec, back));
  }
}

TEST_CASE("write rejects NaN samples") {
  auto rec = random_small_record(20, 100, 2);
  rec.channels["ch0"][50] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(write_record(rec, temp_dir("nan")), ValidationError);
}

TEST_CASE("missing channel file is a format error") {
  const auto dir = temp_dir("missing");
  auto rec = random_small_record(21, 200, 2);
  write_record(rec, dir);
  fs::remove(dir / "ch1.f32");
  CHECK_THROWS_AS(read_record(dir), FormatError);
}

TEST_CASE("on-disk channel payload is 4 bytes per sample") {
  const auto dir = temp_dir("size");
  auto rec = random_small_record(22, 5000, 2);
  write_record(rec, dir);
  CHECK(fs::file_size(dir / "ch0.f32") == 5000 * 4);
  // A full-night record would therefore cost 13 * 5,040,000 * 4 bytes of
  // channel payload plus the small text label files.
  CHECK(13 * fs::file_size(dir / "ch0.f32") / 5000 * 5040000 / 4 ==
        13LL * 5040000LL * 4LL / 4);
}

TEST_CASE("synthetic generation is deterministic") {
  auto plan = make_default_plan(7, 300);
  auto a = generate_synthetic(7, 300, plan);
  auto b = generate_synthetic(7, 300, plan);
  CHECK(records_equal(a, b));
}

TEST_CASE("apnea during wake is rejected") {
  EventPlan plan;
  const int64_t fs = kRawSampleRate;
  plan.intervals.push_back({Task::sleep, 0, 60 * fs, 0});
  plan.intervals.push_back({Task::sleep, 60 * fs, 200 * fs, 1});
  plan.intervals.push_back({Task::apnea, 30 * fs, 45 * fs, 1});
  CHECK_THROWS_AS(generate_synthetic(1, 200, plan), ValidationError);
}

TEST_CASE("target arousal overlapping apnea is rejected") {
  EventPlan plan;
  const int64_t fs = kRawSampleRate;
  plan.intervals.push_back({Task::sleep, 0, 300 * fs, 1});
  plan.intervals.push_back({Task::apnea, 60 * fs, 80 * fs, 1});
  plan.intervals.push_back({Task::arousal, 70 * fs, 90 * fs, 1});
  CHECK_THROWS_AS(generate_synthetic(1, 300, plan), ValidationError);
}

TEST_CASE("generated labels stay inside the reachable bins") {
  // Over many seeded records the per-sample combinations must hit exactly
  // the six sleep-scored bins plus the undefined prefix bin, and never an
  // impossible combination.
  std::set<int> seen;
  for (uint64_t seed = 1; seed <= 100; ++seed) {
    auto plan = make_default_plan(seed, 600);
    auto rec = generate_synthetic(seed, 600, plan);
    for (int64_t i = 0; i < rec.duration_samples; i += 7) {
      bins::TaskLabels l{rec.arousal_labels[static_cast<size_t>(i)],
                         rec.apnea_labels[static_cast<size_t>(i)],
                         rec.sleep_labels[static_cast<size_t>(i)]};
      seen.insert(bins::encode_bin12(l));  // throws on impossible combinations
    }
  }
  const std::set<int> expected{1, 2, 4, 5, 6, 7, 10};
  CHECK(seen == expected);
}

TEST_CASE("event signatures land in the right channels") {
  auto plan = make_default_plan(42, 900);
  auto rec = generate_synthetic(42, 900, plan);
  // Airflow RMS inside apnea must collapse relative to normal sleep.
  const auto& airflow = rec.channels.at("AIRFLOW");
  const auto& sao2 = rec.channels.at("SaO2");
  double ap_sq = 0, ap_n = 0, sl_sq = 0, sl_n = 0, ap_sao = 0, sl_sao = 0;
  for (int64_t i = 0; i < rec.duration_samples; ++i) {
    if (rec.apnea_labels[static_cast<size_t>(i)] == 1) {
      ap_sq += airflow[static_cast<size_t>(i)] * airflow[static_cast<size_t>(i)];
      ap_sao += sao2[static_cast<size_t>(i)];
      ++ap_n;
    } else if (rec.sleep_labels[static_cast<size_t>(i)] == 1 &&
               rec.arousal_labels[static_cast<size_t>(i)] == 0) {
      sl_sq += airflow[static_cast<size_t>(i)] * airflow[static_cast<size_t>(i)];
      sl_sao += sao2[static_cast<size_t>(i)];
      ++sl_n;
    }
  }
  REQUIRE(ap_n > 0);
  REQUIRE(sl_n > 0);
  CHECK(std::sqrt(ap_sq / ap_n) < 0.45 * std::sqrt(sl_sq / sl_n));
  CHECK(ap_sao / ap_n < sl_sao / sl_n - 0.5);  // desaturation under apnea

  // Chin EMG bursts during target arousal.
  const auto& chin = rec.channels.at("Chin1-Chin2");
  double ar_sq = 0, ar_n = 0;
  for (int64_t i = 0; i < rec.duration_samples; ++i)
    if (rec.arousal_labels[static_cast<size_t>(i)] == 1) {
      ar_sq += chin[static_cast<size_t>(i)] * chin[static_cast<size_t>(i)];
      ++ar_n;
    }
  REQUIRE(ar_n > 0);
  double base_sq = 0, base_n = 0;
  for (int64_t i = 0; i < rec.duration_samples; ++i)
    if (rec.sleep_labels[static_cast<size_t>(i)] == 1 &&
        rec.arousal_labels[static_cast<size_t>(i)] == 0 &&
        rec.apnea_labels[static_cast<size_t>(i)] == 0) {
      base_sq += chin[static_cast<size_t>(i)] * chin[static_cast<size_t>(i)];
      ++base_n;
    }
  CHECK(std::sqrt(ar_sq / ar_n) > 2.0 * std::sqrt(base_sq / base_n));
}

TEST_CASE("plan file round trip") {
  const auto dir = temp_dir("plan");
  auto plan = make_default_plan(3, 400);
  write_plan(plan, dir / "plan.txt");
  auto back = read_plan(dir / "plan.txt");
  REQUIRE(back.intervals.size() == plan.intervals.size());
  for (size_t i = 0; i < plan.intervals.size(); ++i) {
    CHECK(back.intervals[i].task == plan.intervals[i].task);
    CHECK(back.intervals[i].start_sample == plan.intervals[i].start_sample);
    CHECK(back.intervals[i].end_sample == plan.intervals[i].end_sample);
    CHECK(back.intervals[i].value == plan.intervals[i].value);
  }
}
