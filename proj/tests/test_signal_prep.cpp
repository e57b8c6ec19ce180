#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "sleepdet/signal_prep.hpp"
#include "sleepdet/synth.hpp"

using namespace sleepdet;
using namespace sleepdet::dsp;

namespace {

double db(double amplitude) { return 20.0 * std::log10(amplitude); }

std::vector<double> random_signal(int64_t n, uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> out(static_cast<size_t>(n));
  for (auto& v : out) v = d(rng);
  return out;
}

}  // namespace

TEST_CASE("fir design hits -3 dB at the requested cutoff") {
  const auto k = design_antialias_fir(200.0, 28.29, 241);
  CHECK(k.taps.size() == 241);
  CHECK(std::abs(db(kernel_response(k, 28.29)) - (-3.0)) < 0.5);
  // Unit DC gain by normalization.
  double sum = 0;
  for (double t : k.taps) sum += t;
  CHECK(std::abs(sum - 1.0) < 1e-9);
  CHECK(std::abs(kernel_response(k, 0.0) - 1.0) < 1e-9);
  // Stopband before the post-decimation Nyquist of 25 Hz x2 margin.
  CHECK(db(kernel_response(k, 40.0)) <= -20.0);
  // Symmetric taps (linear phase).
  for (size_t i = 0; i < k.taps.size() / 2; ++i)
    CHECK(k.taps[i] == doctest::Approx(k.taps[k.taps.size() - 1 - i]).epsilon(1e-12));
}

TEST_CASE("fir design rejects bad arguments") {
  CHECK_THROWS_AS(design_antialias_fir(200.0, 0.0, 241), ValidationError);
  CHECK_THROWS_AS(design_antialias_fir(200.0, 120.0, 241), ValidationError);
  CHECK_THROWS_AS(design_antialias_fir(200.0, 28.29, 240), ValidationError);
  CHECK_THROWS_AS(design_antialias_fir(200.0, 28.29, 21), ValidationError);
}

TEST_CASE("filter_decimate lengths, constants and sinusoid response") {
  const auto k = design_antialias_fir(200.0, 28.29, 241);

  std::vector<float> constant(4000, 3.25f);
  auto zeros = filter_decimate(constant, k, 4);
  CHECK(zeros.size() == 1000);
  for (double v : zeros) CHECK(std::abs(v) < 1e-9);

  // Sinusoid amplitude from interior RMS over whole cycles.
  const auto tone_amplitude = [&](double freq) {
    const int64_t n = 200 * 60;
    std::vector<float> tone(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i)
      tone[static_cast<size_t>(i)] =
          static_cast<float>(std::sin(2.0 * M_PI * freq * i / 200.0));
    auto out = filter_decimate(tone, k, 4);
    double sq = 0;
    int64_t cnt = 0;
    for (size_t i = 200; i + 200 < out.size(); ++i, ++cnt) sq += out[i] * out[i];
    return std::sqrt(2.0 * sq / static_cast<double>(cnt));
  };
  // 10 Hz passband tone preserved within 2 percent; 45 Hz attenuated 20 dB.
  CHECK(tone_amplitude(10.0) == doctest::Approx(1.0).epsilon(0.02));
  CHECK(db(tone_amplitude(45.0)) <= -20.0);

  CHECK_THROWS_AS(filter_decimate(std::vector<float>{}, k, 4), ValidationError);
}

TEST_CASE("filter_decimate is linear") {
  const auto k = design_antialias_fir(200.0, 28.29, 241);
  std::mt19937_64 rng(40);
  // Dyadic values keep a*x + b*y exactly representable, so the check probes
  // the operator, not float storage rounding.
  std::uniform_int_distribution<int> d(-512, 512);
  std::vector<float> x(2000), y(2000), combo(2000);
  const double a = 2.0, b = -0.5;
  for (size_t i = 0; i < x.size(); ++i) {
    x[i] = static_cast<float>(d(rng)) / 256.0f;
    y[i] = static_cast<float>(d(rng)) / 256.0f;
    combo[i] = static_cast<float>(a * x[i] + b * y[i]);
  }
  auto fx = filter_decimate(x, k, 4);
  auto fy = filter_decimate(y, k, 4);
  auto fc = filter_decimate(combo, k, 4);
  for (size_t i = 0; i < fc.size(); ++i)
    CHECK(std::abs(fc[i] - (a * fx[i] + b * fy[i])) < 1e-9);
}

TEST_CASE("moving_normalize annihilates constants") {
  std::vector<double> constant(5000, 42.0);
  auto out = moving_normalize(constant, 600);
  for (double v : out) CHECK(std::abs(v) < 1e-4);
  auto direct = moving_normalize_direct(constant, 600);
  for (double v : direct) CHECK(v == 0.0);
}

TEST_CASE("moving_normalize tracks unit variance white noise") {
  auto x = random_signal(40000, 41);
  auto out = moving_normalize(x, 2000);
  // Interior moving RMS of the output stays near one.
  for (int64_t c = 5000; c < 35000; c += 5000) {
    double sq = 0;
    for (int64_t i = c - 1000; i < c + 1000; ++i) sq += out[static_cast<size_t>(i)] *
                                                        out[static_cast<size_t>(i)];
    const double rms = std::sqrt(sq / 2000.0);
    CHECK(rms > 0.9);
    CHECK(rms < 1.1);
  }
}

TEST_CASE("fft path matches the direct oracle across lengths and windows") {
  struct Case {
    int64_t n, window;
  };
  for (const Case c : {Case{1, 10}, Case{5, 16}, Case{300, 44}, Case{2000, 101},
                       Case{500, 5000}, Case{12000, 999}}) {
    auto x = random_signal(c.n, 42 + static_cast<uint64_t>(c.n));
    auto fft = moving_normalize(x, c.window);
    auto direct = moving_normalize_direct(x, c.window);
    double max_diff = 0;
    for (size_t i = 0; i < fft.size(); ++i)
      max_diff = std::max(max_diff, std::abs(fft[i] - direct[i]));
    CHECK(max_diff <= 1e-6);
  }
}

TEST_CASE("moving_normalize rejects non-finite input") {
  std::vector<double> x(100, 1.0);
  x[10] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(moving_normalize(x, 10), NumericalError);
  CHECK_THROWS_AS(moving_normalize_direct(x, 10), NumericalError);
}

TEST_CASE("scale_sao2 maps min/max onto -0.5/0.5, constants to zero") {
  std::vector<double> constant(50, 97.0);
  for (double v : scale_sao2(constant)) CHECK(v == 0.0);

  std::vector<double> ramp(101);
  for (size_t i = 0; i < ramp.size(); ++i) ramp[i] = 90.0 + 0.08 * static_cast<double>(i);
  auto out = scale_sao2(ramp);
  CHECK(out.front() == doctest::Approx(-0.5));
  CHECK(out.back() == doctest::Approx(0.5));
  for (size_t i = 1; i < out.size(); ++i)
    CHECK(out[i] - out[i - 1] == doctest::Approx(0.01).epsilon(1e-9));
}

namespace {

io::RawRecord flat_record_with_arousal(int64_t duration_s) {
  io::RawRecord rec;
  rec.record_id = "flat";
  rec.duration_samples = duration_s * 200;
  std::mt19937_64 rng(50);
  std::normal_distribution<double> d(0.0, 1.0);
  for (const auto& name : io::kStandardChannels) {
    std::vector<float> sig(static_cast<size_t>(rec.duration_samples));
    for (auto& v : sig) v = static_cast<float>(d(rng));
    rec.channels[name] = std::move(sig);
  }
  rec.sleep_labels.assign(static_cast<size_t>(rec.duration_samples), 1);
  rec.apnea_labels.assign(static_cast<size_t>(rec.duration_samples), 0);
  rec.arousal_labels.assign(static_cast<size_t>(rec.duration_samples), 0);
  // One 30 s arousal starting at minute 5, when the record reaches it.
  for (int64_t i = 300 * 200; i < std::min<int64_t>(330 * 200, rec.duration_samples); ++i)
    rec.arousal_labels[static_cast<size_t>(i)] = 1;
  return rec;
}

}  // namespace

TEST_CASE("prepare_record pads, labels and bounds SaO2") {
  auto rec = flat_record_with_arousal(60);
  PrepareOptions opts;
  opts.pad_seconds = 120;
  rec.arousal_labels.assign(static_cast<size_t>(rec.duration_samples), 0);
  auto prep = prepare_record(rec, opts);
  CHECK(prep.signals.dim(0) == 12);
  CHECK(prep.signals.dim(1) == 120 * 50);
  CHECK(prep.valid_seconds == 60);
  for (int64_t s = 60; s < 120; ++s)
    CHECK(prep.bin_labels_1hz[static_cast<size_t>(s)] == bins::OutputBin::ignore);
  // Padded signal region is exactly zero.
  for (int64_t c = 0; c < 12; ++c)
    for (int64_t t = 60 * 50; t < 120 * 50; ++t) CHECK(prep.signals.at2(c, t) == 0.0f);
  CHECK(prep.signals.all_finite());
}

TEST_CASE("prepare_record at the full-night duration has the contract shape") {
  auto rec = flat_record_with_arousal(60);
  auto prep = prepare_record(rec, {});
  CHECK(prep.signals.dim(0) == 12);
  CHECK(prep.signals.dim(1) == 1260000);
  CHECK(prep.bin_labels_1hz.size() == 25200);
}

TEST_CASE("a 30 s arousal at minute 5 becomes exactly 30 target-arousal seconds") {
  auto rec = flat_record_with_arousal(600);
  PrepareOptions opts;
  opts.pad_seconds = 600;
  auto prep = prepare_record(rec, opts);
  for (int64_t s = 0; s < 600; ++s) {
    const auto b = prep.bin_labels_1hz[static_cast<size_t>(s)];
    if (s >= 300 && s < 330) CHECK(b == bins::OutputBin::target_arousal);
    else CHECK(b == bins::OutputBin::normal_sleep);
  }
}

TEST_CASE("records longer than the pad target are rejected") {
  auto rec = flat_record_with_arousal(130);
  PrepareOptions opts;
  opts.pad_seconds = 120;
  CHECK_THROWS_AS(prepare_record(rec, opts), ValidationError);
}

TEST_CASE("no event of two seconds or longer vanishes at 1 Hz") {
  for (uint64_t seed : {60ULL, 61ULL, 62ULL}) {
    auto plan = io::make_default_plan(seed, 600);
    auto rec = io::generate_synthetic(seed, 600, plan);
    PrepareOptions opts;
    opts.pad_seconds = 600;
    auto prep = prepare_record(rec, opts);
    for (const auto& iv : plan.intervals) {
      if (iv.end_sample - iv.start_sample < 2 * 200) continue;
      if (iv.task == io::Task::sleep) continue;
      const auto want = iv.task == io::Task::apnea ? bins::OutputBin::apnea_hypopnea
                                                   : bins::OutputBin::target_arousal;
      bool found = false;
      for (int64_t s = iv.start_sample / 200; s * 200 < iv.end_sample; ++s)
        if (prep.bin_labels_1hz[static_cast<size_t>(s)] == want) found = true;
      // Target arousals can legitimately disappear when their scoring epoch
      // quantizes to wake; apneas always survive.
      if (iv.task == io::Task::apnea) CHECK(found);
    }
  }
}

TEST_CASE("prepared record round trip is exact") {
  auto plan = io::make_default_plan(70, 300);
  auto rec = io::generate_synthetic(70, 300, plan);
  PrepareOptions opts;
  opts.pad_seconds = 360;
  auto prep = prepare_record(rec, opts);
  const auto dir = std::filesystem::temp_directory_path() / "sleepdet_test_prep_rt";
  std::filesystem::remove_all(dir);
  write_prepared(prep, dir);
  auto back = read_prepared(dir);
  CHECK(back.source_id == prep.source_id);
  CHECK(back.valid_seconds == prep.valid_seconds);
  CHECK(back.signals.data == prep.signals.data);  // bit-exact
  CHECK(back.bin_labels_1hz == prep.bin_labels_1hz);
  CHECK(back.source_intervals.size() == prep.source_intervals.size());
  // 200 Hz label reconstruction matches the source record.
  CHECK(back.labels_200hz(io::Task::arousal) == rec.arousal_labels);
  CHECK(back.labels_200hz(io::Task::apnea) == rec.apnea_labels);
  CHECK(back.labels_200hz(io::Task::sleep) == rec.sleep_labels);
}
