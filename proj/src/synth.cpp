#include "sleepdet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace sleepdet::io {

namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;

uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  // splitmix64 step keeps per-channel streams independent.
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<AnnotationInterval> task_intervals(const EventPlan& plan, Task task) {
  std::vector<AnnotationInterval> out;
  for (const auto& iv : plan.intervals)
    if (iv.task == task) out.push_back(iv);
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.start_sample < b.start_sample; });
  return out;
}

void check_sorted_disjoint(const std::vector<AnnotationInterval>& ivs, int64_t n,
                           const char* what) {
  int64_t prev_end = -1;
  for (const auto& iv : ivs) {
    if (iv.start_sample < 0 || iv.end_sample > n || iv.start_sample >= iv.end_sample)
      throw ValidationError(std::string("plan: ") + what + " interval out of bounds");
    if (iv.start_sample < prev_end)
      throw ValidationError(std::string("plan: overlapping ") + what + " intervals");
    prev_end = iv.end_sample;
  }
}

bool inside_sleep(const std::vector<AnnotationInterval>& sleep_ivs, int64_t start,
                  int64_t end) {
  for (const auto& s : sleep_ivs)
    if (s.value == 1 && start >= s.start_sample && end <= s.end_sample) return true;
  return false;
}

// Two-pole resonator over white noise: a cheap band-limited noise source.
struct BandNoise {
  double b1, b2, gain;
  double y1 = 0, y2 = 0;
  std::mt19937_64 rng;
  std::normal_distribution<double> white{0.0, 1.0};

  BandNoise(double center_hz, double r, uint64_t seed)
      : b1(2.0 * r * std::cos(2.0 * kPi * center_hz / kRawSampleRate)),
        b2(-r * r),
        gain(1.0 - r),
        rng(seed) {}

  double next() {
    const double y = b1 * y1 + b2 * y2 + white(rng);
    y2 = y1;
    y1 = y;
    return gain * y;
  }
};

// One-pole envelope follower; roughly 0.15 s time constant at 200 Hz.
struct Envelope {
  double value;
  double a = 0.9672;
  explicit Envelope(double init) : value(init) {}
  double step(double target) {
    value = a * value + (1.0 - a) * target;
    return value;
  }
};

// Per-sample ground-truth state flags.
enum StateFlag : uint8_t {
  kCovered = 1,      // inside some plan sleep-task interval
  kTrueSleep = 2,    // covered with value 1
  kApnea = 4,        // inside a plan apnea interval
  kArousalish = 8,   // target arousal or post-apnea arousal (signal burst)
  kTarget = 16,      // inside a plan target-arousal interval
  kPostApnea = 32,   // post-apnea non-target arousal tail
  kRecovery = 64,    // breathing recovery right after an apnea
};

}  // namespace

void validate_plan(const EventPlan& plan, int64_t duration_samples) {
  const auto sleep_ivs = task_intervals(plan, Task::sleep);
  const auto apnea_ivs = task_intervals(plan, Task::apnea);
  const auto arousal_ivs = task_intervals(plan, Task::arousal);
  check_sorted_disjoint(sleep_ivs, duration_samples, "sleep");
  check_sorted_disjoint(apnea_ivs, duration_samples, "apnea");
  check_sorted_disjoint(arousal_ivs, duration_samples, "arousal");
  for (const auto& iv : sleep_ivs)
    if (iv.value != 0 && iv.value != 1)
      throw ValidationError("plan: sleep intervals must carry wake(0) or sleep(1)");
  for (const auto& iv : apnea_ivs) {
    if (iv.value != 1) throw ValidationError("plan: apnea intervals must carry value 1");
    if (!inside_sleep(sleep_ivs, iv.start_sample, iv.end_sample))
      throw ValidationError(
          "plan: apnea outside sleep; a sleep disorder while the subject is awake is "
          "impossible");
  }
  for (const auto& iv : arousal_ivs) {
    if (iv.value != 1)
      throw ValidationError("plan: arousal intervals must carry the target value 1");
    if (!inside_sleep(sleep_ivs, iv.start_sample, iv.end_sample))
      throw ValidationError("plan: target arousal outside sleep is impossible");
    for (const auto& ap : apnea_ivs)
      if (iv.start_sample < ap.end_sample && ap.start_sample < iv.end_sample)
        throw ValidationError("plan: target arousal overlapping apnea carries apnea 0");
  }
}

EventPlan read_plan(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw FormatError("missing plan file " + file.string());
  EventPlan plan;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string task;
    AnnotationInterval iv{Task::sleep, 0, 0, 0};
    if (!(ss >> task >> iv.start_sample >> iv.end_sample >> iv.value))
      throw FormatError(file.string() + ":" + std::to_string(lineno) +
                        ": expected 'task start end value'");
    iv.task = task_from_name(task);
    plan.intervals.push_back(iv);
  }
  return plan;
}

void write_plan(const EventPlan& plan, const fs::path& file) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw IoError("cannot open " + file.string() + " for writing");
  for (const auto& iv : plan.intervals)
    out << task_name(iv.task) << " " << iv.start_sample << " " << iv.end_sample << " "
        << iv.value << "\n";
}

EventPlan make_default_plan(uint64_t seed, int64_t duration_s) {
  if (duration_s < 120)
    throw ValidationError("default plan needs at least 120 seconds of recording");
  std::mt19937_64 rng(mix_seed(seed, 77));
  auto uniform = [&](int64_t lo, int64_t hi) {
    return std::uniform_int_distribution<int64_t>(lo, hi)(rng);
  };
  const int64_t fs = kRawSampleRate;
  const int64_t n = duration_s * fs;

  EventPlan plan;
  // Undefined prefix, then an initial scored wake period.
  const int64_t t0 = uniform(20, 60) * fs;
  int64_t cursor = t0;
  const int64_t first_wake_end = cursor + uniform(40, 90) * fs;
  plan.intervals.push_back({Task::sleep, cursor, std::min(first_wake_end, n), 0});
  cursor = first_wake_end;

  // Severity draw: 0 = sparse events, up to 3 = dense. Wide spread across
  // records keeps every AHI grade reachable in a cohort.
  const int severity = static_cast<int>(uniform(0, 3));
  const int64_t apnea_gap_s = severity >= 2 ? 35 : (severity == 1 ? 70 : 140);

  bool placed_boundary_apnea = false;
  bool sleeping = true;
  while (cursor < n - 60 * fs) {
    if (sleeping) {
      int64_t block_end = cursor + uniform(150, 420) * fs;
      // Pin one sleep block end 5..14 s past an epoch boundary so the apnea
      // that ends with the block lands in a wake-quantized epoch.
      if (!placed_boundary_apnea && block_end < n - 90 * fs) {
        const int64_t rel = block_end - t0;
        const int64_t into_epoch = uniform(5, 14) * fs;
        block_end = t0 + (rel / kScoringEpochSamples) * kScoringEpochSamples + into_epoch;
        if (block_end <= cursor + 60 * fs) block_end += kScoringEpochSamples;
      }
      block_end = std::min(block_end, n);
      if (block_end - cursor < 60 * fs) break;
      plan.intervals.push_back({Task::sleep, cursor, block_end, 1});

      // Apnea events, kept clear of the block edges except the pinned one.
      int64_t ev = cursor + uniform(20, 40) * fs;
      while (ev + 40 * fs < block_end) {
        const int64_t len = uniform(12, 32) * fs;
        if (ev + len + 15 * fs >= block_end) break;
        plan.intervals.push_back({Task::apnea, ev, ev + len, 1});
        ev += len + uniform(apnea_gap_s, apnea_gap_s * 2) * fs;
      }
      if (!placed_boundary_apnea && block_end < n) {
        const int64_t len = uniform(12, 20) * fs;
        const int64_t start = block_end - len;
        // Only place it if it stays clear of the events above.
        bool free = true;
        for (const auto& iv : plan.intervals)
          if (iv.task == Task::apnea && start < iv.end_sample + 12 * fs) free = false;
        if (free && start > cursor) {
          plan.intervals.push_back({Task::apnea, start, block_end, 1});
          placed_boundary_apnea = true;
        }
      }

      // Target arousals in the apnea-free stretches.
      int64_t ar = cursor + uniform(25, 60) * fs;
      int placed = 0;
      while (ar + 30 * fs < block_end && placed < 12) {
        const int64_t len = uniform(6, 18) * fs;
        bool free = true;
        for (const auto& iv : plan.intervals) {
          if (iv.task != Task::apnea) continue;
          if (ar - 8 * fs < iv.end_sample && iv.start_sample < ar + len + 8 * fs) free = false;
        }
        if (free && ar + len < block_end - 10 * fs) {
          plan.intervals.push_back({Task::arousal, ar, ar + len, 1});
          ++placed;
        }
        ar += len + uniform(45, 110) * fs;
      }
      cursor = block_end;
      sleeping = false;
    } else {
      // Brief awakening; short ones stay inside a sleep-scored epoch.
      const int64_t wake_len = (uniform(0, 2) == 0 ? uniform(5, 12) : uniform(20, 50)) * fs;
      const int64_t wake_end = std::min(cursor + wake_len, n);
      plan.intervals.push_back({Task::sleep, cursor, wake_end, 0});
      cursor = wake_end;
      sleeping = true;
    }
  }
  if (cursor < n) plan.intervals.push_back({Task::sleep, cursor, n, cursor % 2 == 0 ? 0 : 1});

  // Guarantee at least one arousal and one apnea per record.
  const auto have = [&](Task t) {
    for (const auto& iv : plan.intervals)
      if (iv.task == t) return true;
    return false;
  };
  const auto clear_of_events = [&](int64_t start, int64_t end) {
    for (const auto& iv : plan.intervals) {
      if (iv.task == Task::sleep) continue;
      if (start - 10 * fs < iv.end_sample && iv.start_sample < end + 10 * fs) return false;
    }
    return true;
  };
  for (Task missing : {Task::apnea, Task::arousal}) {
    if (have(missing)) continue;
    const int64_t len = (missing == Task::apnea ? 15 : 12) * fs;
    for (const auto& iv : plan.intervals) {
      if (iv.task != Task::sleep || iv.value != 1 ||
          iv.end_sample - iv.start_sample < len + 30 * fs)
        continue;
      bool placed = false;
      for (int64_t start = iv.start_sample + 12 * fs;
           start + len + 12 * fs < iv.end_sample && !placed; start += 5 * fs) {
        if (clear_of_events(start, start + len)) {
          plan.intervals.push_back({missing, start, start + len, 1});
          placed = true;
        }
      }
      if (placed) break;
    }
  }

  std::stable_sort(plan.intervals.begin(), plan.intervals.end(), [](const auto& a, const auto& b) {
    if (a.task != b.task) return static_cast<int>(a.task) < static_cast<int>(b.task);
    return a.start_sample < b.start_sample;
  });
  validate_plan(plan, n);
  return plan;
}

RawRecord generate_synthetic(uint64_t record_seed, int64_t duration_s,
                             const EventPlan& plan) {
  if (duration_s <= 0) throw ValidationError("synthetic record needs positive duration");
  const int64_t fs = kRawSampleRate;
  const int64_t n = duration_s * fs;
  validate_plan(plan, n);

  const auto sleep_ivs = task_intervals(plan, Task::sleep);
  const auto apnea_ivs = task_intervals(plan, Task::apnea);
  const auto arousal_ivs = task_intervals(plan, Task::arousal);

  // Ground-truth state timeline.
  std::vector<uint8_t> state(static_cast<size_t>(n), 0);
  for (const auto& iv : sleep_ivs) {
    const uint8_t f = iv.value == 1 ? uint8_t(kCovered | kTrueSleep) : uint8_t(kCovered);
    for (int64_t i = iv.start_sample; i < iv.end_sample; ++i) state[static_cast<size_t>(i)] |= f;
  }
  for (const auto& iv : arousal_ivs)
    for (int64_t i = iv.start_sample; i < iv.end_sample; ++i)
      state[static_cast<size_t>(i)] |= kArousalish | kTarget;

  std::mt19937_64 evrng(mix_seed(record_seed, 101));
  for (const auto& iv : apnea_ivs) {
    for (int64_t i = iv.start_sample; i < iv.end_sample; ++i)
      state[static_cast<size_t>(i)] |= kApnea;
    // Post-apnea arousal tail and breathing recovery, clipped to the
    // enclosing true-sleep interval.
    int64_t sleep_end = n;
    for (const auto& s : sleep_ivs)
      if (s.value == 1 && iv.start_sample >= s.start_sample && iv.end_sample <= s.end_sample)
        sleep_end = s.end_sample;
    const int64_t tail =
        std::min<int64_t>(iv.end_sample + std::uniform_int_distribution<int64_t>(3, 8)(evrng) * fs,
                          sleep_end);
    for (int64_t i = iv.end_sample; i < tail; ++i)
      state[static_cast<size_t>(i)] |= kPostApnea | kArousalish;
    const int64_t recov = std::min<int64_t>(iv.end_sample + 6 * fs, n);
    for (int64_t i = iv.end_sample; i < recov; ++i) state[static_cast<size_t>(i)] |= kRecovery;
  }

  // Quantize sleep to 30-second scoring epochs by majority vote over the
  // covered samples; epochs with no covered sample stay undefined.
  std::vector<int8_t> sleep_labels(static_cast<size_t>(n), kDefaultSleep);
  int64_t t0 = n;
  for (const auto& iv : sleep_ivs) t0 = std::min(t0, iv.start_sample);
  for (int64_t e = t0; e < n; e += kScoringEpochSamples) {
    const int64_t end = std::min(e + kScoringEpochSamples, n);
    int64_t covered = 0, asleep = 0;
    for (int64_t i = e; i < end; ++i) {
      if (state[static_cast<size_t>(i)] & kCovered) {
        ++covered;
        if (state[static_cast<size_t>(i)] & kTrueSleep) ++asleep;
      }
    }
    if (covered == 0) continue;
    const int8_t label = 2 * asleep >= covered ? 1 : 0;
    std::fill(sleep_labels.begin() + e, sleep_labels.begin() + end, label);
  }

  // Arousal: wake-scored or apnea-adjacent samples are non-target (-1);
  // target arousal only counts inside sleep-scored epochs.
  std::vector<int8_t> arousal_labels(static_cast<size_t>(n), kDefaultArousal);
  std::vector<int8_t> apnea_labels(static_cast<size_t>(n), kDefaultApnea);
  for (int64_t i = 0; i < n; ++i) {
    const uint8_t f = state[static_cast<size_t>(i)];
    if (f & kApnea) apnea_labels[static_cast<size_t>(i)] = 1;
    if ((f & kApnea) || (f & kPostApnea) || sleep_labels[static_cast<size_t>(i)] == 0)
      arousal_labels[static_cast<size_t>(i)] = -1;
    else if ((f & kTarget) && sleep_labels[static_cast<size_t>(i)] == 1)
      arousal_labels[static_cast<size_t>(i)] = 1;
  }

  // SaO2 desaturation depth curve: lags apnea onset, recovers after the end.
  std::vector<double> desat(static_cast<size_t>(n), 0.0);
  std::mt19937_64 saorng(mix_seed(record_seed, 102));
  for (const auto& iv : apnea_ivs) {
    const double depth = std::uniform_real_distribution<double>(4.0, 10.0)(saorng);
    const int64_t lag = 8 * fs;
    const int64_t ramp_start = iv.start_sample + lag;
    const int64_t low_end = std::min(iv.end_sample + 4 * fs, n);
    for (int64_t i = ramp_start; i < low_end && i < n; ++i) {
      const double frac =
          std::min(1.0, static_cast<double>(i - ramp_start) / static_cast<double>(6 * fs));
      desat[static_cast<size_t>(i)] = std::max(desat[static_cast<size_t>(i)], depth * frac);
    }
    const double tau = 6.0 * fs;
    for (int64_t i = low_end; i < n; ++i) {
      const double v = depth * std::exp(-static_cast<double>(i - low_end) / tau);
      if (v < 0.05) break;
      desat[static_cast<size_t>(i)] = std::max(desat[static_cast<size_t>(i)], v);
    }
  }

  RawRecord rec;
  rec.record_id = "synth-" + std::to_string(record_seed);
  rec.duration_samples = n;
  rec.arousal_labels = std::move(arousal_labels);
  rec.apnea_labels = std::move(apnea_labels);
  rec.sleep_labels = std::move(sleep_labels);

  std::mt19937_64 recrng(mix_seed(record_seed, 1));
  std::uniform_real_distribution<double> chan_gain(0.7, 1.3);
  std::uniform_real_distribution<double> chan_bias(-0.2, 0.2);
  const double breath_hz = std::uniform_real_distribution<double>(0.2, 0.3)(recrng);
  const double heart_hz = std::uniform_real_distribution<double>(0.9, 1.3)(recrng);

  for (size_t ci = 0; ci < kStandardChannels.size(); ++ci) {
    const std::string& name = kStandardChannels[ci];
    const uint64_t cs = mix_seed(record_seed, 1000 + ci);
    const double gain = chan_gain(recrng);
    const double bias = chan_bias(recrng);
    std::vector<float> sig(static_cast<size_t>(n));

    const bool is_eeg = ci < 6;
    if (is_eeg || name == "E1-M2" || name == "Chin1-Chin2") {
      BandNoise slow(2.5, 0.96, cs);
      BandNoise mid(10.0, 0.95, cs ^ 0x55);
      BandNoise fast(22.0, 0.93, cs ^ 0xAA);
      std::mt19937_64 wn(cs ^ 0xFF);
      std::normal_distribution<double> white(0.0, 1.0);
      Envelope e_slow(0.5), e_mid(0.5), e_fast(0.2);
      for (int64_t i = 0; i < n; ++i) {
        const uint8_t f = state[static_cast<size_t>(i)];
        const bool asleep = f & kTrueSleep;
        const bool burst = f & kArousalish;
        double ts, tm, tf;
        if (is_eeg) {
          ts = asleep ? 1.5 : 0.35;
          tm = asleep ? 0.25 : 1.0;
          tf = burst ? ((f & kTarget) ? 1.5 : 1.1) : (asleep ? 0.12 : 0.55);
        } else if (name == "E1-M2") {
          ts = asleep ? 0.35 : 1.0;
          tm = 0.15;
          tf = burst ? 0.8 : 0.1;
        } else {  // chin EMG
          ts = 0.05;
          tm = 0.1;
          tf = burst ? 2.2 : (asleep ? 0.25 : 1.1);
        }
        const double v = e_slow.step(ts) * slow.next() + e_mid.step(tm) * mid.next() +
                         e_fast.step(tf) * fast.next() + 0.05 * white(wn);
        sig[static_cast<size_t>(i)] = static_cast<float>(gain * v + bias);
      }
    } else if (name == "ABD" || name == "CHEST" || name == "AIRFLOW") {
      std::mt19937_64 wn(cs ^ 0x11);
      std::normal_distribution<double> white(0.0, 1.0);
      BandNoise texture(1.2, 0.9, cs ^ 0x22);
      Envelope env(1.0);
      double phase = name == "CHEST" ? 0.6 : (name == "ABD" ? 0.9 : 0.0);
      const bool airflow = name == "AIRFLOW";
      for (int64_t i = 0; i < n; ++i) {
        const uint8_t f = state[static_cast<size_t>(i)];
        double target = 1.0;
        if (f & kApnea) target = airflow ? 0.05 : 0.25;
        else if (f & kRecovery) target = airflow ? 1.7 : 1.5;
        phase += breath_hz / fs;
        const double v = env.step(target) * std::sin(2.0 * kPi * phase) +
                         0.12 * texture.next() + 0.04 * white(wn);
        sig[static_cast<size_t>(i)] = static_cast<float>(gain * v + bias);
      }
    } else if (name == "SaO2") {
      std::mt19937_64 wn(cs ^ 0x33);
      std::normal_distribution<double> white(0.0, 1.0);
      double wander = 0.0;
      double phase = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        phase += 0.005 / fs;
        wander = 0.9995 * wander + 0.0005 * white(wn);
        const double v =
            97.0 + 0.8 * std::sin(2.0 * kPi * phase) + wander - desat[static_cast<size_t>(i)];
        sig[static_cast<size_t>(i)] = static_cast<float>(v);
      }
    } else {  // ECG
      std::mt19937_64 wn(cs ^ 0x44);
      std::normal_distribution<double> white(0.0, 1.0);
      double phase = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        phase += heart_hz / fs;
        const double p = phase - std::floor(phase);
        const double d = (p - 0.1) / 0.025;
        const double v = 1.4 * std::exp(-d * d) - 0.1 + 0.03 * white(wn);
        sig[static_cast<size_t>(i)] = static_cast<float>(gain * v + bias);
      }
    }
    rec.channels[name] = std::move(sig);
  }

  rec.validate(true);
  return rec;
}

}  // namespace sleepdet::io
