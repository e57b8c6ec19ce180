#include "sleepdet/signal_prep.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <map>
#include <memory>

namespace sleepdet::dsp {

namespace {

constexpr double kPi = 3.14159265358979323846;

// ---------------------------------------------------------------------------
// FFT plumbing. Plans use FFTW_ESTIMATE: planning stays cheap and the chosen
// algorithm is deterministic, which the byte-identical-reports contract
// needs. Plans and boxcar spectra are cached per size.
// ---------------------------------------------------------------------------

struct FftwBuffers {
  int64_t n = 0;
  double* real = nullptr;
  fftw_complex* spec = nullptr;
  fftw_plan fwd = nullptr;
  fftw_plan inv = nullptr;

  explicit FftwBuffers(int64_t size) : n(size) {
    real = fftw_alloc_real(static_cast<size_t>(n));
    spec = fftw_alloc_complex(static_cast<size_t>(n / 2 + 1));
    fwd = fftw_plan_dft_r2c_1d(static_cast<int>(n), real, spec, FFTW_ESTIMATE);
    inv = fftw_plan_dft_c2r_1d(static_cast<int>(n), spec, real, FFTW_ESTIMATE);
  }
  ~FftwBuffers() {
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
    fftw_free(real);
    fftw_free(spec);
  }
  FftwBuffers(const FftwBuffers&) = delete;
  FftwBuffers& operator=(const FftwBuffers&) = delete;
};

int64_t next_pow2(int64_t n) {
  int64_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Boxcar spectrum of length `window` zero-padded to `fft_size`, scaled 1/W.
const std::vector<std::complex<double>>& boxcar_spectrum(int64_t fft_size, int64_t window,
                                                         FftwBuffers& buf) {
  static std::map<std::pair<int64_t, int64_t>, std::vector<std::complex<double>>> cache;
  auto& entry = cache[{fft_size, window}];
  if (!entry.empty()) return entry;
  std::fill(buf.real, buf.real + fft_size, 0.0);
  const double inv_w = 1.0 / static_cast<double>(window);
  for (int64_t i = 0; i < window; ++i) buf.real[i] = inv_w;
  fftw_execute(buf.fwd);
  entry.resize(static_cast<size_t>(fft_size / 2 + 1));
  for (int64_t i = 0; i <= fft_size / 2; ++i)
    entry[static_cast<size_t>(i)] = {buf.spec[i][0], buf.spec[i][1]};
  return entry;
}

// Reflected index without the edge sample repeated (x[-k] = x[k]).
int64_t reflect_index(int64_t i, int64_t n) {
  if (n == 1) return 0;
  const int64_t period = 2 * (n - 1);
  int64_t j = i % period;
  if (j < 0) j += period;
  return j < n ? j : period - j;
}

// Moving boxcar average with reflective padding via one FFT convolution.
std::vector<double> fft_moving_average(std::span<const double> x, int64_t window,
                                       int64_t pad_left) {
  const int64_t n = static_cast<int64_t>(x.size());
  const int64_t padded = n + window - 1;
  const int64_t fft_size = next_pow2(padded + window - 1);
  FftwBuffers buf(fft_size);
  const auto& box = boxcar_spectrum(fft_size, window, buf);

  std::fill(buf.real, buf.real + fft_size, 0.0);
  for (int64_t i = 0; i < padded; ++i)
    buf.real[i] = x[static_cast<size_t>(reflect_index(i - pad_left, n))];
  fftw_execute(buf.fwd);
  for (int64_t i = 0; i <= fft_size / 2; ++i) {
    const std::complex<double> v(buf.spec[i][0], buf.spec[i][1]);
    const std::complex<double> p = v * box[static_cast<size_t>(i)];
    buf.spec[i][0] = p.real();
    buf.spec[i][1] = p.imag();
  }
  fftw_execute(buf.inv);
  std::vector<double> out(static_cast<size_t>(n));
  const double scale = 1.0 / static_cast<double>(fft_size);
  // Valid part of the linear convolution starts at lag window-1.
  for (int64_t t = 0; t < n; ++t) out[static_cast<size_t>(t)] = buf.real[t + window - 1] * scale;
  return out;
}

}  // namespace

double kernel_response(const FilterKernel& kernel, double freq_hz) {
  const double w = 2.0 * kPi * freq_hz / kernel.sample_rate;
  double re = 0, im = 0;
  for (size_t i = 0; i < kernel.taps.size(); ++i) {
    re += kernel.taps[i] * std::cos(w * static_cast<double>(i));
    im -= kernel.taps[i] * std::sin(w * static_cast<double>(i));
  }
  return std::sqrt(re * re + im * im);
}

namespace {

std::vector<double> windowed_sinc(double fc_norm, int num_taps) {
  // fc_norm: ideal cutoff as a fraction of the sample rate.
  const int m = num_taps - 1;
  std::vector<double> taps(static_cast<size_t>(num_taps));
  double sum = 0;
  for (int i = 0; i < num_taps; ++i) {
    const double k = static_cast<double>(i) - static_cast<double>(m) / 2.0;
    const double sinc = k == 0 ? 2.0 * fc_norm
                               : std::sin(2.0 * kPi * fc_norm * k) / (kPi * k);
    const double hamming = 0.54 - 0.46 * std::cos(2.0 * kPi * static_cast<double>(i) /
                                                  static_cast<double>(m));
    taps[static_cast<size_t>(i)] = sinc * hamming;
    sum += taps[static_cast<size_t>(i)];
  }
  for (auto& t : taps) t /= sum;  // unit DC gain
  return taps;
}

}  // namespace

FilterKernel design_antialias_fir(double sample_rate, double cutoff_hz, int num_taps) {
  if (!(cutoff_hz > 0) || !(cutoff_hz < sample_rate / 2))
    throw ValidationError("fir: cutoff must lie in (0, sample_rate/2)");
  if (num_taps < 31 || num_taps % 2 == 0)
    throw ValidationError("fir: tap count must be odd and at least 31");

  // A windowed sinc crosses roughly -6 dB at its ideal cutoff; bisect the
  // ideal cutoff until the measured response at cutoff_hz is -3 dB.
  const double target = 1.0 / std::sqrt(2.0);
  double lo = cutoff_hz / sample_rate;
  double hi = std::min(0.499, lo + 8.0 / num_taps + 0.05);
  FilterKernel kernel{{}, sample_rate, cutoff_hz};
  for (int iter = 0; iter < 60; ++iter) {
    const double mid = (lo + hi) / 2.0;
    kernel.taps = windowed_sinc(mid, num_taps);
    if (kernel_response(kernel, cutoff_hz) < target) lo = mid;
    else hi = mid;
  }
  kernel.taps = windowed_sinc((lo + hi) / 2.0, num_taps);
  return kernel;
}

std::vector<double> filter_decimate(std::span<const float> signal, const FilterKernel& kernel,
                                    int factor) {
  if (signal.empty()) throw ValidationError("filter_decimate: empty signal");
  if (factor < 1) throw ValidationError("filter_decimate: bad factor");
  const int64_t n = static_cast<int64_t>(signal.size());
  const int64_t k = static_cast<int64_t>(kernel.taps.size());
  const int64_t half = (k - 1) / 2;
  const int64_t out_n = (n + factor - 1) / factor;
  std::vector<double> out(static_cast<size_t>(out_n));
  for (int64_t m = 0; m < out_n; ++m) {
    const int64_t center = m * factor;
    double acc = 0;
    if (center >= half && center + half < n) {
      const float* xs = signal.data() + center - half;
      for (int64_t j = 0; j < k; ++j)
        acc += kernel.taps[static_cast<size_t>(j)] * static_cast<double>(xs[j]);
    } else {
      // Reflective edges keep DC gain exact at the record boundaries.
      for (int64_t j = 0; j < k; ++j)
        acc += kernel.taps[static_cast<size_t>(j)] *
               static_cast<double>(signal[static_cast<size_t>(reflect_index(center - half + j, n))]);
    }
    out[static_cast<size_t>(m)] = acc;
  }
  double mean = 0;
  for (double v : out) mean += v;
  mean /= static_cast<double>(out_n);
  for (double& v : out) v -= mean;
  return out;
}

std::vector<double> moving_normalize(std::span<const double> signal, int64_t window_samples) {
  const int64_t n = static_cast<int64_t>(signal.size());
  if (n < 1) throw ValidationError("moving_normalize: empty signal");
  if (window_samples < 1) throw ValidationError("moving_normalize: bad window");
  for (double v : signal)
    if (!std::isfinite(v)) throw NumericalError("moving_normalize: non-finite input");
  const int64_t pad_left = window_samples / 2;

  const auto mean = fft_moving_average(signal, window_samples, pad_left);
  std::vector<double> centered_sq(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const double d = signal[static_cast<size_t>(i)] - mean[static_cast<size_t>(i)];
    centered_sq[static_cast<size_t>(i)] = d * d;
  }
  const auto ms = fft_moving_average(centered_sq, window_samples, pad_left);
  std::vector<double> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const double rms = std::sqrt(std::max(0.0, ms[static_cast<size_t>(i)]));
    out[static_cast<size_t>(i)] = (signal[static_cast<size_t>(i)] - mean[static_cast<size_t>(i)]) /
                                  std::max(rms, kNormalizeEps);
  }
  return out;
}

std::vector<double> moving_normalize_direct(std::span<const double> signal,
                                            int64_t window_samples) {
  const int64_t n = static_cast<int64_t>(signal.size());
  if (n < 1) throw ValidationError("moving_normalize: empty signal");
  for (double v : signal)
    if (!std::isfinite(v)) throw NumericalError("moving_normalize: non-finite input");
  const int64_t pad_left = window_samples / 2;

  auto window_mean = [&](std::span<const double> x, int64_t t) {
    // Four partial accumulators keep the literal O(W) sum from being
    // latency-bound without changing the algorithm.
    double a0 = 0, a1 = 0, a2 = 0, a3 = 0;
    const int64_t base = t - pad_left;
    int64_t j = 0;
    for (; j + 4 <= window_samples; j += 4) {
      a0 += x[static_cast<size_t>(reflect_index(base + j, n))];
      a1 += x[static_cast<size_t>(reflect_index(base + j + 1, n))];
      a2 += x[static_cast<size_t>(reflect_index(base + j + 2, n))];
      a3 += x[static_cast<size_t>(reflect_index(base + j + 3, n))];
    }
    for (; j < window_samples; ++j)
      a0 += x[static_cast<size_t>(reflect_index(base + j, n))];
    return (a0 + a1 + a2 + a3) / static_cast<double>(window_samples);
  };

  std::vector<double> mean(static_cast<size_t>(n));
  for (int64_t t = 0; t < n; ++t) mean[static_cast<size_t>(t)] = window_mean(signal, t);
  std::vector<double> centered_sq(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const double d = signal[static_cast<size_t>(i)] - mean[static_cast<size_t>(i)];
    centered_sq[static_cast<size_t>(i)] = d * d;
  }
  std::vector<double> out(static_cast<size_t>(n));
  for (int64_t t = 0; t < n; ++t) {
    const double rms = std::sqrt(std::max(0.0, window_mean(centered_sq, t)));
    out[static_cast<size_t>(t)] = (signal[static_cast<size_t>(t)] - mean[static_cast<size_t>(t)]) /
                                  std::max(rms, kNormalizeEps);
  }
  return out;
}

std::vector<double> scale_sao2(std::span<const double> signal) {
  if (signal.empty()) throw ValidationError("scale_sao2: empty signal");
  double lo = signal[0], hi = signal[0];
  for (double v : signal) {
    if (!std::isfinite(v)) throw NumericalError("scale_sao2: non-finite input");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::vector<double> out(signal.size());
  if (hi == lo) return out;  // constant channel maps to zero
  const double scale = 1.0 / (hi - lo);
  for (size_t i = 0; i < signal.size(); ++i) out[i] = (signal[i] - lo) * scale - 0.5;
  return out;
}

const std::vector<std::string>& prepared_channel_order() {
  static const std::vector<std::string> order = [] {
    std::vector<std::string> v;
    for (const auto& name : io::kStandardChannels)
      if (name != "ECG") v.push_back(name);
    return v;
  }();
  return order;
}

bins::OutputBin second_bin(const io::RawRecord& record, int64_t second) {
  const int64_t n = record.duration_samples;
  const int64_t s0 = second * io::kRawSampleRate;
  const int64_t s1 = std::min(s0 + io::kRawSampleRate, n);
  if (s0 >= n) throw ValidationError("second_bin: second beyond record end");
  int64_t rep = std::min(s0 + io::kRawSampleRate / 2, n - 1);
  for (int64_t i = s0; i < s1; ++i) {
    if (record.arousal_labels[static_cast<size_t>(i)] == 1) {
      rep = i;
      break;
    }
  }
  return bins::output_bin({record.arousal_labels[static_cast<size_t>(rep)],
                           record.apnea_labels[static_cast<size_t>(rep)],
                           record.sleep_labels[static_cast<size_t>(rep)]});
}

void PreparedRecord::validate() const {
  if (pad_seconds <= 0 || valid_seconds < 0 || valid_seconds > pad_seconds)
    throw ValidationError("prepared: inconsistent durations");
  if (signals.rank() != 2 ||
      signals.dim(0) != static_cast<int64_t>(prepared_channel_order().size()) ||
      signals.dim(1) != samples())
    throw ValidationError("prepared: signal matrix must be 12 x pad_seconds*50");
  if (static_cast<int64_t>(bin_labels_1hz.size()) != pad_seconds)
    throw ValidationError("prepared: label track must cover the padded duration");
  if (!signals.all_finite()) throw NumericalError("prepared: non-finite signal values");
  const int64_t sao2_row = signals.dim(0) - 1;
  for (int64_t t = 0; t < signals.dim(1); ++t)
    if (std::abs(signals.at2(sao2_row, t)) > 0.5f)
      throw ValidationError("prepared: SaO2 exceeds 0.5 in magnitude");
  for (int64_t s = valid_seconds; s < pad_seconds; ++s)
    if (bin_labels_1hz[static_cast<size_t>(s)] != bins::OutputBin::ignore)
      throw ValidationError("prepared: padded region must be labeled ignore");
}

std::vector<int8_t> PreparedRecord::labels_200hz(io::Task task) const {
  std::vector<io::AnnotationInterval> ivs;
  for (const auto& iv : source_intervals)
    if (iv.task == task) ivs.push_back(iv);
  const int8_t def = task == io::Task::arousal ? io::kDefaultArousal
                     : task == io::Task::apnea ? io::kDefaultApnea
                                               : io::kDefaultSleep;
  return io::expand_intervals(task, ivs, source_duration_samples, def);
}

PreparedRecord prepare_record(const io::RawRecord& record, const PrepareOptions& opts) {
  record.validate(true);
  if (record.sample_rate != io::kRawSampleRate)
    throw ValidationError("prepare: expected a 200 Hz record");
  PreparedRecord out;
  out.source_id = record.record_id;
  out.pad_seconds = opts.pad_seconds;
  out.valid_seconds = (record.duration_samples + io::kRawSampleRate - 1) / io::kRawSampleRate;
  if (out.valid_seconds > opts.pad_seconds)
    throw ValidationError("prepare: record longer than the padded duration (" +
                          std::to_string(out.valid_seconds) + " s > " +
                          std::to_string(opts.pad_seconds) + " s); splitting is not supported");
  out.source_duration_samples = record.duration_samples;

  const auto kernel =
      design_antialias_fir(io::kRawSampleRate, opts.fir_cutoff_hz, opts.fir_num_taps);
  const auto& order = prepared_channel_order();
  out.signals = Tensor<float>::zeros({static_cast<int64_t>(order.size()), out.samples()});
  const int64_t window = opts.window_seconds * kPreparedRate;
  for (size_t row = 0; row < order.size(); ++row) {
    const auto& raw = record.channels.at(order[row]);
    auto decimated = filter_decimate(raw, kernel, kDecimation);
    std::vector<double> processed;
    if (order[row] == "SaO2") processed = scale_sao2(decimated);
    else if (opts.moving_normalization) processed = moving_normalize(decimated, window);
    else processed = std::move(decimated);
    float* dst = out.signals.row(static_cast<int64_t>(row));
    for (size_t i = 0; i < processed.size(); ++i) dst[i] = static_cast<float>(processed[i]);
  }

  out.bin_labels_1hz.assign(static_cast<size_t>(out.pad_seconds), bins::OutputBin::ignore);
  for (int64_t s = 0; s < out.valid_seconds; ++s)
    out.bin_labels_1hz[static_cast<size_t>(s)] = second_bin(record, s);

  for (io::Task task : {io::Task::arousal, io::Task::apnea, io::Task::sleep}) {
    const int8_t def = task == io::Task::arousal ? io::kDefaultArousal
                       : task == io::Task::apnea ? io::kDefaultApnea
                                                 : io::kDefaultSleep;
    const auto& labels = task == io::Task::arousal ? record.arousal_labels
                         : task == io::Task::apnea ? record.apnea_labels
                                                   : record.sleep_labels;
    for (auto& iv : io::labels_to_intervals(task, labels, def))
      out.source_intervals.push_back(iv);
  }

  out.validate();
  return out;
}

PreparedRecord read_prepared(const std::filesystem::path& dir) {
  PreparedRecord out;
  const auto entries = io::read_manifest(dir / "manifest", "sleepdet-record v1");
  bool prepared_flag = false;
  std::vector<std::string> channel_names;
  for (const auto& [k, v] : entries) {
    if (k == "prepared") prepared_flag = v == "true";
    else if (k == "source_id") out.source_id = v;
    else if (k == "pad_seconds") out.pad_seconds = std::stoll(v);
    else if (k == "valid_seconds") out.valid_seconds = std::stoll(v);
    else if (k == "source_duration_samples") out.source_duration_samples = std::stoll(v);
    else if (k == "channel") channel_names.push_back(v);
  }
  if (!prepared_flag)
    throw FormatError(dir.string() + " does not hold a prepared record");
  if (channel_names != prepared_channel_order())
    throw FormatError("prepared record channel list is not the standard 12-channel order");

  out.signals = Tensor<float>::zeros({static_cast<int64_t>(channel_names.size()), out.samples()});
  for (size_t row = 0; row < channel_names.size(); ++row) {
    auto data = io::read_f32_file(dir / (channel_names[row] + ".f32"), out.samples());
    std::copy(data.begin(), data.end(), out.signals.row(static_cast<int64_t>(row)));
  }
  {
    std::ifstream in(dir / "bins.u8", std::ios::binary);
    if (!in) throw FormatError("missing bins.u8 in " + dir.string());
    std::vector<uint8_t> codes(static_cast<size_t>(out.pad_seconds));
    in.read(reinterpret_cast<char*>(codes.data()), out.pad_seconds);
    if (!in) throw IoError("short read on bins.u8");
    out.bin_labels_1hz.resize(codes.size());
    for (size_t i = 0; i < codes.size(); ++i) {
      switch (codes[i]) {
        case 0: out.bin_labels_1hz[i] = bins::OutputBin::ignore; break;
        case 1: out.bin_labels_1hz[i] = bins::OutputBin::wake; break;
        case 5: out.bin_labels_1hz[i] = bins::OutputBin::apnea_hypopnea; break;
        case 7: out.bin_labels_1hz[i] = bins::OutputBin::normal_sleep; break;
        case 10: out.bin_labels_1hz[i] = bins::OutputBin::target_arousal; break;
        default: throw FormatError("bins.u8 holds an unknown output bin code");
      }
    }
  }
  for (io::Task task : {io::Task::arousal, io::Task::apnea, io::Task::sleep}) {
    const auto file = dir / (std::string(io::task_name(task)) + ".intervals");
    for (auto& iv : io::read_interval_file(file, task)) out.source_intervals.push_back(iv);
  }
  out.validate();
  return out;
}

void write_prepared(const PreparedRecord& prepared, const std::filesystem::path& dir) {
  prepared.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::vector<std::pair<std::string, std::string>> entries;
  entries.emplace_back("prepared", "true");
  entries.emplace_back("source_id", prepared.source_id);
  entries.emplace_back("sample_rate", std::to_string(kPreparedRate));
  entries.emplace_back("pad_seconds", std::to_string(prepared.pad_seconds));
  entries.emplace_back("valid_seconds", std::to_string(prepared.valid_seconds));
  entries.emplace_back("source_duration_samples",
                       std::to_string(prepared.source_duration_samples));
  for (const auto& name : prepared_channel_order()) entries.emplace_back("channel", name);
  io::write_manifest(dir / "manifest", "sleepdet-record v1", entries);
  for (size_t row = 0; row < prepared_channel_order().size(); ++row)
    io::write_f32_file(dir / (prepared_channel_order()[row] + ".f32"),
                       prepared.signals.row(static_cast<int64_t>(row)), prepared.samples());
  {
    std::ofstream outf(dir / "bins.u8", std::ios::binary | std::ios::trunc);
    if (!outf) throw IoError("cannot write bins.u8");
    std::vector<uint8_t> codes(prepared.bin_labels_1hz.size());
    for (size_t i = 0; i < codes.size(); ++i)
      codes[i] = static_cast<uint8_t>(prepared.bin_labels_1hz[i]);
    outf.write(reinterpret_cast<const char*>(codes.data()),
               static_cast<std::streamsize>(codes.size()));
  }
  for (io::Task task : {io::Task::arousal, io::Task::apnea, io::Task::sleep}) {
    std::vector<io::AnnotationInterval> ivs;
    for (const auto& iv : prepared.source_intervals)
      if (iv.task == task) ivs.push_back(iv);
    io::write_interval_file(dir / (std::string(io::task_name(task)) + ".intervals"), ivs);
  }
}

}  // namespace sleepdet::dsp
