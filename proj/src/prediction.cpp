#include "sleepdet/prediction.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "sleepdet/errors.hpp"

namespace sleepdet {

void PredictionTrack::validate() const {
  if (seconds <= 0 || valid_seconds < 0 || valid_seconds > seconds)
    throw ValidationError("prediction: inconsistent durations");
  if (probs.rank() != 2 || probs.dim(0) != 4 || probs.dim(1) != seconds)
    throw ValidationError("prediction: probabilities must be 4 x seconds");
  if (!probs.all_finite()) throw NumericalError("prediction: non-finite probabilities");
}

namespace {

std::vector<float> channel_sum(const Tensor<float>& p, std::initializer_list<int64_t> rows) {
  std::vector<float> out(static_cast<size_t>(p.dim(1)), 0.0f);
  for (int64_t r : rows) {
    const float* row = p.row(r);
    for (size_t t = 0; t < out.size(); ++t) out[t] += row[t];
  }
  return out;
}

}  // namespace

std::vector<float> PredictionTrack::arousal_marginal() const { return channel_sum(probs, {3}); }
std::vector<float> PredictionTrack::apnea_marginal() const { return channel_sum(probs, {1}); }
std::vector<float> PredictionTrack::sleep_marginal() const {
  return channel_sum(probs, {1, 2, 3});
}
std::vector<float> PredictionTrack::wake_marginal() const { return channel_sum(probs, {0}); }

PredictionTrack ensemble_mean(const std::vector<PredictionTrack>& members) {
  if (members.empty()) throw ValidationError("ensemble: no member predictions");
  for (const auto& m : members) {
    m.validate();
    if (m.seconds != members[0].seconds)
      throw ValidationError("ensemble: member prediction lengths differ");
  }
  PredictionTrack out = members[0];
  const double inv = 1.0 / static_cast<double>(members.size());
  for (int64_t i = 0; i < out.probs.numel(); ++i) {
    double s = 0;
    for (const auto& m : members) s += static_cast<double>(m.probs.data[static_cast<size_t>(i)]);
    out.probs.data[static_cast<size_t>(i)] = static_cast<float>(s * inv);
  }
  for (int64_t t = 0; t < out.seconds; ++t) {
    double col = 0;
    for (int64_t c = 0; c < 4; ++c) col += static_cast<double>(out.probs.at2(c, t));
    if (std::abs(col - 1.0) > 1e-6)
      for (int64_t c = 0; c < 4; ++c)
        out.probs.at2(c, t) = static_cast<float>(static_cast<double>(out.probs.at2(c, t)) / col);
  }
  return out;
}

void write_prediction(const PredictionTrack& track, const std::filesystem::path& file) {
  track.validate();
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + file.string() + " for writing");
  out << "sleepdet-pred v1\n";
  out << "source " << track.source_id << "\n";
  out << "seconds " << track.seconds << "\n";
  out << "valid_seconds " << track.valid_seconds << "\n";
  out << "channels 4\n";
  out << "data\n";
  out.write(reinterpret_cast<const char*>(track.probs.data.data()),
            static_cast<std::streamsize>(track.probs.data.size() * 4));
  if (!out) throw IoError("short write on " + file.string());
}

PredictionTrack read_prediction(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("missing prediction file " + file.string());
  std::string line;
  if (!std::getline(in, line) || line != "sleepdet-pred v1")
    throw FormatError(file.string() + " is not a prediction file");
  PredictionTrack track;
  while (std::getline(in, line)) {
    if (line == "data") break;
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "source") ss >> track.source_id;
    else if (key == "seconds") ss >> track.seconds;
    else if (key == "valid_seconds") ss >> track.valid_seconds;
    else if (key == "channels") {
      int ch = 0;
      ss >> ch;
      if (ch != 4) throw FormatError("prediction: expected 4 channels");
    } else {
      throw FormatError("prediction: unknown header line '" + line + "'");
    }
  }
  track.probs = Tensor<float>::zeros({4, track.seconds});
  in.read(reinterpret_cast<char*>(track.probs.data.data()),
          static_cast<std::streamsize>(track.probs.data.size() * 4));
  if (!in) throw IoError("short read on " + file.string());
  track.validate();
  return track;
}

}  // namespace sleepdet
