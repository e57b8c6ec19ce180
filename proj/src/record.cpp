#include "sleepdet/record.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace sleepdet::io {

namespace fs = std::filesystem;

const std::vector<std::string> kStandardChannels = {
    "F3-M2", "F4-M1", "C3-M2", "C4-M1", "O1-M2", "O2-M1", "E1-M2",
    "Chin1-Chin2", "ABD", "CHEST", "AIRFLOW", "SaO2", "ECG"};

const char* task_name(Task t) {
  switch (t) {
    case Task::arousal:
      return "arousal";
    case Task::apnea:
      return "apnea";
    case Task::sleep:
      return "sleep";
  }
  return "?";
}

Task task_from_name(const std::string& name) {
  if (name == "arousal") return Task::arousal;
  if (name == "apnea") return Task::apnea;
  if (name == "sleep") return Task::sleep;
  throw FormatError("unknown annotation task: " + name);
}

namespace {

void check_label_value(Task task, int v) {
  const bool ok = task == Task::apnea ? (v == 0 || v == 1) : (v >= -1 && v <= 1);
  if (!ok)
    throw ValidationError(std::string("label value ") + std::to_string(v) +
                          " out of range for task " + task_name(task));
}

}  // namespace

void RawRecord::validate(bool require_standard_channels) const {
  if (record_id.empty()) throw ValidationError("record: empty record_id");
  if (duration_samples <= 0) throw ValidationError("record: empty record");
  if (channels.empty()) throw ValidationError("record: no channels");
  for (const auto& [name, signal] : channels) {
    if (static_cast<int64_t>(signal.size()) != duration_samples)
      throw ValidationError("record: channel " + name + " has " +
                            std::to_string(signal.size()) + " samples, expected " +
                            std::to_string(duration_samples));
    for (float v : signal)
      if (!std::isfinite(v))
        throw ValidationError("record: non-finite sample in channel " + name);
  }
  for (const auto* lv : {&arousal_labels, &apnea_labels, &sleep_labels})
    if (static_cast<int64_t>(lv->size()) != duration_samples)
      throw ValidationError("record: label vector length mismatch");
  for (int8_t v : arousal_labels) check_label_value(Task::arousal, v);
  for (int8_t v : apnea_labels) check_label_value(Task::apnea, v);
  for (int8_t v : sleep_labels) check_label_value(Task::sleep, v);
  if (require_standard_channels) {
    if (channels.size() != kStandardChannels.size())
      throw ValidationError("record: expected the 13 standard channels, got " +
                            std::to_string(channels.size()));
    for (const auto& name : kStandardChannels)
      if (!channels.count(name))
        throw ValidationError("record: missing standard channel " + name);
  }
}

std::vector<float> read_f32_file(const fs::path& file, int64_t expected_count) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("missing channel file " + file.string());
  in.seekg(0, std::ios::end);
  const int64_t bytes = static_cast<int64_t>(in.tellg());
  if (bytes != expected_count * 4)
    throw ValidationError("channel file " + file.string() + " holds " +
                          std::to_string(bytes / 4) + " samples, expected " +
                          std::to_string(expected_count));
  in.seekg(0);
  std::vector<float> out(static_cast<size_t>(expected_count));
  in.read(reinterpret_cast<char*>(out.data()), bytes);
  if (!in) throw IoError("short read on " + file.string());
  return out;
}

void write_f32_file(const fs::path& file, const float* data, int64_t count) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + file.string() + " for writing");
  out.write(reinterpret_cast<const char*>(data), count * 4);
  if (!out) throw IoError("short write on " + file.string());
}

std::vector<AnnotationInterval> read_interval_file(const fs::path& file, Task task) {
  std::vector<AnnotationInterval> out;
  std::ifstream in(file);
  if (!in) return out;  // absent file means no annotations for the task
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    AnnotationInterval iv{task, 0, 0, 0};
    if (!(ss >> iv.start_sample >> iv.end_sample >> iv.value))
      throw FormatError(file.string() + ":" + std::to_string(lineno) +
                        ": expected 'start end value'");
    out.push_back(iv);
  }
  return out;
}

void write_interval_file(const fs::path& file,
                         const std::vector<AnnotationInterval>& intervals) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw IoError("cannot open " + file.string() + " for writing");
  for (const auto& iv : intervals)
    out << iv.start_sample << " " << iv.end_sample << " " << iv.value << "\n";
  if (!out) throw IoError("short write on " + file.string());
}

std::vector<std::pair<std::string, std::string>> read_manifest(
    const fs::path& file, const std::string& expected_magic) {
  std::ifstream in(file);
  if (!in) throw FormatError("missing manifest at " + file.string());
  std::string line;
  if (!std::getline(in, line) || line != expected_magic)
    throw FormatError("manifest at " + file.string() + " is not '" + expected_magic + "'");
  std::vector<std::pair<std::string, std::string>> entries;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto space = line.find(' ');
    if (space == std::string::npos) throw FormatError("bad manifest line: " + line);
    entries.emplace_back(line.substr(0, space), line.substr(space + 1));
  }
  return entries;
}

void write_manifest(const fs::path& file, const std::string& magic,
                    const std::vector<std::pair<std::string, std::string>>& entries) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw IoError("cannot open " + file.string() + " for writing");
  out << magic << "\n";
  for (const auto& [k, v] : entries) out << k << " " << v << "\n";
  if (!out) throw IoError("short write on " + file.string());
}

std::vector<AnnotationInterval> labels_to_intervals(Task task,
                                                    const std::vector<int8_t>& labels,
                                                    int8_t default_value) {
  std::vector<AnnotationInterval> out;
  const int64_t n = static_cast<int64_t>(labels.size());
  int64_t i = 0;
  while (i < n) {
    const int8_t v = labels[static_cast<size_t>(i)];
    int64_t j = i + 1;
    while (j < n && labels[static_cast<size_t>(j)] == v) ++j;
    if (v != default_value) out.push_back({task, i, j, v});
    i = j;
  }
  return out;
}

std::vector<int8_t> expand_intervals(Task task,
                                     const std::vector<AnnotationInterval>& intervals,
                                     int64_t duration_samples, int8_t default_value) {
  std::vector<int8_t> out(static_cast<size_t>(duration_samples), default_value);
  int64_t prev_end = -1;
  for (const auto& iv : intervals) {
    if (iv.task != task) throw ValidationError("interval task mismatch");
    if (iv.start_sample < 0 || iv.end_sample > duration_samples ||
        iv.start_sample >= iv.end_sample)
      throw ValidationError("interval [" + std::to_string(iv.start_sample) + "," +
                            std::to_string(iv.end_sample) + ") out of bounds for task " +
                            task_name(task));
    if (iv.start_sample < prev_end)
      throw ValidationError(std::string("overlapping or unsorted intervals for task ") +
                            task_name(task));
    prev_end = iv.end_sample;
    check_label_value(task, iv.value);
    std::fill(out.begin() + iv.start_sample, out.begin() + iv.end_sample,
              static_cast<int8_t>(iv.value));
  }
  return out;
}

RawRecord read_record(const fs::path& dir) {
  RawRecord rec;
  const auto entries = read_manifest(dir / "manifest", "sleepdet-record v1");
  std::vector<std::string> channel_names;
  for (const auto& [k, v] : entries) {
    if (k == "record_id") rec.record_id = v;
    else if (k == "sample_rate") rec.sample_rate = std::stoi(v);
    else if (k == "duration_samples") rec.duration_samples = std::stoll(v);
    else if (k == "channel") channel_names.push_back(v);
    else if (k == "prepared" && v == "true")
      throw FormatError(dir.string() + " holds a prepared record, not a raw one");
  }
  if (channel_names.empty()) throw FormatError("manifest lists no channels");
  for (const auto& name : channel_names)
    rec.channels[name] = read_f32_file(dir / (name + ".f32"), rec.duration_samples);
  rec.arousal_labels =
      expand_intervals(Task::arousal, read_interval_file(dir / "arousal.intervals", Task::arousal),
                       rec.duration_samples, kDefaultArousal);
  rec.apnea_labels =
      expand_intervals(Task::apnea, read_interval_file(dir / "apnea.intervals", Task::apnea),
                       rec.duration_samples, kDefaultApnea);
  rec.sleep_labels =
      expand_intervals(Task::sleep, read_interval_file(dir / "sleep.intervals", Task::sleep),
                       rec.duration_samples, kDefaultSleep);
  rec.validate(false);
  return rec;
}

void write_record(const RawRecord& record, const fs::path& dir) {
  record.validate(false);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::vector<std::pair<std::string, std::string>> entries;
  entries.emplace_back("record_id", record.record_id);
  entries.emplace_back("sample_rate", std::to_string(record.sample_rate));
  entries.emplace_back("duration_samples", std::to_string(record.duration_samples));
  entries.emplace_back("prepared", "false");
  for (const auto& [name, _] : record.channels) entries.emplace_back("channel", name);
  write_manifest(dir / "manifest", "sleepdet-record v1", entries);
  for (const auto& [name, signal] : record.channels)
    write_f32_file(dir / (name + ".f32"), signal.data(), record.duration_samples);
  write_interval_file(dir / "arousal.intervals",
                      labels_to_intervals(Task::arousal, record.arousal_labels, kDefaultArousal));
  write_interval_file(dir / "apnea.intervals",
                      labels_to_intervals(Task::apnea, record.apnea_labels, kDefaultApnea));
  write_interval_file(dir / "sleep.intervals",
                      labels_to_intervals(Task::sleep, record.sleep_labels, kDefaultSleep));
}

}  // namespace sleepdet::io
