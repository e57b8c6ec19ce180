#include "sleepdet/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace sleepdet::cli {

namespace fs = std::filesystem;
using nlohmann::json;

void RunConfig::validate() const {
  if (n_records < 10) throw ValidationError("run config: need at least 10 records");
  if (record_duration_s < 120)
    throw ValidationError("run config: records must be at least 120 s long");
  if (pad_seconds < record_duration_s)
    throw ValidationError("run config: pad_seconds shorter than the records");
  if (records_per_epoch < 1 || max_epochs < 1 || patience < 1)
    throw ValidationError("run config: training counts must be positive");
  if (folds.empty()) throw ValidationError("run config: no folds requested");
  for (int f : folds)
    if (f < 1 || f > 4) throw ValidationError("run config: folds are numbered 1..4");
  model.validate();
}

std::string run_config_to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["n_records"] = c.n_records;
  j["record_duration_s"] = c.record_duration_s;
  j["pad_seconds"] = c.pad_seconds;
  j["records_per_epoch"] = c.records_per_epoch;
  j["max_epochs"] = c.max_epochs;
  j["patience"] = c.patience;
  j["checkpoint_on_auroc_too"] = c.checkpoint_on_auroc_too;
  j["mask_nontarget_eval"] = c.mask_nontarget_eval;
  j["folds"] = c.folds;
  j["apnea_threshold"] = c.apnea_threshold;
  j["arousal_threshold"] = c.arousal_threshold;
  j["sleep_threshold"] = c.sleep_threshold;
  j["model"] = json::parse(net::config_to_json(c.model));
  return j.dump(2);
}

RunConfig run_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("run config: ") + e.what());
  }
  RunConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.n_records = j.value("n_records", c.n_records);
    c.record_duration_s = j.value("record_duration_s", c.record_duration_s);
    c.pad_seconds = j.value("pad_seconds", c.pad_seconds);
    c.records_per_epoch = j.value("records_per_epoch", c.records_per_epoch);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.checkpoint_on_auroc_too = j.value("checkpoint_on_auroc_too", c.checkpoint_on_auroc_too);
    c.mask_nontarget_eval = j.value("mask_nontarget_eval", c.mask_nontarget_eval);
    c.folds = j.value("folds", c.folds);
    c.apnea_threshold = j.value("apnea_threshold", c.apnea_threshold);
    c.arousal_threshold = j.value("arousal_threshold", c.arousal_threshold);
    c.sleep_threshold = j.value("sleep_threshold", c.sleep_threshold);
    if (j.contains("model")) c.model = net::config_from_json(j["model"].dump());
  } catch (const json::type_error& e) {
    throw FormatError(std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw FormatError("missing config file " + file.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return run_config_from_json(text);
}

void write_resolved_config(const RunConfig& config, const fs::path& out_dir) {
  std::ofstream out(out_dir / "resolved_config.json", std::ios::trunc);
  if (!out) throw IoError("cannot write resolved_config.json");
  out << run_config_to_json(config) << "\n";
}

void require_fresh(const fs::path& path, bool force) {
  if (!fs::exists(path)) return;
  if (!force)
    throw ValidationError(path.string() +
                          " already exists; pass --force to overwrite");
  fs::remove_all(path);
}

uint64_t split_seed(uint64_t root, uint64_t stream, uint64_t index) {
  uint64_t z = root + 0x9e3779b97f4a7c15ULL * (stream * 0x10001ULL + index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

std::string record_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "r%03d", i);
  return buf;
}

constexpr uint64_t kSynthStream = 1;
constexpr uint64_t kFoldStream = 2;
constexpr uint64_t kTrainStream = 3;

}  // namespace

void stage_synth(const RunConfig& config, const fs::path& out_dir, bool force) {
  config.validate();
  require_fresh(out_dir, force);
  fs::create_directories(out_dir);
  for (int i = 0; i < config.n_records; ++i) {
    const uint64_t rs = split_seed(config.seed, kSynthStream, static_cast<uint64_t>(i));
    auto plan = io::make_default_plan(rs, config.record_duration_s);
    auto rec = io::generate_synthetic(rs, config.record_duration_s, plan);
    rec.record_id = record_name(i);
    io::write_record(rec, out_dir / record_name(i));
  }
  write_resolved_config(config, out_dir);
}

void stage_prepare(const RunConfig& config, const fs::path& raw_dir, const fs::path& out_dir,
                   bool force, int workers) {
  config.validate();
  require_fresh(out_dir, force);
  fs::create_directories(out_dir);
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(raw_dir))
    if (entry.is_directory() && fs::exists(entry.path() / "manifest"))
      dirs.push_back(entry.path());
  if (dirs.empty()) throw ValidationError("no records under " + raw_dir.string());
  std::sort(dirs.begin(), dirs.end());

  dsp::PrepareOptions opts;
  opts.pad_seconds = config.pad_seconds;
  opts.moving_normalization = config.model.use_moving_normalization;

  const auto work = [&](size_t begin, size_t stride) {
    for (size_t i = begin; i < dirs.size(); i += stride) {
      auto rec = io::read_record(dirs[i]);
      dsp::write_prepared(dsp::prepare_record(rec, opts), out_dir / dirs[i].filename());
    }
  };
  workers = std::max(1, std::min<int>(workers, static_cast<int>(dirs.size())));
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back(work, static_cast<size_t>(w), static_cast<size_t>(workers));
    for (auto& t : pool) t.join();
  }
  write_resolved_config(config, out_dir);
}

namespace {

double or_nan_to_zero(double v) { return std::isnan(v) ? 0.0 : v; }

json scores_to_json(const train::ValidationScores& s) {
  const auto num = [](double v) { return std::isnan(v) ? json() : json(v); };
  return json{{"arousal_auroc", num(s.arousal.auroc)}, {"arousal_auprc", num(s.arousal.auprc)},
              {"apnea_auroc", num(s.apnea.auroc)},     {"apnea_auprc", num(s.apnea.auprc)},
              {"sleep_auroc", num(s.sleep.auroc)},     {"sleep_auprc", num(s.sleep.auprc)}};
}

void write_progress_log(const fs::path& file, const train::TrainResult& result) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  for (const auto& log : result.log) {
    json j = scores_to_json(log.val);
    j["epoch"] = log.epoch;
    j["mean_loss"] = log.mean_loss;
    j["checkpointed"] = log.checkpointed;
    out << j.dump() << "\n";
  }
}

}  // namespace

FoldOutcome stage_train_fold(const RunConfig& config, const train::TrainingSet& data,
                             int fold_number, const fs::path& out_dir, bool force) {
  config.validate();
  if (fold_number < 1 || fold_number > 4)
    throw ValidationError("train: fold must be in 1..4");
  require_fresh(out_dir, force);
  fs::create_directories(out_dir);

  const auto folds =
      train::make_folds(static_cast<int>(data.records.size()),
                        split_seed(config.seed, kFoldStream));
  train::TrainOptions opts;
  opts.records_per_epoch = config.records_per_epoch;
  opts.max_epochs = config.max_epochs;
  opts.patience = config.patience;
  opts.seed = split_seed(config.seed, kTrainStream, static_cast<uint64_t>(fold_number));
  opts.checkpoint_on_auroc_too = config.checkpoint_on_auroc_too;
  opts.mask_nontarget_eval = config.mask_nontarget_eval;

  train::Trainer trainer(config.model, opts, data, folds[static_cast<size_t>(fold_number - 1)]);
  FoldOutcome outcome;
  outcome.fold_number = fold_number;
  outcome.result = trainer.run(out_dir);
  outcome.checkpoint = out_dir / "best";
  write_progress_log(out_dir / "progress.jsonl", outcome.result);
  write_resolved_config(config, out_dir);
  if (outcome.result.best_epoch < 0)
    throw NumericalError("training never produced a validation improvement");
  return outcome;
}

namespace {

TruthTracks truth_tracks_from_labels(const std::vector<int8_t>& sleep,
                                     const std::vector<int8_t>& apnea,
                                     const std::vector<int8_t>& arousal, int64_t n) {
  TruthTracks t;
  t.seconds = (n + io::kRawSampleRate - 1) / io::kRawSampleRate;
  t.sleep.resize(static_cast<size_t>(t.seconds));
  t.apnea.resize(static_cast<size_t>(t.seconds));
  t.arousal.resize(static_cast<size_t>(t.seconds));
  for (int64_t s = 0; s < t.seconds; ++s) {
    const int64_t center = std::min(s * 200 + 100, n - 1);
    t.sleep[static_cast<size_t>(s)] = sleep[static_cast<size_t>(center)] == 1;
    t.apnea[static_cast<size_t>(s)] = apnea[static_cast<size_t>(center)] == 1;
    bool any = false;
    for (int64_t i = s * 200; i < std::min((s + 1) * 200, n); ++i)
      any = any || arousal[static_cast<size_t>(i)] == 1;
    t.arousal[static_cast<size_t>(s)] = any;
  }
  return t;
}

}  // namespace

TruthTracks truth_tracks(const dsp::PreparedRecord& record) {
  return truth_tracks_from_labels(record.labels_200hz(io::Task::sleep),
                                  record.labels_200hz(io::Task::apnea),
                                  record.labels_200hz(io::Task::arousal),
                                  record.source_duration_samples);
}

TruthTracks truth_tracks(const io::RawRecord& record) {
  return truth_tracks_from_labels(record.sleep_labels, record.apnea_labels,
                                  record.arousal_labels, record.duration_samples);
}

report::ClinicalSummary summary_from_prediction(const RunConfig& config,
                                                const PredictionTrack& track) {
  const int64_t n = track.valid_seconds;
  auto clip = [n](std::vector<float> v) {
    v.resize(static_cast<size_t>(n));
    return v;
  };
  const auto sleep = report::binarize(clip(track.sleep_marginal()), config.sleep_threshold);
  const auto arousal =
      report::binarize(clip(track.arousal_marginal()), config.arousal_threshold);
  const auto apnea = report::binarize(clip(track.apnea_marginal()), config.apnea_threshold);
  return report::compute_summary(sleep, arousal, apnea, static_cast<double>(n));
}

report::ClinicalSummary summary_from_truth(const TruthTracks& truth) {
  return report::compute_summary(truth.sleep, truth.arousal, truth.apnea,
                                 static_cast<double>(truth.seconds));
}

std::string format_scores_block(const std::string& title, const train::ValidationScores& s) {
  char buf[256];
  std::string out = title + "\n";
  const auto line = [&](const char* task, const train::TaskScores& ts) {
    std::snprintf(buf, sizeof buf, "  %-22s AUROC %8.4f   AUPRC %8.4f\n", task, ts.auroc,
                  ts.auprc);
    out += buf;
  };
  line("target arousal", s.arousal);
  line("apnea-hypopnea/normal", s.apnea);
  line("sleep/wake", s.sleep);
  return out;
}

std::string scores_jsonl(const std::string& tag, const train::ValidationScores& s) {
  json j = scores_to_json(s);
  j["tag"] = tag;
  return j.dump();
}

EndToEndResult end_to_end(const RunConfig& config, const fs::path& out_root, bool force) {
  config.validate();
  require_fresh(out_root, force);
  fs::create_directories(out_root);
  write_resolved_config(config, out_root);

  stage_synth(config, out_root / "records", false);
  stage_prepare(config, out_root / "records", out_root / "prepared", false);
  auto data = train::load_prepared_dir(out_root / "prepared");

  EndToEndResult result;
  result.out_root = out_root;
  for (int fold : config.folds)
    result.folds.push_back(stage_train_fold(
        config, data, fold, out_root / ("fold" + std::to_string(fold)), false));

  // Ensemble the fold-best models over the consistent testing records.
  const auto folds = train::make_folds(static_cast<int>(data.records.size()),
                                       split_seed(config.seed, kFoldStream));
  const auto& testing = folds[0].testing;
  std::vector<std::pair<net::ModelConfig, net::DrcnnParams<float>>> members;
  for (const auto& fo : result.folds) members.push_back(net::load_checkpoint(fo.checkpoint));

  fs::create_directories(out_root / "ensemble");
  std::vector<PredictionTrack> ensemble_tracks;
  std::vector<report::ClinicalSummary> predicted, actual;
  for (int idx : testing) {
    const auto& rec = data.records[static_cast<size_t>(idx)];
    std::vector<PredictionTrack> tracks;
    for (auto& [mc, mp] : members) tracks.push_back(train::predict_record(mc, mp, rec));
    auto ens = ensemble_mean(tracks);
    write_prediction(ens, out_root / "ensemble" / (rec.source_id + ".pred"));
    predicted.push_back(summary_from_prediction(config, ens));
    actual.push_back(summary_from_truth(truth_tracks(rec)));
    ensemble_tracks.push_back(std::move(ens));
  }
  result.ensemble_test_scores =
      train::evaluate_predictions(ensemble_tracks, data, testing, config.mask_nontarget_eval);
  result.clinical = report::cohort_stats(predicted, actual);

  // Reports: per-fold validation scores, ensemble test scores, clinical.
  {
    std::ofstream txt(out_root / "metrics.txt", std::ios::trunc);
    std::ofstream jsonl(out_root / "metrics.jsonl", std::ios::trunc);
    if (!txt || !jsonl) throw IoError("cannot write metric reports");
    for (const auto& fo : result.folds) {
      const std::string tag = "fold" + std::to_string(fo.fold_number) + "_validation_best";
      txt << format_scores_block("Fold " + std::to_string(fo.fold_number) +
                                     " best validation scores",
                                 fo.result.best_scores);
      jsonl << scores_jsonl(tag, fo.result.best_scores) << "\n";
    }
    txt << format_scores_block("Ensemble on the consistent testing records",
                               result.ensemble_test_scores);
    jsonl << scores_jsonl("ensemble_test", result.ensemble_test_scores) << "\n";
  }
  {
    std::ofstream txt(out_root / "clinical_report.txt", std::ios::trunc);
    if (!txt) throw IoError("cannot write clinical report");
    txt << report::format_cohort_report(result.clinical);
  }
  return result;
}

std::vector<AblationRow> run_ablation_suite(const RunConfig& config,
                                            const std::vector<int>& experiments,
                                            const fs::path& out_root, bool force) {
  config.validate();
  require_fresh(out_root, force);
  fs::create_directories(out_root);
  write_resolved_config(config, out_root);

  stage_synth(config, out_root / "records", false);
  // Exp. 6 removes the moving normalization at the preprocessing stage, so
  // two prepared datasets may be needed.
  std::optional<train::TrainingSet> normalized, unnormalized;
  const auto dataset_for = [&](const net::ModelConfig& mc) -> train::TrainingSet& {
    auto& slot = mc.use_moving_normalization ? normalized : unnormalized;
    if (!slot) {
      RunConfig pc = config;
      pc.model = mc;
      const auto dir =
          out_root / (mc.use_moving_normalization ? "prepared" : "prepared_unnormalized");
      stage_prepare(pc, out_root / "records", dir, false);
      slot = train::load_prepared_dir(dir);
    }
    return *slot;
  };

  std::vector<AblationRow> rows;
  for (int e : experiments) {
    AblationRow row;
    row.experiment = e;
    try {
      row.description = net::ablation_description(e);
      const net::ModelConfig mc = net::apply_ablation(config.model, e);
      RunConfig rc = config;
      rc.model = mc;
      auto& data = dataset_for(mc);
      const auto dir = out_root / ("exp" + std::to_string(e));
      auto outcome = stage_train_fold(rc, data, 1, dir, false);
      row.validation = outcome.result.best_scores;

      const auto folds = train::make_folds(static_cast<int>(data.records.size()),
                                           split_seed(config.seed, kFoldStream));
      auto [mc2, params2] = net::load_checkpoint(outcome.checkpoint);
      row.testing = train::evaluate_pooled(mc2, params2, data, folds[0].testing,
                                           config.mask_nontarget_eval);
      row.aux_valid = mc.multi_task;
      row.ok = true;
    } catch (const std::exception& ex) {
      row.ok = false;
      row.error = ex.what();
    }
    rows.push_back(std::move(row));
  }

  std::ofstream val_txt(out_root / "ablation_validation.txt", std::ios::trunc);
  std::ofstream test_txt(out_root / "ablation_testing.txt", std::ios::trunc);
  std::ofstream jsonl(out_root / "ablation.jsonl", std::ios::trunc);
  if (!val_txt || !test_txt || !jsonl) throw IoError("cannot write ablation reports");
  val_txt << format_ablation_table(rows, true);
  test_txt << format_ablation_table(rows, false);
  for (const auto& row : rows) {
    json j;
    j["experiment"] = row.experiment;
    j["description"] = row.description;
    j["ok"] = row.ok;
    if (!row.ok) j["error"] = row.error;
    j["aux_valid"] = row.aux_valid;
    j["validation"] = json::parse(scores_jsonl("v", row.validation));
    j["testing"] = json::parse(scores_jsonl("t", row.testing));
    jsonl << j.dump() << "\n";
  }
  return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows,
                                  bool validation_split) {
  std::ostringstream out;
  out << (validation_split ? "Ablation results, fold-1 validation records\n"
                           : "Ablation results, consistent testing records\n");
  out << "Exp   Arousal-AUROC Arousal-AUPRC Apnea-AUROC Apnea-AUPRC Sleep-AUROC "
         "Sleep-AUPRC\n";
  char buf[256];
  for (const auto& row : rows) {
    if (!row.ok) {
      std::snprintf(buf, sizeof buf, "%-5d failed: %s\n", row.experiment, row.error.c_str());
      out << buf;
      continue;
    }
    const auto& s = validation_split ? row.validation : row.testing;
    const auto cell = [&](double v, bool valid) {
      static char c[32];
      if (!valid) std::snprintf(c, sizeof c, "%11s", "n/a");
      else std::snprintf(c, sizeof c, "%11.3f", or_nan_to_zero(v));
      return std::string(c);
    };
    std::snprintf(buf, sizeof buf, "%-5d %s %s %s %s %s %s\n", row.experiment,
                  cell(s.arousal.auroc, true).c_str(), cell(s.arousal.auprc, true).c_str(),
                  cell(s.apnea.auroc, row.aux_valid).c_str(),
                  cell(s.apnea.auprc, row.aux_valid).c_str(),
                  cell(s.sleep.auroc, row.aux_valid).c_str(),
                  cell(s.sleep.auprc, row.aux_valid).c_str());
    out << buf;
  }
  return out.str();
}

}  // namespace sleepdet::cli
