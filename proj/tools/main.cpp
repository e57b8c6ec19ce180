#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "sleepdet/metrics.hpp"
#include "sleepdet/pipeline.hpp"
#include "sleepdet/selftest.hpp"

using namespace sleepdet;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Every command drops the parameters it actually ran with next to its
// outputs, so any stage can be rerun from the artifact directory alone.
void write_command_config(const fs::path& dir, const json& resolved) {
  std::ofstream out(dir / "resolved_config.json", std::ios::trunc);
  if (!out) throw IoError("cannot write resolved_config.json");
  out << resolved.dump(2) << "\n";
}

cli::RunConfig config_from_option(const std::string& config_file) {
  return config_file.empty() ? cli::RunConfig::desk_default()
                             : cli::load_run_config(config_file);
}

struct EvalRow {
  std::string task;
  double auroc, auprc;
};

std::vector<EvalRow> evaluate_one(const PredictionTrack& pred,
                                  const std::vector<int8_t>& arousal,
                                  const std::vector<int8_t>& apnea,
                                  const std::vector<int8_t>& sleep, bool mask_nontarget) {
  const auto score = [](const eval::ScoredTrack& t) {
    EvalRow row{"", std::nan(""), std::nan("")};
    try {
      row.auroc = eval::auroc(t);
    } catch (const ValidationError&) {
    }
    try {
      row.auprc = eval::auprc(t);
    } catch (const ValidationError&) {
    }
    return row;
  };
  auto r1 = score(eval::challenge_arousal_track(pred.arousal_marginal(), arousal, mask_nontarget));
  r1.task = "arousal";
  auto r2 = score(eval::challenge_apnea_track(pred.apnea_marginal(), apnea));
  r2.task = "apnea";
  auto r3 = score(eval::challenge_sleep_track(pred.sleep_marginal(), sleep));
  r3.task = "sleep";
  return {r1, r2, r3};
}

void load_labels(const fs::path& record_dir, std::vector<int8_t>& arousal,
                 std::vector<int8_t>& apnea, std::vector<int8_t>& sleep) {
  // Works on both raw and prepared containers.
  const auto entries = io::read_manifest(record_dir / "manifest", "sleepdet-record v1");
  bool prepared = false;
  for (const auto& [k, v] : entries)
    if (k == "prepared" && v == "true") prepared = true;
  if (prepared) {
    auto rec = dsp::read_prepared(record_dir);
    arousal = rec.labels_200hz(io::Task::arousal);
    apnea = rec.labels_200hz(io::Task::apnea);
    sleep = rec.labels_200hz(io::Task::sleep);
  } else {
    auto rec = io::read_record(record_dir);
    arousal = rec.arousal_labels;
    apnea = rec.apnea_labels;
    sleep = rec.sleep_labels;
  }
}

int dispatch(CLI::App& app, int argc, char** argv, std::function<void()>& action) {
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    action();
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sleep disorder detection pipeline: synthesis, preprocessing, training, "
               "ensembling, scoring and clinical reporting"};
  app.require_subcommand(1);
  std::function<void()> action;

  // synth ---------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "Generate synthetic full-montage records");
  {
    static uint64_t seed = 1;
    static int64_t duration = 1200;
    static int count = 1;
    static std::string out, plan_file;
    static bool force = false;
    synth->add_option("--seed", seed, "Root seed")->required();
    synth->add_option("--duration", duration, "Record duration in seconds")->required();
    synth->add_option("--out", out, "Output directory")->required();
    synth->add_option("--plan", plan_file, "Event plan file (task start end value lines)");
    synth->add_option("--count", count, "Number of records (default 1)");
    synth->add_flag("--force", force, "Overwrite existing outputs");
    synth->callback([&] {
      action = [&] {
        if (count < 1) throw ValidationError("synth: count must be positive");
        if (count > 1 && !plan_file.empty())
          throw ValidationError("synth: an explicit plan implies a single record");
        cli::require_fresh(out, force);
        fs::create_directories(out);
        for (int i = 0; i < count; ++i) {
          const uint64_t rs = count == 1 ? seed : cli::split_seed(seed, 1, static_cast<uint64_t>(i));
          const auto plan = plan_file.empty() ? io::make_default_plan(rs, duration)
                                              : io::read_plan(plan_file);
          auto rec = io::generate_synthetic(rs, duration, plan);
          char name[16];
          std::snprintf(name, sizeof name, "r%03d", i);
          rec.record_id = name;
          io::write_record(rec, count == 1 ? fs::path(out) : fs::path(out) / name);
          std::printf("wrote %s (%lld s)\n",
                      (count == 1 ? out : out + "/" + name).c_str(),
                      static_cast<long long>(duration));
        }
        write_command_config(out, json{{"command", "synth"},
                                       {"seed", seed},
                                       {"duration_s", duration},
                                       {"count", count},
                                       {"plan", plan_file}});
      };
    });
  }

  // prepare -------------------------------------------------------------
  auto* prepare = app.add_subcommand("prepare", "Preprocess raw records for the model");
  {
    static std::string in, out;
    static int workers = 1;
    static int64_t pad_s = dsp::kFullNightSeconds;
    static bool no_normalize = false, force = false;
    prepare->add_option("--in", in, "Directory of raw records")->required();
    prepare->add_option("--out", out, "Output directory")->required();
    prepare->add_option("--workers", workers, "Worker threads");
    prepare->add_option("--pad-s", pad_s, "Padded duration in seconds (default 7 h)");
    prepare->add_flag("--no-normalize", no_normalize, "Skip moving-window normalization");
    prepare->add_flag("--force", force, "Overwrite existing outputs");
    prepare->callback([&] {
      action = [&] {
        cli::require_fresh(out, force);
        fs::create_directories(out);
        dsp::PrepareOptions opts;
        opts.pad_seconds = pad_s;
        opts.moving_normalization = !no_normalize;
        std::vector<fs::path> dirs;
        if (fs::exists(fs::path(in) / "manifest")) {
          dirs.push_back(in);
        } else {
          for (const auto& entry : fs::directory_iterator(in))
            if (entry.is_directory() && fs::exists(entry.path() / "manifest"))
              dirs.push_back(entry.path());
          std::sort(dirs.begin(), dirs.end());
        }
        if (dirs.empty()) throw ValidationError("prepare: no records under " + in);
        const int n_workers = std::max(1, std::min<int>(workers, static_cast<int>(dirs.size())));
        const auto work = [&](size_t begin, size_t stride) {
          for (size_t i = begin; i < dirs.size(); i += stride) {
            auto rec = io::read_record(dirs[i]);
            dsp::write_prepared(dsp::prepare_record(rec, opts), fs::path(out) / dirs[i].filename());
          }
        };
        if (n_workers == 1) {
          work(0, 1);
        } else {
          std::vector<std::thread> pool;
          for (int w = 0; w < n_workers; ++w)
            pool.emplace_back(work, static_cast<size_t>(w), static_cast<size_t>(n_workers));
          for (auto& t : pool) t.join();
        }
        std::printf("prepared %zu records into %s\n", dirs.size(), out.c_str());
        write_command_config(out, json{{"command", "prepare"},
                                       {"in", in},
                                       {"pad_seconds", pad_s},
                                       {"moving_normalization", !no_normalize},
                                       {"workers", n_workers}});
      };
    });
  }

  // train ----------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "Train one cross-validation fold");
  {
    static std::string data, config_file, out;
    static int fold = 1;
    static uint64_t seed = 0;
    static bool have_seed = false, force = false;
    train_cmd->add_option("--data", data, "Prepared record directory")->required();
    train_cmd->add_option("--fold", fold, "Fold number 1..4")->required();
    train_cmd->add_option("--seed", seed, "Root seed (overrides the config)")
        ->each([&](const std::string&) { have_seed = true; });
    train_cmd->add_option("--config", config_file, "Run configuration JSON");
    train_cmd->add_option("--out", out, "Output directory")->required();
    train_cmd->add_flag("--force", force, "Overwrite existing outputs");
    train_cmd->callback([&] {
      action = [&] {
        cli::RunConfig config = config_from_option(config_file);
        if (have_seed) config.seed = seed;
        auto dataset = train::load_prepared_dir(data);
        auto outcome = cli::stage_train_fold(config, dataset, fold, out, force);
        std::printf("fold %d: best epoch %d, validation arousal AUPRC %.4f\n",
                    outcome.fold_number, outcome.result.best_epoch,
                    outcome.result.best_arousal_auprc);
        std::fputs(
            cli::format_scores_block("best validation scores", outcome.result.best_scores)
                .c_str(),
            stdout);
      };
    });
  }

  // predict ---------------------------------------------------------------
  auto* predict = app.add_subcommand("predict", "Run one checkpoint over a prepared record");
  {
    static std::string model, record, out;
    predict->add_option("--model", model, "Checkpoint directory")->required();
    predict->add_option("--record", record, "Prepared record directory")->required();
    predict->add_option("--out", out, "Prediction file")->required();
    predict->callback([&] {
      action = [&] {
        auto [config, params] = net::load_checkpoint(model);
        auto rec = dsp::read_prepared(record);
        write_prediction(train::predict_record(config, params, rec), out);
        std::printf("wrote %s\n", out.c_str());
      };
    });
  }

  // ensemble ----------------------------------------------------------------
  auto* ensemble = app.add_subcommand("ensemble", "Average several checkpoints on one record");
  {
    static std::vector<std::string> models;
    static std::string record, out;
    ensemble->add_option("--models", models, "Checkpoint directories (expects 4)")
        ->required()
        ->expected(1, 8);
    ensemble->add_option("--record", record, "Prepared record directory")->required();
    ensemble->add_option("--out", out, "Prediction file")->required();
    ensemble->callback([&] {
      action = [&] {
        auto rec = dsp::read_prepared(record);
        std::vector<PredictionTrack> tracks;
        for (const auto& m : models) {
          auto [config, params] = net::load_checkpoint(m);
          tracks.push_back(train::predict_record(config, params, rec));
        }
        write_prediction(ensemble_mean(tracks), out);
        std::printf("wrote %s (mean of %zu members)\n", out.c_str(), tracks.size());
      };
    });
  }

  // evaluate ----------------------------------------------------------------
  auto* evaluate = app.add_subcommand("evaluate", "Score a prediction against a record");
  {
    static std::string pred, record, out_file;
    static bool mask = true;
    evaluate->add_option("--pred", pred, "Prediction file")->required();
    evaluate->add_option("--record", record, "Record directory (raw or prepared)")->required();
    evaluate->add_flag("--mask-nontarget,!--no-mask-nontarget", mask,
                       "Exclude non-target arousal samples from arousal scoring (default on)");
    evaluate->add_option("--out", out_file, "Also write a JSON-lines report here");
    evaluate->callback([&] {
      action = [&] {
        auto track = read_prediction(pred);
        std::vector<int8_t> arousal, apnea, sleep;
        load_labels(record, arousal, apnea, sleep);
        auto rows = evaluate_one(track, arousal, apnea, sleep, mask);
        for (const auto& r : rows)
          std::printf("%-8s AUROC %8.4f   AUPRC %8.4f\n", r.task.c_str(), r.auroc, r.auprc);
        if (!out_file.empty()) {
          std::ofstream jf(out_file, std::ios::trunc);
          if (!jf) throw IoError("cannot write " + out_file);
          for (const auto& r : rows) {
            json j{{"task", r.task},
                   {"auroc", std::isnan(r.auroc) ? json() : json(r.auroc)},
                   {"auprc", std::isnan(r.auprc) ? json() : json(r.auprc)},
                   {"masked_nontarget", mask}};
            jf << j.dump() << "\n";
          }
        }
      };
    });
  }

  // report ----------------------------------------------------------------
  auto* report_cmd = app.add_subcommand("report", "Clinical summary comparison over a cohort");
  {
    static std::string pred_dir, truth_dir, out_file;
    static double apnea_thr = report::kApneaThreshold;
    static double arousal_thr = report::kArousalThreshold;
    static double sleep_thr = report::kSleepThreshold;
    report_cmd->add_option("--pred", pred_dir, "Directory of .pred files")->required();
    report_cmd->add_option("--truth", truth_dir, "Directory of truth records")->required();
    report_cmd->add_option("--out", out_file, "Report file")->required();
    report_cmd->add_option("--apnea-threshold", apnea_thr, "Apnea probability threshold");
    report_cmd->add_option("--arousal-threshold", arousal_thr, "Arousal probability threshold");
    report_cmd->add_option("--sleep-threshold", sleep_thr, "Sleep probability threshold");
    report_cmd->callback([&] {
      action = [&] {
        cli::RunConfig rc = cli::RunConfig::desk_default();
        rc.apnea_threshold = apnea_thr;
        rc.arousal_threshold = arousal_thr;
        rc.sleep_threshold = sleep_thr;
        std::vector<fs::path> preds;
        for (const auto& entry : fs::directory_iterator(pred_dir))
          if (entry.path().extension() == ".pred") preds.push_back(entry.path());
        if (preds.empty()) throw ValidationError("report: no .pred files under " + pred_dir);
        std::sort(preds.begin(), preds.end());
        std::vector<report::ClinicalSummary> predicted, actual;
        std::ofstream jf(out_file + ".jsonl", std::ios::trunc);
        for (const auto& p : preds) {
          auto track = read_prediction(p);
          const auto rec_dir = fs::path(truth_dir) / p.stem();
          if (!fs::exists(rec_dir / "manifest"))
            throw ValidationError("report: no truth record for " + p.stem().string());
          cli::TruthTracks truth;
          const auto entries = io::read_manifest(rec_dir / "manifest", "sleepdet-record v1");
          bool is_prepared = false;
          for (const auto& [k, v] : entries)
            if (k == "prepared" && v == "true") is_prepared = true;
          if (is_prepared) truth = cli::truth_tracks(dsp::read_prepared(rec_dir));
          else truth = cli::truth_tracks(io::read_record(rec_dir));
          predicted.push_back(cli::summary_from_prediction(rc, track));
          actual.push_back(cli::summary_from_truth(truth));
          const auto& ps = predicted.back();
          const auto& as = actual.back();
          json j{{"record", p.stem().string()},
                 {"predicted", {{"se", ps.se}, {"ai", ps.ai}, {"ahi", ps.ahi},
                                {"grade", report::grade_name(ps.grade)}}},
                 {"actual", {{"se", as.se}, {"ai", as.ai}, {"ahi", as.ahi},
                             {"grade", report::grade_name(as.grade)}}}};
          jf << j.dump() << "\n";
        }
        auto stats = report::cohort_stats(predicted, actual);
        std::ofstream out(out_file, std::ios::trunc);
        if (!out) throw IoError("cannot write " + out_file);
        out << report::format_cohort_report(stats);
        std::printf("%s", report::format_cohort_report(stats).c_str());
      };
    });
  }

  // ablate ----------------------------------------------------------------
  auto* ablate = app.add_subcommand("ablate", "Run the ablation experiment suite on fold 1");
  {
    static std::string config_file, out;
    static std::vector<int> experiments = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    static bool force = false;
    ablate->add_option("--config", config_file, "Run configuration JSON");
    ablate->add_option("--out", out, "Output directory")->required();
    ablate->add_option("--experiments", experiments, "Experiment numbers (default all ten)");
    ablate->add_flag("--force", force, "Overwrite existing outputs");
    ablate->callback([&] {
      action = [&] {
        auto config = config_from_option(config_file);
        auto rows = cli::run_ablation_suite(config, experiments, out, force);
        std::fputs(cli::format_ablation_table(rows, true).c_str(), stdout);
        std::fputs(cli::format_ablation_table(rows, false).c_str(), stdout);
      };
    });
  }

  // run ----------------------------------------------------------------
  auto* run_cmd = app.add_subcommand("run", "Full pipeline: synth, prepare, train, ensemble, report");
  {
    static std::string config_file, out;
    static bool force = false;
    run_cmd->add_option("--config", config_file, "Run configuration JSON");
    run_cmd->add_option("--out", out, "Output directory")->required();
    run_cmd->add_flag("--force", force, "Overwrite existing outputs");
    run_cmd->callback([&] {
      action = [&] {
        auto config = config_from_option(config_file);
        auto result = cli::end_to_end(config, out, force);
        for (const auto& fo : result.folds)
          std::printf("fold %d: best epoch %d, validation arousal AUPRC %.4f\n",
                      fo.fold_number, fo.result.best_epoch, fo.result.best_arousal_auprc);
        std::fputs(cli::format_scores_block("ensemble on the consistent testing records",
                                            result.ensemble_test_scores)
                       .c_str(),
                   stdout);
        std::printf("artifacts under %s\n", out.c_str());
      };
    });
  }

  // selftest ----------------------------------------------------------------
  auto* selftest = app.add_subcommand("selftest", "Gradient checks for every operator");
  {
    static int shapes = 20;
    selftest->add_option("--shapes", shapes, "Random shapes per operator (default 20)");
    selftest->callback([&] {
      action = [&] {
        auto report = ad::run_gradient_selftest(20240501, shapes);
        std::fputs(ad::format_selftest(report).c_str(), stdout);
        if (!report.all_pass) throw NumericalError("gradient self-test failed");
      };
    });
  }

  return dispatch(app, argc, argv, action);
}
