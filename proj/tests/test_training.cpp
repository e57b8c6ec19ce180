#include <filesystem>
#include <set>

#include "doctest.h"
#include "sleepdet/synth.hpp"
#include "sleepdet/training.hpp"

using namespace sleepdet;
using namespace sleepdet::train;

namespace fs = std::filesystem;

TEST_CASE("reference cohort folds have the documented sizes") {
  auto folds = make_folds(994, 42);
  for (const auto& f : folds) {
    CHECK(f.training.size() == 794);
    CHECK(f.validation.size() == 100);
    CHECK(f.testing.size() == 100);
  }
  // Consistent testing records across folds.
  for (int k = 1; k < 4; ++k) CHECK(folds[static_cast<size_t>(k)].testing == folds[0].testing);
}

TEST_CASE("folds are disjoint and exhaustive at every size") {
  for (int n : {10, 20, 994, 537}) {
    for (uint64_t seed : {1ULL, 7ULL}) {
      auto folds = make_folds(n, seed);
      for (const auto& f : folds) {
        std::set<int> all;
        for (const auto* part : {&f.training, &f.validation, &f.testing})
          for (int idx : *part) {
            CHECK(idx >= 0);
            CHECK(idx < n);
            CHECK(all.insert(idx).second);  // no overlap
          }
        CHECK(static_cast<int>(all.size()) == n);  // exhaustive
      }
    }
  }
}

TEST_CASE("desk-scale folds split 20 records into 16/2/2") {
  auto folds = make_folds(20, 3);
  CHECK(folds[0].training.size() == 16);
  CHECK(folds[0].validation.size() == 2);
  CHECK(folds[0].testing.size() == 2);
}

TEST_CASE("fold construction is deterministic and size-guarded") {
  auto a = make_folds(100, 5);
  auto b = make_folds(100, 5);
  auto c = make_folds(100, 6);
  CHECK(a[0].training == b[0].training);
  CHECK(a[0].training != c[0].training);
  CHECK_THROWS_AS(make_folds(9, 1), ValidationError);
}

TEST_CASE("adam with zero gradients leaves parameters unchanged") {
  auto cfg = net::ModelConfig::desk_scale(8, 4);
  auto params = net::DrcnnParams<float>::init(cfg, 9);
  auto before = params;
  Adam adam(params);
  std::vector<Tensor<float>> grads(params.entries.size());
  for (size_t i = 0; i < params.entries.size(); ++i)
    if (params.entries[i].learnable)
      grads[i] = Tensor<float>::zeros(params.entries[i].tensor.shape);
  adam.step(params, grads);
  for (size_t i = 0; i < params.entries.size(); ++i)
    CHECK(params.entries[i].tensor.data == before.entries[i].tensor.data);
}

namespace {

fs::path make_dataset(const char* tag, int n_records, int64_t duration_s, uint64_t seed) {
  const auto root = fs::temp_directory_path() / (std::string("sleepdet_train_") + tag);
  fs::remove_all(root);
  fs::create_directories(root);
  dsp::PrepareOptions opts;
  opts.pad_seconds = duration_s;
  for (int r = 0; r < n_records; ++r) {
    const uint64_t rs = seed + static_cast<uint64_t>(r);
    auto plan = io::make_default_plan(rs, duration_s);
    auto rec = io::generate_synthetic(rs, duration_s, plan);
    char name[32];
    std::snprintf(name, sizeof name, "r%03d", r);
    dsp::write_prepared(dsp::prepare_record(rec, opts), root / name);
  }
  return root;
}

}  // namespace

TEST_CASE("training is deterministic, learns, and checkpoints reproducibly") {
  const auto data_dir = make_dataset("det", 10, 300, 500);
  auto data = load_prepared_dir(data_dir);
  REQUIRE(data.records.size() == 10);
  auto folds = make_folds(10, 11);

  auto cfg = net::ModelConfig::desk_scale(8, 4);
  TrainOptions opts;
  opts.records_per_epoch = 4;
  opts.max_epochs = 3;
  opts.seed = 77;

  // Identical seeds give identical parameter trajectories.
  Trainer t1(cfg, opts, data, folds[0]);
  Trainer t2(cfg, opts, data, folds[0]);
  for (int e = 0; e < 2; ++e) {
    const double l1 = t1.train_epoch();
    const double l2 = t2.train_epoch();
    CHECK(l1 == l2);
  }
  for (size_t i = 0; i < t1.params().entries.size(); ++i)
    CHECK(t1.params().entries[i].tensor.data == t2.params().entries[i].tensor.data);

  // Loss on the sampled records decreases over continued training.
  Trainer t3(cfg, opts, data, folds[0]);
  double first = 0, last = 0;
  for (int e = 0; e < 12; ++e) {
    const double l = t3.train_epoch();
    if (e == 0) first = l;
    last = l;
  }
  CHECK(last < first);

  // Checkpoint reload reproduces validation scores bit for bit.
  const auto ckpt_root = fs::temp_directory_path() / "sleepdet_train_ckpt";
  fs::remove_all(ckpt_root);
  net::save_checkpoint(t3.config(), t3.params(), ckpt_root / "best");
  auto scores = evaluate_pooled(t3.config(), t3.params(), data, folds[0].validation, true);
  auto [cfg2, params2] = net::load_checkpoint(ckpt_root / "best");
  auto scores2 = evaluate_pooled(cfg2, params2, data, folds[0].validation, true);
  CHECK(scores.arousal.auprc == scores2.arousal.auprc);
  CHECK(scores.arousal.auroc == scores2.arousal.auroc);
  CHECK(scores.apnea.auprc == scores2.apnea.auprc);
  CHECK(scores.sleep.auroc == scores2.sleep.auroc);
}

TEST_CASE("run() checkpoints the first validation and stops on patience") {
  const auto data_dir = make_dataset("run", 10, 240, 900);
  auto data = load_prepared_dir(data_dir);
  auto folds = make_folds(10, 21);
  auto cfg = net::ModelConfig::desk_scale(8, 4);
  TrainOptions opts;
  opts.records_per_epoch = 2;
  opts.max_epochs = 4;
  opts.patience = 2;
  opts.seed = 31;
  const auto ckpt = fs::temp_directory_path() / "sleepdet_train_run";
  fs::remove_all(ckpt);
  Trainer t(cfg, opts, data, folds[0]);
  auto result = t.run(ckpt);
  REQUIRE(!result.log.empty());
  CHECK(result.log.front().checkpointed);  // best starts at zero
  CHECK(fs::exists(ckpt / "best" / "manifest"));
  CHECK(result.epochs_run <= opts.max_epochs);
}

TEST_CASE("ensemble of identical members reproduces the member metrics") {
  const auto data_dir = make_dataset("ens", 10, 240, 1200);
  auto data = load_prepared_dir(data_dir);
  auto folds = make_folds(10, 5);
  auto cfg = net::ModelConfig::desk_scale(8, 4);
  auto params = net::DrcnnParams<float>::init(cfg, 55);

  std::vector<int> idx = folds[0].validation;
  std::vector<PredictionTrack> single;
  for (int i : idx) single.push_back(predict_record(cfg, params, data.records[static_cast<size_t>(i)]));
  std::vector<PredictionTrack> ensembled;
  for (size_t k = 0; k < single.size(); ++k)
    ensembled.push_back(ensemble_mean({single[k], single[k], single[k], single[k]}));
  for (size_t k = 0; k < single.size(); ++k)
    CHECK(ensembled[k].probs.data == single[k].probs.data);

  auto s1 = evaluate_predictions(single, data, idx, true);
  auto s2 = evaluate_predictions(ensembled, data, idx, true);
  CHECK(s1.arousal.auprc == s2.arousal.auprc);
  CHECK(s1.sleep.auroc == s2.sleep.auroc);
}
