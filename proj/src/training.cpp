#include "sleepdet/training.hpp"

#include <algorithm>
#include <cmath>

#include "sleepdet/metrics.hpp"

namespace sleepdet::train {

Adam::Adam(const net::DrcnnParams<float>& params, AdamConfig cfg) : cfg_(cfg) {
  m_.resize(params.entries.size());
  v_.resize(params.entries.size());
  for (size_t i = 0; i < params.entries.size(); ++i) {
    if (!params.entries[i].learnable) continue;
    m_[i] = Tensor<float>::zeros(params.entries[i].tensor.shape);
    v_[i] = Tensor<float>::zeros(params.entries[i].tensor.shape);
  }
}

void Adam::step(net::DrcnnParams<float>& params, std::vector<Tensor<float>>& grads) {
  if (grads.size() != params.entries.size())
    throw ValidationError("adam: gradient list misaligned with parameters");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params.entries.size(); ++i) {
    auto& e = params.entries[i];
    if (!e.learnable) continue;
    auto& grad = grads[i];
    if (grad.data.empty()) continue;  // parameter unused this step
    if (!grad.same_shape(e.tensor)) throw ValidationError("adam: gradient shape mismatch");
    for (int64_t k = 0; k < e.tensor.numel(); ++k) {
      const double g = static_cast<double>(grad.data[static_cast<size_t>(k)]);
      double m = static_cast<double>(m_[i].data[static_cast<size_t>(k)]);
      double v = static_cast<double>(v_[i].data[static_cast<size_t>(k)]);
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
      m_[i].data[static_cast<size_t>(k)] = static_cast<float>(m);
      v_[i].data[static_cast<size_t>(k)] = static_cast<float>(v);
      const double update = cfg_.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
      e.tensor.data[static_cast<size_t>(k)] =
          static_cast<float>(static_cast<double>(e.tensor.data[static_cast<size_t>(k)]) - update);
    }
    std::fill(grad.data.begin(), grad.data.end(), 0.0f);
  }
}

TrainingSet load_prepared_dir(const std::filesystem::path& dir) {
  TrainingSet set;
  std::vector<std::filesystem::path> dirs;
  std::error_code ec;
  for (const auto& entry : std::filesystem::directory_iterator(dir, ec))
    if (entry.is_directory() && std::filesystem::exists(entry.path() / "manifest"))
      dirs.push_back(entry.path());
  if (ec) throw IoError("cannot list " + dir.string() + ": " + ec.message());
  if (dirs.empty()) throw ValidationError("no prepared records under " + dir.string());
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) set.records.push_back(dsp::read_prepared(d));
  return set;
}

PredictionTrack predict_record(const net::ModelConfig& config,
                               net::DrcnnParams<float>& params,
                               const dsp::PreparedRecord& record) {
  net::Drcnn<float> model(config, params);
  ad::Graph<float> g(/*recording=*/false);
  auto probs = model.forward(g, record.signals, ad::Mode::eval);
  PredictionTrack track;
  track.source_id = record.source_id;
  track.seconds = probs->value.dim(1);
  track.valid_seconds = record.valid_seconds;
  track.probs = probs->value;
  return track;
}

namespace {

TaskScores score_track(const eval::ScoredTrack& track) {
  TaskScores s;
  try {
    s.auprc = eval::auprc(track);
  } catch (const ValidationError&) {
  }
  try {
    s.auroc = eval::auroc(track);
  } catch (const ValidationError&) {
  }
  return s;
}

void append_track(eval::ScoredTrack& pooled, const eval::ScoredTrack& one) {
  const bool had_mask = !pooled.valid.empty() || !one.valid.empty();
  if (had_mask && pooled.valid.empty())
    pooled.valid.assign(pooled.scores.size(), 1);
  pooled.scores.insert(pooled.scores.end(), one.scores.begin(), one.scores.end());
  pooled.labels.insert(pooled.labels.end(), one.labels.begin(), one.labels.end());
  if (had_mask) {
    if (one.valid.empty()) pooled.valid.insert(pooled.valid.end(), one.scores.size(), 1);
    else pooled.valid.insert(pooled.valid.end(), one.valid.begin(), one.valid.end());
  }
}

}  // namespace

ValidationScores evaluate_predictions(const std::vector<PredictionTrack>& tracks,
                                      const TrainingSet& data,
                                      const std::vector<int>& indices, bool mask_nontarget) {
  if (tracks.size() != indices.size())
    throw ValidationError("evaluate: one prediction per record index required");
  eval::ScoredTrack arousal, apnea, sleep;
  for (size_t i = 0; i < indices.size(); ++i) {
    const auto& rec = data.records[static_cast<size_t>(indices[i])];
    const auto arousal_labels = rec.labels_200hz(io::Task::arousal);
    const auto apnea_labels = rec.labels_200hz(io::Task::apnea);
    const auto sleep_labels = rec.labels_200hz(io::Task::sleep);
    append_track(arousal, eval::challenge_arousal_track(tracks[i].arousal_marginal(),
                                                        arousal_labels, mask_nontarget));
    append_track(apnea, eval::challenge_apnea_track(tracks[i].apnea_marginal(), apnea_labels));
    append_track(sleep, eval::challenge_sleep_track(tracks[i].sleep_marginal(), sleep_labels));
  }
  ValidationScores out;
  out.arousal = score_track(arousal);
  out.apnea = score_track(apnea);
  out.sleep = score_track(sleep);
  return out;
}

ValidationScores evaluate_pooled(const net::ModelConfig& config,
                                 net::DrcnnParams<float>& params, const TrainingSet& data,
                                 const std::vector<int>& indices, bool mask_nontarget) {
  std::vector<PredictionTrack> tracks;
  tracks.reserve(indices.size());
  for (int idx : indices)
    tracks.push_back(predict_record(config, params, data.records[static_cast<size_t>(idx)]));
  return evaluate_predictions(tracks, data, indices, mask_nontarget);
}

Trainer::Trainer(const net::ModelConfig& config, const TrainOptions& opts,
                 const TrainingSet& data, const FoldPlan& fold)
    : config_(config),
      opts_(opts),
      data_(data),
      fold_(fold),
      params_(net::DrcnnParams<float>::init(config, opts.seed)),
      grads_(params_.entries.size()),
      adam_(params_, opts.adam),
      sample_rng_(opts.seed ^ 0x7261696eULL) {
  config_.validate();
  if (fold_.training.empty() || fold_.validation.empty())
    throw ValidationError("trainer: fold has empty splits");
  for (int idx : fold_.training)
    if (idx < 0 || idx >= static_cast<int>(data_.records.size()))
      throw ValidationError("trainer: fold index outside the dataset");
  if (!config_.multi_task) opts_.loss_weights = {opts_.loss_weights.arousal, 0.0, 0.0};
}

double Trainer::train_epoch() {
  net::Drcnn<float> model(config_, params_);
  std::uniform_int_distribution<size_t> pick(0, fold_.training.size() - 1);
  double loss_sum = 0;
  for (int r = 0; r < opts_.records_per_epoch; ++r) {
    const int idx = fold_.training[pick(sample_rng_)];
    const auto& rec = data_.records[static_cast<size_t>(idx)];
    ad::Graph<float> g;
    auto bp = model.bind(g, &grads_);
    auto probs = model.forward_bound(g, bp, g.input(rec.signals), ad::Mode::train);
    bins::LossBreakdown bd;
    auto loss = bins::multitask_loss(g, probs, rec.bin_labels_1hz, opts_.loss_weights, &bd);
    const double value = static_cast<double>(loss->value.data[0]);
    if (!std::isfinite(value))
      throw NumericalError("training diverged: non-finite loss on record " + rec.source_id +
                           " in epoch " + std::to_string(epoch_ + 1));
    loss_sum += value;
    g.backward(loss);
    adam_.step(params_, grads_);
  }
  ++epoch_;
  return loss_sum / static_cast<double>(opts_.records_per_epoch);
}

ValidationScores Trainer::validate() {
  return evaluate_pooled(config_, params_, data_, fold_.validation, opts_.mask_nontarget_eval);
}

TrainResult Trainer::run(const std::filesystem::path& checkpoint_dir) {
  TrainResult result;
  double best_ap = 0;  // first validation always checkpoints
  double best_auroc = 0;
  int since_improvement = 0;
  for (int e = 0; e < opts_.max_epochs; ++e) {
    EpochLog log;
    log.epoch = e + 1;
    log.mean_loss = train_epoch();
    log.val = validate();
    const double ap = std::isnan(log.val.arousal.auprc) ? 0.0 : log.val.arousal.auprc;
    if (ap > best_ap) {
      best_ap = ap;
      since_improvement = 0;
      log.checkpointed = true;
      result.best_epoch = log.epoch;
      result.best_arousal_auprc = ap;
      result.best_scores = log.val;
      net::save_checkpoint(config_, params_, checkpoint_dir / "best");
    } else {
      ++since_improvement;
    }
    if (opts_.checkpoint_on_auroc_too && !std::isnan(log.val.arousal.auroc) &&
        log.val.arousal.auroc > best_auroc) {
      best_auroc = log.val.arousal.auroc;
      net::save_checkpoint(config_, params_, checkpoint_dir / "best_auroc");
    }
    result.log.push_back(log);
    result.epochs_run = log.epoch;
    if (since_improvement >= opts_.patience) break;
  }
  return result;
}

}  // namespace sleepdet::train
