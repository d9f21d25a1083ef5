// SPDX-License-Identifier: Apache-2.0
#include "leafnet/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "leafnet/error.hpp"
#include "leafnet/layers.hpp"
#include "leafnet/random.hpp"

namespace leafnet {

TrainConfig TrainConfig::fine_tune() { return TrainConfig{}; }

TrainConfig TrainConfig::baseline() {
  TrainConfig c;
  c.max_epochs = 20;
  return c;
}

void TrainConfig::validate() const {
  require(val_fraction > 0.0 && val_fraction < 1.0, ErrorCode::InvalidArgument, "val_fraction must be in (0, 1)");
  require(batch_size >= 1, ErrorCode::InvalidArgument, "batch_size must be at least 1");
  require(prefetch_chunk >= 1, ErrorCode::InvalidArgument, "prefetch_chunk must be at least 1");
  require(early_stop_patience >= 1, ErrorCode::InvalidArgument, "early_stop_patience must be at least 1");
  require(plateau_patience >= 1, ErrorCode::InvalidArgument, "plateau_patience must be at least 1");
  require(plateau_factor > 0.0 && plateau_factor < 1.0, ErrorCode::InvalidArgument,
          "plateau_factor must be in (0, 1)");
  require(optimizer.base_lr >= 0.0, ErrorCode::InvalidArgument, "learning rate must be non-negative");
  require(cosine_lr_min >= 0.0 && cosine_lr_min <= optimizer.base_lr, ErrorCode::InvalidArgument,
          "cosine_lr_min must be in [0, lr]");
  require(lr_floor >= 0.0 && min_delta >= 0.0 && plateau_min_lr >= 0.0, ErrorCode::InvalidArgument,
          "floors and deltas must be non-negative");
  if (augment) augment->validate();
}

std::pair<Dataset, Dataset> split_train_val(const Dataset& data, double fraction, std::uint64_t seed) {
  require(!data.empty(), ErrorCode::EmptyDataset, "cannot split an empty dataset");
  require(fraction > 0.0 && fraction < 1.0, ErrorCode::InvalidArgument, "split fraction must be in (0, 1)");
  std::vector<std::vector<std::size_t>> by_class(data.class_count());
  for (std::size_t i = 0; i < data.size(); ++i) {
    require(data.samples[i].label < data.class_count(), ErrorCode::LabelOutOfRange, "label exceeds class count");
    by_class[data.samples[i].label].push_back(i);
  }

  std::vector<bool> held(data.size(), false);
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    auto& idx = by_class[k];
    if (idx.empty()) continue;
    require(idx.size() >= 2, ErrorCode::ClassTooSmall,
            "class '" + data.class_names[k] + "' needs at least 2 samples to split");
    Rng rng(derive_seed(seed, {0x53504c4954ULL, k}));
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    const auto n = static_cast<double>(idx.size());
    const auto hold = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(n * fraction)), 1,
                                              idx.size() - 1);
    for (std::size_t i = 0; i < hold; ++i) held[idx[i]] = true;
  }

  Dataset train_set, val_set;
  train_set.class_names = val_set.class_names = data.class_names;
  for (std::size_t i = 0; i < data.size(); ++i) (held[i] ? val_set : train_set).samples.push_back(data.samples[i]);
  return {std::move(train_set), std::move(val_set)};
}

namespace {

void check_labels(const ModelGraph& model, const Dataset& data) {
  for (const auto& s : data.samples) {
    require(s.label < model.class_count, ErrorCode::LabelOutOfRange,
            "label " + std::to_string(s.label) + " outside model's " + std::to_string(model.class_count) +
                " classes");
  }
}

std::size_t count_correct(const Tensor& probs, std::span<const std::size_t> labels) {
  const auto pred = argmax_rows(probs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
  return correct;
}

BatchOptions eval_options(const ModelGraph& model, std::size_t batch_size) {
  BatchOptions o;
  o.batch_size = batch_size;
  o.shuffle = false;
  o.dtype = model.dtype;
  return o;
}

}  // namespace

Tensor predict(ModelGraph& model, const Dataset& data, std::size_t batch_size) {
  require(model.has_head(), ErrorCode::InvalidArgument, "prediction needs a classification head");
  require(!data.empty(), ErrorCode::EmptyDataset, "cannot predict on an empty dataset");
  NoGradGuard no_grad;
  const std::size_t k = model.class_count;
  std::vector<double> all;
  all.reserve(data.size() * k);
  BatchStream stream(data, eval_options(model, batch_size));
  while (auto b = stream.next()) {
    const auto v = model.forward(b->images, Mode::Infer).to_vector();
    all.insert(all.end(), v.begin(), v.end());
  }
  return Tensor::from_values({data.size(), k}, all, model.dtype);
}

LossAccuracy evaluate_loss(ModelGraph& model, const Dataset& data, std::size_t batch_size) {
  require(!data.empty(), ErrorCode::EmptyDataset, "cannot evaluate on an empty dataset");
  check_labels(model, data);
  NoGradGuard no_grad;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  BatchStream stream(data, eval_options(model, batch_size));
  while (auto b = stream.next()) {
    const Tensor probs = model.forward(b->images, Mode::Infer);
    loss_sum += cross_entropy_loss(probs, b->labels).item() * static_cast<double>(b->labels.size());
    correct += count_correct(probs, b->labels);
  }
  const auto n = static_cast<double>(data.size());
  return {loss_sum / n, static_cast<double>(correct) / n};
}

EvalReport evaluate(ModelGraph& model, const Dataset& data, ReportMetadata meta, std::size_t batch_size) {
  check_labels(model, data);
  const Tensor probs = predict(model, data, batch_size);
  std::vector<std::size_t> labels;
  for (const auto& s : data.samples) labels.push_back(s.label);
  auto names = data.class_names;
  names.resize(model.class_count);
  for (std::size_t k = data.class_names.size(); k < names.size(); ++k) names[k] = std::to_string(k);
  const auto cm = ConfusionMatrix::from_predictions(labels, argmax_rows(probs), model.class_count, names);
  // AUC is undefined when the evaluation set holds a single class.
  std::size_t present = 0;
  for (auto s : cm.supports()) present += s > 0;
  return build_report(cm, present >= 2 ? probs : Tensor(), labels, std::move(meta));
}

TrainResult train(ModelGraph& model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                  const TrainHooks& hooks) {
  cfg.validate();
  require(model.has_head(), ErrorCode::InvalidArgument, "training needs a classification head");
  require(!train_set.empty(), ErrorCode::EmptyDataset, "training set is empty");
  require(!val_set.empty(), ErrorCode::EmptyDataset, "validation set is empty");
  check_labels(model, train_set);
  check_labels(model, val_set);

  TrainResult result;
  if (cfg.max_epochs == 0) return result;

  const std::size_t batches_per_epoch = (train_set.size() + cfg.batch_size - 1) / cfg.batch_size;
  const CosineSchedule cosine{cfg.optimizer.base_lr, cfg.cosine_lr_min,
                              cfg.cosine_steps ? cfg.cosine_steps : cfg.max_epochs * batches_per_epoch};
  PlateauReducer plateau(cfg.plateau_factor, cfg.plateau_patience, cfg.plateau_min_lr, cfg.min_delta);
  double plateau_lr = cfg.optimizer.base_lr;  // tracked in absolute terms, applied as a multiplier
  Optimizer opt(cfg.optimizer);

  auto effective_lr = [&](std::size_t step) {
    const double base = cfg.cosine ? cosine_lr(cosine, step) : cfg.optimizer.base_lr;
    const double mult = cfg.optimizer.base_lr > 0.0 ? plateau_lr / cfg.optimizer.base_lr : 1.0;
    return std::max(base * mult, cfg.lr_floor);
  };

  double best = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_state;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = effective_lr(result.steps);

    BatchOptions bo;
    bo.batch_size = cfg.batch_size;
    bo.shuffle = cfg.shuffle;
    bo.seed = cfg.seed;
    bo.epoch = epoch - 1;
    bo.augment = cfg.augment;
    bo.dtype = model.dtype;
    bo.prefetch_chunk = cfg.prefetch_chunk;

    double loss_sum = 0.0;
    std::size_t seen = 0, correct = 0;
    BatchStream stream(train_set, bo);
    while (auto b = stream.next()) {
      // Train-mode batch norm cannot normalize a single sample.
      if (b->labels.size() < 2) {
        rec.events.push_back("skip_singleton_batch");
        continue;
      }
      const Tensor probs = model.forward(b->images, Mode::Train);
      const Tensor loss = cross_entropy_loss(probs, b->labels);
      const double lv = loss.item();
      if (!std::isfinite(lv)) {
        Tape::current().clear();
        throw Error(ErrorCode::NonFiniteLoss, "non-finite training loss at epoch " + std::to_string(epoch) +
                                                  ", step " + std::to_string(result.steps));
      }
      loss_sum += lv * static_cast<double>(b->labels.size());
      seen += b->labels.size();
      correct += count_correct(probs, b->labels);
      if (loss.requires_grad()) {
        backward(loss);
        opt.set_lr(effective_lr(result.steps));
        opt.apply_step(model);
      }
      ++result.steps;
    }
    rec.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    rec.train_acc = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;

    const auto val = evaluate_loss(model, val_set, cfg.batch_size);
    rec.measured_val_loss = val.loss;
    rec.val_acc = val.accuracy;
    rec.val_loss = hooks.after_validation ? hooks.after_validation(epoch, val.loss) : val.loss;
    require(std::isfinite(rec.val_loss), ErrorCode::NonFiniteLoss,
            "non-finite validation loss at epoch " + std::to_string(epoch));

    // Callbacks: checkpoint -> plateau -> early stop.
    if (rec.val_loss < best - cfg.min_delta) {
      best = rec.val_loss;
      result.best_epoch = epoch;
      result.best_val_loss = rec.val_loss;
      best_state = model.snapshot();
      result.best_checkpoint = make_checkpoint(model, &opt, epoch, rec.val_loss);
      if (!cfg.checkpoint_path.empty()) save_checkpoint(*result.best_checkpoint, cfg.checkpoint_path);
      rec.events.push_back("checkpoint");
    }
    if (cfg.plateau) {
      plateau_lr = plateau.update(rec.val_loss, plateau_lr);
      // The reducer resets its counter both on improvement and when it fires.
      if (plateau.wait() == 0 && result.best_epoch != epoch) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "plateau_reduce:%.6g", plateau_lr);
        rec.events.emplace_back(buf);
      }
    }
    bool stop = false;
    if (cfg.early_stopping && epoch - result.best_epoch >= cfg.early_stop_patience) {
      stop = true;
      rec.events.push_back("early_stop");
    }

    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(rec);
    if (hooks.on_epoch_end) hooks.on_epoch_end(rec);
    if (stop) {
      result.stopped_early = true;
      break;
    }
  }

  if (cfg.restore_best && !best_state.empty() && result.best_epoch != result.history.back().epoch) {
    model.restore(best_state);
    result.restored_best = true;
    result.history.back().events.push_back("restore_best:" + std::to_string(result.best_epoch));
  }
  return result;
}

TrainResult train(ModelGraph& model, const Dataset& data, const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  require(!data.empty(), ErrorCode::EmptyDataset, "dataset is empty");
  auto [train_set, val_set] = split_train_val(data, cfg.val_fraction, cfg.seed);
  return train(model, train_set, val_set, cfg, hooks);
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream out;
  out << "epoch,train_loss,train_acc,val_loss,val_acc,lr\n";
  char buf[256];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss, r.train_acc,
                  r.val_loss, r.val_acc, r.lr);
    out << buf;
  }
  return out.str();
}

void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::IoFailure, "cannot write " + path.string());
  out << history_csv(history);
  require(static_cast<bool>(out), ErrorCode::IoFailure, "write failed: " + path.string());
}

}  // namespace leafnet
