// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <set>

#include "leafnet/error.hpp"
#include "leafnet/train.hpp"
#include "test_util.hpp"

namespace leafnet {
namespace {

ModelGraph tiny_model(std::size_t classes, std::uint64_t seed = 1, std::vector<double> dropout = {0.3, 0.4}) {
  auto m = build_backbone(Preset::Mini, {3, 16, 16}, seed, DType::F64);
  HeadSpec h;
  h.classes = classes;
  h.dropout_rates = std::move(dropout);
  attach_head(m, h);
  return m;
}

TrainConfig quick_config() {
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.batch_size = 8;
  cfg.seed = 4;
  cfg.optimizer.base_lr = 1e-3;
  return cfg;
}

void for_each_norm(ModelGraph& m, const std::function<void(BatchNormState&)>& fn) {
  for (auto& spec : m.layers) {
    if (auto* bn = std::get_if<BatchNormLayer>(&spec.layer)) fn(bn->state);
    if (auto* r = std::get_if<ResidualLayer>(&spec.layer)) {
      for (auto& n : r->block.norms) fn(n);
      if (r->block.projection_norm) fn(*r->block.projection_norm);
    }
  }
}

TEST(Split, StratifiedEightyTwenty) {
  const auto data = synth_dataset(4, 100, 8, 8, 1);
  const auto [tr, va] = split_train_val(data, 0.2, 9);
  EXPECT_EQ(tr.class_counts(), (std::vector<std::size_t>{80, 80, 80, 80}));
  EXPECT_EQ(va.class_counts(), (std::vector<std::size_t>{20, 20, 20, 20}));
}

TEST(Split, DisjointCoveringAndDeterministic) {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    Dataset d;
    const std::size_t k = 2 + rng.below(4);
    for (std::size_t c = 0; c < k; ++c) d.class_names.push_back("c" + std::to_string(c));
    const std::size_t n = 20 + rng.below(40);
    for (std::size_t i = 0; i < n; ++i)
      d.samples.push_back({Tensor::zeros({3, 1, 1}), i % k, "s" + std::to_string(i)});
    const double frac = rng.uniform(0.1, 0.5);
    const auto [tr, va] = split_train_val(d, frac, trial);
    std::set<std::string> a, b, all;
    for (const auto& s : tr.samples) a.insert(s.id);
    for (const auto& s : va.samples) b.insert(s.id);
    for (const auto& s : d.samples) all.insert(s.id);
    for (const auto& id : a) EXPECT_EQ(b.count(id), 0u);
    std::set<std::string> uni = a;
    uni.insert(b.begin(), b.end());
    EXPECT_EQ(uni, all);
    const auto [tr2, va2] = split_train_val(d, frac, trial);
    ASSERT_EQ(va2.size(), va.size());
    for (std::size_t i = 0; i < va.size(); ++i) EXPECT_EQ(va.samples[i].id, va2.samples[i].id);
  }
}

TEST(Split, ClassTooSmall) {
  Dataset d;
  d.class_names = {"a", "b"};
  d.samples = {{Tensor::zeros({3, 1, 1}), 0, "0"}, {Tensor::zeros({3, 1, 1}), 0, "1"},
               {Tensor::zeros({3, 1, 1}), 1, "2"}};
  try {
    (void)split_train_val(d, 0.2, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ClassTooSmall);
  }
}

TEST(Train, ZeroEpochsLeavesModelUntouched) {
  auto m = tiny_model(3);
  const auto before = m.snapshot();
  auto cfg = quick_config();
  cfg.max_epochs = 0;
  const auto data = synth_dataset(3, 6, 16, 16, 1, {}, DType::F64);
  const auto r = train(m, data, cfg);
  EXPECT_TRUE(r.history.empty());
  EXPECT_EQ(r.best_epoch, 0u);
  const auto after = m.snapshot();
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(before[i].bitwise_equal(after[i]));
}

TEST(Train, ScriptedEarlyStopRestoresBestEpoch) {
  const std::vector<double> script{0.50, 0.40, 0.45, 0.46, 0.44, 0.41, 0.43};
  auto m = tiny_model(3);
  const auto data = synth_dataset(3, 8, 16, 16, 2, {}, DType::F64);
  const auto [tr, va] = split_train_val(data, 0.25, 1);
  auto cfg = quick_config();
  cfg.max_epochs = 20;
  cfg.early_stop_patience = 5;

  std::vector<std::vector<Tensor>> per_epoch;
  TrainHooks hooks;
  hooks.after_validation = [&](std::size_t epoch, double) { return script.at(epoch - 1); };
  hooks.on_epoch_end = [&](const EpochRecord&) { per_epoch.push_back(m.snapshot()); };
  const auto r = train(m, tr, va, cfg, hooks);

  ASSERT_EQ(r.history.size(), 7u);
  EXPECT_TRUE(r.stopped_early);
  EXPECT_TRUE(r.restored_best);
  EXPECT_EQ(r.best_epoch, 2u);
  EXPECT_EQ(r.best_val_loss, 0.40);
  const auto now = m.snapshot();
  for (std::size_t i = 0; i < now.size(); ++i) EXPECT_TRUE(now[i].bitwise_equal(per_epoch[1][i]));
  // The restored weights reproduce the loss measured at the best epoch.
  EXPECT_NEAR(evaluate_loss(m, va, cfg.batch_size).loss, r.history[1].measured_val_loss, 1e-12);

  // Callback actions in order: checkpoint on improvement, plateau after three
  // stale epochs, early stop at patience.
  EXPECT_EQ(r.history[0].events, (std::vector<std::string>{"checkpoint"}));
  EXPECT_EQ(r.history[1].events, (std::vector<std::string>{"checkpoint"}));
  EXPECT_EQ(r.history[4].events, (std::vector<std::string>{"plateau_reduce:0.0001"}));
  EXPECT_EQ(r.history[6].events, (std::vector<std::string>{"early_stop", "restore_best:2"}));
  for (std::size_t e = 2; e < 7; ++e) EXPECT_EQ(r.history[e].val_loss, script[e]);
}

TEST(Train, PlateauReductionScalesLaterRates) {
  auto m = tiny_model(3);
  const auto data = synth_dataset(3, 8, 16, 16, 2, {}, DType::F64);
  auto cfg = quick_config();
  cfg.max_epochs = 3;
  cfg.cosine = false;
  cfg.early_stopping = false;
  cfg.plateau_patience = 1;
  TrainHooks hooks;
  hooks.after_validation = [](std::size_t, double) { return 1.0; };
  const auto r = train(m, data, cfg, hooks);
  EXPECT_DOUBLE_EQ(r.history[0].lr, 1e-3);
  EXPECT_DOUBLE_EQ(r.history[1].lr, 1e-3);  // epoch 1 improved on +inf
  EXPECT_DOUBLE_EQ(r.history[2].lr, 1e-4);
}

TEST(Train, BatchCountAndSingletonSkip) {
  auto m = tiny_model(3);
  Dataset tr = synth_dataset(3, 4, 16, 16, 3, {}, DType::F64);
  tr.samples.resize(9);
  const Dataset va = synth_dataset(3, 4, 16, 16, 4, {}, DType::F64);
  auto cfg = quick_config();
  cfg.max_epochs = 1;
  cfg.batch_size = 4;  // 4 + 4 + 1
  const auto r = train(m, tr, va, cfg);
  EXPECT_EQ(r.steps, 2u);
  EXPECT_EQ(r.history[0].events.front(), "skip_singleton_batch");
}

TEST(Train, SameSeedSameHistory) {
  const auto data = synth_dataset(3, 8, 16, 16, 5, {}, DType::F64);
  auto cfg = quick_config();
  std::vector<EpochRecord> runs[2];
  for (auto& h : runs) {
    auto m = tiny_model(3, 7);
    h = train(m, data, cfg).history;
  }
  ASSERT_EQ(runs[0].size(), runs[1].size());
  for (std::size_t e = 0; e < runs[0].size(); ++e) {
    EXPECT_NEAR(runs[0][e].train_loss, runs[1][e].train_loss, 1e-12);
    EXPECT_NEAR(runs[0][e].val_loss, runs[1][e].val_loss, 1e-12);
  }
}

TEST(Train, ZeroRateWithoutDropoutKeepsLossConstant) {
  auto m = tiny_model(3, 1, {0.0, 0.0});
  for_each_norm(m, [](BatchNormState& s) { s.momentum = 0.0; });
  const auto data = synth_dataset(3, 6, 16, 16, 6, {}, DType::F64);
  auto cfg = quick_config();
  cfg.optimizer.base_lr = 0.0;
  cfg.lr_floor = 0.0;
  cfg.plateau_min_lr = 0.0;
  cfg.shuffle = false;
  cfg.augment.reset();
  cfg.early_stopping = false;
  const auto before = m.snapshot();
  const auto r = train(m, data, cfg);
  for (const auto& rec : r.history) {
    EXPECT_EQ(rec.train_loss, r.history[0].train_loss);
    EXPECT_EQ(rec.val_loss, r.history[0].val_loss);
  }
  const auto after = m.snapshot();
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(before[i].bitwise_equal(after[i]));
}

TEST(Train, LearnsSeparableTask) {
  const auto data = synth_dataset(3, 12, 16, 16, 7, {}, DType::F32);
  auto mf = build_backbone(Preset::Mini, {3, 16, 16}, 2, DType::F32);
  attach_head(mf, HeadSpec{{128, 64}, {0.3, 0.4}, 0.01, 3});
  auto cfg = quick_config();
  cfg.max_epochs = 6;
  cfg.early_stopping = false;
  const auto r = train(mf, data, cfg);
  EXPECT_LT(r.history.back().train_loss, r.history.front().train_loss);
}

TEST(Train, NonFiniteLossAborts) {
  auto m = tiny_model(3);
  const auto data = synth_dataset(3, 6, 16, 16, 8, {}, DType::F64);
  TrainHooks hooks;
  hooks.after_validation = [](std::size_t, double) { return std::nan(""); };
  try {
    (void)train(m, data, quick_config(), hooks);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteLoss);
  }
}

TEST(Train, BestCheckpointWrittenToDisk) {
  testing::TempDir dir;
  auto m = tiny_model(3);
  const auto data = synth_dataset(3, 6, 16, 16, 9, {}, DType::F64);
  auto cfg = quick_config();
  cfg.max_epochs = 2;
  cfg.checkpoint_path = dir / "best.ckpt";
  const auto r = train(m, data, cfg);
  const auto ck = load_checkpoint(cfg.checkpoint_path);
  EXPECT_EQ(ck.epoch, r.best_epoch);
  ASSERT_TRUE(ck.best_val_loss.has_value());
  EXPECT_EQ(*ck.best_val_loss, r.best_val_loss);
}

void make_uniform(ModelGraph& m) {
  auto& out = std::get<DenseLayer>(m.layers[m.layers.size() - 2].layer).params;
  for (auto& v : out.weight.mutable_values<double>()) v = 0;
  for (auto& v : out.bias.mutable_values<double>()) v = 0;
}

TEST(Evaluate, UniformScoresPickClassZero) {
  auto m = tiny_model(4);
  make_uniform(m);
  const auto data = synth_dataset(4, 25, 16, 16, 10, {}, DType::F64);
  const auto rep = evaluate(m, data);
  EXPECT_EQ(rep.accuracy, 0.25);
  EXPECT_EQ(rep.per_class[0].recall, 1.0);
  ASSERT_TRUE(rep.auc_w.has_value());
  EXPECT_EQ(*rep.auc_w, 0.5);
}

TEST(Evaluate, IdempotentAndSingleSample) {
  auto m = tiny_model(3);
  const auto data = synth_dataset(3, 4, 16, 16, 11, {}, DType::F64);
  const auto a = report_to_json(evaluate(m, data, {"m", "d", ""}));
  const auto b = report_to_json(evaluate(m, data, {"m", "d", ""}));
  EXPECT_EQ(a, b);

  Dataset one;
  one.class_names = data.class_names;
  one.samples = {data.samples[0]};
  const auto probs = predict(m, one);
  one.samples[0].label = argmax_rows(probs)[0];
  const auto rep = evaluate(m, one);
  EXPECT_EQ(rep.accuracy, 1.0);
  EXPECT_FALSE(rep.auc_w.has_value());
}

TEST(History, CsvLayout) {
  EpochRecord a;
  a.epoch = 1;
  a.train_loss = 0.5;
  a.train_acc = 0.75;
  a.val_loss = 0.25;
  a.val_acc = 1;
  a.lr = 1e-4;
  const auto csv = history_csv({a});
  EXPECT_EQ(csv, "epoch,train_loss,train_acc,val_loss,val_acc,lr\n1,0.5,0.75,0.25,1,0.0001\n");
}

}  // namespace
}  // namespace leafnet
