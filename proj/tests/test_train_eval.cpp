#include <gtest/gtest.h>

#include <cmath>

#include "rockres/errors.hpp"
#include "rockres/ops.hpp"
#include "rockres/train.hpp"
#include "test_util.hpp"

namespace rockres {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

ModelConfig tiny_model(std::int64_t classes = 3) {
  ModelConfig m;
  m.num_classes = classes;
  m.input_height = m.input_width = 32;
  m.base_width = 4;
  m.seed = 5;
  return m;
}

TrainConfig tiny_train(int epochs = 1) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 4;
  t.lr = 1e-3;
  t.seed = 2;
  return t;
}

/// Synthetic corpus shared by the tests below; built once per process.
const Dataset& corpus() {
  static TempDir dir("train_corpus");
  static const Dataset data = [] {
    make_synthetic_splits(dir.path(), 3, 4, 2, 32, 32, 17);
    return load_dataset(dir.path());
  }();
  return data;
}

TEST(Adam, MatchesHandRecurrence) {
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  auto x = testing::tensor<double>({3}, {0.5, -2.0, 3e-3}, true);
  Adam<double> opt({{"x", x}}, lr, b1, b2, eps);
  std::vector<double> ref{0.5, -2.0, 3e-3}, m(3, 0.0), v(3, 0.0);
  for (int t = 1; t <= 25; ++t) {
    opt.zero_grad();
    backward(sum(mul(x, x)));  // gradient 2x
    opt.step();
    for (int i = 0; i < 3; ++i) {
      const double g = 2.0 * ref[i];
      m[i] = b1 * m[i] + (1 - b1) * g;
      v[i] = b2 * v[i] + (1 - b2) * g * g;
      const double mh = m[i] / (1 - std::pow(b1, t)), vh = v[i] / (1 - std::pow(b2, t));
      const double delta = lr * mh / (std::sqrt(vh) + eps);
      EXPECT_LE(std::abs(delta), lr * (1 + 1e-6));
      ref[i] -= delta;
      ASSERT_NEAR(x.value()[i], ref[i], 1e-12) << "step " << t << " entry " << i;
    }
  }
  EXPECT_EQ(opt.step_count(), 25);
}

TEST(Adam, MissingGradientActsAsZero) {
  auto x = testing::tensor<double>({2}, {1.0, 2.0}, true);
  Adam<double> opt({{"x", x}}, 0.1);
  opt.step();
  EXPECT_EQ(x.value()[0], 1.0);
  EXPECT_EQ(x.value()[1], 2.0);
}

TEST(Metrics, Top1) {
  const NDArray<float> logits({3, 3}, std::vector<float>{0.1f, 0.7f, 0.2f, 0.9f, 0.05f, 0.05f, 0.2f, 0.2f, 0.6f});
  const std::vector<std::int32_t> labels{1, 0, 2};
  EXPECT_EQ(top1_accuracy(logits, std::span(labels)), 1.0);
  const std::vector<std::int32_t> wrong{1, 1, 1};
  EXPECT_NEAR(top1_accuracy(logits, std::span(wrong)), 1.0 / 3.0, 1e-12);
  // Ties resolve to the smallest index.
  const NDArray<float> tie({1, 3}, std::vector<float>{0.5f, 0.5f, 0.1f});
  const std::vector<std::int32_t> first{0}, second{1};
  EXPECT_EQ(top1_correct(tie, std::span(first)), 1);
  EXPECT_EQ(top1_correct(tie, std::span(second)), 0);
}

TEST(Metrics, PerSampleLoss) {
  const NDArray<double> logits({2, 2}, std::vector<double>{0.0, 0.0, 2.0, 0.0});
  const std::vector<std::int32_t> labels{0, 1};
  const auto l = per_sample_loss(logits, std::span(labels));
  EXPECT_NEAR(l[0], std::log(2.0), 1e-12);
  EXPECT_NEAR(l[1], std::log(1.0 + std::exp(2.0)), 1e-12);
}

TEST(Metrics, Csv) {
  const std::vector<MetricsRecord> rs{{1, Split::train, 0.5, 0.25}, {1, Split::test, 1.25, 1.0}};
  EXPECT_EQ(metrics_csv(rs), "epoch,split,loss,top1_accuracy\n1,train,0.5,0.25\n1,test,1.25,1\n");
}

TEST(TrainConfigTest, Validation) {
  TrainConfig t;
  t.epochs = 0;
  EXPECT_THROW(t.validate(), ConfigError);
  t = {};
  t.lr = -1.0;
  EXPECT_THROW(t.validate(), ConfigError);
  t = {};
  t.batch_size = 0;
  EXPECT_THROW(t.validate(), ConfigError);
  Network<float> net(tiny_model());
  t = tiny_train();
  t.epochs = 0;
  EXPECT_THROW(train(net, corpus(), t), ConfigError);
}

TEST(Train, OneEpochGivesTrainAndTestRecord) {
  Network<float> net(tiny_model());
  std::vector<MetricsRecord> seen;
  const auto r = train(net, corpus(), tiny_train(), 0, [&](const MetricsRecord& m) { seen.push_back(m); });
  ASSERT_EQ(r.metrics.size(), 2u);
  EXPECT_EQ(r.metrics, seen);
  EXPECT_EQ(r.metrics[0].split, Split::train);
  EXPECT_EQ(r.metrics[1].split, Split::test);
  EXPECT_EQ(r.metrics[0].epoch, 1);
  EXPECT_EQ(r.metrics[1].epoch, 1);
  EXPECT_TRUE(std::isfinite(r.metrics[0].loss));
  // Three train batches of size 4: one Adam step each.
  EXPECT_EQ(r.checkpoint.optimizer.front().name, "adam.step");
  EXPECT_EQ(r.checkpoint.optimizer.front().value[0], 3.0f);
}

TEST(Train, SeedTripleDeterminesRun) {
  Network<float> a(tiny_model()), b(tiny_model());
  const auto ra = train(a, corpus(), tiny_train(2), 4);
  const auto rb = train(b, corpus(), tiny_train(2), 4);
  EXPECT_EQ(ra.metrics, rb.metrics);
  EXPECT_EQ(ra.checkpoint.serialize(), rb.checkpoint.serialize());

  auto other = tiny_train(2);
  other.seed = 3;
  EXPECT_NE(data_order_hash(12, tiny_train(2), 4), data_order_hash(12, other, 4));
  EXPECT_NE(data_order_hash(12, tiny_train(2), 4), data_order_hash(12, tiny_train(2), 5));
  EXPECT_EQ(data_order_hash(12, tiny_train(2), 4), data_order_hash(12, tiny_train(2), 4));
}

TEST(Train, ClassCountMismatchIsRejected) {
  Network<float> net(tiny_model(5));
  EXPECT_THROW(train(net, corpus(), tiny_train()), ConfigError);
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  TempDir dir("ckpt");
  Network<float> net(tiny_model());
  const auto r = train(net, corpus(), tiny_train(), 0);
  r.checkpoint.save(dir / "a.rkcp");
  const auto loaded = Checkpoint::load(dir / "a.rkcp");
  EXPECT_EQ(loaded, r.checkpoint);
  loaded.save(dir / "b.rkcp");
  EXPECT_EQ(testing::read_bytes(dir / "a.rkcp"), testing::read_bytes(dir / "b.rkcp"));
  EXPECT_EQ(loaded.model_config(), tiny_model());
  EXPECT_EQ(loaded.train_config(), tiny_train());
  EXPECT_EQ(loaded.channel_stats(), compute_channel_stats(corpus().train, 32, 32));

  // Optimizer state restores into a fresh Adam.
  Network<float> fresh(tiny_model());
  load_into(fresh, loaded);
  Adam<float> opt(fresh.parameters(), 1e-3);
  load_optimizer(opt, loaded);
  EXPECT_EQ(opt.step_count(), 3);
  EXPECT_EQ(make_checkpoint(fresh, &opt, loaded.channel_stats(), loaded.train_config()).serialize(),
            loaded.serialize());
}

TEST(Checkpoint, EvaluateAfterReloadIsBitExact) {
  Network<float> net(tiny_model());
  const auto r = train(net, corpus(), tiny_train(), 0);
  const auto stats = r.checkpoint.channel_stats();
  const auto direct = evaluate_split(net, corpus().test, stats);
  const auto again = evaluate_split(net, corpus().test, stats);
  EXPECT_EQ(direct, again);
  Network<float> other(tiny_model());
  const auto reloaded = evaluate(other, Checkpoint::deserialize(r.checkpoint.serialize()), corpus().test);
  EXPECT_EQ(direct.loss, reloaded.loss);
  EXPECT_EQ(direct.top1_accuracy, reloaded.top1_accuracy);
}

TEST(Checkpoint, RejectsMismatchAndCorruption) {
  Network<float> net(tiny_model());
  const Checkpoint ckpt = make_checkpoint(net, nullptr, {}, tiny_train());
  auto cfg = tiny_model();
  cfg.kernel_mod = 2;
  Network<float> other(cfg);
  EXPECT_THROW(load_into(other, ckpt), ConfigError);

  auto bytes = ckpt.serialize();
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(Checkpoint::deserialize(bad), ConfigError);
  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  EXPECT_THROW(Checkpoint::deserialize(truncated), ConfigError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(Checkpoint::deserialize(trailing), ConfigError);
  EXPECT_THROW(ckpt.find_state("nope"), ConfigError);
}

TEST(Ablation, Presets) {
  const ModelConfig base = tiny_model();
  const auto t1 = ablation_preset("table1", base);
  ASSERT_EQ(t1.size(), 2u);
  EXPECT_EQ(t1[1].data_variant, "augmented");
  const auto t2 = ablation_preset("table2", base);
  ASSERT_EQ(t2.size(), 5u);
  for (int k = 0; k < 5; ++k) EXPECT_EQ(t2[k].model.kernel_mod, k);
  const auto t3 = ablation_preset("table3", base);
  ASSERT_EQ(t3.size(), 5u);
  std::vector<std::string> ids;
  for (const auto& e : t3) ids.push_back(e.config_id);
  EXPECT_EQ(ids, (std::vector<std::string>{"bot0", "bot1", "bot1_irc", "bot2", "bot2_irc"}));
  EXPECT_TRUE(t3[4].model.irc);
  EXPECT_EQ(t3[4].model.bot_blocks, 2);
  EXPECT_EQ(ablation_preset("full", base).size(), 25u);
  EXPECT_THROW(ablation_preset("table9", base), ConfigError);
}

TEST(Ablation, EmptyGridGivesHeaderOnly) {
  const auto rows = run_ablation({}, [](const std::string&) -> const Dataset& { return corpus(); }, tiny_train());
  EXPECT_TRUE(rows.empty());
  EXPECT_EQ(ablation_csv(rows), std::string(kAblationHeader) + "\n");
}

TEST(Ablation, FailedRowIsKept) {
  auto grid = ablation_preset("table1", tiny_model());
  const DatasetProvider provider = [](const std::string& v) -> const Dataset& {
    if (!v.empty()) throw IoError("variant " + v + " unavailable");
    return corpus();
  };
  const auto rows = run_ablation(grid, provider, tiny_train(), 0);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_TRUE(rows[0].error.empty());
  EXPECT_FALSE(rows[1].error.empty());
  const std::string csv = ablation_csv(rows);
  EXPECT_NE(csv.find("augmented,0,0,0,nan,"), std::string::npos) << csv;
  EXPECT_NE(ablation_manifest(rows, tiny_train(), 0).find("unavailable"), std::string::npos);
}

}  // namespace
}  // namespace rockres
