#include <cellmt/checkpoint.hpp>
#include <cellmt/synth.hpp>
#include <cellmt/train.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

using namespace cellmt;

namespace {

NetworkConfig small_config() {
  NetworkConfig cfg;
  cfg.encoder_channels = {4, 4, 8, 8};
  cfg.bottleneck_channels = 8;
  cfg.dense_units = {8, 4};
  cfg.init_seed = 5;
  cfg.count_bias_init = 6.0;
  return cfg;
}

std::vector<AnnotatedImage> small_images(int n, std::uint64_t seed) {
  SynthConfig sc;
  sc.num_images = n;
  sc.height = 32;
  sc.width = 32;
  sc.min_cells = 3;
  sc.max_cells = 8;
  return synthesize_dataset(sc, seed);
}

std::size_t group_hash(const Network<float>& net, ParamGroup g) {
  std::size_t h = 0;
  for (const auto& p : net.params()) {
    if (p.group != g) continue;
    for (float v : p.value) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      h = h * 1000003u ^ std::hash<std::uint32_t>{}(bits);
    }
  }
  return h;
}

std::vector<std::vector<float>> snapshot(const Network<float>& net) {
  std::vector<std::vector<float>> out;
  for (const auto& p : net.params()) out.push_back(p.value);
  return out;
}

}  // namespace

TEST(Adam, MaskedGroupKeepsValuesMomentsAndSteps) {
  Network<float> net(small_config());
  Adam<float> adam(net.params(), {});
  auto grads = net.zero_grads();
  for (auto& g : grads) std::fill(g.begin(), g.end(), 1.0f);
  const auto dec = group_hash(net, ParamGroup::LocalizationDecoder);
  adam.step(net.params(), grads, 1e-3, GroupMask::all());
  EXPECT_NE(group_hash(net, ParamGroup::LocalizationDecoder), dec);

  const auto dec_after = group_hash(net, ParamGroup::LocalizationDecoder);
  for (int i = 0; i < 5; ++i) adam.step(net.params(), grads, 1e-3, GroupMask::encoder_and_counting());
  EXPECT_EQ(group_hash(net, ParamGroup::LocalizationDecoder), dec_after);
  EXPECT_EQ(adam.steps(ParamGroup::LocalizationDecoder), 1);
  EXPECT_EQ(adam.steps(ParamGroup::SharedEncoder), 6);
  EXPECT_EQ(adam.steps(ParamGroup::CountingHead), 6);
}

TEST(Adam, FirstStepMovesEachWeightByTheLearningRate) {
  Network<float> net(small_config());
  const auto before = snapshot(net);
  Adam<float> adam(net.params(), {});
  auto grads = net.zero_grads();
  for (auto& g : grads) std::fill(g.begin(), g.end(), -0.25f);
  adam.step(net.params(), grads, 1e-3, GroupMask::all());
  for (std::size_t i = 0; i < before.size(); ++i) {
    for (std::size_t k = 0; k < before[i].size(); ++k) {
      EXPECT_NEAR(net.params()[i].value[k] - before[i][k], 1e-3, 1e-6);
    }
  }
}

TEST(Trainer, D2StepLeavesDecoderBitIdentical) {
  Network<float> net(small_config());
  TrainConfig tc;
  tc.learning_rate = 1e-3;
  Trainer trainer(net, tc);
  const auto img = demote_to_d2(small_images(1, 3)[0]);
  const auto dec = group_hash(net, ParamGroup::LocalizationDecoder);
  const auto enc = group_hash(net, ParamGroup::SharedEncoder);
  const auto cnt = group_hash(net, ParamGroup::CountingHead);
  for (int epoch : {0, 30}) {
    const auto b = trainer.train_step(img, epoch);
    EXPECT_FALSE(b.l_s.has_value());
  }
  EXPECT_EQ(group_hash(net, ParamGroup::LocalizationDecoder), dec);
  EXPECT_NE(group_hash(net, ParamGroup::SharedEncoder), enc);
  EXPECT_NE(group_hash(net, ParamGroup::CountingHead), cnt);
  EXPECT_EQ(trainer.optimizer().steps(ParamGroup::LocalizationDecoder), 0);
}

TEST(Trainer, D1StepUpdatesEveryGroup) {
  Network<float> net(small_config());
  TrainConfig tc;
  tc.learning_rate = 1e-3;
  Trainer trainer(net, tc);
  const auto img = small_images(1, 4)[0];
  const auto before = snapshot(net);
  const auto b = trainer.train_step(img, 0);
  ASSERT_TRUE(b.l_s.has_value());
  for (auto g : kAllGroups) EXPECT_EQ(trainer.optimizer().steps(g), 1);
  for (std::size_t i = 0; i < before.size(); ++i) {
    EXPECT_NE(net.params()[i].value, before[i]) << net.params()[i].name;
  }
}

TEST(Trainer, MixedBatchUsesUnionOfUpdateMasks) {
  Network<float> net(small_config());
  TrainConfig tc;
  tc.batch_size = 2;
  Trainer trainer(net, tc);
  const auto imgs = small_images(2, 6);
  trainer.accumulate(demote_to_d2(imgs[0]), 0);
  EXPECT_EQ(trainer.optimizer().steps(ParamGroup::SharedEncoder), 0);
  trainer.accumulate(imgs[1], 0);
  trainer.apply(0);
  for (auto g : kAllGroups) EXPECT_EQ(trainer.optimizer().steps(g), 1);
}

TEST(Trainer, NonFiniteLossRaisesWithContext) {
  Network<float> net(small_config());
  Trainer trainer(net, {});
  const auto img = small_images(1, 7)[0];
  net.params().back().value[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    trainer.train_step(img, 3);
    FAIL() << "expected TrainingDiverged";
  } catch (const TrainingDiverged& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 3"), std::string::npos);
    EXPECT_NE(msg.find(img.image_id), std::string::npos);
  }
}

TEST(Trainer, WarmupControlsConsistencyWeight) {
  Network<float> net(small_config());
  TrainConfig tc;
  tc.max_epochs = 4;
  tc.weights.warmup_epochs = 2;
  Trainer trainer(net, tc);
  const auto imgs = small_images(3, 8);
  TrainingSet set{{imgs[0], demote_to_d2(imgs[1])}, {imgs[2]}};
  std::vector<std::pair<int, double>> betas;
  int epoch_seen = 0;
  TrainObserver obs;
  obs.on_step = [&](const StepRecord& r) { betas.emplace_back(r.loss.epoch, r.loss.beta_effective); };
  obs.on_epoch = [&](const EpochRecord&, const Network<float>&) { ++epoch_seen; };
  trainer.train(set, obs);
  EXPECT_EQ(epoch_seen, 4);
  ASSERT_EQ(betas.size(), 8u);
  for (const auto& [epoch, beta] : betas) EXPECT_DOUBLE_EQ(beta, epoch < 2 ? 0.0 : 1.0);
}

TEST(Trainer, TrainingIsDeterministic) {
  const auto imgs = small_images(4, 9);
  TrainingSet set{{imgs[0], imgs[1], demote_to_d2(imgs[2])}, {imgs[3]}};
  TrainConfig tc;
  tc.max_epochs = 3;
  tc.learning_rate = 1e-3;
  tc.seed = 42;
  Network<float> a(small_config()), b(small_config());
  const auto ra = Trainer(a, tc).train(set);
  const auto rb = Trainer(b, tc).train(set);
  EXPECT_EQ(snapshot(a), snapshot(b));
  ASSERT_EQ(ra.history.size(), rb.history.size());
  for (std::size_t i = 0; i < ra.history.size(); ++i) {
    EXPECT_EQ(ra.history[i].val_loss, rb.history[i].val_loss);
  }
}

TEST(Trainer, BestCheckpointIsArgminOfValidationLoss) {
  const auto imgs = small_images(4, 10);
  TrainingSet set{{imgs[0], imgs[1], imgs[2]}, {imgs[3]}};
  TrainConfig tc;
  tc.max_epochs = 6;
  tc.learning_rate = 3e-3;
  tc.terms.consistency = false;
  Network<float> net(small_config());
  Trainer trainer(net, tc);
  const auto r = trainer.train(set);
  std::vector<double> vals;
  for (const auto& h : r.history) vals.push_back(h.val_loss);
  EXPECT_EQ(r.best_epoch, best_epoch_of(vals));
  EXPECT_EQ(r.best.epoch, r.best_epoch);
  EXPECT_TRUE(r.history[r.best_epoch].best);

  auto restored = network_from_checkpoint(r.best);
  Trainer probe(restored, tc);
  EXPECT_NEAR(probe.validation_loss(set.validation, r.best_epoch), r.best_val_loss, 1e-6);
}

TEST(Trainer, BestTrackingRestartsWhenWarmupEnds) {
  const auto imgs = small_images(3, 12);
  TrainingSet set{{imgs[0], imgs[1]}, {imgs[2]}};
  TrainConfig tc;
  tc.max_epochs = 4;
  tc.weights.warmup_epochs = 2;
  Network<float> net(small_config());
  const auto r = Trainer(net, tc).train(set);
  EXPECT_TRUE(r.history[2].best);
  EXPECT_GE(r.best_epoch, 2);
}

TEST(Trainer, RejectsValidationWithoutPoints) {
  const auto imgs = small_images(2, 13);
  TrainingSet set{{imgs[0]}, {demote_to_d2(imgs[1])}};
  Network<float> net(small_config());
  Trainer trainer(net, {});
  EXPECT_THROW(trainer.train(set), InvalidArgument);
}

TEST(Trainer, LearningRateSchedule) {
  TrainConfig tc;
  EXPECT_DOUBLE_EQ(tc.lr_at(150), 1e-4);
  tc.lr_decay_period = 10;
  EXPECT_DOUBLE_EQ(tc.lr_at(9), 1e-4);
  EXPECT_NEAR(tc.lr_at(25), 1e-4 * 0.81, 1e-15);
}

TEST(TrainingSet, FullSupervisionHasNoD2Images) {
  const auto imgs = small_images(10, 14);
  const auto split = make_split(imgs, 100, 1);
  const auto set = build_training_set(imgs, split);
  EXPECT_TRUE(split.train_d2.empty());
  for (const auto& img : set.train) EXPECT_EQ(img.level, SupervisionLevel::D1);
  EXPECT_EQ(set.train.size() + set.validation.size() + split.test.size(), imgs.size());
}

TEST(TrainingSet, D2ImagesAreDemoted) {
  const auto imgs = small_images(20, 15);
  const auto split = make_split(imgs, 25, 1);
  const auto set = build_training_set(imgs, split);
  std::size_t d2 = 0;
  for (const auto& img : set.train) {
    if (img.level == SupervisionLevel::D2) {
      ++d2;
      EXPECT_FALSE(img.points.has_value());
      EXPECT_EQ(img.count.source, CountSource::Eyeballed);
    }
  }
  EXPECT_EQ(d2, split.train_d2.size());
}

TEST(Checkpoint, RoundTripIsExact) {
  Network<float> net(small_config());
  const auto path = std::filesystem::temp_directory_path() / "cellmt_ckpt_test.bin";
  save_checkpoint(path, make_checkpoint(net, 17));
  const auto loaded = load_checkpoint(path);
  EXPECT_EQ(loaded.epoch, 17);
  EXPECT_EQ(loaded.config.encoder_channels, net.config().encoder_channels);
  const auto restored = network_from_checkpoint(loaded);
  EXPECT_EQ(snapshot(restored), snapshot(net));
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsForeignFiles) {
  const auto path = std::filesystem::temp_directory_path() / "cellmt_not_ckpt.bin";
  {
    std::ofstream out(path);
    out << "definitely not a checkpoint";
  }
  EXPECT_THROW(load_checkpoint(path), IoError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), IoError);
}

TEST(Trainer, ConsistencyAfterWarmupMovesCountingHead) {
  Network<float> net(small_config());
  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.weights.alpha = 0.0;
  Trainer trainer(net, tc);
  const auto img = small_images(1, 16)[0];
  const auto before = group_hash(net, ParamGroup::CountingHead);
  const auto b = trainer.train_step(img, 30);
  ASSERT_GT(b.l_t.value_or(0.0), 0.0);
  EXPECT_NE(group_hash(net, ParamGroup::CountingHead), before);
}

TEST(JointGradient, CountAndConsistencyCanCancel) {
  // With alpha = beta = 1 and C_s < C_hat < C the two subgradients are
  // -1/C and +1/C, so a D1 step after warm-up leaves the count path still.
  AnnotatedImage img;
  img.image_id = "cancel";
  img.count = {10, CountSource::ExactFromPoints};
  img.level = SupervisionLevel::D2;
  img.eyeballed = 10;
  const Grid<float> probs(16, 16, 0.2f);
  const JointLossInput<float> in{probs, 6.0, 0};
  const auto b = joint_loss(in, img, nullptr, LossWeights{}, 30);
  EXPECT_GT(b.l_t.value_or(0.0), 0.0);
  EXPECT_EQ(joint_loss_gradient(in, img, nullptr, b).count, 0.0);
}
