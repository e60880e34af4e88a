#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cellmt/checkpoint.hpp"
#include "cellmt/components.hpp"
#include "cellmt/dataset.hpp"
#include "cellmt/error.hpp"
#include "cellmt/loss.hpp"
#include "cellmt/network.hpp"
#include "cellmt/optimizer.hpp"

namespace cellmt {

struct TrainConfig {
  double learning_rate = 1e-4;
  AdamSettings adam{};             // adam.beta1 is the 0.9 decay parameter
  double lr_decay = 0.9;           // optional exponential schedule factor
  int lr_decay_period = 0;         // epochs per decay step; 0 disables
  int batch_size = 1;
  int max_epochs = 200;
  LossWeights weights{};
  LossTerms terms{};
  std::uint64_t seed = 0;
  int mask_radius = 3;             // dilation radius for D1 ground truth
  double consistency_threshold = 0.5;
  double pos_weight = 1.0;
  // The validation objective gains the consistency term when warm-up ends;
  // restart best-checkpoint tracking there so losses stay comparable.
  bool reset_best_after_warmup = true;
  // Parameter groups an image of each level may update.
  GroupMask d1_updates = GroupMask::all();
  GroupMask d2_updates = GroupMask::encoder_and_counting();

  [[nodiscard]] double lr_at(int epoch) const {
    if (lr_decay_period <= 0) return learning_rate;
    return learning_rate * std::pow(lr_decay, epoch / lr_decay_period);
  }
};

struct TrainState {
  int epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  std::string rng_state;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double learning_rate = 0;
  double seconds = 0;
  bool best = false;
};

struct StepRecord {
  std::string image_id;
  LossBreakdown loss;
};

struct TrainResult {
  Checkpoint best;
  int best_epoch = -1;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<EpochRecord> history;
};

// Training data after D1/D2 routing. D1 entries keep their points; masks are
// derived on demand.
struct TrainingSet {
  std::vector<AnnotatedImage> train;
  std::vector<AnnotatedImage> validation;
};

struct TrainObserver {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const EpochRecord&, const Network<float>&)> on_epoch;
};

namespace detail {

inline std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

inline std::string describe_breakdown(const std::string& id, const LossBreakdown& b) {
  std::ostringstream ss;
  ss << "non-finite loss at epoch " << b.epoch << ", image '" << id << "' (" << to_string(b.level)
     << "): l_s=" << (b.l_s ? std::to_string(*b.l_s) : "absent") << " l_c=" << b.l_c
     << " l_t=" << (b.l_t ? std::to_string(*b.l_t) : "absent") << " joint=" << b.joint;
  return ss.str();
}

}  // namespace detail

// Per-image loss routing and selective updates for mixed supervision.
class Trainer {
 public:
  Trainer(Network<float>& net, TrainConfig config)
      : net_(net), config_(std::move(config)), optimizer_(net.params(), config_.adam),
        rng_(config_.seed), grads_(net.zero_grads()) {
    detail::require(config_.batch_size >= 1, "batch_size must be >= 1");
    detail::require(config_.max_epochs >= 1, "max_epochs must be >= 1");
    detail::require(config_.mask_radius >= 1, "mask_radius must be >= 1");
  }

  [[nodiscard]] const TrainConfig& config() const { return config_; }
  [[nodiscard]] const TrainState& state() const { return state_; }
  [[nodiscard]] const Adam<float>& optimizer() const { return optimizer_; }

  // Forward + joint loss + gradients accumulated into the pending batch.
  LossBreakdown accumulate(const AnnotatedImage& image, int epoch) {
    validate(image);
    ForwardCache<float> cache;
    const auto pred = net_.forward_train(image.pixels, &rng_, cache);
    std::optional<GroundTruthMask> mask;
    if (image.level == SupervisionLevel::D1 && config_.terms.localization) {
      mask = generate_mask(*image.points, config_.mask_radius);
    }
    const int c_from_mask =
        count_components(threshold_mask(pred.mask_probs, config_.consistency_threshold)).num_components;
    const JointLossInput<float> in{pred.mask_probs, pred.count_estimate, c_from_mask};
    const auto b = joint_loss(in, image, mask ? &*mask : nullptr, config_.weights, epoch,
                              config_.terms, config_.pos_weight);
    if (!std::isfinite(b.joint) || !std::isfinite(pred.count_estimate)) {
      throw TrainingDiverged(detail::describe_breakdown(image.image_id, b));
    }
    const auto g = joint_loss_gradient(in, image, mask ? &*mask : nullptr, b, config_.pos_weight);
    const double scale = 1.0 / config_.batch_size;
    std::optional<Grid<double>> g_logits;
    if (g.mask_logits) {
      g_logits = *g.mask_logits;
      for (auto& v : g_logits->data) v *= scale;
    }
    net_.backward(cache, g_logits ? &*g_logits : nullptr, g.count * scale, grads_);
    const auto& allowed = image.level == SupervisionLevel::D1 ? config_.d1_updates : config_.d2_updates;
    pending_.encoder |= allowed.encoder;
    pending_.decoder |= allowed.decoder;
    pending_.counting |= allowed.counting;
    ++pending_count_;
    return b;
  }

  // Applies the pending gradients with the union of the batch's update masks.
  void apply(int epoch) {
    if (pending_count_ == 0) return;
    optimizer_.step(net_.params(), grads_, config_.lr_at(epoch), pending_);
    for (auto& g : grads_) std::fill(g.begin(), g.end(), 0.0f);
    pending_ = GroupMask{false, false, false};
    pending_count_ = 0;
  }

  // One optimizer update on a single image.
  LossBreakdown train_step(const AnnotatedImage& image, int epoch) {
    const auto b = accumulate(image, epoch);
    apply(epoch);
    return b;
  }

  // Mean joint loss over fully annotated images, dropout off.
  [[nodiscard]] double validation_loss(const std::vector<AnnotatedImage>& images, int epoch) const {
    detail::require(!images.empty(), "validation set is empty");
    double sum = 0;
    for (const auto& img : images) sum += evaluate_loss(img, epoch).joint;
    return sum / static_cast<double>(images.size());
  }

  [[nodiscard]] LossBreakdown evaluate_loss(const AnnotatedImage& img, int epoch) const {
    const auto pred = net_.forward(img.pixels);
    std::optional<GroundTruthMask> mask;
    if (img.level == SupervisionLevel::D1 && config_.terms.localization) {
      mask = generate_mask(*img.points, config_.mask_radius);
    }
    const int c_from_mask =
        count_components(threshold_mask(pred.mask_probs, config_.consistency_threshold)).num_components;
    return joint_loss(JointLossInput<float>{pred.mask_probs, pred.count_estimate, c_from_mask}, img,
                      mask ? &*mask : nullptr, config_.weights, epoch, config_.terms, config_.pos_weight);
  }

  // Full loop: seeded shuffle per epoch, validation after each epoch, best
  // checkpoint by validation loss.
  TrainResult train(const TrainingSet& data, const TrainObserver& observer = {}) {
    detail::require(!data.train.empty(), "training set is empty");
    detail::require(!data.validation.empty(), "validation set is empty");
    for (const auto& img : data.validation) {
      detail::require(img.level == SupervisionLevel::D1,
                      "validation image '" + img.image_id + "' lacks point annotations");
    }
    TrainResult result;
    std::vector<std::size_t> order(data.train.size());
    for (int epoch = state_.epoch; epoch < config_.max_epochs; ++epoch) {
      const auto t0 = std::chrono::steady_clock::now();
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng_);
      double train_sum = 0;
      int in_batch = 0;
      for (std::size_t idx : order) {
        const auto& img = data.train[idx];
        const auto b = accumulate(img, epoch);
        train_sum += b.joint;
        if (++in_batch == config_.batch_size) {
          apply(epoch);
          in_batch = 0;
        }
        if (observer.on_step) observer.on_step({img.image_id, b});
      }
      apply(epoch);

      const double val = validation_loss(data.validation, epoch);
      if (!std::isfinite(val)) {
        throw TrainingDiverged("non-finite validation loss at epoch " + std::to_string(epoch));
      }
      if (config_.reset_best_after_warmup && epoch == config_.weights.warmup_epochs &&
          config_.terms.consistency && config_.weights.beta > 0) {
        state_.best_val_loss = std::numeric_limits<double>::infinity();
      }
      EpochRecord rec;
      rec.epoch = epoch;
      rec.train_loss = train_sum / static_cast<double>(data.train.size());
      rec.val_loss = val;
      rec.learning_rate = config_.lr_at(epoch);
      if (val < state_.best_val_loss) {
        state_.best_val_loss = val;
        state_.best_epoch = epoch;
        result.best = make_checkpoint(net_, epoch);
        rec.best = true;
      }
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      state_.epoch = epoch + 1;
      state_.rng_state = detail::rng_to_string(rng_);
      result.history.push_back(rec);
      if (observer.on_epoch) observer.on_epoch(rec, net_);
    }
    result.best_epoch = state_.best_epoch;
    result.best_val_loss = state_.best_val_loss;
    return result;
  }

 private:
  Network<float>& net_;
  TrainConfig config_;
  Adam<float> optimizer_;
  std::mt19937_64 rng_;
  ParamGrads<float> grads_;
  GroupMask pending_{false, false, false};
  int pending_count_ = 0;
  TrainState state_;
};

// Looks up split ids in `images`. D2 ids are demoted to their count-only view.
inline std::vector<AnnotatedImage> select_images(const std::vector<AnnotatedImage>& images,
                                                 const std::vector<std::string>& ids) {
  std::map<std::string, const AnnotatedImage*> by_id;
  for (const auto& img : images) by_id[img.image_id] = &img;
  std::vector<AnnotatedImage> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw InvalidArgument("split refers to unknown image '" + id + "'");
    out.push_back(*it->second);
  }
  return out;
}

inline TrainingSet build_training_set(const std::vector<AnnotatedImage>& images,
                                      const DatasetSplit& split) {
  TrainingSet set;
  set.train = select_images(images, split.train_d1);
  for (const auto& img : set.train) {
    if (img.level != SupervisionLevel::D1) {
      throw InvalidArgument("image '" + img.image_id + "' was assigned to D1 but has no points");
    }
  }
  for (auto& img : select_images(images, split.train_d2)) set.train.push_back(demote_to_d2(img));
  set.validation = select_images(images, split.validation);
  return set;
}

// Index of the minimum validation loss (first on ties).
inline int best_epoch_of(const std::vector<double>& val_losses) {
  detail::require(!val_losses.empty(), "no validation losses");
  return static_cast<int>(std::min_element(val_losses.begin(), val_losses.end()) - val_losses.begin());
}

}  // namespace cellmt
