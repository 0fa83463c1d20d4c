#pragma once

#include "maa/data.hpp"
#include "maa/models.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace maa::train {

struct TrainSpec {
  int epochs = 30;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double temperature = 0.07;
  double weight_decay = 1e-4;
  int augment_shift = 0;  // max translation in pixels
  bool augment_mirror = false;
  double augment_noise = 0.0;
  double augment_zoom = 1.0;  // max per-axis upscale before a random crop back to size
  std::uint64_t seed = 1;

  void validate() const;
  bool operator==(const TrainSpec&) const = default;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_r1_i2t = 0.0;
  double val_r1_t2i = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  models::VlpModel model;
  int best_epoch = -1;
  double best_val_r1 = 0.0;  // mean of the two retrieval directions
  std::vector<EpochLog> log;
};

/// Symmetric InfoNCE loss for one batch of (image, caption) pairs; exposed
/// for tests. Images must already match the model input size.
template <typename T>
ad::Var<T> contrastive_loss(const models::VlpModel& model, models::ParamBinder<T>& bind,
                            const std::vector<const Image*>& images,
                            const std::vector<const data::CaptionTokens*>& captions, double temperature);

struct ValidationScore {
  double r1_i2t = 0.0;
  double r1_t2i = 0.0;
  double mean() const { return 0.5 * (r1_i2t + r1_t2i); }
};

ValidationScore evaluate_split(const models::VlpModel& model, const std::vector<data::Pair>& pairs);

using ProgressFn = std::function<void(const EpochLog&)>;

/// Trains image and text encoders jointly on the train split and returns the
/// checkpoint with the best validation R@1.
TrainResult train_contrastive(const TrainSpec& spec, const data::DatasetHandle& data,
                              const models::ModelConfig& config, const ProgressFn& progress = {});

}  // namespace maa::train
