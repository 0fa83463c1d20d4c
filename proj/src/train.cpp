#include "maa/train.hpp"

#include "maa/random.hpp"
#include "maa/retrieval.hpp"
#include "maa/rscrop.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>

namespace maa::train {

void TrainSpec::validate() const {
  if (epochs <= 0) throw std::invalid_argument("train.epochs: must be positive, got " + std::to_string(epochs));
  if (batch_size <= 1) throw std::invalid_argument("train.batch_size: must be at least 2, got " + std::to_string(batch_size));
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("train.learning_rate: must be positive, got " + std::to_string(learning_rate));
  }
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("train.temperature: must be positive, got " + std::to_string(temperature));
  }
  if (augment_shift < 0) throw std::invalid_argument("train.augment_shift: must be non-negative");
  if (!(augment_noise >= 0.0)) throw std::invalid_argument("train.augment_noise: must be non-negative");
  if (!(augment_zoom >= 1.0 && augment_zoom <= 4.0)) {
    throw std::invalid_argument("train.augment_zoom: must be in [1, 4], got " + std::to_string(augment_zoom));
  }
  if (!(weight_decay >= 0.0)) {
    throw std::invalid_argument("train.weight_decay: must be non-negative, got " + std::to_string(weight_decay));
  }
}

template <typename T>
ad::Var<T> contrastive_loss(const models::VlpModel& model, models::ParamBinder<T>& bind,
                            const std::vector<const Image*>& images,
                            const std::vector<const data::CaptionTokens*>& captions, double temperature) {
  if (images.size() != captions.size() || images.empty()) {
    throw std::invalid_argument("contrastive_loss: need equally many images and captions");
  }
  auto& tape = bind.tape();
  std::vector<ad::Var<T>> img_rows, txt_rows;
  for (std::size_t i = 0; i < images.size(); ++i) {
    auto x = tape.constant(images[i]->template to_matrix<T>());
    img_rows.push_back(model.image_taps(bind, x).back());
    txt_rows.push_back(model.text_embedding(bind, std::span<const int>(captions[i]->ids)));
  }
  auto ie = ad::normalize_rows(ad::concat_rows(std::span<const ad::Var<T>>(img_rows)));
  auto te = ad::normalize_rows(ad::concat_rows(std::span<const ad::Var<T>>(txt_rows)));
  auto logits = ad::scale(ad::matmul_nt(ie, te), static_cast<T>(1.0 / temperature));
  return ad::symmetric_cross_entropy(logits);
}

template ad::Var<float> contrastive_loss(const models::VlpModel&, models::ParamBinder<float>&,
                                         const std::vector<const Image*>&,
                                         const std::vector<const data::CaptionTokens*>&, double);
template ad::Var<double> contrastive_loss(const models::VlpModel&, models::ParamBinder<double>&,
                                          const std::vector<const Image*>&,
                                          const std::vector<const data::CaptionTokens*>&, double);

ValidationScore evaluate_split(const models::VlpModel& model, const std::vector<data::Pair>& pairs) {
  std::vector<std::vector<float>> img, txt;
  for (const auto& p : pairs) {
    img.push_back(model.encode_image(models::prepare_input(model, p.image)).final_embedding().values);
    txt.push_back(model.encode_text(p.caption));
  }
  const auto I = eval::stack_rows(img);
  const auto Tm = eval::stack_rows(txt);
  std::vector<std::size_t> gt(pairs.size());
  std::iota(gt.begin(), gt.end(), std::size_t{0});
  ValidationScore s;
  s.r1_i2t = eval::recall_at_k(I, Tm, gt, 1);
  s.r1_t2i = eval::recall_at_k(Tm, I, gt, 1);
  return s;
}

namespace {

// Random integer translation (edge clamped), optional mirroring and mild
// per-pixel noise.
Image augment(const Image& src, int max_shift, bool mirror, double noise, Rng& rng) {
  const int dy = max_shift > 0 ? static_cast<int>(rng.uniform_int(-max_shift, max_shift)) : 0;
  const int dx = max_shift > 0 ? static_cast<int>(rng.uniform_int(-max_shift, max_shift)) : 0;
  Image out(src.height, src.width);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < src.height; ++y) {
      const int sy = std::clamp(y - dy, 0, src.height - 1);
      for (int x = 0; x < src.width; ++x) {
        const int mx = mirror ? src.width - 1 - x : x;
        const int sx = std::clamp(mx - dx, 0, src.width - 1);
        const double v = src.at(c, sy, sx) + (noise > 0.0 ? noise * (2.0 * rng.uniform01() - 1.0) : 0.0);
        out.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return out;
}

// Bilinear upscale by independent per-axis factors in [1, max_zoom], then a
// random crop back to the original size.
Image zoom_crop(const Image& src, double max_zoom, Rng& rng) {
  const double sx = rng.uniform(1.0, max_zoom), sy = rng.uniform(1.0, max_zoom);
  const Image big = rscrop::resize(src, sx, sy);
  const int ox = static_cast<int>(rng.uniform_int(0, big.width - src.width));
  const int oy = static_cast<int>(rng.uniform_int(0, big.height - src.height));
  Image out(src.height, src.width);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < src.height; ++y) {
      for (int x = 0; x < src.width; ++x) out.at(c, y, x) = big.at(c, oy + y, ox + x);
    }
  }
  return out;
}

struct AdamState {
  std::vector<ad::Matrix<float>> m, v;
  long step = 0;
};

}  // namespace

TrainResult train_contrastive(const TrainSpec& spec, const data::DatasetHandle& data,
                              const models::ModelConfig& config, const ProgressFn& progress) {
  spec.validate();
  auto train_pairs = data::load_split(data, data::Split::Train);
  const auto val_pairs = data::load_split(data, data::Split::Val);
  if (train_pairs.size() < 2 || val_pairs.empty()) {
    throw std::invalid_argument("train_contrastive: dataset needs non-empty train and val splits");
  }
  models::VlpModel model = models::VlpModel::create(config);
  for (auto& p : train_pairs) p.image = models::prepare_input(model, p.image);

  AdamState adam;
  for (const auto& p : model.parameters()) {
    adam.m.push_back(ad::Matrix<float>::Zero(p.value.rows(), p.value.cols()));
    adam.v.push_back(ad::Matrix<float>::Zero(p.value.rows(), p.value.cols()));
  }
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;

  TrainResult result{model, -1, -1.0, {}};
  Rng rng = Rng(spec.seed).substream("train-order");
  Rng aug_rng = Rng(spec.seed).substream("train-augment");
  // a left-right mirror swaps the horizontal relation words
  std::optional<std::pair<int, int>> mirror_map;
  if (spec.augment_mirror && data.vocab().contains("left") && data.vocab().contains("right")) {
    mirror_map = std::pair{data.vocab().id("left"), data.vocab().id("right")};
  }
  std::vector<std::size_t> order(train_pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = static_cast<std::size_t>(spec.batch_size);
  const long total_steps = static_cast<long>(spec.epochs) *
                           static_cast<long>((train_pairs.size() + batch - 1) / batch);

  for (int epoch = 1; epoch <= spec.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    }
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      if (end - start < 2) continue;
      std::vector<Image> augmented;
      augmented.reserve(end - start);
      std::vector<const Image*> imgs;
      std::vector<const data::CaptionTokens*> caps;
      std::vector<data::CaptionTokens> mirrored;
      mirrored.reserve(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const Image& src = train_pairs[order[k]].image;
        const data::CaptionTokens& cap = train_pairs[order[k]].caption;
        const bool mirror = mirror_map.has_value() && aug_rng.uniform_int(0, 1) == 1;
        if (mirror || spec.augment_shift > 0 || spec.augment_noise > 0.0 || spec.augment_zoom > 1.0) {
          augmented.push_back(spec.augment_zoom > 1.0 ? zoom_crop(src, spec.augment_zoom, aug_rng) : src);
          augmented.back() = augment(augmented.back(), spec.augment_shift, mirror, spec.augment_noise, aug_rng);
          imgs.push_back(&augmented.back());
        } else {
          imgs.push_back(&src);
        }
        if (mirror) {
          mirrored.push_back(cap);
          for (auto& id : mirrored.back().ids) {
            if (id == mirror_map->first) id = mirror_map->second;
            else if (id == mirror_map->second) id = mirror_map->first;
          }
          caps.push_back(&mirrored.back());
        } else {
          caps.push_back(&cap);
        }
      }
      ad::Tape<float> tape;
      models::ParamBinder<float> bind(tape, true);
      auto loss = contrastive_loss(model, bind, imgs, caps, spec.temperature);
      const double lv = loss.scalar();
      if (!std::isfinite(lv)) {
        throw std::runtime_error("train_contrastive: loss diverged (" + std::to_string(lv) + ") at epoch " +
                                 std::to_string(epoch) + ", batch " + std::to_string(batches) +
                                 "; lower train.learning_rate or raise train.temperature");
      }
      tape.backward(loss);
      ++adam.step;
      // cosine decay to 10% of the base rate
      const double progress_frac = static_cast<double>(adam.step) / static_cast<double>(total_steps);
      const double lr = spec.learning_rate * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(M_PI * progress_frac)));
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam.step));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam.step));
      auto& params = model.parameters();
      for (const auto& [param, var] : bind.bound()) {
        const std::size_t idx = static_cast<std::size_t>(param - params.data());
        const ad::Matrix<float> g = tape.grad(var);
        auto& m = adam.m[idx];
        auto& v = adam.v[idx];
        m = static_cast<float>(b1) * m + static_cast<float>(1.0 - b1) * g;
        v = static_cast<float>(b2) * v + static_cast<float>(1.0 - b2) * g.cwiseProduct(g);
        auto& w = params[idx].value;
        const bool decay = param->name.size() > 2 && param->name.compare(param->name.size() - 2, 2, ".w") == 0;
        if (decay) w *= static_cast<float>(1.0 - lr * spec.weight_decay);
        w.array() -= static_cast<float>(lr / c1) * m.array() /
                     ((v.array() / static_cast<float>(c2)).sqrt() + static_cast<float>(eps));
      }
      loss_sum += lv;
      ++batches;
    }

    const auto score = evaluate_split(model, val_pairs);
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    log.val_r1_i2t = score.r1_i2t;
    log.val_r1_t2i = score.r1_t2i;
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(log);
    if (progress) progress(log);
    if (score.mean() > result.best_val_r1) {
      result.best_val_r1 = score.mean();
      result.best_epoch = epoch;
      result.model = model;
    }
  }
  return result;
}

}  // namespace maa::train
