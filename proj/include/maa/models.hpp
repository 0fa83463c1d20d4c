#pragma once

#include "maa/autodiff.hpp"
#include "maa/data.hpp"
#include "maa/image.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace maa::models {

enum class Architecture { PatchTransformer, ResidualCnn };

std::string_view architecture_name(Architecture a);
Architecture parse_architecture(std::string_view name);

struct ModelConfig {
  Architecture arch = Architecture::PatchTransformer;
  int input_size = 32;
  int patch_or_kernel = 4;  // patch size (transformer) or first-layer kernel (cnn)
  int width = 64;           // token width (transformer) or stem channels (cnn)
  int depth = 3;            // attention blocks or residual blocks
  int heads = 4;
  int mlp_ratio = 2;
  int embedding_dim = 64;
  int text_width = 64;
  int text_depth = 1;
  int vocab_size = 0;
  int max_caption_length = 16;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Toy configurations: 32 px patch-transformer (patch 4, 3 blocks, width 64)
/// and 48 px residual CNN (3x3 stem, 3 residual blocks).
ModelConfig default_config(Architecture arch, int vocab_size, std::uint64_t seed);

struct Parameter {
  std::string name;
  ad::Matrix<float> value;
};

struct TapShape {
  int rows = 0;
  int cols = 0;
  bool operator==(const TapShape&) const = default;
};

/// One feature tensor per tap, rows = spatial positions (tokens), cols =
/// channels. The last tap is the final embedding (1 x embedding_dim).
struct FeatureTap {
  int rows = 0;
  int cols = 0;
  std::vector<float> values;

  TapShape shape() const { return {rows, cols}; }
  bool operator==(const FeatureTap&) const = default;
};

struct FeatureStack {
  std::vector<FeatureTap> taps;

  std::size_t size() const { return taps.size(); }
  const FeatureTap& final_embedding() const { return taps.back(); }
  bool operator==(const FeatureStack&) const = default;
};

/// Binds model parameters into a tape once per tape. With `trainable` the
/// leaves require grad so the trainer can read parameter gradients back.
template <typename T>
class ParamBinder {
 public:
  ParamBinder(ad::Tape<T>& tape, bool trainable) : tape_(&tape), trainable_(trainable) {}

  ad::Var<T> operator()(const Parameter& p);
  ad::Tape<T>& tape() const { return *tape_; }
  const std::vector<std::pair<const Parameter*, ad::Var<T>>>& bound() const { return bound_; }

 private:
  ad::Tape<T>* tape_;
  bool trainable_;
  std::unordered_map<const Parameter*, ad::Var<T>> cache_;
  std::vector<std::pair<const Parameter*, ad::Var<T>>> bound_;
};

class VlpModel {
 public:
  static VlpModel create(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  Architecture architecture() const { return config_.arch; }
  int input_size() const { return config_.input_size; }
  int embedding_dim() const { return config_.embedding_dim; }

  /// N: intermediate taps plus the final embedding.
  int tap_count() const { return config_.depth + 1; }
  std::vector<TapShape> tap_shapes() const;

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  const Parameter& param(const std::string& name) const;

  /// Graph-building forward passes. `image` is a (3 x S*S) node with
  /// S == input_size().
  template <typename T>
  std::vector<ad::Var<T>> image_taps(ParamBinder<T>& bind, ad::Var<T> image) const;
  template <typename T>
  ad::Var<T> text_embedding(ParamBinder<T>& bind, std::span<const int> ids) const;

  FeatureStack encode_image(const Image& image) const;
  std::vector<float> encode_text(const data::CaptionTokens& tokens) const;
  std::vector<float> encode_text(std::span<const int> ids) const;

  void save(const std::filesystem::path& path) const;
  static VlpModel load(const std::filesystem::path& path, std::optional<Architecture> expected = std::nullopt);

 private:
  void add_param(std::string name, ad::Matrix<float> value);
  template <typename T>
  ad::Var<T> transformer_block(ParamBinder<T>& bind, const std::string& prefix, ad::Var<T> h, int heads) const;
  template <typename T>
  ad::Var<T> linear(ParamBinder<T>& bind, const std::string& prefix, ad::Var<T> x) const;

  ModelConfig config_;
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Bilinearly resizes `image` to the model's input size when they differ.
Image prepare_input(const VlpModel& model, const Image& image);

template <typename T>
using ImageObjective = std::function<ad::Var<T>(ParamBinder<T>& bind, ad::Var<T> image)>;

/// d objective / d pixel, shaped (3 x H*W) like Image::to_matrix. The
/// objective must return a 1x1 node.
template <typename T>
ad::Matrix<T> input_gradient(const VlpModel& model, const ImageObjective<T>& objective, const Image& image);

}  // namespace maa::models
