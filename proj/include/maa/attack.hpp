#pragma once

#include "maa/data.hpp"
#include "maa/models.hpp"
#include "maa/rscrop.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace maa::attack {

/// How an intermediate tap is turned into the vector that enters a cosine.
enum class TapReduction { Flatten, TokenMean };

std::string_view tap_reduction_name(TapReduction r);
TapReduction parse_tap_reduction(std::string_view name);

struct AttackConfig {
  double epsilon_img = 4.0 / 255.0;
  int epsilon_txt = 1;
  int steps = 40;
  std::optional<double> step_size;  // defaults to epsilon_img / steps * 2.25
  std::vector<double> scale_set{1.25, 1.5, 1.75, 2.0};
  int rescale_period = 10;
  int batch_size = 4;
  std::size_t k_max = 96;
  std::optional<int> grid_step;  // defaults to the source model's patch/kernel size
  int beta1 = 1;
  std::optional<int> beta2;      // defaults to grid_step - 1
  bool use_resizing = true;
  bool use_sliding = true;
  bool use_mgsd = true;
  bool attack_text = true;
  bool parameter_study = false;  // admits scales below 1
  TapReduction reduction = TapReduction::Flatten;
  std::uint64_t seed = 0;

  double effective_step_size() const { return step_size ? *step_size : epsilon_img / steps * 2.25; }
  int effective_grid_step(const models::VlpModel& m) const { return grid_step ? *grid_step : m.config().patch_or_kernel; }
  int effective_beta2(const models::VlpModel& m) const { return beta2 ? *beta2 : effective_grid_step(m) - 1; }

  /// Throws std::invalid_argument naming the offending key.
  void validate() const;

  /// Stable hash of every field that influences the output.
  std::string hash() const;

  bool operator==(const AttackConfig&) const = default;
};

/// Named variants: "maa", "wo-resizing", "wo-sliding", "wo-rscrop",
/// "wo-mgsd", "pgd".
AttackConfig variant(const AttackConfig& base, std::string_view name);
std::vector<std::string> variant_names();

// --- similarity ------------------------------------------------------------

/// u.v / (|u||v|); 0 when either norm is below 1e-12 (then *degenerate is set).
double cosine(std::span<const float> u, std::span<const float> v, bool* degenerate = nullptr);

// --- image objective (graph form) ------------------------------------------

template <typename T>
using CropTaps = std::vector<std::vector<ad::Var<T>>>;  // [crop][tap]

template <typename T>
CropTaps<T> crop_taps(const models::VlpModel& model, models::ParamBinder<T>& bind, std::span<const ad::Var<T>> crops);

/// Intra-modal loss: sum over crops and taps of cos(f^i(crop), f^i(clean))
/// (final tap only without MGSD).
template <typename T>
ad::Var<T> intra_modal_loss(const CropTaps<T>& taps, const models::FeatureStack& clean, bool use_mgsd,
                            TapReduction reduction);

/// Cross-modal loss: sum over crops of cos(f_img(crop), f_txt(caption)) on
/// final embeddings.
template <typename T>
ad::Var<T> cross_modal_loss(const CropTaps<T>& taps, std::span<const float> text_embed);

template <typename T>
struct ImageLoss {
  ad::Var<T> intra;
  ad::Var<T> cross;
  ad::Var<T> total;
};

/// Image objective: intra + cross.
template <typename T>
ImageLoss<T> image_objective(const CropTaps<T>& taps, const models::FeatureStack& clean,
                             std::span<const float> text_embed, bool use_mgsd, TapReduction reduction);

// --- image objective (values) ---------------------------------------------

double intra_modal_loss(const models::VlpModel& model, const rscrop::CropBatch& crops,
                        const models::FeatureStack& clean, bool use_mgsd = true,
                        TapReduction reduction = TapReduction::Flatten);
double cross_modal_loss(const models::VlpModel& model, const rscrop::CropBatch& crops,
                        std::span<const float> text_embed);

struct LossValue {
  double intra = 0.0;
  double cross = 0.0;
  double total = 0.0;
};
LossValue image_objective(const models::VlpModel& model, const rscrop::CropBatch& crops,
                          const models::FeatureStack& clean, std::span<const float> text_embed, bool use_mgsd = true,
                          TapReduction reduction = TapReduction::Flatten);

// --- PGD driver -------------------------------------------------------------

struct TraceRow {
  int iteration = 0;
  double intra = 0.0;
  double cross = 0.0;
  double total = 0.0;
  double s_x = 1.0;
  double s_y = 1.0;
  std::size_t crops = 0;
};

struct ImageAttackResult {
  Image adv;
  std::vector<TraceRow> trace;
};

/// Crop plan used at `step` (0-based) of the attack on sample `sample_id`:
/// scales and jitter are redrawn at every rescale boundary from a stream
/// keyed by (seed, sample, window index).
rscrop::CropPlan plan_for_step(const models::VlpModel& model, const AttackConfig& cfg, std::uint64_t sample_id,
                               int step);

/// Signed-gradient PGD on the image objective. `image` must match the model input size.
ImageAttackResult pgd_attack(const models::VlpModel& model, const Image& image, const data::CaptionTokens& tokens,
                             const AttackConfig& cfg, std::uint64_t sample_id = 0);

// --- text attack -------------------------------------------------------------

/// Text objective: cos(f_txt(t_adv), f_txt(t)) + cos(f_txt(t_adv), f_img(x)).
double text_objective(const models::VlpModel& model, const data::CaptionTokens& adv_tokens,
                      std::span<const float> clean_text_embed, std::span<const float> clean_image_embed);
double text_objective(const models::VlpModel& model, const data::CaptionTokens& adv_tokens,
                      const data::CaptionTokens& clean_tokens, std::span<const float> clean_image_embed);

struct WordImportance {
  std::size_t position = 0;
  double score = 0.0;
};

/// Masks each position in turn and scores the summed cosine drop against the
/// clean caption and image embeddings; most important first, ties by index.
std::vector<WordImportance> word_importance(const models::VlpModel& model, const data::CaptionTokens& tokens,
                                            const data::Vocabulary& vocab, std::span<const float> clean_image_embed);
std::vector<std::size_t> rank_word_importance(const models::VlpModel& model, const data::CaptionTokens& tokens,
                                              const data::Vocabulary& vocab,
                                              std::span<const float> clean_image_embed);

class CandidateLexicon {
 public:
  CandidateLexicon() = default;

  /// Same-category substitutes: colors, shapes and relation heads.
  static CandidateLexicon from_categories(const data::WordCategories& categories);

  void add(const std::string& word, std::vector<std::string> substitutes);
  const std::vector<std::string>& candidates(const std::string& word) const;
  bool empty() const { return map_.empty(); }
  const std::map<std::string, std::vector<std::string>>& entries() const { return map_; }

  /// Throws if a word maps to itself or outside `vocab`.
  void validate(const data::Vocabulary& vocab) const;

 private:
  std::map<std::string, std::vector<std::string>> map_;
};

struct TextAttackResult {
  data::CaptionTokens tokens;
  std::vector<std::size_t> changed_positions;
  bool empty_lexicon = false;
};

TextAttackResult attack_text(const models::VlpModel& model, const data::CaptionTokens& tokens,
                             const data::Vocabulary& vocab, std::span<const float> clean_image_embed,
                             const CandidateLexicon& lexicon, int epsilon_txt);

// --- adversarial sets ---------------------------------------------------------

struct Provenance {
  std::string config_hash;
  std::string source_model;
  std::uint64_t seed = 0;
  std::string method;
};

struct AdversarialPair {
  std::size_t index = 0;  // dataset index of the clean pair
  Image clean_image;      // at the source model's input size
  Image adv_image;
  data::CaptionTokens clean_caption;
  data::CaptionTokens adv_caption;
  std::vector<TraceRow> trace;
};

struct AdversarialSet {
  Provenance provenance;
  double epsilon_img = 0.0;
  int epsilon_txt = 0;
  std::vector<AdversarialPair> pairs;
};

using AttackProgress = std::function<void(std::size_t done, std::size_t total)>;

/// Attacks every pair (images and, when enabled, captions) on `model`.
AdversarialSet attack_pairs(const models::VlpModel& model, const std::vector<data::Pair>& pairs,
                            const data::Vocabulary& vocab, const CandidateLexicon& lexicon, const AttackConfig& cfg,
                            const std::string& source_model_id, const std::string& method,
                            const AttackProgress& progress = {});

struct BudgetViolation {
  std::size_t index = 0;
  std::string what;
};

/// Independent post-hoc check of the L-infinity, pixel-range and word-edit
/// budgets.
std::vector<BudgetViolation> audit_budget(const AdversarialSet& set);

}  // namespace maa::attack
