#include "maa/attack.hpp"

#include "maa/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace maa::attack {

std::string_view tap_reduction_name(TapReduction r) { return r == TapReduction::Flatten ? "flatten" : "token-mean"; }

TapReduction parse_tap_reduction(std::string_view name) {
  if (name == "flatten") return TapReduction::Flatten;
  if (name == "token-mean") return TapReduction::TokenMean;
  throw std::invalid_argument("unknown tap reduction '" + std::string(name) + "' (expected flatten or token-mean)");
}

void AttackConfig::validate() const {
  auto bad = [](const std::string& key, const std::string& why) {
    throw std::invalid_argument("attack." + key + ": " + why);
  };
  if (!(epsilon_img >= 0.0) || !std::isfinite(epsilon_img)) bad("epsilon_img", "must be non-negative, got " + std::to_string(epsilon_img));
  if (epsilon_txt < 0) bad("epsilon_txt", "must be non-negative, got " + std::to_string(epsilon_txt));
  if (steps < 1) bad("steps", "must be at least 1, got " + std::to_string(steps));
  if (step_size && (!(*step_size > 0.0) || !std::isfinite(*step_size))) {
    bad("step_size", "must be positive, got " + std::to_string(*step_size));
  }
  if (scale_set.empty()) bad("scale_set", "must not be empty");
  for (double s : scale_set) {
    if (!(s > 0.0) || !std::isfinite(s)) bad("scale_set", "scales must be positive, got " + std::to_string(s));
    if (s < 1.0 && !parameter_study) bad("scale_set", "scale " + std::to_string(s) + " below 1 needs parameter_study = true");
  }
  if (rescale_period < 1 || rescale_period > steps) {
    bad("rescale_period", "must lie in [1, steps], got " + std::to_string(rescale_period));
  }
  if (batch_size < 1) bad("batch_size", "must be positive, got " + std::to_string(batch_size));
  if (k_max < 1) bad("k_max", "must be positive");
  if (grid_step && *grid_step < 2) bad("grid_step", "must be at least 2, got " + std::to_string(*grid_step));
  if (beta1 < 1) bad("beta1", "must be at least 1, got " + std::to_string(beta1));
  if (beta2 && *beta2 < beta1) bad("beta2", "must be at least beta1, got " + std::to_string(*beta2));
  if (beta2 && grid_step && *beta2 >= *grid_step) bad("beta2", "must be below grid_step");
}

std::string AttackConfig::hash() const {
  std::ostringstream os;
  os.precision(17);
  os << "eps_img=" << epsilon_img << ";eps_txt=" << epsilon_txt << ";steps=" << steps
     << ";step=" << effective_step_size() << ";scales=";
  for (double s : scale_set) os << s << ",";
  os << ";period=" << rescale_period << ";batch=" << batch_size << ";k_max=" << k_max
     << ";l=" << (grid_step ? *grid_step : -1) << ";b1=" << beta1 << ";b2=" << (beta2 ? *beta2 : -1)
     << ";resize=" << use_resizing << ";slide=" << use_sliding << ";mgsd=" << use_mgsd << ";text=" << attack_text
     << ";study=" << parameter_study << ";reduce=" << tap_reduction_name(reduction) << ";seed=" << seed;
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(os.str())));
  return buf;
}

std::vector<std::string> variant_names() { return {"maa", "wo-resizing", "wo-sliding", "wo-rscrop", "wo-mgsd", "pgd"}; }

AttackConfig variant(const AttackConfig& base, std::string_view name) {
  AttackConfig c = base;
  c.use_resizing = c.use_sliding = c.use_mgsd = true;
  if (name == "maa") return c;
  if (name == "wo-resizing") {
    c.use_resizing = false;
  } else if (name == "wo-sliding") {
    c.use_sliding = false;
  } else if (name == "wo-rscrop") {
    c.use_resizing = c.use_sliding = false;
  } else if (name == "wo-mgsd") {
    c.use_mgsd = false;
  } else if (name == "pgd") {
    c.use_resizing = c.use_sliding = c.use_mgsd = false;
  } else {
    throw std::invalid_argument("unknown attack variant '" + std::string(name) + "'");
  }
  return c;
}

double cosine(std::span<const float> u, std::span<const float> v, bool* degenerate) {
  if (u.size() != v.size()) throw std::invalid_argument("cosine: length mismatch");
  double uv = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += static_cast<double>(u[i]) * v[i];
    uu += static_cast<double>(u[i]) * u[i];
    vv += static_cast<double>(v[i]) * v[i];
  }
  const double nu = std::sqrt(uu), nv = std::sqrt(vv);
  if (degenerate) *degenerate = nu < 1e-12 || nv < 1e-12;
  if (nu < 1e-12 || nv < 1e-12) return 0.0;
  return std::clamp(uv / (nu * nv), -1.0, 1.0);
}

// --- graph objective -------------------------------------------------------------

template <typename T>
CropTaps<T> crop_taps(const models::VlpModel& model, models::ParamBinder<T>& bind, std::span<const ad::Var<T>> crops) {
  CropTaps<T> out;
  out.reserve(crops.size());
  for (const auto& c : crops) out.push_back(model.image_taps(bind, c));
  return out;
}

namespace {

template <typename T>
ad::Matrix<T> tap_matrix(const models::FeatureTap& tap) {
  ad::Matrix<T> m(tap.rows, tap.cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(tap.values[static_cast<std::size_t>(i)]);
  return m;
}

template <typename T>
ad::Var<T> tap_cosine(ad::Var<T> adv, const models::FeatureTap& clean, TapReduction reduction) {
  auto& tape = *adv.tape;
  if (adv.rows() != clean.rows || adv.cols() != clean.cols) {
    throw std::invalid_argument("intra_modal_loss: tap shape differs from the clean feature stack");
  }
  ad::Matrix<T> ref = tap_matrix<T>(clean);
  if (reduction == TapReduction::TokenMean && clean.rows > 1) {
    ad::Matrix<T> mean = ref.colwise().mean();
    return ad::cosine(ad::mean_rows(adv), tape.constant(std::move(mean)));
  }
  return ad::cosine(adv, tape.constant(std::move(ref)));
}

}  // namespace

template <typename T>
ad::Var<T> intra_modal_loss(const CropTaps<T>& taps, const models::FeatureStack& clean, bool use_mgsd,
                            TapReduction reduction) {
  if (taps.empty()) throw std::invalid_argument("intra_modal_loss: no crops");
  std::vector<ad::Var<T>> terms;
  for (const auto& crop : taps) {
    if (crop.size() != clean.size()) {
      throw std::invalid_argument("intra_modal_loss: model has " + std::to_string(crop.size()) +
                                  " taps but the clean stack has " + std::to_string(clean.size()));
    }
    const std::size_t first = use_mgsd ? 0 : crop.size() - 1;
    for (std::size_t i = first; i < crop.size(); ++i) terms.push_back(tap_cosine(crop[i], clean.taps[i], reduction));
  }
  return ad::sum_scalars(std::span<const ad::Var<T>>(terms));
}

template <typename T>
ad::Var<T> cross_modal_loss(const CropTaps<T>& taps, std::span<const float> text_embed) {
  if (taps.empty()) throw std::invalid_argument("cross_modal_loss: no crops");
  auto& tape = *taps.front().back().tape;
  ad::Matrix<T> t(1, static_cast<Eigen::Index>(text_embed.size()));
  for (std::size_t i = 0; i < text_embed.size(); ++i) t(0, static_cast<Eigen::Index>(i)) = static_cast<T>(text_embed[i]);
  auto text = tape.constant(std::move(t));
  std::vector<ad::Var<T>> terms;
  for (const auto& crop : taps) {
    const auto& e = crop.back();
    if (e.cols() != static_cast<Eigen::Index>(text_embed.size()) || e.rows() != 1) {
      throw std::invalid_argument("cross_modal_loss: image embedding has " + std::to_string(e.cols()) +
                                  " dims, text embedding " + std::to_string(text_embed.size()));
    }
    terms.push_back(ad::cosine(e, text));
  }
  return ad::sum_scalars(std::span<const ad::Var<T>>(terms));
}

template <typename T>
ImageLoss<T> image_objective(const CropTaps<T>& taps, const models::FeatureStack& clean,
                             std::span<const float> text_embed, bool use_mgsd, TapReduction reduction) {
  ImageLoss<T> l{intra_modal_loss(taps, clean, use_mgsd, reduction), cross_modal_loss(taps, text_embed), {}};
  l.total = ad::add(l.intra, l.cross);
  return l;
}

#define MAA_INSTANTIATE(T)                                                                                         \
  template CropTaps<T> crop_taps(const models::VlpModel&, models::ParamBinder<T>&, std::span<const ad::Var<T>>); \
  template ad::Var<T> intra_modal_loss(const CropTaps<T>&, const models::FeatureStack&, bool, TapReduction);      \
  template ad::Var<T> cross_modal_loss(const CropTaps<T>&, std::span<const float>);                               \
  template ImageLoss<T> image_objective(const CropTaps<T>&, const models::FeatureStack&, std::span<const float>,  \
                                        bool, TapReduction);
MAA_INSTANTIATE(float)
MAA_INSTANTIATE(double)
#undef MAA_INSTANTIATE

// --- value objective ----------------------------------------------------------------

namespace {

CropTaps<double> value_taps(const models::VlpModel& model, models::ParamBinder<double>& bind,
                            const rscrop::CropBatch& crops) {
  std::vector<ad::Var<double>> nodes;
  for (const auto& c : crops.crops) nodes.push_back(bind.tape().constant(c.image.to_matrix<double>()));
  return crop_taps(model, bind, std::span<const ad::Var<double>>(nodes));
}

}  // namespace

double intra_modal_loss(const models::VlpModel& model, const rscrop::CropBatch& crops,
                        const models::FeatureStack& clean, bool use_mgsd, TapReduction reduction) {
  ad::Tape<double> tape;
  models::ParamBinder<double> bind(tape, false);
  return intra_modal_loss(value_taps(model, bind, crops), clean, use_mgsd, reduction).scalar();
}

double cross_modal_loss(const models::VlpModel& model, const rscrop::CropBatch& crops,
                        std::span<const float> text_embed) {
  ad::Tape<double> tape;
  models::ParamBinder<double> bind(tape, false);
  return cross_modal_loss(value_taps(model, bind, crops), text_embed).scalar();
}

LossValue image_objective(const models::VlpModel& model, const rscrop::CropBatch& crops,
                          const models::FeatureStack& clean, std::span<const float> text_embed, bool use_mgsd,
                          TapReduction reduction) {
  ad::Tape<double> tape;
  models::ParamBinder<double> bind(tape, false);
  const auto l = image_objective(value_taps(model, bind, crops), clean, text_embed, use_mgsd, reduction);
  return {l.intra.scalar(), l.cross.scalar(), l.total.scalar()};
}

// --- PGD ---------------------------------------------------------------------------

rscrop::CropPlan plan_for_step(const models::VlpModel& model, const AttackConfig& cfg, std::uint64_t sample_id,
                               int step) {
  const auto window = static_cast<std::uint64_t>(step / cfg.rescale_period);
  Rng base = Rng(cfg.seed).substream("attack-sample", sample_id).substream("rescale-window", window);
  double s_x = 1.0, s_y = 1.0;
  if (cfg.use_resizing) {
    Rng scales = base.substream("scales");
    const auto n = static_cast<std::int64_t>(cfg.scale_set.size());
    s_x = cfg.scale_set[static_cast<std::size_t>(scales.uniform_int(0, n - 1))];
    s_y = cfg.scale_set[static_cast<std::size_t>(scales.uniform_int(0, n - 1))];
  }
  rscrop::CropParams p;
  p.window = model.input_size();
  p.grid_step = cfg.effective_grid_step(model);
  p.beta1 = cfg.beta1;
  p.beta2 = cfg.effective_beta2(model);
  p.k_max = cfg.k_max;
  p.sliding = cfg.use_sliding;
  Rng rx = base.substream("axis-x");
  Rng ry = base.substream("axis-y");
  return rscrop::plan_crops(model.input_size(), s_x, s_y, p, rx, ry);
}

ImageAttackResult pgd_attack(const models::VlpModel& model, const Image& image, const data::CaptionTokens& tokens,
                             const AttackConfig& cfg, std::uint64_t sample_id) {
  cfg.validate();
  if (image.height != model.input_size() || image.width != model.input_size()) {
    throw std::invalid_argument("pgd_attack: image is " + std::to_string(image.height) + "x" +
                                std::to_string(image.width) + ", model expects " + std::to_string(model.input_size()));
  }
  const models::FeatureStack clean = model.encode_image(image);
  const std::vector<float> text = model.encode_text(tokens);
  const double eps = cfg.epsilon_img;
  const double step = cfg.effective_step_size();

  ImageAttackResult result;
  result.adv = image;
  if (eps == 0.0) return result;
  rscrop::CropPlan plan;
  for (int it = 0; it < cfg.steps; ++it) {
    if (it % cfg.rescale_period == 0) plan = plan_for_step(model, cfg, sample_id, it);
    ad::Tape<float> tape;
    models::ParamBinder<float> bind(tape, false);
    auto x = tape.variable(result.adv.to_matrix<float>());
    const auto crops = rscrop::build_crops(x, result.adv.extent(), plan);
    const auto taps = crop_taps(model, bind, std::span<const ad::Var<float>>(crops));
    const auto loss = image_objective(taps, clean, text, cfg.use_mgsd, cfg.reduction);
    tape.backward(loss.total);
    const ad::Matrix<float> g = tape.grad(x);
    if (!g.allFinite() || !std::isfinite(loss.total.scalar())) {
      throw std::runtime_error("pgd_attack: non-finite gradient at iteration " + std::to_string(it + 1) +
                               " on sample " + std::to_string(sample_id) + " (loss " +
                               std::to_string(loss.total.scalar()) + ")");
    }
    result.trace.push_back({it + 1, loss.intra.scalar(), loss.cross.scalar(), loss.total.scalar(), plan.s_x, plan.s_y,
                            plan.size()});
    // descend: the attacker minimizes the similarities
    for (std::size_t i = 0; i < result.adv.data.size(); ++i) {
      const double gi = g.data()[i];
      const double sgn = gi > 0.0 ? 1.0 : (gi < 0.0 ? -1.0 : 0.0);
      const double x0 = image.data[i];
      double v = result.adv.data[i] - step * sgn;
      v = std::clamp(v, x0 - eps, x0 + eps);
      result.adv.data[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return result;
}

// --- text attack -----------------------------------------------------------------------

double text_objective(const models::VlpModel& model, const data::CaptionTokens& adv_tokens,
                      std::span<const float> clean_text_embed, std::span<const float> clean_image_embed) {
  const auto e = model.encode_text(adv_tokens);
  return cosine(e, clean_text_embed) + cosine(e, clean_image_embed);
}

double text_objective(const models::VlpModel& model, const data::CaptionTokens& adv_tokens,
                      const data::CaptionTokens& clean_tokens, std::span<const float> clean_image_embed) {
  return text_objective(model, adv_tokens, model.encode_text(clean_tokens), clean_image_embed);
}

std::vector<WordImportance> word_importance(const models::VlpModel& model, const data::CaptionTokens& tokens,
                                            const data::Vocabulary& vocab, std::span<const float> clean_image_embed) {
  if (tokens.length() == 0) throw std::invalid_argument("rank_word_importance: empty caption");
  if (vocab.size() == 0 || vocab.word(data::Vocabulary::kMaskId) != data::Vocabulary::kMaskToken) {
    throw std::invalid_argument("rank_word_importance: vocabulary lacks the mask token");
  }
  const auto clean = model.encode_text(tokens);
  const double base = 1.0 + cosine(clean, clean_image_embed);
  std::vector<WordImportance> out;
  for (std::size_t p = 0; p < tokens.length(); ++p) {
    std::vector<int> ids = tokens.ids;
    ids[p] = data::Vocabulary::kMaskId;
    const auto e = model.encode_text(std::span<const int>(ids));
    out.push_back({p, base - (cosine(e, clean) + cosine(e, clean_image_embed))});
  }
  std::stable_sort(out.begin(), out.end(), [](const WordImportance& a, const WordImportance& b) { return a.score > b.score; });
  return out;
}

std::vector<std::size_t> rank_word_importance(const models::VlpModel& model, const data::CaptionTokens& tokens,
                                              const data::Vocabulary& vocab,
                                              std::span<const float> clean_image_embed) {
  std::vector<std::size_t> order;
  for (const auto& w : word_importance(model, tokens, vocab, clean_image_embed)) order.push_back(w.position);
  return order;
}

CandidateLexicon CandidateLexicon::from_categories(const data::WordCategories& categories) {
  CandidateLexicon lex;
  auto group = [&](const std::vector<std::string>& words) {
    for (const auto& w : words) {
      std::vector<std::string> subs;
      for (const auto& o : words) {
        if (o != w) subs.push_back(o);
      }
      if (!subs.empty()) lex.add(w, std::move(subs));
    }
  };
  group(categories.colors);
  group(categories.shapes);
  for (const auto& g : categories.relation_groups) group(g);
  return lex;
}

void CandidateLexicon::add(const std::string& word, std::vector<std::string> substitutes) {
  auto& list = map_[word];
  for (auto& s : substitutes) {
    if (s == word) throw std::invalid_argument("lexicon: '" + word + "' may not map to itself");
    if (std::find(list.begin(), list.end(), s) == list.end()) list.push_back(std::move(s));
  }
}

const std::vector<std::string>& CandidateLexicon::candidates(const std::string& word) const {
  static const std::vector<std::string> none;
  auto it = map_.find(word);
  return it == map_.end() ? none : it->second;
}

void CandidateLexicon::validate(const data::Vocabulary& vocab) const {
  for (const auto& [w, subs] : map_) {
    for (const auto& s : subs) {
      if (s == w) throw std::invalid_argument("lexicon: '" + w + "' maps to itself");
      if (!vocab.contains(s)) throw std::invalid_argument("lexicon: substitute '" + s + "' for '" + w + "' is not in the vocabulary");
    }
  }
}

TextAttackResult attack_text(const models::VlpModel& model, const data::CaptionTokens& tokens,
                             const data::Vocabulary& vocab, std::span<const float> clean_image_embed,
                             const CandidateLexicon& lexicon, int epsilon_txt) {
  TextAttackResult r;
  r.tokens = tokens;
  if (epsilon_txt <= 0) return r;
  if (lexicon.empty()) {
    r.empty_lexicon = true;
    return r;
  }
  const auto clean = model.encode_text(tokens);
  for (std::size_t pos : rank_word_importance(model, tokens, vocab, clean_image_embed)) {
    if (static_cast<int>(r.changed_positions.size()) >= epsilon_txt) break;
    const auto& cands = lexicon.candidates(tokens.words[pos]);
    std::optional<std::pair<double, std::string>> best;
    for (const auto& c : cands) {
      if (!vocab.contains(c)) continue;
      auto trial = r.tokens;
      trial.words[pos] = c;
      trial.ids[pos] = vocab.id(c);
      const double v = text_objective(model, trial, clean, clean_image_embed);
      if (!best || v < best->first) best = {v, c};
    }
    if (!best) continue;
    r.tokens.words[pos] = best->second;
    r.tokens.ids[pos] = vocab.id(best->second);
    r.changed_positions.push_back(pos);
  }
  return r;
}

// --- sets ---------------------------------------------------------------------------------

AdversarialSet attack_pairs(const models::VlpModel& model, const std::vector<data::Pair>& pairs,
                            const data::Vocabulary& vocab, const CandidateLexicon& lexicon, const AttackConfig& cfg,
                            const std::string& source_model_id, const std::string& method,
                            const AttackProgress& progress) {
  cfg.validate();
  AdversarialSet set;
  set.provenance = {cfg.hash(), source_model_id, cfg.seed, method};
  set.epsilon_img = cfg.epsilon_img;
  set.epsilon_txt = cfg.attack_text ? cfg.epsilon_txt : 0;
  // samples are independent; batch_size only groups progress reports
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    AdversarialPair ap;
    ap.index = p.index;
    ap.clean_image = models::prepare_input(model, p.image);
    ap.clean_caption = p.caption;
    auto img = pgd_attack(model, ap.clean_image, p.caption, cfg, p.index);
    ap.adv_image = std::move(img.adv);
    ap.trace = std::move(img.trace);
    ap.adv_caption = p.caption;
    if (cfg.attack_text && cfg.epsilon_txt > 0) {
      const auto clean_img = model.encode_image(ap.clean_image).final_embedding().values;
      ap.adv_caption = attack_text(model, p.caption, vocab, clean_img, lexicon, cfg.epsilon_txt).tokens;
    }
    set.pairs.push_back(std::move(ap));
    if (progress && ((i + 1) % batch == 0 || i + 1 == pairs.size())) progress(i + 1, pairs.size());
  }
  return set;
}

std::vector<BudgetViolation> audit_budget(const AdversarialSet& set) {
  std::vector<BudgetViolation> v;
  for (const auto& p : set.pairs) {
    const auto& a = p.adv_image;
    const auto& c = p.clean_image;
    if (a.height != c.height || a.width != c.width || a.data.size() != c.data.size()) {
      v.push_back({p.index, "adversarial image size differs from the clean image"});
      continue;
    }
    double worst = 0.0;
    bool range_ok = true;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
      const double av = a.data[i];
      if (!std::isfinite(av) || av < 0.0 || av > 1.0) range_ok = false;
      worst = std::max(worst, std::abs(av - static_cast<double>(c.data[i])));
    }
    if (!range_ok) v.push_back({p.index, "pixel outside [0, 1]"});
    if (worst > set.epsilon_img + 1e-6) {
      v.push_back({p.index, "L-infinity distance " + std::to_string(worst) + " exceeds epsilon " +
                                std::to_string(set.epsilon_img)});
    }
    if (p.adv_caption.length() != p.clean_caption.length()) {
      v.push_back({p.index, "adversarial caption length changed"});
    }
    const auto edits = data::word_edit_distance(p.adv_caption, p.clean_caption);
    if (edits > static_cast<std::size_t>(set.epsilon_txt)) {
      v.push_back({p.index, std::to_string(edits) + " words changed, budget " + std::to_string(set.epsilon_txt)});
    }
  }
  return v;
}

}  // namespace maa::attack
