// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [AC1 AC5 ...]
//
// With no arguments every criterion runs. Criteria that need trained models
// (AC1, AC4, AC5-AC10) share one dataset and one pair of trained encoders.
// AC4 audits the adversarial sets produced by AC6-AC8 in the same run.

#include "maa/attack.hpp"
#include "maa/config.hpp"
#include "maa/data.hpp"
#include "maa/eval.hpp"
#include "maa/models.hpp"
#include "maa/pipeline.hpp"
#include "maa/random.hpp"
#include "maa/rscrop.hpp"
#include "maa/train.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace maa;
namespace fs = std::filesystem;
using models::Architecture;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Outcome {
  std::string id;
  bool pass = false;
  std::string detail;
};

std::vector<Outcome> g_outcomes;

void report(const std::string& id, bool pass, const std::string& detail) {
  g_outcomes.push_back({id, pass, detail});
  std::cout << id << " " << (pass ? "PASS" : "FAIL") << "  " << detail << std::endl;
}

void note(const std::string& text) { std::cerr << "[acceptance] " << text << std::endl; }

// ---- naive oracles -----------------------------------------------------------

template <typename A, typename B>
double loop_cosine(const A& a, const B& b, std::size_t n) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ab += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    aa += static_cast<double>(a[i]) * static_cast<double>(a[i]);
    bb += static_cast<double>(b[i]) * static_cast<double>(b[i]);
  }
  if (std::sqrt(aa) < 1e-12 || std::sqrt(bb) < 1e-12) return 0.0;
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

std::vector<std::vector<ad::Matrix<double>>> double_taps(const models::VlpModel& m, const rscrop::CropBatch& crops) {
  std::vector<std::vector<ad::Matrix<double>>> out;
  for (const auto& c : crops.crops) {
    ad::Tape<double> t;
    models::ParamBinder<double> b(t, false);
    std::vector<ad::Matrix<double>> taps;
    for (const auto& v : m.image_taps(b, t.constant(c.image.to_matrix<double>()))) taps.push_back(v.value());
    out.push_back(std::move(taps));
  }
  return out;
}

double naive_intra(const std::vector<std::vector<ad::Matrix<double>>>& taps, const models::FeatureStack& clean) {
  double sum = 0;
  for (const auto& crop : taps) {
    for (std::size_t i = 0; i < crop.size(); ++i) {
      sum += loop_cosine(crop[i].data(), clean.taps[i].values.data(), clean.taps[i].values.size());
    }
  }
  return sum;
}

double naive_cross(const std::vector<std::vector<ad::Matrix<double>>>& taps, const std::vector<float>& text) {
  double sum = 0;
  for (const auto& crop : taps) sum += loop_cosine(crop.back().data(), text.data(), text.size());
  return sum;
}

double naive_text_objective(const models::VlpModel& m, const data::CaptionTokens& adv, const std::vector<float>& clean_text,
                            const std::vector<float>& clean_image) {
  const auto e = m.encode_text(adv);
  return loop_cosine(e.data(), clean_text.data(), e.size()) + loop_cosine(e.data(), clean_image.data(), e.size());
}

// ---- shared state ------------------------------------------------------------

struct Lab {
  fs::path work;
  config::RunConfig cfg;
  std::optional<data::DatasetHandle> dataset;
  std::vector<data::Pair> val_pairs;
  std::vector<data::Pair> test_pairs;
  std::optional<models::VlpModel> source;  // patch transformer
  std::optional<models::VlpModel> target;  // residual cnn
  std::map<std::string, double> train_seconds;
  std::map<std::string, train::ValidationScore> val_scores;
  std::optional<attack::AdversarialSet> whitebox_set;
  std::optional<eval::AblationResult> ablation;
  bool train_failed = false;
};

attack::AttackConfig attack_base(const Lab& lab) {
  auto a = lab.cfg.attack;
  a.epsilon_img = 8.0 / 255.0;
  return a;
}

void ensure_data(Lab& lab) {
  if (lab.dataset) return;
  const auto t0 = Clock::now();
  lab.dataset = data::generate_dataset(lab.cfg.data, lab.work / "dataset");
  lab.val_pairs = data::load_split(*lab.dataset, data::Split::Val);
  lab.test_pairs = data::load_split(*lab.dataset, data::Split::Test);
  note("dataset: " + std::to_string(lab.dataset->size()) + " pairs in " + fmt("%.1f", seconds_since(t0)) + " s");
}

void ensure_models(Lab& lab) {
  if (lab.source || lab.train_failed) return;
  ensure_data(lab);
  if (const char* dir = std::getenv("MAA_ACCEPTANCE_CHECKPOINTS")) {
    // development shortcut: reuse encoders from an earlier run (AC5 then fails for lack of timings)
    lab.source = models::VlpModel::load(fs::path(dir) / "patch-transformer.ckpt", Architecture::PatchTransformer);
    lab.target = models::VlpModel::load(fs::path(dir) / "residual-cnn.ckpt", Architecture::ResidualCnn);
    return;
  }
  const int vocab = static_cast<int>(lab.dataset->vocab().size());
  for (const auto& entry : lab.cfg.models) {
    const auto id = entry.id();
    const auto t0 = Clock::now();
    auto result = train::train_contrastive(entry.train, *lab.dataset, entry.model_config(vocab, entry.train.seed),
                                           [&](const train::EpochLog& e) {
                                             note(id + " epoch " + std::to_string(e.epoch) + " loss " +
                                                  fmt("%.4f", e.train_loss) + " val R@1 " + fmt("%.2f", e.val_r1_i2t) +
                                                  "/" + fmt("%.2f", e.val_r1_t2i));
                                           });
    lab.train_seconds[id] = seconds_since(t0);
    lab.val_scores[id] = train::evaluate_split(result.model, lab.val_pairs);
    result.model.save(lab.work / (id + ".ckpt"));
    if (entry.arch == Architecture::PatchTransformer) {
      lab.source = std::move(result.model);
    } else {
      lab.target = std::move(result.model);
    }
  }
  if (!lab.source || !lab.target) {
    lab.train_failed = true;
    throw std::runtime_error("default config lacks a transformer and a cnn");
  }
}

attack::CandidateLexicon lexicon(const Lab& lab) {
  return attack::CandidateLexicon::from_categories(data::word_categories(lab.dataset->spec()));
}

// ---- criteria ----------------------------------------------------------------

void ac1(Lab& lab) {
  ensure_models(lab);
  const auto t0 = Clock::now();
  double worst = 0;
  std::array<std::size_t, 2> coords{};
  std::size_t skipped = 0;
  for (const auto* model : {&*lab.source, &*lab.target}) {
    const int s = model->input_size();
    const auto& pair = lab.test_pairs[3];
    const auto img = models::prepare_input(*model, pair.image);
    const auto clean = model->encode_image(img);
    const auto text = model->encode_text(pair.caption);
    // start from a perturbed point so no pixel sits at a clip boundary
    Rng noise(11);
    auto x_img = img;
    for (auto& v : x_img.data) v = std::clamp(v + static_cast<float>(noise.uniform(-0.03, 0.03)), 0.02f, 0.98f);
    auto cfg = attack_base(lab);
    cfg.k_max = 30;
    cfg.scale_set = {1.25};
    const auto plan = attack::plan_for_step(*model, cfg, pair.index, 0);
    if (plan.s_x == 1.0 && plan.s_y == 1.0) throw std::logic_error("AC1 plan did not resize");

    auto losses = [&](models::ParamBinder<double>& b, ad::Var<double> x) {
      const auto crops = rscrop::build_crops(x, ad::Extent{3, s, s}, plan);
      const auto taps = attack::crop_taps(*model, b, std::span<const ad::Var<double>>(crops));
      return attack::image_objective(taps, clean, text, true, attack::TapReduction::Flatten);
    };
    std::vector<ad::Matrix<double>> grads;
    for (int which = 0; which < 3; ++which) {
      models::ImageObjective<double> obj = [&, which](models::ParamBinder<double>& b, ad::Var<double> x) {
        const auto l = losses(b, x);
        return which == 0 ? l.intra : which == 1 ? l.cross : l.total;
      };
      grads.push_back(models::input_gradient<double>(*model, obj, x_img));
    }
    const auto x0 = x_img.to_matrix<double>();
    auto eval_at = [&](const ad::Matrix<double>& x) {
      ad::Tape<double> t;
      models::ParamBinder<double> b(t, false);
      const auto l = losses(b, t.constant(x));
      return std::array<double, 3>{l.intra.scalar(), l.cross.scalar(), l.total.scalar()};
    };
    // sample coordinates inside the region the crops see
    Rng pick(model == &*lab.source ? 21 : 22);
    const double h = 1e-6;
    const auto f0 = eval_at(x0);
    auto& done = coords[model == &*lab.source ? 0 : 1];
    for (int draws = 0; done < 64 && draws < 2000; ++draws) {
      const auto i = pick.uniform_int(0, x0.size() - 1);
      if (std::abs(grads[2].data()[i]) <= 1e-7) continue;  // pixel outside every crop
      auto plus = x0, minus = x0;
      plus.data()[i] += h;
      minus.data()[i] -= h;
      const auto fp = eval_at(plus), fm = eval_at(minus);
      // A ReLU kink inside [x - h, x + h] makes the one-sided slopes disagree;
      // central differences are meaningless there, so another pixel is drawn.
      bool kink = false;
      for (int which = 0; which < 3; ++which) {
        const double fwd = (fp[which] - f0[which]) / h, bwd = (f0[which] - fm[which]) / h;
        const double roundoff = 8 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(f0[which])) / h;
        kink = kink || std::abs(fwd - bwd) > 1e-3 * std::max(std::abs(fwd), std::abs(bwd)) + roundoff;
      }
      if (kink) {
        ++skipped;
        continue;
      }
      for (int which = 0; which < 3; ++which) {
        const double fd = (fp[which] - fm[which]) / (2 * h);
        const double g = grads[which].data()[i];
        const double denom = std::max({std::abs(fd), std::abs(g), 1e-8});
        worst = std::max(worst, std::abs(fd - g) / denom);
      }
      ++done;
    }
  }
  const double secs = seconds_since(t0);
  report("AC1", worst <= 1e-3 && secs < 120 && coords[0] >= 64 && coords[1] >= 64,
         "max_rel_err=" + fmt("%.2e", worst) + " over " + std::to_string(coords[0]) + " transformer + " +
             std::to_string(coords[1]) + " cnn coordinates x 3 objectives (" + std::to_string(skipped) +
             " draws straddling a ReLU kink redrawn); " + fmt("%.1f", secs) + " s (limits 1e-3, 120 s)");
}

void ac2() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  int failures = 0;
  std::string first_failure;
  auto fail = [&](const std::string& what) {
    if (failures++ == 0) first_failure = what;
  };
  for (int trial = 0; trial < 200; ++trial) {
    const int image = std::vector<int>{16, 32, 48}[rng.uniform_int(0, 2)];
    const double sx = rng.uniform(1.0, 2.5), sy = rng.uniform(1.0, 2.5);
    rscrop::CropParams p;
    p.window = image;
    p.grid_step = static_cast<int>(rng.uniform_int(2, 8));
    p.beta1 = static_cast<int>(rng.uniform_int(1, p.grid_step - 1));
    p.beta2 = static_cast<int>(rng.uniform_int(p.beta1, p.grid_step - 1));
    const int sw = rscrop::scaled_size(image, sx), sh = rscrop::scaled_size(image, sy);
    const std::size_t grid = static_cast<std::size_t>((sw - image) / p.grid_step + 2) * ((sh - image) / p.grid_step + 2);
    p.k_max = grid + static_cast<std::size_t>(rng.uniform_int(0, 40));
    Rng rx(rng.next_u64()), ry(rng.next_u64());
    rscrop::CropPlan plan;
    try {
      plan = rscrop::plan_crops(image, sx, sy, p, rx, ry);
    } catch (const std::exception& e) {
      fail(std::string("plan_crops threw: ") + e.what());
      continue;
    }
    const std::string tag = "trial " + std::to_string(trial) + ": ";
    if (plan.scaled_w != static_cast<int>(std::floor(image * sx)) || plan.scaled_h != static_cast<int>(std::floor(image * sy))) {
      fail(tag + "scaled size is not floor(n*s)");
    }
    for (const auto* axis : {&plan.x_axis, &plan.y_axis}) {
      try {
        rscrop::check_schedule(*axis);
      } catch (const std::exception& e) {
        fail(tag + e.what());
      }
      // offsets rebuilt from the recorded alphas with the closed-form rule
      const int S = axis->scaled_size, W = axis->window, l = axis->grid_step, last = S - W;
      std::set<int> want{last};
      for (int j = 0; j * l <= last; ++j) {
        want.insert(j * l);
        if (static_cast<std::size_t>(j) < axis->alphas.size()) {
          const int a = axis->alphas[j];
          if (a < p.beta1 || a > p.beta2) fail(tag + "alpha outside [beta1, beta2]");
          if (j * l + a <= last) want.insert(j * l + a);
        }
      }
      if (std::vector<int>(want.begin(), want.end()) != axis->offsets) fail(tag + "offsets differ from the formula");
      for (std::size_t i = 1; i < axis->offsets.size(); ++i) {
        if (axis->offsets[i] - axis->offsets[i - 1] > W) fail(tag + "gap wider than the window");
      }
    }
    std::vector<char> mask(static_cast<std::size_t>(plan.scaled_w) * plan.scaled_h, 0);
    for (const auto& w : plan.windows) {
      if (w.x < 0 || w.y < 0 || w.x + plan.window > plan.scaled_w || w.y + plan.window > plan.scaled_h) {
        fail(tag + "window outside the scaled image");
        continue;
      }
      for (int y = w.y; y < w.y + plan.window; ++y) {
        for (int x = w.x; x < w.x + plan.window; ++x) mask[static_cast<std::size_t>(y) * plan.scaled_w + x] = 1;
      }
    }
    const bool full = std::all_of(mask.begin(), mask.end(), [](char c) { return c != 0; });
    if (!full) fail(tag + "windows leave pixels uncovered");
    if (rscrop::covers(plan) != full) fail(tag + "covers() disagrees with the mask oracle");
    if (plan.size() > p.k_max) fail(tag + "more windows than k_max");
  }
  const double secs = seconds_since(t0);
  report("AC2", failures == 0 && secs < 60,
         "200 random configurations, " + std::to_string(failures) + " violations" +
             (failures ? " (first: " + first_failure + ")" : std::string()) + "; " + fmt("%.2f", secs) +
             " s (limit 60 s)");
}

void ac3() {
  const auto s = rscrop::axis_schedule(48, 32, 4, 1, 3, rscrop::alpha_sequence({2, 1, 3, 2}));
  const std::vector<int> want{0, 2, 4, 5, 8, 11, 12, 14, 16};
  std::string got;
  for (int o : s.offsets) got += (got.empty() ? "" : ",") + std::to_string(o);
  report("AC3", s.offsets == want, "offsets {" + got + "} (expected {0,2,4,5,8,11,12,14,16})");
}

// Independent of attack::audit_budget.
std::size_t budget_violations(const attack::AdversarialSet& set, double eps_img, int eps_txt) {
  std::size_t bad = 0;
  for (const auto& p : set.pairs) {
    if (p.adv_image.data.size() != p.clean_image.data.size()) {
      ++bad;
      continue;
    }
    for (std::size_t i = 0; i < p.adv_image.data.size(); ++i) {
      const double a = p.adv_image.data[i], c = p.clean_image.data[i];
      if (!(std::abs(a - c) <= eps_img + 1e-6) || a < 0.0 || a > 1.0) {
        ++bad;
        break;
      }
    }
    std::size_t edits = p.adv_caption.words.size() == p.clean_caption.words.size() ? 0 : 1000;
    for (std::size_t i = 0; i < std::min(p.adv_caption.words.size(), p.clean_caption.words.size()); ++i) {
      edits += p.adv_caption.words[i] != p.clean_caption.words[i];
    }
    if (edits > static_cast<std::size_t>(eps_txt)) ++bad;
  }
  return bad;
}

void ac6(Lab& lab) {
  ensure_models(lab);
  const auto t0 = Clock::now();
  auto cfg = attack::variant(attack_base(lab), "maa");
  cfg.seed = 1;
  const std::vector<data::Pair> subset(lab.test_pairs.begin(), lab.test_pairs.begin() + 64);
  lab.whitebox_set = attack::attack_pairs(*lab.source, subset, lab.dataset->vocab(), lexicon(lab), cfg,
                                          "patch-transformer", "maa", [&](std::size_t done, std::size_t total) {
                                            if (done % 16 == 0) note("white-box attack " + std::to_string(done) + "/" + std::to_string(total));
                                          });
  const auto gallery = eval::embed_gallery(*lab.source, "patch-transformer", lab.test_pairs);
  const auto r = eval::transfer_eval(*lab.whitebox_set, *lab.source, gallery, lab.dataset->vocab());
  const double secs = seconds_since(t0);
  const double i2t = r.i2t.asr[0].value_or(0.0), t2i = r.t2i.asr[0].value_or(0.0);
  report("AC6", i2t >= 90.0 && t2i >= 90.0 && secs < 900,
         "white-box ASR@R1 I2T " + fmt("%.2f", i2t) + "% / T2I " + fmt("%.2f", t2i) + "% over " +
             std::to_string(r.i2t.queries) + " pairs at eps 8/255 (threshold 90%); " + fmt("%.1f", secs) +
             " s (limit 900 s)");

  // not gated: how much of the above the image perturbation achieves alone
  cfg.attack_text = false;
  const auto image_only = attack::attack_pairs(*lab.source, subset, lab.dataset->vocab(), lexicon(lab), cfg,
                                               "patch-transformer", "maa-image-only");
  const auto ri = eval::transfer_eval(image_only, *lab.source, gallery, lab.dataset->vocab());
  std::cout << "  info: image-only MAA white-box ASR@R1 I2T " << fmt("%.2f", ri.i2t.asr[0].value_or(0.0)) << "% / T2I "
            << fmt("%.2f", ri.t2i.asr[0].value_or(0.0)) << "%" << std::endl;
}

void ensure_ablation(Lab& lab) {
  if (lab.ablation) return;
  ensure_models(lab);
  const auto t0 = Clock::now();
  eval::AblationSpec spec;
  spec.variants = attack::variant_names();
  spec.seeds = {1, 2, 3};
  spec.attacked_pairs = 64;
  lab.ablation = eval::ablation_suite({"patch-transformer", &*lab.source}, {{"residual-cnn", &*lab.target}},
                                      lab.test_pairs, lab.dataset->vocab(), lexicon(lab), attack_base(lab), spec,
                                      [](const std::string& m) { note(m); });
  note("ablation suite: " + fmt("%.0f", seconds_since(t0)) + " s");
  std::ofstream(lab.work / "ablation_comparison.csv") << eval::comparison_csv(lab.ablation->matrices);
  std::ofstream(lab.work / "ablation.csv") << eval::reports_to_csv(lab.ablation->matrices);
}

const eval::TransferMatrix& matrix(const Lab& lab, const std::string& method) {
  for (const auto& m : lab.ablation->matrices) {
    if (m.method == method) return m;
  }
  throw std::logic_error("no results for " + method);
}

double transfer_asr(const Lab& lab, const std::string& method, eval::Direction d) {
  return eval::mean_asr(matrix(lab, method), "patch-transformer", "residual-cnn", d).value_or(0.0);
}

void ac7(Lab& lab) {
  ensure_ablation(lab);
  using eval::Direction;
  const double maa_i = transfer_asr(lab, "maa", Direction::ImageToText);
  const double pgd_i = transfer_asr(lab, "pgd", Direction::ImageToText);
  const double maa_t = transfer_asr(lab, "maa", Direction::TextToImage);
  const double pgd_t = transfer_asr(lab, "pgd", Direction::TextToImage);
  report("AC7", maa_i >= pgd_i,
         "transformer->cnn ASR@R1 (3-seed mean) I2T MAA " + fmt("%.2f", maa_i) + " vs PGD " + fmt("%.2f", pgd_i) +
             " (margin " + fmt("%+.2f", maa_i - pgd_i) + "); T2I MAA " + fmt("%.2f", maa_t) + " vs PGD " +
             fmt("%.2f", pgd_t) + " (margin " + fmt("%+.2f", maa_t - pgd_t) + ")");
}

void ac8(Lab& lab) {
  ensure_ablation(lab);
  using eval::Direction;
  const double full = transfer_asr(lab, "maa", Direction::ImageToText);
  bool pass = true;
  std::string detail = "transformer->cnn I2T ASR@R1 (3-seed mean): maa " + fmt("%.2f", full);
  for (const char* v : {"wo-rscrop", "wo-sliding", "wo-mgsd"}) {
    const double a = transfer_asr(lab, v, Direction::ImageToText);
    pass = pass && full >= a;
    detail += std::string(", ") + v + " " + fmt("%.2f", a) + " (" + fmt("%+.2f", full - a) + ")";
  }
  report("AC8", pass, detail);
  std::cout << "  variant table (mean ASR %, cross-architecture and white-box):\n";
  std::istringstream rows(eval::comparison_csv(lab.ablation->matrices));
  for (std::string line; std::getline(rows, line);) std::cout << "    " << line << "\n";
}

void ac4(Lab& lab) {
  std::vector<const attack::AdversarialSet*> sets;
  if (lab.whitebox_set) sets.push_back(&*lab.whitebox_set);
  if (lab.ablation) {
    for (const auto& r : lab.ablation->runs) sets.push_back(&r.set);
  }
  std::size_t images = 0, violations = 0;
  for (const auto* s : sets) {
    images += s->pairs.size();
    violations += attack::audit_budget(*s).size();
    violations += budget_violations(*s, s->epsilon_img, s->epsilon_txt);
  }
  report("AC4", !sets.empty() && violations == 0,
         std::to_string(violations) + " violations across " + std::to_string(sets.size()) + " adversarial sets (" +
             std::to_string(images) + " image/caption pairs)");
}

void ac5(Lab& lab) {
  ensure_models(lab);
  bool pass = lab.val_scores.size() == 2;
  std::string detail;
  for (const auto& [id, score] : lab.val_scores) {
    const double secs = lab.train_seconds[id];
    pass = pass && score.r1_i2t >= 80.0 && score.r1_t2i >= 80.0 && secs <= 600.0;
    detail += (detail.empty() ? "" : "; ") + id + " val R@1 I2T " + fmt("%.2f", score.r1_i2t) + "% T2I " +
              fmt("%.2f", score.r1_t2i) + "% in " + fmt("%.0f", secs) + " s";
  }
  report("AC5", pass, detail + " (threshold 80% over " + std::to_string(lab.val_pairs.size()) + " pairs, 600 s)");
}

void ac9(Lab& lab) {
  ensure_models(lab);
  const auto& vocab = lab.dataset->vocab();
  const auto lex = lexicon(lab);
  const auto& m = *lab.source;
  int mismatches = 0, budget = 0, n = 0;
  for (std::size_t k = 0; k < 32; ++k) {
    const auto& pair = lab.test_pairs[k];
    const auto img = m.encode_image(models::prepare_input(m, pair.image)).final_embedding().values;
    const auto& cap = pair.caption;
    const auto clean = m.encode_text(cap);
    // importance: summed cosine drop under masking, largest first, ties to the lower index
    std::vector<std::pair<double, std::size_t>> scores;
    const double base = loop_cosine(clean.data(), clean.data(), clean.size()) + loop_cosine(clean.data(), img.data(), img.size());
    for (std::size_t p = 0; p < cap.length(); ++p) {
      auto masked = cap.ids;
      masked[p] = data::Vocabulary::kMaskId;
      const auto e = m.encode_text(std::span<const int>(masked));
      scores.push_back({base - loop_cosine(e.data(), clean.data(), e.size()) - loop_cosine(e.data(), img.data(), e.size()), p});
    }
    std::stable_sort(scores.begin(), scores.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::optional<std::size_t> pos;
    for (const auto& [score, p] : scores) {
      if (!lex.candidates(cap.words[p]).empty()) {
        pos = p;
        break;
      }
    }
    const auto got = attack::attack_text(m, cap, vocab, img, lex, 1);
    ++n;
    budget += data::word_edit_distance(got.tokens, cap) > 1;
    if (!pos) {
      mismatches += !(got.tokens == cap);
      continue;
    }
    double best = 1e300;
    data::CaptionTokens want;
    for (const auto& c : lex.candidates(cap.words[*pos])) {
      auto trial = cap;
      trial.words[*pos] = c;
      trial.ids[*pos] = vocab.id(c);
      const double v = naive_text_objective(m, trial, clean, img);
      if (v < best) best = v, want = trial;
    }
    mismatches += !(got.tokens == want);
    const auto two = attack::attack_text(m, cap, vocab, img, lex, 2);
    budget += data::word_edit_distance(two.tokens, cap) > 2;
  }
  report("AC9", mismatches == 0 && budget == 0,
         std::to_string(n - mismatches) + "/" + std::to_string(n) + " substitutions equal the brute-force argmin; " +
             std::to_string(budget) + " outputs over the word budget");
}

void ac10(Lab& lab) {
  ensure_models(lab);
  double worst = 0, worst_sum = 0;
  int instances = 0;
  for (int k = 0; k < 32; ++k) {
    const auto& m = k % 2 == 0 ? *lab.source : *lab.target;
    const auto& pair = lab.test_pairs[static_cast<std::size_t>(k)];
    const auto& other = lab.test_pairs[static_cast<std::size_t>(k + 40)];
    const auto clean_img = models::prepare_input(m, pair.image);
    Rng noise(500 + k);
    auto adv = clean_img;
    for (auto& v : adv.data) v = std::clamp(v + static_cast<float>(noise.uniform(-8.0 / 255, 8.0 / 255)), 0.0f, 1.0f);
    const auto clean = m.encode_image(clean_img);
    const auto text = m.encode_text(k % 4 < 2 ? pair.caption : other.caption);
    auto cfg = attack_base(lab);
    cfg.k_max = 30;
    cfg.scale_set = {1.25};
    const auto crops = rscrop::build_crops(adv, attack::plan_for_step(m, cfg, pair.index, k % 20));
    const auto taps = double_taps(m, crops);
    const auto l = attack::image_objective(m, crops, clean, text);
    worst = std::max({worst, std::abs(l.intra - naive_intra(taps, clean)), std::abs(l.cross - naive_cross(taps, text))});
    worst_sum = std::max(worst_sum, std::abs(l.total - (l.intra + l.cross)));

    auto adv_caption = pair.caption;
    adv_caption.words[1] = adv_caption.words[1] == "red" ? "blue" : "red";
    adv_caption.ids[1] = lab.dataset->vocab().id(adv_caption.words[1]);
    const auto clean_text = m.encode_text(pair.caption);
    const auto img_embed = clean.final_embedding().values;
    worst = std::max(worst, std::abs(attack::text_objective(m, adv_caption, clean_text, img_embed) -
                                     naive_text_objective(m, adv_caption, clean_text, img_embed)));
    ++instances;
  }
  report("AC10", worst <= 1e-6 && worst_sum <= 1e-9,
         "max |impl - naive| over intra, cross and text objectives = " + fmt("%.2e", worst) + " (limit 1e-6); max |total - (intra + cross)| = " +
             fmt("%.2e", worst_sum) + " (limit 1e-9); " + std::to_string(instances) + " instances");
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Relative path -> bytes of every file under `root` matching the filter.
std::map<std::string, std::string> snapshot(const fs::path& root, const std::function<bool(const fs::path&)>& keep) {
  std::map<std::string, std::string> out;
  if (!fs::exists(root)) return out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && keep(e.path())) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return out;
}

void ac11(Lab& lab) {
  const auto t0 = Clock::now();
  auto run = [&](const std::string& name) {
    const auto root = lab.work / "determinism" / name;
    fs::remove_all(root);
    const auto cfg = config::parse(
        "[run]\noutput_root = " + root.string() + "\nrun_id = det\nseed = 5\n"
        "[data]\nnum_pairs = 320\nsplit_fractions = 0.75, 0.125, 0.125\n"
        "[train.patch-transformer]\nepochs = 3\n[train.residual-cnn]\nepochs = 2\n"
        "[attack]\nepsilon_img = 8/255\nsteps = 10\n"
        "[eval]\nattacked_pairs = 8\nseeds = 1, 2\nvariants = maa, pgd, wo-mgsd\n");
    std::ostringstream log;
    namespace p = pipeline;
    for (auto verb : {p::gen_data, p::train_models, p::run_attack, p::run_eval, p::run_ablation}) {
      if (verb(cfg, log) != 0) throw std::runtime_error("pipeline verb failed:\n" + log.str());
    }
    std::ostringstream table;
    p::run_report(cfg, table);
    return cfg.run_dir();
  };
  const auto a = run("a"), b = run("b");
  auto is_image = [](const fs::path& p) { return p.extension() == ".npy" || p.extension() == ".png"; };
  auto is_csv = [](const fs::path& p) { return p.extension() == ".csv" && p.filename() != "trace.csv"; };
  const auto img_a = snapshot(a / "attacks", is_image), img_b = snapshot(b / "attacks", is_image);
  const auto abl_a = snapshot(a / "ablation", is_image), abl_b = snapshot(b / "ablation", is_image);
  const auto csv_a = snapshot(a / "reports", is_csv), csv_b = snapshot(b / "reports", is_csv);
  const bool pass = !img_a.empty() && !csv_a.empty() && img_a == img_b && abl_a == abl_b && csv_a == csv_b;
  report("AC11", pass,
         std::to_string(img_a.size() + abl_a.size()) + " image files and " + std::to_string(csv_a.size()) +
             " report CSVs compared byte-for-byte across two pipeline runs: " + (pass ? "identical" : "DIFFERENT") +
             "; " + fmt("%.0f", seconds_since(t0)) + " s");
}

}  // namespace

int main(int argc, char** argv) {
  std::set<std::string> only;
  for (int i = 1; i < argc; ++i) only.insert(argv[i]);
  auto want = [&](const std::string& id) { return only.empty() || only.count(id) > 0; };

  Lab lab;
  lab.work = fs::path(MAA_TEST_TMP);
  fs::create_directories(lab.work);
  lab.cfg = config::parse("[run]\nseed = 1\n");
  lab.cfg.validate();

  const std::vector<std::pair<std::string, std::function<void()>>> steps{
      {"AC2", [&] { ac2(); }},          {"AC3", [&] { ac3(); }},     {"AC5", [&] { ac5(lab); }},
      {"AC1", [&] { ac1(lab); }},       {"AC10", [&] { ac10(lab); }}, {"AC9", [&] { ac9(lab); }},
      {"AC6", [&] { ac6(lab); }},       {"AC7", [&] { ac7(lab); }},  {"AC8", [&] { ac8(lab); }},
      {"AC4", [&] { ac4(lab); }},       {"AC11", [&] { ac11(lab); }},
  };
  for (const auto& [id, fn] : steps) {
    if (!want(id)) continue;
    try {
      fn();
    } catch (const std::exception& e) {
      report(id, false, std::string("error: ") + e.what());
    }
  }

  std::size_t passed = 0;
  for (const auto& o : g_outcomes) passed += o.pass;
  std::cout << "\n" << passed << "/" << g_outcomes.size() << " acceptance criteria passed\n";
  return passed == g_outcomes.size() ? 0 : 1;
}
