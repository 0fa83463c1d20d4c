#include "maa/pipeline.hpp"

#include "maa/random.hpp"
#include "maa/train.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#ifndef MAA_CODE_VERSION
#define MAA_CODE_VERSION "unknown"
#endif

namespace maa::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunLayout layout(const config::RunConfig& cfg) { return {cfg.run_dir()}; }

data::DatasetHandle open_dataset(const config::RunConfig& cfg) {
  const auto dir = layout(cfg).dataset();
  if (!fs::exists(dir / "manifest.jsonl")) {
    throw MissingPrerequisite("no dataset at " + dir.string() + "; run `maa gen-data` with this config first");
  }
  auto h = data::DatasetHandle::open(dir);
  if (!(h.spec() == cfg.data)) {
    throw MissingPrerequisite("dataset at " + dir.string() + " was generated from a different [data] section; rerun `maa gen-data`");
  }
  return h;
}

models::VlpModel open_model(const config::RunConfig& cfg, const std::string& id, const data::Vocabulary& vocab) {
  const auto path = layout(cfg).checkpoint(id);
  if (!fs::exists(path)) {
    throw MissingPrerequisite("no checkpoint for '" + id + "' at " + path.string() + "; run `maa train` first");
  }
  auto m = models::VlpModel::load(path, cfg.model(id).arch);
  if (m.config().vocab_size != static_cast<int>(vocab.size())) {
    throw MissingPrerequisite("checkpoint " + path.string() + " was trained on a different vocabulary; rerun `maa train`");
  }
  return m;
}

std::vector<data::Pair> eval_pairs(const config::RunConfig& cfg, const data::DatasetHandle& h) {
  auto pairs = data::load_split(h, cfg.eval.split);
  if (pairs.size() < cfg.eval.attacked_pairs) {
    throw std::invalid_argument("eval.attacked_pairs: split has only " + std::to_string(pairs.size()) + " pairs");
  }
  return pairs;
}

std::vector<data::Pair> attacked_subset(const config::RunConfig& cfg, const std::vector<data::Pair>& pairs) {
  return {pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(cfg.eval.attacked_pairs)};
}

attack::CandidateLexicon lexicon_for(const data::DatasetHandle& h) {
  auto lex = attack::CandidateLexicon::from_categories(data::word_categories(h.spec()));
  lex.validate(h.vocab());
  return lex;
}

json caption_json(const data::CaptionTokens& t) { return {{"ids", t.ids}, {"words", t.words}}; }

data::CaptionTokens caption_from(const json& j) {
  data::CaptionTokens t;
  t.ids = j.at("ids").get<std::vector<int>>();
  t.words = j.at("words").get<std::vector<std::string>>();
  if (t.ids.size() != t.words.size()) throw std::runtime_error("caption ids and words differ in length");
  return t;
}

int report_audit(const attack::AdversarialSet& set, const fs::path& where, std::ostream& log) {
  const auto violations = attack::audit_budget(set);
  json j = {{"pairs", set.pairs.size()}, {"violations", json::array()}};
  for (const auto& v : violations) j["violations"].push_back({{"index", v.index}, {"what", v.what}});
  write_text(where / "audit.json", j.dump(2) + "\n");
  if (violations.empty()) {
    log << "budget audit: " << set.pairs.size() << " pairs, no violations\n";
    return 0;
  }
  log << "budget audit FAILED: " << violations.size() << " violation(s)\n";
  for (const auto& v : violations) log << "  pair " << v.index << ": " << v.what << "\n";
  return kAuditFailed;
}

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); }
};

attack::AttackConfig effective_attack(const config::RunConfig& cfg) {
  return cfg.attack_method == "custom" ? cfg.attack : attack::variant(cfg.attack, cfg.attack_method);
}

void write_reports(const fs::path& dir, const std::string& stem, const std::vector<eval::TransferMatrix>& m) {
  write_text(dir / (stem + ".json"), eval::reports_to_json(m));
  write_text(dir / (stem + ".csv"), eval::reports_to_csv(m));
  write_text(dir / (stem + "_comparison.csv"), eval::comparison_csv(m));
}

}  // namespace

std::string code_version() { return MAA_CODE_VERSION; }

fs::path RunLayout::attack_dir(const std::string& method, std::uint64_t seed) const {
  return root / "attacks" / (method + "-s" + std::to_string(seed));
}

fs::path RunLayout::ablation_dir(const std::string& variant, std::uint64_t seed) const {
  return root / "ablation" / (variant + "-s" + std::to_string(seed));
}

void write_run_metadata(const config::RunConfig& cfg) {
  const auto root = cfg.run_dir();
  fs::create_directories(root);
  write_text(root / "effective_config.ini", config::serialize(cfg));
  write_text(root / "version.txt", code_version() + "\n");
  json seeds = {{"run", cfg.seed}, {"data", cfg.data.seed}, {"attack", cfg.attack.seed}, {"eval", cfg.eval.seeds}};
  for (const auto& m : cfg.models) seeds["train"][m.id()] = m.train.seed;
  write_text(root / "seeds.json", seeds.dump(2) + "\n");
}

// --- adversarial set storage ------------------------------------------------------

void save_adversarial_set(const attack::AdversarialSet& set, const fs::path& dir) {
  fs::create_directories(dir / "images");
  json j;
  j["provenance"] = {{"config_hash", set.provenance.config_hash},
                     {"source_model", set.provenance.source_model},
                     {"seed", set.provenance.seed},
                     {"method", set.provenance.method}};
  j["epsilon_img"] = set.epsilon_img;
  j["epsilon_txt"] = set.epsilon_txt;
  j["pairs"] = json::array();
  std::ostringstream trace;
  trace << "index,iteration,intra,cross,total,s_x,s_y,crops\n";
  trace << std::setprecision(10);
  for (const auto& p : set.pairs) {
    const std::string stem = std::to_string(p.index);
    write_npy(p.clean_image, dir / "images" / (stem + "_clean.npy"));
    write_npy(p.adv_image, dir / "images" / (stem + "_adv.npy"));
    write_png(p.adv_image, dir / "images" / (stem + "_adv.png"));
    j["pairs"].push_back({{"index", p.index},
                          {"clean_image", "images/" + stem + "_clean.npy"},
                          {"adv_image", "images/" + stem + "_adv.npy"},
                          {"clean_caption", caption_json(p.clean_caption)},
                          {"adv_caption", caption_json(p.adv_caption)}});
    for (const auto& t : p.trace) {
      trace << p.index << ',' << t.iteration << ',' << t.intra << ',' << t.cross << ',' << t.total << ',' << t.s_x << ','
            << t.s_y << ',' << t.crops << '\n';
    }
  }
  write_text(dir / "set.json", j.dump(2) + "\n");
  write_text(dir / "trace.csv", trace.str());
}

attack::AdversarialSet load_adversarial_set(const fs::path& dir) {
  if (!fs::exists(dir / "set.json")) throw MissingPrerequisite("no adversarial set at " + dir.string() + "; run `maa attack` first");
  const json j = json::parse(read_text(dir / "set.json"));
  attack::AdversarialSet set;
  const auto& pv = j.at("provenance");
  set.provenance = {pv.at("config_hash").get<std::string>(), pv.at("source_model").get<std::string>(),
                    pv.at("seed").get<std::uint64_t>(), pv.at("method").get<std::string>()};
  set.epsilon_img = j.at("epsilon_img").get<double>();
  set.epsilon_txt = j.at("epsilon_txt").get<int>();
  for (const auto& jp : j.at("pairs")) {
    attack::AdversarialPair p;
    p.index = jp.at("index").get<std::size_t>();
    p.clean_image = read_npy(dir / jp.at("clean_image").get<std::string>());
    p.adv_image = read_npy(dir / jp.at("adv_image").get<std::string>());
    p.clean_caption = caption_from(jp.at("clean_caption"));
    p.adv_caption = caption_from(jp.at("adv_caption"));
    set.pairs.push_back(std::move(p));
  }
  return set;
}

// --- verbs ---------------------------------------------------------------------------

int gen_data(const config::RunConfig& cfg, std::ostream& log) {
  write_run_metadata(cfg);
  const auto dir = layout(cfg).dataset();
  Timer t;
  const auto h = data::generate_dataset(cfg.data, dir);
  const auto counts = data::split_counts(cfg.data.num_pairs, cfg.data.split_fractions);
  log << "dataset: " << h.size() << " pairs (train " << counts[0] << ", val " << counts[1] << ", test " << counts[2]
      << "), vocabulary " << h.vocab().size() << " words, " << std::fixed << std::setprecision(1) << t.seconds()
      << " s -> " << dir.string() << "\n";
  return 0;
}

int train_models(const config::RunConfig& cfg, std::ostream& log) {
  const auto h = open_dataset(cfg);
  write_run_metadata(cfg);
  const auto L = layout(cfg);
  for (const auto& entry : cfg.models) {
    const auto mc = entry.model_config(static_cast<int>(h.vocab().size()), entry.train.seed);
    log << "training " << entry.id() << " (" << entry.train.epochs << " epochs)\n";
    std::ostringstream csv;
    csv << "epoch,train_loss,val_r1_i2t,val_r1_t2i,seconds\n";
    auto result = train::train_contrastive(entry.train, h, mc, [&](const train::EpochLog& e) {
      csv << e.epoch << ',' << e.train_loss << ',' << e.val_r1_i2t << ',' << e.val_r1_t2i << ',' << e.seconds << '\n';
      log << "  epoch " << std::setw(3) << e.epoch << "  loss " << std::fixed << std::setprecision(4) << e.train_loss
          << "  val R@1 i2t " << std::setprecision(1) << e.val_r1_i2t << "  t2i " << e.val_r1_t2i << "  ("
          << e.seconds << " s)\n";
    });
    const auto path = L.checkpoint(entry.id());
    fs::create_directories(path.parent_path());
    result.model.save(path);
    write_text(L.root / "checkpoints" / (entry.id() + "_train_log.csv"), csv.str());
    json summary = {{"best_epoch", result.best_epoch}, {"best_val_r1", result.best_val_r1}, {"model", entry.id()}};
    write_text(L.root / "checkpoints" / (entry.id() + "_train.json"), summary.dump(2) + "\n");
    log << "  best epoch " << result.best_epoch << ", mean val R@1 " << std::fixed << std::setprecision(1)
        << result.best_val_r1 << " -> " << path.string() << "\n";
  }
  return 0;
}

int run_attack(const config::RunConfig& cfg, std::ostream& log) {
  const auto h = open_dataset(cfg);
  const auto model = open_model(cfg, cfg.source, h.vocab());
  write_run_metadata(cfg);
  const auto pairs = attacked_subset(cfg, eval_pairs(cfg, h));
  const auto acfg = effective_attack(cfg);
  const auto dir = layout(cfg).attack_dir(cfg.attack_method, acfg.seed);
  Timer t;
  log << "attacking " << pairs.size() << " pairs on " << cfg.source << " (" << cfg.attack_method << ", eps "
      << acfg.epsilon_img * 255.0 << "/255)\n";
  const auto set = attack::attack_pairs(model, pairs, h.vocab(), lexicon_for(h), acfg, cfg.source, cfg.attack_method,
                                        [&](std::size_t done, std::size_t total) {
                                          log << "  " << done << "/" << total << "  " << std::fixed
                                              << std::setprecision(1) << t.seconds() << " s\n";
                                        });
  save_adversarial_set(set, dir);
  log << "saved " << dir.string() << "\n";
  return report_audit(set, dir, log);
}

int run_eval(const config::RunConfig& cfg, std::ostream& log) {
  const auto h = open_dataset(cfg);
  const auto acfg = effective_attack(cfg);
  const auto dir = layout(cfg).attack_dir(cfg.attack_method, acfg.seed);
  const auto set = load_adversarial_set(dir);
  const int audit = report_audit(set, dir, log);
  const auto pairs = eval_pairs(cfg, h);
  eval::TransferMatrix matrix{set.provenance.method, {}};
  for (const auto& entry : cfg.models) {
    const auto m = open_model(cfg, entry.id(), h.vocab());
    const auto gallery = eval::embed_gallery(m, entry.id(), pairs);
    auto r = eval::transfer_eval(set, m, gallery, h.vocab());
    for (const auto* rep : {&r.i2t, &r.t2i}) {
      log << "  " << rep->source_model << " -> " << rep->target_model << " " << eval::direction_name(rep->direction)
          << "  clean R@1 " << std::fixed << std::setprecision(1) << rep->clean_recall[0] << "  adv R@1 "
          << rep->adversarial_recall[0] << "  ASR@1 " << (rep->asr[0] ? std::to_string(*rep->asr[0]) : "NA") << "\n";
    }
    matrix.cells.push_back(std::move(r.i2t));
    matrix.cells.push_back(std::move(r.t2i));
  }
  write_run_metadata(cfg);
  write_reports(layout(cfg).reports(), "eval_" + cfg.attack_method + "-s" + std::to_string(acfg.seed), {matrix});
  return audit;
}

int run_ablation(const config::RunConfig& cfg, std::ostream& log) {
  const auto h = open_dataset(cfg);
  const auto source = open_model(cfg, cfg.source, h.vocab());
  std::vector<models::VlpModel> targets;
  const auto target_ids = cfg.target_ids();
  for (const auto& id : target_ids) targets.push_back(open_model(cfg, id, h.vocab()));
  std::vector<eval::NamedModel> named;
  for (std::size_t i = 0; i < targets.size(); ++i) named.push_back({target_ids[i], &targets[i]});
  write_run_metadata(cfg);

  eval::AblationSpec spec{cfg.eval.variants, cfg.eval.seeds, cfg.eval.attacked_pairs};
  Timer t;
  const auto result = eval::ablation_suite({cfg.source, &source}, named, eval_pairs(cfg, h), h.vocab(), lexicon_for(h),
                                           cfg.attack, spec, [&](const std::string& msg) {
                                             log << "  [" << std::fixed << std::setprecision(0) << t.seconds() << " s] "
                                                 << msg << "\n";
                                           });
  int status = 0;
  const auto L = layout(cfg);
  for (const auto& run : result.runs) {
    const auto dir = L.ablation_dir(run.variant, run.seed);
    save_adversarial_set(run.set, dir);
    if (report_audit(run.set, dir, log) != 0) status = kAuditFailed;
  }
  write_reports(L.reports(), "ablation", result.matrices);
  log << eval::comparison_csv(result.matrices);
  return status;
}

int run_report(const config::RunConfig& cfg, std::ostream& out) {
  const auto dir = layout(cfg).reports();
  std::vector<eval::TransferMatrix> all;
  if (fs::exists(dir)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      const auto name = e.path().filename().string();
      if (e.path().extension() == ".json" && (name == "ablation.json" || name.rfind("eval_", 0) == 0)) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const bool single = f.filename() != "ablation.json";
      for (auto& m : eval::reports_from_json(read_text(f))) {
        // keep single `maa attack` runs apart from the ablation rows of the same method
        if (single) m.method += " (attack)";
        all.push_back(std::move(m));
      }
    }
  }
  if (all.empty()) throw MissingPrerequisite("no reports under " + dir.string() + "; run `maa eval` or `maa ablate` first");

  const std::string table = eval::comparison_csv(all);
  write_text(dir / "summary.csv", table);
  out << "mean ASR (%) over seeds; NA = nothing cleanly retrieved at that K\n\n";
  std::istringstream in(table);
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream cells(line);
    std::string cell;
    int col = 0;
    while (std::getline(cells, cell, ',')) out << std::left << std::setw(col < 3 ? 20 : 12) << cell, ++col;
    out << "\n";
  }
  return 0;
}

int dump_schedule(const config::RunConfig& cfg, std::uint64_t sample_id, int step, std::ostream& out) {
  // the plan depends only on the architecture, so no checkpoint is needed
  const auto model = models::VlpModel::create(cfg.model(cfg.source).model_config(2, 0));
  const auto acfg = effective_attack(cfg);
  if (step < 0 || step >= acfg.steps) throw std::invalid_argument("step must lie in [0, attack.steps)");
  const auto plan = attack::plan_for_step(model, acfg, sample_id, step);
  out << rscrop::plan_to_json(plan) << "\n";
  return rscrop::covers(plan) ? 0 : 1;
}

}  // namespace maa::pipeline
