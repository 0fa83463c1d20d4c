#include "maa/eval.hpp"
#include "maa/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

namespace maa::eval {

namespace {

EmbeddingMatrix unit_rows(const EmbeddingMatrix& m) {
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> d = m.cast<double>();
  for (Eigen::Index r = 0; r < d.rows(); ++r) {
    const double n = d.row(r).norm();
    if (n >= 1e-12) d.row(r) /= n;
    else d.row(r).setZero();
  }
  return d.cast<float>();
}

}  // namespace

EmbeddingMatrix stack_rows(const std::vector<std::vector<float>>& rows) {
  if (rows.empty()) return EmbeddingMatrix(0, 0);
  EmbeddingMatrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows[0].size()) throw std::invalid_argument("stack_rows: ragged embedding rows");
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  return m;
}

std::vector<std::size_t> true_match_ranks(const EmbeddingMatrix& queries, const EmbeddingMatrix& gallery,
                                          std::span<const std::size_t> ground_truth) {
  if (queries.cols() != gallery.cols()) throw std::invalid_argument("true_match_ranks: embedding dimension mismatch");
  if (static_cast<Eigen::Index>(ground_truth.size()) != queries.rows()) {
    throw std::invalid_argument("true_match_ranks: one ground-truth index per query required");
  }
  const EmbeddingMatrix q = unit_rows(queries);
  const EmbeddingMatrix g = unit_rows(gallery);
  const EmbeddingMatrix sim = q * g.transpose();
  std::vector<std::size_t> ranks(ground_truth.size());
  for (Eigen::Index r = 0; r < sim.rows(); ++r) {
    const std::size_t gt = ground_truth[static_cast<std::size_t>(r)];
    if (static_cast<Eigen::Index>(gt) >= sim.cols()) throw std::out_of_range("true_match_ranks: ground truth outside gallery");
    const float target = sim(r, static_cast<Eigen::Index>(gt));
    std::size_t rank = 0;
    for (Eigen::Index c = 0; c < sim.cols(); ++c) {
      const float v = sim(r, c);
      if (v > target || (v == target && c < static_cast<Eigen::Index>(gt))) ++rank;
    }
    ranks[static_cast<std::size_t>(r)] = rank;
  }
  return ranks;
}

double recall_from_ranks(std::span<const std::size_t> ranks, std::size_t k) {
  if (ranks.empty()) return 0.0;
  const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) { return r < k; });
  return 100.0 * static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double recall_at_k(const EmbeddingMatrix& queries, const EmbeddingMatrix& gallery,
                   std::span<const std::size_t> ground_truth, std::size_t k) {
  if (k == 0 || static_cast<Eigen::Index>(k) > gallery.rows()) {
    throw std::out_of_range("recall_at_k: K=" + std::to_string(k) + " outside [1, " + std::to_string(gallery.rows()) + "]");
  }
  const auto ranks = true_match_ranks(queries, gallery, ground_truth);
  return recall_from_ranks(ranks, k);
}

std::optional<double> attack_success_rate(std::span<const std::size_t> clean_ranks,
                                          std::span<const std::size_t> adv_ranks, std::size_t k) {
  if (clean_ranks.size() != adv_ranks.size()) throw std::invalid_argument("attack_success_rate: rank lists differ in length");
  std::size_t correct = 0, flipped = 0;
  for (std::size_t i = 0; i < clean_ranks.size(); ++i) {
    if (clean_ranks[i] >= k) continue;
    ++correct;
    if (adv_ranks[i] >= k) ++flipped;
  }
  if (correct == 0) return std::nullopt;
  return 100.0 * static_cast<double>(flipped) / static_cast<double>(correct);
}

// --- transfer evaluation ------------------------------------------------------

using nlohmann::json;

std::string_view direction_name(Direction d) { return d == Direction::ImageToText ? "i2t" : "t2i"; }

namespace {

Direction parse_direction(std::string_view s) {
  if (s == "i2t") return Direction::ImageToText;
  if (s == "t2i") return Direction::TextToImage;
  throw std::invalid_argument("unknown retrieval direction '" + std::string(s) + "'");
}

std::string hex16(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t hash_matrix(const EmbeddingMatrix& m, std::uint64_t h) {
  const std::string dims = std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ";";
  h = fnv1a(dims, h);
  return fnv1a(std::string_view(reinterpret_cast<const char*>(m.data()), sizeof(float) * static_cast<std::size_t>(m.size())), h);
}

void fill_scores(RetrievalReport& r) {
  for (std::size_t i = 0; i < kRecallKs.size(); ++i) {
    r.clean_recall[i] = recall_from_ranks(r.clean_ranks, kRecallKs[i]);
    r.adversarial_recall[i] = recall_from_ranks(r.adversarial_ranks, kRecallKs[i]);
    r.asr[i] = attack_success_rate(r.clean_ranks, r.adversarial_ranks, kRecallKs[i]);
  }
}

}  // namespace

void RetrievalReport::check() const {
  if (clean_ranks.size() != queries || adversarial_ranks.size() != queries) {
    throw std::logic_error("report: rank lists do not match the query count");
  }
  for (auto r : clean_ranks) if (r >= gallery_size) throw std::logic_error("report: clean rank outside gallery");
  for (auto r : adversarial_ranks) if (r >= gallery_size) throw std::logic_error("report: adversarial rank outside gallery");
  for (std::size_t i = 0; i < kRecallKs.size(); ++i) {
    auto in_range = [](double v) { return v >= 0.0 && v <= 100.0; };
    if (!in_range(clean_recall[i]) || !in_range(adversarial_recall[i])) throw std::logic_error("report: recall outside [0, 100]");
    if (asr[i] && !in_range(*asr[i])) throw std::logic_error("report: ASR outside [0, 100]");
    if (i > 0 && (clean_recall[i] < clean_recall[i - 1] || adversarial_recall[i] < adversarial_recall[i - 1])) {
      throw std::logic_error("report: recall not monotone in K");
    }
  }
}

std::string embedding_hash(const EmbeddingMatrix& images, const EmbeddingMatrix& texts) {
  return hex16(hash_matrix(texts, hash_matrix(images, fnv1a("gallery"))));
}

Gallery embed_gallery(const models::VlpModel& model, const std::string& model_id, const std::vector<data::Pair>& pairs) {
  if (pairs.size() < kRecallKs.back()) {
    throw std::invalid_argument("gallery: " + std::to_string(pairs.size()) + " pairs, need at least " +
                                std::to_string(kRecallKs.back()) + " for R@" + std::to_string(kRecallKs.back()));
  }
  Gallery g;
  g.model_id = model_id;
  std::vector<std::vector<float>> imgs, txts;
  for (const auto& p : pairs) {
    g.dataset_indices.push_back(p.index);
    imgs.push_back(model.encode_image(models::prepare_input(model, p.image)).final_embedding().values);
    txts.push_back(model.encode_text(p.caption));
  }
  g.images = stack_rows(imgs);
  g.texts = stack_rows(txts);
  g.hash = embedding_hash(g.images, g.texts);
  return g;
}

TransferResult transfer_eval(const attack::AdversarialSet& set, const models::VlpModel& target, const Gallery& gallery,
                             const data::Vocabulary& vocab) {
  if (target.config().vocab_size != static_cast<int>(vocab.size())) {
    throw std::invalid_argument("transfer: target '" + gallery.model_id + "' was built for a vocabulary of " +
                                std::to_string(target.config().vocab_size) + " words, dataset has " +
                                std::to_string(vocab.size()));
  }
  if (set.pairs.empty()) throw std::invalid_argument("transfer: adversarial set is empty");
  if (embedding_hash(gallery.images, gallery.texts) != gallery.hash) {
    throw std::logic_error("transfer: gallery embeddings changed after hashing");
  }
  std::map<std::size_t, std::size_t> row_of;
  for (std::size_t r = 0; r < gallery.dataset_indices.size(); ++r) row_of[gallery.dataset_indices[r]] = r;

  std::vector<std::size_t> rows;
  EmbeddingMatrix adv_images = gallery.images;
  EmbeddingMatrix adv_texts = gallery.texts;
  std::vector<std::vector<float>> adv_img_q, adv_txt_q;
  for (const auto& p : set.pairs) {
    const auto it = row_of.find(p.index);
    if (it == row_of.end()) {
      throw std::invalid_argument("transfer: attacked pair " + std::to_string(p.index) + " is not in the gallery");
    }
    if (std::find(rows.begin(), rows.end(), it->second) != rows.end()) {
      throw std::invalid_argument("transfer: pair " + std::to_string(p.index) + " attacked twice");
    }
    for (int id : p.adv_caption.ids) {
      if (id < 0 || id >= static_cast<int>(vocab.size())) throw std::invalid_argument("transfer: caption token outside vocabulary");
    }
    rows.push_back(it->second);
    auto img = target.encode_image(models::prepare_input(target, p.adv_image)).final_embedding().values;
    auto txt = target.encode_text(p.adv_caption);
    const auto r = static_cast<Eigen::Index>(it->second);
    for (std::size_t c = 0; c < img.size(); ++c) adv_images(r, static_cast<Eigen::Index>(c)) = img[c];
    for (std::size_t c = 0; c < txt.size(); ++c) adv_texts(r, static_cast<Eigen::Index>(c)) = txt[c];
    adv_img_q.push_back(std::move(img));
    adv_txt_q.push_back(std::move(txt));
  }
  EmbeddingMatrix clean_img_q(static_cast<Eigen::Index>(rows.size()), gallery.images.cols());
  EmbeddingMatrix clean_txt_q(static_cast<Eigen::Index>(rows.size()), gallery.texts.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    clean_img_q.row(static_cast<Eigen::Index>(i)) = gallery.images.row(static_cast<Eigen::Index>(rows[i]));
    clean_txt_q.row(static_cast<Eigen::Index>(i)) = gallery.texts.row(static_cast<Eigen::Index>(rows[i]));
  }

  auto base = [&](Direction d) {
    RetrievalReport r;
    r.direction = d;
    r.method = set.provenance.method;
    r.seed = set.provenance.seed;
    r.source_model = set.provenance.source_model;
    r.target_model = gallery.model_id;
    r.gallery_size = gallery.dataset_indices.size();
    r.queries = rows.size();
    r.gallery_hash = gallery.hash;
    return r;
  };
  TransferResult out{base(Direction::ImageToText), base(Direction::TextToImage)};
  out.i2t.clean_ranks = true_match_ranks(clean_img_q, gallery.texts, rows);
  out.i2t.adversarial_ranks = true_match_ranks(stack_rows(adv_img_q), adv_texts, rows);
  out.t2i.clean_ranks = true_match_ranks(clean_txt_q, gallery.images, rows);
  out.t2i.adversarial_ranks = true_match_ranks(stack_rows(adv_txt_q), adv_images, rows);
  fill_scores(out.i2t);
  fill_scores(out.t2i);
  out.i2t.check();
  out.t2i.check();
  return out;
}

const RetrievalReport* TransferMatrix::find(const std::string& source, const std::string& target, Direction d,
                                            std::uint64_t seed) const {
  for (const auto& c : cells) {
    if (c.source_model == source && c.target_model == target && c.direction == d && c.seed == seed) return &c;
  }
  return nullptr;
}

AblationResult ablation_suite(const NamedModel& source, const std::vector<NamedModel>& targets,
                              const std::vector<data::Pair>& eval_pairs, const data::Vocabulary& vocab,
                              const attack::CandidateLexicon& lexicon, const attack::AttackConfig& base,
                              const AblationSpec& spec, const SuiteProgress& progress) {
  if (spec.variants.empty() || spec.seeds.empty()) throw std::invalid_argument("ablation: no variants or seeds");
  if (spec.attacked_pairs == 0 || spec.attacked_pairs > eval_pairs.size()) {
    throw std::invalid_argument("ablation: attacked_pairs must lie in [1, " + std::to_string(eval_pairs.size()) + "]");
  }
  std::vector<NamedModel> scored{source};
  for (const auto& t : targets) {
    if (t.id != source.id) scored.push_back(t);
  }
  std::vector<Gallery> galleries;
  for (const auto& m : scored) galleries.push_back(embed_gallery(*m.model, m.id, eval_pairs));
  const std::vector<data::Pair> attacked(eval_pairs.begin(), eval_pairs.begin() + static_cast<std::ptrdiff_t>(spec.attacked_pairs));

  AblationResult result;
  for (const auto& name : spec.variants) {
    TransferMatrix matrix{name, {}};
    for (auto seed : spec.seeds) {
      auto cfg = attack::variant(base, name);
      cfg.seed = seed;
      if (progress) progress("attack " + name + " seed " + std::to_string(seed));
      auto set = attack::attack_pairs(*source.model, attacked, vocab, lexicon, cfg, source.id, name);
      for (std::size_t m = 0; m < scored.size(); ++m) {
        auto r = transfer_eval(set, *scored[m].model, galleries[m], vocab);
        matrix.cells.push_back(std::move(r.i2t));
        matrix.cells.push_back(std::move(r.t2i));
      }
      result.runs.push_back({name, seed, std::move(set)});
    }
    result.matrices.push_back(std::move(matrix));
  }
  for (const auto& g : galleries) {
    if (embedding_hash(g.images, g.texts) != g.hash) throw std::logic_error("ablation: gallery embeddings drifted");
  }
  return result;
}

std::optional<double> mean_asr(const TransferMatrix& m, const std::string& source, const std::string& target,
                               Direction d, std::size_t k_index) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& c : m.cells) {
    if (c.source_model != source || c.target_model != target || c.direction != d) continue;
    if (!c.asr.at(k_index)) continue;
    sum += *c.asr[k_index];
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

// --- serialization ---------------------------------------------------------------

namespace {

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : "NA"; }

}  // namespace

std::string reports_to_json(const std::vector<TransferMatrix>& matrices) {
  json out = json::array();
  for (const auto& m : matrices) {
    json cells = json::array();
    for (const auto& c : m.cells) {
      json asr = json::array();
      for (const auto& a : c.asr) asr.push_back(opt_json(a));
      cells.push_back({{"direction", direction_name(c.direction)},
                       {"method", c.method},
                       {"seed", c.seed},
                       {"source", c.source_model},
                       {"target", c.target_model},
                       {"gallery_size", c.gallery_size},
                       {"queries", c.queries},
                       {"recall_ks", kRecallKs},
                       {"clean_recall", c.clean_recall},
                       {"adversarial_recall", c.adversarial_recall},
                       {"asr", asr},
                       {"gallery_hash", c.gallery_hash},
                       {"clean_ranks", c.clean_ranks},
                       {"adversarial_ranks", c.adversarial_ranks}});
    }
    out.push_back({{"method", m.method}, {"cells", cells}});
  }
  return out.dump(2) + "\n";
}

std::vector<TransferMatrix> reports_from_json(std::string_view text) {
  const json j = json::parse(text);
  std::vector<TransferMatrix> out;
  for (const auto& jm : j) {
    TransferMatrix m;
    m.method = jm.at("method").get<std::string>();
    for (const auto& jc : jm.at("cells")) {
      RetrievalReport r;
      r.direction = parse_direction(jc.at("direction").get<std::string>());
      r.method = jc.at("method").get<std::string>();
      r.seed = jc.at("seed").get<std::uint64_t>();
      r.source_model = jc.at("source").get<std::string>();
      r.target_model = jc.at("target").get<std::string>();
      r.gallery_size = jc.at("gallery_size").get<std::size_t>();
      r.queries = jc.at("queries").get<std::size_t>();
      r.clean_recall = jc.at("clean_recall").get<std::array<double, 3>>();
      r.adversarial_recall = jc.at("adversarial_recall").get<std::array<double, 3>>();
      for (std::size_t i = 0; i < 3; ++i) {
        const auto& a = jc.at("asr").at(i);
        if (!a.is_null()) r.asr[i] = a.get<double>();
      }
      r.gallery_hash = jc.at("gallery_hash").get<std::string>();
      r.clean_ranks = jc.at("clean_ranks").get<std::vector<std::size_t>>();
      r.adversarial_ranks = jc.at("adversarial_ranks").get<std::vector<std::size_t>>();
      r.check();
      m.cells.push_back(std::move(r));
    }
    out.push_back(std::move(m));
  }
  return out;
}

std::string reports_to_csv(const std::vector<TransferMatrix>& matrices) {
  std::ostringstream os;
  os << "method,seed,source,target,direction,queries,gallery_size,"
        "clean_r1,clean_r5,clean_r10,adv_r1,adv_r5,adv_r10,asr_r1,asr_r5,asr_r10,gallery_hash\n";
  for (const auto& m : matrices) {
    for (const auto& c : m.cells) {
      os << c.method << ',' << c.seed << ',' << c.source_model << ',' << c.target_model << ','
         << direction_name(c.direction) << ',' << c.queries << ',' << c.gallery_size;
      for (double v : c.clean_recall) os << ',' << fmt(v);
      for (double v : c.adversarial_recall) os << ',' << fmt(v);
      for (const auto& v : c.asr) os << ',' << fmt(v);
      os << ',' << c.gallery_hash << '\n';
    }
  }
  return os.str();
}

std::string comparison_csv(const std::vector<TransferMatrix>& matrices) {
  std::ostringstream os;
  os << "method,source,target,seeds,i2t_asr_r1,i2t_asr_r5,i2t_asr_r10,t2i_asr_r1,t2i_asr_r5,t2i_asr_r10\n";
  for (const auto& m : matrices) {
    std::vector<std::pair<std::string, std::string>> pairs;
    for (const auto& c : m.cells) {
      std::pair<std::string, std::string> key{c.source_model, c.target_model};
      if (std::find(pairs.begin(), pairs.end(), key) == pairs.end()) pairs.push_back(key);
    }
    for (const auto& [src, tgt] : pairs) {
      std::set<std::uint64_t> seeds;
      for (const auto& c : m.cells) {
        if (c.source_model == src && c.target_model == tgt) seeds.insert(c.seed);
      }
      os << m.method << ',' << src << ',' << tgt << ',' << seeds.size();
      for (Direction d : {Direction::ImageToText, Direction::TextToImage}) {
        for (std::size_t k = 0; k < kRecallKs.size(); ++k) os << ',' << fmt(mean_asr(m, src, tgt, d, k));
      }
      os << '\n';
    }
  }
  return os.str();
}

}  // namespace maa::eval
