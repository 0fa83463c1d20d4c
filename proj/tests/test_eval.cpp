#include "helpers.hpp"

#include "maa/eval.hpp"

#include <doctest.h>

using namespace maa;
using namespace maa::eval;

namespace {

// Sorts gallery indices by (similarity desc, index asc) and finds the truth.
std::size_t oracle_rank(const EmbeddingMatrix& q, Eigen::Index row, const EmbeddingMatrix& g, std::size_t truth) {
  std::vector<std::pair<double, std::size_t>> sims;
  const Eigen::RowVectorXd qd = q.row(row).cast<double>();
  for (Eigen::Index c = 0; c < g.rows(); ++c) {
    const Eigen::RowVectorXd gd = g.row(c).cast<double>();
    const double n = qd.norm() * gd.norm();
    sims.push_back({n < 1e-12 ? 0.0 : static_cast<double>(static_cast<float>(qd.dot(gd) / n)), static_cast<std::size_t>(c)});
  }
  std::stable_sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; r < sims.size(); ++r) {
    if (sims[r].second == truth) return r;
  }
  return sims.size();
}

EmbeddingMatrix random_embeddings(int rows, int cols, std::uint64_t seed) {
  return testutil::random_matrix(rows, cols, seed).cast<float>();
}

}  // namespace

TEST_CASE("ranks agree with a sort-based oracle") {
  const auto q = random_embeddings(20, 8, 1);
  const auto g = random_embeddings(30, 8, 2);
  std::vector<std::size_t> gt;
  for (int i = 0; i < 20; ++i) gt.push_back(static_cast<std::size_t>((i * 7) % 30));
  const auto ranks = true_match_ranks(q, g, gt);
  for (int i = 0; i < 20; ++i) CHECK(ranks[i] == oracle_rank(q, i, g, gt[i]));
}

TEST_CASE("ties rank the lower gallery index first") {
  EmbeddingMatrix g(3, 2);
  g << 1, 0, 1, 0, 0, 1;
  EmbeddingMatrix q(2, 2);
  q << 2, 0, 1, 0;
  const std::vector<std::size_t> gt{1, 0};
  const auto r = true_match_ranks(q, g, gt);
  CHECK(r[0] == 1);
  CHECK(r[1] == 0);
}

TEST_CASE("recall and ASR arithmetic") {
  const std::vector<std::size_t> clean{0, 0, 3, 7, 12};
  const std::vector<std::size_t> adv{0, 5, 4, 2, 30};
  CHECK(recall_from_ranks(clean, 1) == doctest::Approx(40.0));
  CHECK(recall_from_ranks(clean, 5) == doctest::Approx(60.0));
  CHECK(recall_from_ranks(clean, 10) == doctest::Approx(80.0));
  CHECK(*attack_success_rate(clean, adv, 1) == doctest::Approx(50.0));
  CHECK(*attack_success_rate(clean, adv, 5) == doctest::Approx(100.0 / 3.0));
  CHECK(*attack_success_rate(clean, adv, 10) == doctest::Approx(0.0));
  const std::vector<std::size_t> bad{3, 4};
  CHECK_FALSE(attack_success_rate(bad, bad, 1).has_value());
  const auto q = random_embeddings(3, 4, 5);
  const std::vector<std::size_t> gt{0, 1, 2};
  CHECK_THROWS_AS(recall_at_k(q, q, gt, 0), std::out_of_range);
  CHECK_THROWS_AS(recall_at_k(q, q, gt, 4), std::out_of_range);
  CHECK(recall_at_k(q, q, gt, 1) == doctest::Approx(100.0));
}

TEST_CASE("transfer evaluation on identity sets and perturbed sets") {
  data::DatasetSpec spec;
  const auto vocab = data::Vocabulary::for_spec(spec);
  const auto src = models::VlpModel::create(testutil::tiny_config(models::Architecture::PatchTransformer, static_cast<int>(vocab.size()), 1));
  const auto tgt = models::VlpModel::create(testutil::tiny_config(models::Architecture::ResidualCnn, static_cast<int>(vocab.size()), 2));
  std::vector<data::Pair> pairs;
  const char* caps[] = {"a red circle", "a blue square", "a green cross", "a yellow triangle", "a red square",
                        "a blue circle", "a green triangle", "a yellow cross", "a red cross", "a blue triangle",
                        "a green circle", "a yellow square"};
  for (int i = 0; i < 12; ++i) pairs.push_back({testutil::random_image(32, 60 + i), data::tokenize(caps[i], vocab), static_cast<std::size_t>(100 + i)});
  const auto gallery = embed_gallery(tgt, "tgt", pairs);
  CHECK(gallery.images.rows() == 12);
  CHECK(gallery.hash == embedding_hash(gallery.images, gallery.texts));

  attack::AdversarialSet set;
  set.provenance = {"h", "src", 4, "noop"};
  for (int i = 0; i < 4; ++i) {
    attack::AdversarialPair p;
    p.index = pairs[i].index;
    p.clean_image = models::prepare_input(src, pairs[i].image);
    p.adv_image = p.clean_image;
    p.clean_caption = p.adv_caption = pairs[i].caption;
    set.pairs.push_back(p);
  }
  // an unperturbed set scored on its own source reproduces the clean ranks
  const auto r = transfer_eval(set, src, embed_gallery(src, "src", pairs), vocab);
  CHECK(r.i2t.clean_ranks == r.i2t.adversarial_ranks);
  CHECK(r.t2i.clean_ranks == r.t2i.adversarial_ranks);
  CHECK(r.i2t.target_model == "src");
  CHECK(r.i2t.seed == 4);
  CHECK(r.i2t.queries == 4);
  CHECK(r.i2t.gallery_size == 12);
  for (const auto& a : r.i2t.asr) CHECK((!a || *a == 0.0));

  const auto t = transfer_eval(set, tgt, gallery, vocab);
  CHECK(t.t2i.clean_ranks == t.t2i.adversarial_ranks);  // captions unchanged

  auto dup = set;
  dup.pairs.push_back(dup.pairs[0]);
  CHECK_THROWS(transfer_eval(dup, tgt, gallery, vocab));
  auto stray = set;
  stray.pairs[0].index = 9999;
  CHECK_THROWS_WITH(transfer_eval(stray, tgt, gallery, vocab), doctest::Contains("9999"));
  const auto other_vocab = data::Vocabulary(std::vector<std::string>{"[MASK]", "a"});
  CHECK_THROWS_WITH(transfer_eval(set, tgt, gallery, other_vocab), doctest::Contains("vocabulary"));
  auto tampered = gallery;
  tampered.images(0, 0) += 1.0f;
  CHECK_THROWS_AS(transfer_eval(set, tgt, tampered, vocab), std::logic_error);

  std::vector<data::Pair> few(pairs.begin(), pairs.begin() + 5);
  CHECK_THROWS(embed_gallery(tgt, "tgt", few));
}

TEST_CASE("report serialization round trip and tables") {
  RetrievalReport r;
  r.method = "maa";
  r.seed = 2;
  r.source_model = "a";
  r.target_model = "b";
  r.gallery_size = 20;
  r.queries = 3;
  r.clean_ranks = {0, 1, 12};
  r.adversarial_ranks = {4, 0, 19};
  r.gallery_hash = "abc";
  for (std::size_t i = 0; i < 3; ++i) {
    r.clean_recall[i] = recall_from_ranks(r.clean_ranks, kRecallKs[i]);
    r.adversarial_recall[i] = recall_from_ranks(r.adversarial_ranks, kRecallKs[i]);
    r.asr[i] = attack_success_rate(r.clean_ranks, r.adversarial_ranks, kRecallKs[i]);
  }
  auto r2 = r;
  r2.direction = Direction::TextToImage;
  r2.clean_ranks = {5, 6, 7};
  r2.clean_recall = {0, 0, 100};
  r2.asr = {std::nullopt, std::nullopt, 100.0 / 3};
  r2.seed = 3;
  const std::vector<TransferMatrix> ms{{"maa", {r, r2}}};
  const auto back = reports_from_json(reports_to_json(ms));
  REQUIRE(back.size() == 1);
  REQUIRE(back[0].cells.size() == 2);
  CHECK(back[0].cells[0].asr == r.asr);
  CHECK(back[0].cells[1].asr == r2.asr);
  CHECK(back[0].cells[1].direction == Direction::TextToImage);
  CHECK(reports_to_json(back) == reports_to_json(ms));
  CHECK(mean_asr(ms[0], "a", "b", Direction::ImageToText).value() == doctest::Approx(100.0));
  CHECK_FALSE(mean_asr(ms[0], "a", "b", Direction::TextToImage).has_value());
  const auto cmp = comparison_csv(ms);
  CHECK(cmp.find("maa,a,b,2,100.00,0.00,0.00,NA,NA,33.33") != std::string::npos);
  const auto flat = reports_to_csv(ms);
  CHECK(std::count(flat.begin(), flat.end(), '\n') == 3);

  RetrievalReport broken = r;
  broken.clean_ranks.pop_back();
  CHECK_THROWS_AS(broken.check(), std::logic_error);
}
