#include "helpers.hpp"

#include "maa/train.hpp"

#include <doctest.h>

using namespace maa;
using namespace maa::train;

TEST_CASE("contrastive loss matches a naive InfoNCE") {
  const data::DatasetSpec spec;
  const auto vocab = data::Vocabulary::for_spec(spec);
  const auto m = models::VlpModel::create(testutil::tiny_config(models::Architecture::PatchTransformer, static_cast<int>(vocab.size()), 4));
  std::vector<Image> imgs;
  std::vector<data::CaptionTokens> caps;
  const char* text[] = {"a red circle", "a blue square", "a green cross", "a yellow triangle"};
  for (int i = 0; i < 4; ++i) {
    imgs.push_back(testutil::random_image(16, 70 + i));
    caps.push_back(data::tokenize(text[i], vocab));
  }
  std::vector<const Image*> ip;
  std::vector<const data::CaptionTokens*> cp;
  for (int i = 0; i < 4; ++i) {
    ip.push_back(&imgs[i]);
    cp.push_back(&caps[i]);
  }
  ad::Tape<double> tape;
  models::ParamBinder<double> bind(tape, false);
  const double got = contrastive_loss(m, bind, ip, cp, 0.07).scalar();

  std::vector<std::vector<double>> ie, te;
  auto unit = [](std::vector<float> v) {
    double n = 0;
    for (float x : v) n += static_cast<double>(x) * x;
    std::vector<double> out;
    for (float x : v) out.push_back(x / std::sqrt(n));
    return out;
  };
  for (int i = 0; i < 4; ++i) {
    ie.push_back(unit(m.encode_image(imgs[i]).final_embedding().values));
    te.push_back(unit(m.encode_text(caps[i])));
  }
  double L[4][4];
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      double d = 0;
      for (std::size_t k = 0; k < ie[i].size(); ++k) d += ie[i][k] * te[j][k];
      L[i][j] = d / 0.07;
    }
  }
  double rows = 0, cols = 0;
  for (int i = 0; i < 4; ++i) {
    double zr = 0, zc = 0;
    for (int j = 0; j < 4; ++j) {
      zr += std::exp(L[i][j]);
      zc += std::exp(L[j][i]);
    }
    rows += std::log(zr) - L[i][i];
    cols += std::log(zc) - L[i][i];
  }
  CHECK(got == doctest::Approx(0.5 * (rows + cols) / 4).epsilon(1e-5));
}

TEST_CASE("train spec validation") {
  TrainSpec s;
  CHECK_NOTHROW(s.validate());
  s.batch_size = 1;
  CHECK_THROWS(s.validate());
  s = TrainSpec{};
  s.temperature = 0;
  CHECK_THROWS(s.validate());
  s = TrainSpec{};
  s.epochs = 0;
  CHECK_THROWS(s.validate());
  s = TrainSpec{};
  s.augment_zoom = 0.9;
  CHECK_THROWS_WITH(s.validate(), doctest::Contains("augment_zoom"));
}

TEST_CASE("short training run is deterministic and reduces the loss") {
  data::DatasetSpec spec;
  spec.num_pairs = 96;
  spec.split_fractions = {0.5, 0.25, 0.25};
  const auto dir = testutil::fresh_dir("train_ds");
  const auto h = data::generate_dataset(spec, dir);
  TrainSpec ts;
  ts.epochs = 4;
  ts.batch_size = 16;
  ts.learning_rate = 3e-3;
  const auto mc = testutil::tiny_config(models::Architecture::PatchTransformer, static_cast<int>(h.vocab().size()), 2);
  std::vector<EpochLog> seen;
  const auto a = train_contrastive(ts, h, mc, [&](const EpochLog& e) { seen.push_back(e); });
  REQUIRE(a.log.size() == 4);
  CHECK(seen.size() == 4);
  CHECK(a.log.back().train_loss < a.log.front().train_loss);
  CHECK(a.best_epoch >= 1);
  CHECK(a.best_epoch <= 4);
  const auto b = train_contrastive(ts, h, mc);
  for (std::size_t i = 0; i < a.model.parameters().size(); ++i) {
    CHECK(a.model.parameters()[i].value == b.model.parameters()[i].value);
  }
  const auto score = evaluate_split(a.model, data::load_split(h, data::Split::Val));
  CHECK(score.mean() == doctest::Approx(a.best_val_r1));

  ts.augment_zoom = 1.5;
  ts.augment_shift = 1;
  const auto z1 = train_contrastive(ts, h, mc);
  const auto z2 = train_contrastive(ts, h, mc);
  CHECK(z1.model.parameters()[0].value == z2.model.parameters()[0].value);
  CHECK_FALSE(z1.model.parameters()[0].value == a.model.parameters()[0].value);
}
