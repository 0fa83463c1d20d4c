#include "helpers.hpp"

#include "maa/models.hpp"

#include <doctest.h>

#include <fstream>

using namespace maa;
using namespace maa::models;

TEST_CASE("default tap shapes") {
  const auto t = VlpModel::create(default_config(Architecture::PatchTransformer, 20, 1));
  const std::vector<TapShape> want_t{{64, 64}, {64, 64}, {64, 64}, {1, 64}};
  CHECK(t.tap_shapes() == want_t);
  CHECK(t.tap_count() == 4);
  const auto c = VlpModel::create(default_config(Architecture::ResidualCnn, 20, 1));
  const std::vector<TapShape> want_c{{144, 32}, {36, 48}, {36, 64}, {1, 64}};
  CHECK(c.tap_shapes() == want_c);
  CHECK(c.input_size() == 48);
}

TEST_CASE("encoded features match the declared tap shapes and are deterministic") {
  for (auto arch : {Architecture::PatchTransformer, Architecture::ResidualCnn}) {
    const auto m = VlpModel::create(default_config(arch, 20, 3));
    const auto img = testutil::random_image(m.input_size(), 4);
    const auto f = m.encode_image(img);
    const auto shapes = m.tap_shapes();
    REQUIRE(f.size() == shapes.size());
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      CHECK(f.taps[i].shape() == shapes[i]);
      CHECK(f.taps[i].values.size() == static_cast<std::size_t>(shapes[i].rows * shapes[i].cols));
    }
    CHECK(m.encode_image(img) == f);
    const std::vector<int> ids{1, 4, 6};
    const auto e = m.encode_text(std::span<const int>(ids));
    CHECK(e.size() == static_cast<std::size_t>(m.embedding_dim()));
    CHECK_THROWS(m.encode_image(testutil::random_image(m.input_size() + 2, 4)));
  }
}

TEST_CASE("different seeds give different weights") {
  const auto a = VlpModel::create(default_config(Architecture::PatchTransformer, 20, 1));
  const auto b = VlpModel::create(default_config(Architecture::PatchTransformer, 20, 2));
  CHECK(a.parameters()[0].value != b.parameters()[0].value);
}

TEST_CASE("checkpoint round trip, architecture check and corruption") {
  const auto dir = testutil::fresh_dir("ckpt");
  const auto m = VlpModel::create(testutil::tiny_config(Architecture::ResidualCnn, 12, 5));
  m.save(dir / "m.ckpt");
  const auto back = VlpModel::load(dir / "m.ckpt");
  CHECK(back.config() == m.config());
  REQUIRE(back.parameters().size() == m.parameters().size());
  for (std::size_t i = 0; i < m.parameters().size(); ++i) {
    CHECK(back.parameters()[i].name == m.parameters()[i].name);
    CHECK(back.parameters()[i].value == m.parameters()[i].value);
  }
  CHECK_THROWS(VlpModel::load(dir / "m.ckpt", Architecture::PatchTransformer));

  std::fstream f(dir / "m.ckpt", std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(-20, std::ios::end);
  f.put('\x7f');
  f.close();
  CHECK_THROWS(VlpModel::load(dir / "m.ckpt"));
}

TEST_CASE("prepare_input resizes only when needed") {
  const auto m = VlpModel::create(default_config(Architecture::ResidualCnn, 20, 1));
  const auto img = testutil::random_image(32, 9);
  const auto p = prepare_input(m, img);
  CHECK(p.height == 48);
  CHECK(p == resize_image(img, 48, 48));
  const auto same = testutil::random_image(48, 9);
  CHECK(prepare_input(m, same) == same);
}

TEST_CASE("input gradient through a whole encoder matches finite differences") {
  for (auto arch : {Architecture::PatchTransformer, Architecture::ResidualCnn}) {
    const auto m = VlpModel::create(testutil::tiny_config(arch, 12, 7));
    const auto img = testutil::random_image(m.input_size(), 8, 0.2f, 0.8f);
    ImageObjective<double> obj = [&](ParamBinder<double>& bind, ad::Var<double> x) {
      auto taps = m.image_taps(bind, x);
      return testutil::weighted_sum(taps[0], 3);
    };
    const auto g = input_gradient<double>(m, obj, img);
    const auto x0 = img.to_matrix<double>();
    Rng pick(1);
    double worst = 0;
    for (int k = 0; k < 16; ++k) {
      const auto i = pick.uniform_int(0, x0.size() - 1);
      auto eval = [&](double delta) {
        auto x = x0;
        x.data()[i] += delta;
        ad::Tape<double> t;
        ParamBinder<double> b(t, false);
        return obj(b, t.constant(x)).scalar();
      };
      const double fd = (eval(1e-6) - eval(-1e-6)) / 2e-6;
      worst = std::max(worst, std::abs(fd - g.data()[i]) / std::max(1e-4, std::abs(fd)));
    }
    CHECK(worst < 1e-4);
  }
}
