#include "helpers.hpp"

#include "maa/data.hpp"

#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

using namespace maa;
using namespace maa::data;

namespace {

// Among all allocations that round each share down or up and sum to n, the
// largest-remainder one minimizes the squared deviation; ties go to the
// allocation favouring earlier splits.
std::array<std::size_t, 3> brute_force_split(std::size_t n, const std::array<double, 3>& f) {
  std::array<std::size_t, 3> best{};
  double best_cost = 1e300;
  for (int mask = 0; mask < 8; ++mask) {
    std::array<std::size_t, 3> c{};
    double cost = 0;
    std::size_t sum = 0;
    for (int i = 0; i < 3; ++i) {
      const double exact = f[i] * static_cast<double>(n);
      c[i] = static_cast<std::size_t>(std::floor(exact)) + ((mask >> (2 - i)) & 1);
      cost += (static_cast<double>(c[i]) - exact) * (static_cast<double>(c[i]) - exact);
      sum += c[i];
    }
    if (sum != n) continue;
    if (cost < best_cost - 1e-9) {
      best_cost = cost;
      best = c;
    }
  }
  return best;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

DatasetSpec small_spec() {
  DatasetSpec s;
  s.num_pairs = 64;
  s.split_fractions = {0.5, 0.25, 0.25};
  return s;
}

}  // namespace

TEST_CASE("split counts agree with the brute-force rounding oracle") {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(8, 5000));
    const double a = rng.uniform(0.05, 1.0), b = rng.uniform(0.05, 1.0), c = rng.uniform(0.05, 1.0);
    const std::array<double, 3> f{a / (a + b + c), b / (a + b + c), c / (a + b + c)};
    const auto got = split_counts(n, f);
    CHECK(got[0] + got[1] + got[2] == n);
    CHECK(got == brute_force_split(n, f));
  }
  CHECK(split_counts(4096, {0.875, 0.0625, 0.0625}) == std::array<std::size_t, 3>{3584, 256, 256});
  CHECK(split_counts(10, {1.0 / 3, 1.0 / 3, 1.0 / 3}) == std::array<std::size_t, 3>{4, 3, 3});
}

TEST_CASE("default spec yields a 256-pair validation split") {
  const DatasetSpec s;
  CHECK(split_counts(s.num_pairs, s.split_fractions)[1] == 256);
  CHECK(split_counts(s.num_pairs, s.split_fractions)[2] == 256);
}

TEST_CASE("spec validation names the bad field") {
  DatasetSpec s;
  s.num_pairs = 4;
  CHECK_THROWS_WITH_AS(s.validate(), doctest::Contains("num_pairs"), std::invalid_argument);
  s = DatasetSpec{};
  s.split_fractions = {0.5, 0.5, 0.5};
  CHECK_THROWS_WITH_AS(s.validate(), doctest::Contains("sum to 1"), std::invalid_argument);
  s = DatasetSpec{};
  s.shapes = {"circle", "hexagon"};
  CHECK_THROWS_WITH_AS(s.validate(), doctest::Contains("hexagon"), std::invalid_argument);
  s = DatasetSpec{};
  const int patches[] = {5};
  CHECK_THROWS_WITH_AS(s.validate(patches), doctest::Contains("patch size 5"), std::invalid_argument);
}

TEST_CASE("vocabulary reserves the mask id and rejects unknown words") {
  const auto v = Vocabulary::for_spec(DatasetSpec{});
  CHECK(v.word(Vocabulary::kMaskId) == Vocabulary::kMaskToken);
  CHECK(v.contains("red"));
  CHECK(v.contains("left"));
  CHECK_THROWS(v.id("purple"));
  const auto t = tokenize("a red circle left of a blue square", v);
  CHECK(t.length() == 8);
  CHECK(detokenize(t) == "a red circle left of a blue square");
  CHECK(from_ids(t.ids, v) == t);
}

TEST_CASE("word edit distance counts differing positions") {
  const auto v = Vocabulary::for_spec(DatasetSpec{});
  const auto a = tokenize("a red circle", v);
  CHECK(word_edit_distance(a, a) == 0);
  CHECK(word_edit_distance(a, tokenize("a blue circle", v)) == 1);
  CHECK(word_edit_distance(a, tokenize("a blue square", v)) == 2);
  CHECK(word_edit_distance(a, tokenize("a red circle and a red square", v)) == 4);
}

TEST_CASE("generation is a pure function of the spec") {
  const auto d1 = testutil::fresh_dir("gen_a");
  const auto d2 = testutil::fresh_dir("gen_b");
  const auto h1 = generate_dataset(small_spec(), d1);
  const auto h2 = generate_dataset(small_spec(), d2);
  CHECK(slurp(d1 / "manifest.jsonl") == slurp(d2 / "manifest.jsonl"));
  for (std::size_t i = 0; i < h1.size(); ++i) {
    CHECK(slurp(d1 / h1.entries()[i].image) == slurp(d2 / h2.entries()[i].image));
  }
  auto other = small_spec();
  other.seed = 8;
  const auto d3 = testutil::fresh_dir("gen_c");
  generate_dataset(other, d3);
  CHECK(slurp(d1 / "manifest.jsonl") != slurp(d3 / "manifest.jsonl"));
}

TEST_CASE("generated corpus is well formed") {
  const auto dir = testutil::fresh_dir("gen_wf");
  const auto h = generate_dataset(small_spec(), dir);
  REQUIRE(h.size() == 64);
  CHECK(h.indices(Split::Train).size() == 32);
  CHECK(h.indices(Split::Val).size() == 16);
  CHECK(h.indices(Split::Test).size() == 16);
  for (auto split : {Split::Train, Split::Val, Split::Test}) {
    std::set<std::string> caps;
    for (auto i : h.indices(split)) caps.insert(h.entries()[i].caption);
    CHECK(caps.size() == h.indices(split).size());  // captions are distinct within a split
  }
  for (std::size_t i = 0; i < h.size(); ++i) {
    const auto [img, cap] = load_pair(h, i);
    CHECK(img.height == 32);
    CHECK(img.width == 32);
    CHECK(img.min_value() >= 0.0f);
    CHECK(img.max_value() <= 1.0f);
    CHECK(cap.length() <= Vocabulary::kMaxCaptionLength);
  }
  const auto reopened = DatasetHandle::open(dir);
  CHECK(reopened.spec() == small_spec());
  CHECK(reopened.vocab() == h.vocab());
  CHECK(spec_from_json(spec_to_json(small_spec())) == small_spec());
}

TEST_CASE("checksum mismatch is detected on load") {
  const auto dir = testutil::fresh_dir("gen_crc");
  const auto h = generate_dataset(small_spec(), dir);
  const auto& e = h.entries()[3];
  Image other = read_png(dir / h.entries()[4].image);
  write_png(other, dir / e.image);
  CHECK_THROWS(load_pair(h, 3));
  CHECK_NOTHROW(load_pair(h, 5));
}

TEST_CASE("opening a missing dataset fails with the path") {
  CHECK_THROWS_WITH(DatasetHandle::open(std::filesystem::path(MAA_TEST_TMP) / "nope"), doctest::Contains("nope"));
}

TEST_CASE("word categories group relation heads by their tails") {
  const auto c = word_categories(DatasetSpec{});
  CHECK(c.colors.size() == 4);
  CHECK(c.shapes.size() == 4);
  bool lr = false, ab = false;
  for (const auto& g : c.relation_groups) {
    std::set<std::string> s(g.begin(), g.end());
    if (s == std::set<std::string>{"left", "right"}) lr = true;
    if (s == std::set<std::string>{"above", "below"}) ab = true;
  }
  CHECK(lr);
  CHECK(ab);
}
