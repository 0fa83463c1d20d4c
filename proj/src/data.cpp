#include "maa/data.hpp"

#include "maa/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace maa::data {

using nlohmann::json;

namespace {

constexpr std::string_view kShapes[] = {"circle", "square", "triangle", "cross", "diamond", "ring"};
constexpr std::string_view kColors[] = {"red",    "green",  "blue", "yellow",
                                        "purple", "orange", "cyan", "white"};
constexpr std::string_view kLayouts[] = {"above", "below", "left of", "right of"};

struct Rgb {
  float r, g, b;
};

Rgb color_rgb(std::string_view name) {
  if (name == "red") return {0.90f, 0.15f, 0.15f};
  if (name == "green") return {0.15f, 0.80f, 0.20f};
  if (name == "blue") return {0.20f, 0.30f, 0.95f};
  if (name == "yellow") return {0.95f, 0.90f, 0.15f};
  if (name == "purple") return {0.60f, 0.20f, 0.80f};
  if (name == "orange") return {1.00f, 0.55f, 0.10f};
  if (name == "cyan") return {0.10f, 0.85f, 0.90f};
  return {0.95f, 0.95f, 0.95f};  // white
}

template <std::size_t N>
bool known(const std::string_view (&table)[N], std::string_view name) {
  return std::find(std::begin(table), std::end(table), name) != std::end(table);
}

std::vector<std::size_t> largest_remainder(std::size_t n, std::span<const double> weights) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> counts(weights.size());
  std::vector<double> rem(weights.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = weights[i] / total * static_cast<double>(n);
    counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b] + 1e-12; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++counts[order[k % order.size()]];
  return counts;
}

// Geometric relation between the first and second shape of a scene.
enum class Relation { Vertical, Horizontal };

struct Item {
  int color = 0;
  int shape = 0;
};

// A scene in canonical form: for Vertical, items[0] is above items[1]; for
// Horizontal, items[0] is left of items[1].
struct Scene {
  std::vector<Item> items;
  Relation relation = Relation::Vertical;
};

struct SceneSpace {
  int colors = 0;
  int shapes = 0;
  std::vector<Relation> relations;  // canonical relations available

  std::size_t items() const { return static_cast<std::size_t>(colors) * shapes; }
  std::size_t capacity(int count) const {
    if (count == 1) return items();
    std::size_t c = relations.size() * items() * items();
    if (count == 3) c *= items();
    return c;
  }
  Scene decode(int count, std::size_t index) const {
    Scene s;
    auto take_item = [&]() {
      const std::size_t it = index % items();
      index /= items();
      return Item{static_cast<int>(it / shapes), static_cast<int>(it % shapes)};
    };
    s.items.push_back(take_item());
    if (count >= 2) {
      s.relation = relations[index % relations.size()];
      index /= relations.size();
      s.items.push_back(take_item());
    }
    if (count == 3) s.items.push_back(take_item());
    return s;
  }
};

SceneSpace scene_space(const DatasetSpec& spec) {
  SceneSpace space;
  space.colors = static_cast<int>(spec.colors.size());
  space.shapes = static_cast<int>(spec.shapes.size());
  bool vertical = false, horizontal = false;
  for (const auto& l : spec.layouts) {
    vertical = vertical || l == "above" || l == "below";
    horizontal = horizontal || l == "left of" || l == "right of";
  }
  if (vertical) space.relations.push_back(Relation::Vertical);
  if (horizontal) space.relations.push_back(Relation::Horizontal);
  return space;
}

// Picks a surface phrase for a canonical relation; returns the phrase and
// whether the caption names the shapes in swapped order.
std::pair<std::string, bool> surface_relation(const DatasetSpec& spec, Relation rel, Rng& rng) {
  std::vector<std::pair<std::string, bool>> options;
  for (const auto& l : spec.layouts) {
    if (rel == Relation::Vertical && l == "above") options.emplace_back(l, false);
    if (rel == Relation::Vertical && l == "below") options.emplace_back(l, true);
    if (rel == Relation::Horizontal && l == "left of") options.emplace_back(l, false);
    if (rel == Relation::Horizontal && l == "right of") options.emplace_back(l, true);
  }
  return options[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(options.size()) - 1))];
}

std::string caption_for(const DatasetSpec& spec, const Scene& scene, Rng& rng) {
  auto phrase = [&](const Item& it) { return "a " + spec.colors[it.color] + " " + spec.shapes[it.shape]; };
  if (scene.items.size() == 1) return phrase(scene.items[0]);
  const auto [rel, swapped] = surface_relation(spec, scene.relation, rng);
  const Item& first = swapped ? scene.items[1] : scene.items[0];
  const Item& second = swapped ? scene.items[0] : scene.items[1];
  std::string cap = phrase(first) + " " + rel + " " + phrase(second);
  if (scene.items.size() == 3) cap += " and " + phrase(scene.items[2]);
  return cap;
}

bool inside_shape(std::string_view shape, float dx, float dy, float r) {
  if (shape == "circle") return dx * dx + dy * dy <= r * r;
  if (shape == "square") return std::abs(dx) <= 0.85f * r && std::abs(dy) <= 0.85f * r;
  if (shape == "triangle") {
    const float top = -r, base = 0.8f * r;
    if (dy < top || dy > base) return false;
    return std::abs(dx) <= r * (dy - top) / (base - top);
  }
  if (shape == "cross") {
    const float arm = r / 3.0f;
    return (std::abs(dx) <= arm && std::abs(dy) <= r) || (std::abs(dy) <= arm && std::abs(dx) <= r);
  }
  if (shape == "diamond") return std::abs(dx) + std::abs(dy) <= r;
  const float d2 = dx * dx + dy * dy;  // ring
  return d2 <= r * r && d2 >= 0.3f * r * r;
}

Image render_scene(const DatasetSpec& spec, const Scene& scene, Rng& rng) {
  const int size = spec.image_size;
  const float q = static_cast<float>(size) / 2.0f;
  Image img(size, size);
  const float bg = static_cast<float>(rng.uniform(0.05, 0.15));
  float tint[3];
  for (float& t : tint) t = static_cast<float>(rng.uniform(-0.03, 0.03));
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        img.at(c, y, x) = bg + tint[c] + static_cast<float>(rng.uniform(-0.03, 0.03));
      }
    }
  }

  // Fixed layout: a lone shape sits in the centre; a related pair fills the
  // left column (vertical) or the top row (horizontal) so the relation is
  // unambiguous; a third shape sits centred in the remaining half.
  struct Slot {
    float x0, y0, w, h;
  };
  const float half = q / 2.0f;
  std::vector<Slot> slots;
  if (scene.items.size() == 1) {
    slots.push_back(Slot{half, half, q, q});
  } else if (scene.relation == Relation::Vertical) {
    slots = {Slot{0, 0, q, q}, Slot{0, q, q, q}, Slot{q, half, q, q}};
  } else {
    slots = {Slot{0, 0, q, q}, Slot{q, 0, q, q}, Slot{half, q, q, q}};
  }

  for (std::size_t k = 0; k < scene.items.size(); ++k) {
    const Item& it = scene.items[k];
    const Slot& sl = slots[k];
    const float r = static_cast<float>(rng.uniform(0.36, 0.42)) * q;
    const float jitter = 0.08f * q;
    const float cx = sl.x0 + sl.w / 2 + static_cast<float>(rng.uniform(-jitter, jitter));
    const float cy = sl.y0 + sl.h / 2 + static_cast<float>(rng.uniform(-jitter, jitter));
    Rgb rgb = color_rgb(spec.colors[it.color]);
    float col[3] = {rgb.r, rgb.g, rgb.b};
    for (float& v : col) v += static_cast<float>(rng.uniform(-0.06, 0.06));
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        if (!inside_shape(spec.shapes[it.shape], x + 0.5f - cx, y + 0.5f - cy, r)) continue;
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = col[c];
      }
    }
  }
  for (float& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

std::vector<Scene> sample_split_scenes(const SceneSpace& space, std::size_t count, Rng& rng,
                                       Split split) {
  const double weights[3] = {0.15, 0.55, 0.30};
  std::vector<std::size_t> quota = largest_remainder(count, weights);
  std::size_t caps[3] = {space.capacity(1), space.capacity(2), space.capacity(3)};
  const std::size_t total_cap = caps[0] + caps[1] + caps[2];
  if (count > total_cap) {
    throw std::invalid_argument("generate_dataset: vocabulary too small to produce " + std::to_string(count) +
                                " distinct captions in split '" + std::string(split_name(split)) +
                                "' (only " + std::to_string(total_cap) + " available)");
  }
  std::size_t excess = 0;
  for (int k = 0; k < 3; ++k) {
    if (quota[k] > caps[k]) {
      excess += quota[k] - caps[k];
      quota[k] = caps[k];
    }
  }
  for (int k : {1, 2, 0}) {
    const std::size_t room = caps[k] - quota[k];
    const std::size_t add = std::min(room, excess);
    quota[k] += add;
    excess -= add;
  }

  std::vector<Scene> scenes;
  for (int k = 0; k < 3; ++k) {
    const int n_items = k + 1;
    std::vector<std::size_t> picked;
    if (quota[k] * 2 <= caps[k]) {
      std::unordered_set<std::size_t> seen;
      while (picked.size() < quota[k]) {
        const auto idx = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(caps[k]) - 1));
        if (seen.insert(idx).second) picked.push_back(idx);
      }
    } else {
      std::vector<std::size_t> all(caps[k]);
      std::iota(all.begin(), all.end(), 0);
      for (std::size_t i = 0; i < quota[k]; ++i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                                static_cast<std::int64_t>(all.size()) - 1));
        std::swap(all[i], all[j]);
      }
      picked.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(quota[k]));
    }
    for (std::size_t idx : picked) scenes.push_back(space.decode(n_items, idx));
  }
  for (std::size_t i = scenes.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(scenes[i - 1], scenes[j]);
  }
  return scenes;
}

std::string hex32(std::uint32_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(8);
  os.fill('0');
  os << v;
  return os.str();
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("dataset: cannot open manifest " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      ManifestEntry e;
      e.index = j.at("index").get<std::size_t>();
      e.image = j.at("image").get<std::string>();
      e.caption = j.at("caption").get<std::string>();
      e.split = parse_split(j.at("split").get<std::string>());
      e.crc32 = static_cast<std::uint32_t>(std::stoul(j.at("crc32").get<std::string>(), nullptr, 16));
      entries.push_back(std::move(e));
    } catch (const std::exception& ex) {
      throw std::runtime_error("dataset: bad manifest line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return entries;
}

}  // namespace

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + std::string(name) + "'");
}

std::span<const std::string_view> known_shapes() { return kShapes; }
std::span<const std::string_view> known_colors() { return kColors; }
std::span<const std::string_view> known_layouts() { return kLayouts; }

void DatasetSpec::validate(std::span<const int> patch_sizes) const {
  if (num_pairs < 8) throw std::invalid_argument("dataset.num_pairs: must be >= 8, got " + std::to_string(num_pairs));
  if (image_size < 16 || image_size % 2 != 0) {
    throw std::invalid_argument("dataset.image_size: must be an even number >= 16, got " + std::to_string(image_size));
  }
  for (int p : patch_sizes) {
    if (p <= 0 || image_size % p != 0) {
      throw std::invalid_argument("dataset.image_size: " + std::to_string(image_size) +
                                  " is not divisible by model patch size " + std::to_string(p));
    }
  }
  double sum = 0.0;
  for (double f : split_fractions) {
    if (!(f > 0.0)) throw std::invalid_argument("dataset.split: every fraction must be > 0");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("dataset.split: fractions must sum to 1");
  auto check_list = [](const std::vector<std::string>& list, const char* key, auto is_known) {
    if (list.empty()) throw std::invalid_argument(std::string(key) + ": must not be empty");
    std::set<std::string> uniq(list.begin(), list.end());
    if (uniq.size() != list.size()) throw std::invalid_argument(std::string(key) + ": duplicate entries");
    for (const auto& s : list) {
      if (!is_known(s)) throw std::invalid_argument(std::string(key) + ": unknown entry '" + s + "'");
    }
  };
  check_list(shapes, "dataset.shapes", [](const std::string& s) { return known(kShapes, s); });
  check_list(colors, "dataset.colors", [](const std::string& s) { return known(kColors, s); });
  check_list(layouts, "dataset.layouts", [](const std::string& s) { return known(kLayouts, s); });
}

std::array<std::size_t, 3> split_counts(std::size_t n, const std::array<double, 3>& fractions) {
  const auto v = largest_remainder(n, fractions);
  return {v[0], v[1], v[2]};
}

// --- vocabulary ----------------------------------------------------------------

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(std::vector<std::string> words) {
  if (words.empty() || words.front() != kMaskToken) words.insert(words.begin(), std::string(kMaskToken));
  for (const auto& w : words) {
    if (index_.count(w)) throw std::invalid_argument("vocabulary: duplicate word '" + w + "'");
    index_.emplace(w, static_cast<int>(words_.size()));
    words_.push_back(w);
  }
}

Vocabulary Vocabulary::for_spec(const DatasetSpec& spec) {
  std::vector<std::string> words{std::string(kMaskToken), "a", "and"};
  auto push = [&](const std::string& w) {
    if (std::find(words.begin(), words.end(), w) == words.end()) words.push_back(w);
  };
  for (const auto& c : spec.colors) push(c);
  for (const auto& s : spec.shapes) push(s);
  for (const auto& l : spec.layouts) {
    for (const auto& w : split_words(l)) push(w);
  }
  return Vocabulary(std::move(words));
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("vocabulary: cannot open " + path.string());
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) words.push_back(line);
  if (words.empty() || words.front() != kMaskToken) {
    throw std::runtime_error("vocabulary: " + path.string() + " must start with " + std::string(kMaskToken));
  }
  return Vocabulary(std::move(words));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("vocabulary: cannot write " + path.string());
  for (const auto& w : words_) out << w << '\n';
}

int Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) throw std::invalid_argument("out-of-vocabulary word '" + std::string(word) + "'");
  return it->second;
}

bool Vocabulary::contains(std::string_view word) const { return index_.count(std::string(word)) > 0; }

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw std::out_of_range("vocabulary: id " + std::to_string(id) + " outside [0," + std::to_string(words_.size()) + ")");
  }
  return words_[static_cast<std::size_t>(id)];
}

// --- tokens ------------------------------------------------------------------

std::string CaptionTokens::text() const { return detokenize(*this); }

std::vector<std::string> split_words(std::string_view caption) {
  std::vector<std::string> out;
  std::istringstream is{std::string(caption)};
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

CaptionTokens tokenize(std::span<const std::string> words, const Vocabulary& vocab) {
  if (words.empty()) throw std::invalid_argument("tokenize: empty caption");
  if (words.size() > Vocabulary::kMaxCaptionLength) {
    throw std::invalid_argument("tokenize: caption of " + std::to_string(words.size()) + " words exceeds " +
                                std::to_string(Vocabulary::kMaxCaptionLength));
  }
  CaptionTokens t;
  for (const auto& w : words) {
    t.ids.push_back(vocab.id(w));
    t.words.push_back(w);
  }
  return t;
}

CaptionTokens tokenize(std::string_view caption, const Vocabulary& vocab) {
  const auto words = split_words(caption);
  return tokenize(std::span<const std::string>(words), vocab);
}

CaptionTokens from_ids(std::span<const int> ids, const Vocabulary& vocab) {
  CaptionTokens t;
  for (int id : ids) {
    t.words.push_back(vocab.word(id));
    t.ids.push_back(id);
  }
  return t;
}

std::string detokenize(const CaptionTokens& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.words.size(); ++i) {
    if (i) s += ' ';
    s += tokens.words[i];
  }
  return s;
}

std::size_t word_edit_distance(const CaptionTokens& a, const CaptionTokens& b) {
  const std::size_t n = std::min(a.ids.size(), b.ids.size());
  std::size_t d = std::max(a.ids.size(), b.ids.size()) - n;
  for (std::size_t i = 0; i < n; ++i) d += a.ids[i] != b.ids[i];
  return d;
}

// --- dataset -----------------------------------------------------------------

std::string spec_to_json(const DatasetSpec& spec) {
  json j;
  j["num_pairs"] = spec.num_pairs;
  j["image_size"] = spec.image_size;
  j["shapes"] = spec.shapes;
  j["colors"] = spec.colors;
  j["layouts"] = spec.layouts;
  j["seed"] = spec.seed;
  j["split_fractions"] = spec.split_fractions;
  return j.dump(2);
}

DatasetSpec spec_from_json(std::string_view text) {
  const json j = json::parse(text);
  DatasetSpec s;
  s.num_pairs = j.at("num_pairs").get<std::size_t>();
  s.image_size = j.at("image_size").get<int>();
  s.shapes = j.at("shapes").get<std::vector<std::string>>();
  s.colors = j.at("colors").get<std::vector<std::string>>();
  s.layouts = j.at("layouts").get<std::vector<std::string>>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.split_fractions = j.at("split_fractions").get<std::array<double, 3>>();
  return s;
}

std::vector<std::size_t> DatasetHandle::indices(Split s) const {
  std::vector<std::size_t> out;
  for (const auto& e : entries_) {
    if (e.split == s) out.push_back(e.index);
  }
  return out;
}

DatasetHandle DatasetHandle::open(const std::filesystem::path& root) {
  DatasetHandle h;
  h.root_ = root;
  h.vocab_ = Vocabulary::load(root / "vocab.txt");
  h.entries_ = read_manifest(root / "manifest.jsonl");
  {
    std::ifstream in(root / "dataset_spec.json");
    if (!in) throw std::runtime_error("dataset: missing dataset_spec.json in " + root.string());
    std::stringstream ss;
    ss << in.rdbuf();
    h.spec_ = spec_from_json(ss.str());
  }
  for (std::size_t i = 0; i < h.entries_.size(); ++i) {
    const auto& e = h.entries_[i];
    if (e.index != i) throw std::runtime_error("dataset: manifest index " + std::to_string(e.index) + " out of order");
    if (!std::filesystem::exists(root / e.image)) {
      throw std::runtime_error("dataset: manifest entry " + std::to_string(i) + " references missing file " + e.image);
    }
  }
  return h;
}

DatasetHandle generate_dataset(const DatasetSpec& spec, const std::filesystem::path& root) {
  spec.validate();
  const auto counts = split_counts(spec.num_pairs, spec.split_fractions);
  for (int k = 0; k < 3; ++k) {
    if (counts[k] == 0) {
      throw std::invalid_argument("dataset.split: split '" + std::string(split_name(static_cast<Split>(k))) +
                                  "' would be empty for num_pairs=" + std::to_string(spec.num_pairs));
    }
  }
  std::error_code ec;
  std::filesystem::create_directories(root / "images", ec);
  if (ec) throw std::runtime_error("generate_dataset: cannot create " + (root / "images").string() + ": " + ec.message());
  {
    const auto probe = root / ".write_probe";
    std::ofstream p(probe);
    if (!p) throw std::runtime_error("generate_dataset: root path " + root.string() + " is not writable");
    p.close();
    std::filesystem::remove(probe, ec);
  }

  const SceneSpace space = scene_space(spec);
  Rng master(spec.seed);
  DatasetHandle h;
  h.root_ = root;
  h.vocab_ = Vocabulary::for_spec(spec);
  h.spec_ = spec;

  std::size_t index = 0;
  for (int k = 0; k < 3; ++k) {
    const Split split = static_cast<Split>(k);
    Rng split_rng = master.substream("scenes", static_cast<std::uint64_t>(k));
    const auto scenes = sample_split_scenes(space, counts[k], split_rng, split);
    for (const Scene& scene : scenes) {
      Rng rng = master.substream("pair", index);
      ManifestEntry e;
      e.index = index;
      e.image = "images/" + std::to_string(index) + ".png";
      e.caption = caption_for(spec, scene, rng);
      e.split = split;
      tokenize(e.caption, h.vocab_);  // closure check
      const Image img = render_scene(spec, scene, rng);
      write_png(img, root / e.image);
      e.crc32 = crc32_of(read_file_bytes(root / e.image));
      h.entries_.push_back(std::move(e));
      ++index;
    }
  }

  h.vocab_.save(root / "vocab.txt");
  {
    std::ofstream out(root / "manifest.jsonl");
    if (!out) throw std::runtime_error("generate_dataset: cannot write manifest in " + root.string());
    for (const auto& e : h.entries_) {
      json j;
      j["index"] = e.index;
      j["image"] = e.image;
      j["caption"] = e.caption;
      j["split"] = std::string(split_name(e.split));
      j["crc32"] = hex32(e.crc32);
      out << j.dump() << '\n';
    }
  }
  {
    std::ofstream out(root / "dataset_spec.json");
    out << spec_to_json(spec) << '\n';
  }
  return h;
}

std::pair<Image, CaptionTokens> load_pair(const DatasetHandle& handle, std::size_t index) {
  if (index >= handle.size()) {
    throw std::out_of_range("load_pair: index " + std::to_string(index) + " out of range [0," +
                            std::to_string(handle.size()) + ")");
  }
  const ManifestEntry& e = handle.entries()[index];
  const auto path = handle.root() / e.image;
  const auto bytes = read_file_bytes(path);
  if (crc32_of(bytes) != e.crc32) {
    throw std::runtime_error("load_pair: checksum mismatch for " + path.string() + " (corrupted file)");
  }
  Image img = read_png(path);
  img.validate();
  return {std::move(img), tokenize(e.caption, handle.vocab())};
}

std::vector<Pair> load_split(const DatasetHandle& handle, Split split) {
  std::vector<Pair> out;
  for (std::size_t i : handle.indices(split)) {
    auto [img, cap] = load_pair(handle, i);
    out.push_back(Pair{std::move(img), std::move(cap), i});
  }
  return out;
}

WordCategories word_categories(const DatasetSpec& spec) {
  WordCategories cats;
  cats.colors = spec.colors;
  cats.shapes = spec.shapes;
  std::vector<std::string> tails;
  for (const auto& l : spec.layouts) {
    const auto words = split_words(l);
    std::string tail;
    for (std::size_t i = 1; i < words.size(); ++i) tail += " " + words[i];
    auto it = std::find(tails.begin(), tails.end(), tail);
    if (it == tails.end()) {
      tails.push_back(tail);
      cats.relation_groups.push_back({words[0]});
    } else {
      cats.relation_groups[static_cast<std::size_t>(it - tails.begin())].push_back(words[0]);
    }
  }
  return cats;
}

}  // namespace maa::data
