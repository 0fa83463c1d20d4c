#pragma once

#include "maa/image.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace maa::data {

enum class Split { Train = 0, Val = 1, Test = 2 };

std::string_view split_name(Split s);
Split parse_split(std::string_view name);

/// Synthetic shape-caption corpus description.
struct DatasetSpec {
  std::size_t num_pairs = 4096;
  int image_size = 32;
  std::vector<std::string> shapes{"circle", "square", "triangle", "cross"};
  std::vector<std::string> colors{"red", "green", "blue", "yellow"};
  std::vector<std::string> layouts{"above", "below", "left of", "right of"};
  std::uint64_t seed = 7;
  std::array<double, 3> split_fractions{0.875, 0.0625, 0.0625};

  /// Throws std::invalid_argument naming the offending field. `patch_sizes`
  /// lists the patch/stride multiple of every model the images feed.
  void validate(std::span<const int> patch_sizes = {}) const;

  bool operator==(const DatasetSpec&) const = default;
};

/// Shape and color names the renderer knows about.
std::span<const std::string_view> known_shapes();
std::span<const std::string_view> known_colors();
std::span<const std::string_view> known_layouts();

/// Per-split pair counts: largest-remainder rounding of fraction * n, ties to
/// the earlier split, summing to n.
std::array<std::size_t, 3> split_counts(std::size_t n, const std::array<double, 3>& fractions);

/// Closed whole-word vocabulary. Id 0 is the reserved mask token.
class Vocabulary {
 public:
  static constexpr int kMaskId = 0;
  static constexpr std::string_view kMaskToken = "[MASK]";
  static constexpr std::size_t kMaxCaptionLength = 16;

  Vocabulary();
  explicit Vocabulary(std::vector<std::string> words);

  static Vocabulary for_spec(const DatasetSpec& spec);
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  int id(std::string_view word) const;  // throws on OOV
  bool contains(std::string_view word) const;
  const std::string& word(int id) const;
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  bool operator==(const Vocabulary& o) const { return words_ == o.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

struct CaptionTokens {
  std::vector<int> ids;
  std::vector<std::string> words;

  std::size_t length() const { return ids.size(); }
  std::string text() const;
  bool operator==(const CaptionTokens&) const = default;
};

std::vector<std::string> split_words(std::string_view caption);

CaptionTokens tokenize(std::span<const std::string> words, const Vocabulary& vocab);
CaptionTokens tokenize(std::string_view caption, const Vocabulary& vocab);
CaptionTokens from_ids(std::span<const int> ids, const Vocabulary& vocab);
std::string detokenize(const CaptionTokens& tokens);

/// Number of word positions at which two equal-length captions differ;
/// unequal lengths count the surplus as edits.
std::size_t word_edit_distance(const CaptionTokens& a, const CaptionTokens& b);

struct ManifestEntry {
  std::size_t index = 0;
  std::string image;  // relative to the dataset root
  std::string caption;
  Split split = Split::Train;
  std::uint32_t crc32 = 0;
};

class DatasetHandle {
 public:
  /// Opens an existing dataset directory and checks every manifest entry
  /// resolves to a file.
  static DatasetHandle open(const std::filesystem::path& root);

  const std::filesystem::path& root() const { return root_; }
  const std::vector<ManifestEntry>& entries() const { return entries_; }
  const Vocabulary& vocab() const { return vocab_; }
  const DatasetSpec& spec() const { return spec_; }
  std::size_t size() const { return entries_.size(); }
  std::vector<std::size_t> indices(Split s) const;

 private:
  friend DatasetHandle generate_dataset(const DatasetSpec&, const std::filesystem::path&);
  std::filesystem::path root_;
  std::vector<ManifestEntry> entries_;
  Vocabulary vocab_;
  DatasetSpec spec_;
};

/// Renders the corpus into `root` (images/<i>.png, manifest.jsonl,
/// vocab.txt, dataset_spec.json). Output is a pure function of `spec`.
DatasetHandle generate_dataset(const DatasetSpec& spec, const std::filesystem::path& root);

/// Loads and verifies (checksum) one pair.
std::pair<Image, CaptionTokens> load_pair(const DatasetHandle& handle, std::size_t index);

struct Pair {
  Image image;
  CaptionTokens caption;
  std::size_t index = 0;
};

std::vector<Pair> load_split(const DatasetHandle& handle, Split split);

/// Words grouped by the role they play in captions; used to build
/// same-category substitution lexicons.
struct WordCategories {
  std::vector<std::string> colors;
  std::vector<std::string> shapes;
  // First words of layout phrases, grouped by the words that follow them
  // ("left of" / "right of" share a group, "above" / "below" another).
  std::vector<std::vector<std::string>> relation_groups;
};
WordCategories word_categories(const DatasetSpec& spec);

std::string spec_to_json(const DatasetSpec& spec);
DatasetSpec spec_from_json(std::string_view json);

}  // namespace maa::data
