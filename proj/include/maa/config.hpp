#pragma once

#include "maa/attack.hpp"
#include "maa/data.hpp"
#include "maa/models.hpp"
#include "maa/train.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace maa::config {

/// Error carrying the offending "section.key" (or "line N") in its message.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Per-architecture overrides on top of models::default_config.
struct ModelOverrides {
  std::optional<int> input_size, patch_or_kernel, width, depth, heads, mlp_ratio, embedding_dim, text_width,
      text_depth;

  bool operator==(const ModelOverrides&) const = default;
};

struct ModelEntry {
  models::Architecture arch = models::Architecture::PatchTransformer;
  ModelOverrides overrides;
  train::TrainSpec train;
  bool train_seed_set = false;

  std::string id() const { return std::string(models::architecture_name(arch)); }
  models::ModelConfig model_config(int vocab_size, std::uint64_t seed) const;

  /// Compares effective values; whether a seed was explicit does not count.
  bool operator==(const ModelEntry& o) const;
};

struct EvalSettings {
  std::size_t attacked_pairs = 64;
  data::Split split = data::Split::Test;
  std::vector<std::string> variants = attack::variant_names();
  std::vector<std::uint64_t> seeds{1, 2, 3};

  bool operator==(const EvalSettings&) const = default;
};

struct RunConfig {
  std::filesystem::path output_root = "runs";
  std::string run_id = "default";
  std::uint64_t seed = 1;
  bool data_seed_set = false;
  bool attack_seed_set = false;

  data::DatasetSpec data;
  std::string source = "patch-transformer";
  std::vector<ModelEntry> models;  // source first, then targets
  attack::AttackConfig attack;
  std::string attack_method = "maa";  // a variant name, or "custom" to use the flags as given
  EvalSettings eval;

  std::filesystem::path run_dir() const { return output_root / run_id; }
  const ModelEntry& model(std::string_view id) const;
  std::vector<std::string> target_ids() const;

  /// Sets the global seed and re-derives every seed not given explicitly.
  void set_global_seed(std::uint64_t s);
  void validate() const;

  /// Compares effective values; whether a seed was explicit does not count.
  bool operator==(const RunConfig& o) const;
};

/// Parses "4/255", "0.5" or "3" style numbers.
double parse_number(std::string_view text, const std::string& key);

/// INI-style text: "[section]" headers, "key = value" lines, '#' or ';'
/// comments. Unknown sections or keys are errors. Relative output_root is
/// resolved against `base_dir`; MAA_OUTPUT_ROOT overrides it when set.
RunConfig parse(std::string_view text, const std::filesystem::path& base_dir = ".");
RunConfig load(const std::filesystem::path& path);

/// Canonical text with every effective value spelled out; parse(serialize(c))
/// reproduces c.
std::string serialize(const RunConfig& c);

}  // namespace maa::config
