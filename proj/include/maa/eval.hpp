#pragma once

#include "maa/attack.hpp"
#include "maa/data.hpp"
#include "maa/models.hpp"
#include "maa/retrieval.hpp"

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace maa::eval {

enum class Direction { ImageToText, TextToImage };

std::string_view direction_name(Direction d);

inline constexpr std::array<std::size_t, 3> kRecallKs{1, 5, 10};

struct RetrievalReport {
  Direction direction = Direction::ImageToText;
  std::string method;
  std::uint64_t seed = 0;
  std::string source_model;
  std::string target_model;
  std::size_t gallery_size = 0;
  std::size_t queries = 0;
  std::array<double, 3> clean_recall{};        // R@1, R@5, R@10 (percent)
  std::array<double, 3> adversarial_recall{};
  std::array<std::optional<double>, 3> asr{};  // nullopt: nothing cleanly correct at K
  std::string gallery_hash;
  std::vector<std::size_t> clean_ranks;
  std::vector<std::size_t> adversarial_ranks;

  /// Throws std::logic_error when a report invariant is broken.
  void check() const;
};

/// Clean embeddings of an evaluation split under one model.
struct Gallery {
  std::string model_id;
  std::vector<std::size_t> dataset_indices;  // row -> dataset index
  EmbeddingMatrix images;
  EmbeddingMatrix texts;
  std::string hash;  // content hash of both matrices
};

Gallery embed_gallery(const models::VlpModel& model, const std::string& model_id,
                      const std::vector<data::Pair>& pairs);

std::string embedding_hash(const EmbeddingMatrix& images, const EmbeddingMatrix& texts);

struct TransferResult {
  RetrievalReport i2t;
  RetrievalReport t2i;
};

/// Scores an adversarial set on `target`: adversarial images are bilinearly
/// resized to the target input size, adversarial captions replace the
/// originals in the text gallery (and adversarial images in the image
/// gallery), and only attacked pairs are used as queries.
TransferResult transfer_eval(const attack::AdversarialSet& set, const models::VlpModel& target,
                             const Gallery& gallery, const data::Vocabulary& vocab);

/// All (source, target, direction) cells of one attack method.
struct TransferMatrix {
  std::string method;
  std::vector<RetrievalReport> cells;

  const RetrievalReport* find(const std::string& source, const std::string& target, Direction d,
                              std::uint64_t seed) const;
};

struct NamedModel {
  std::string id;
  const models::VlpModel* model = nullptr;
};

struct AblationSpec {
  std::vector<std::string> variants = attack::variant_names();
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t attacked_pairs = 64;
};

struct AblationRun {
  std::string variant;
  std::uint64_t seed = 0;
  attack::AdversarialSet set;
};

struct AblationResult {
  std::vector<TransferMatrix> matrices;  // one per variant
  std::vector<AblationRun> runs;
};

using SuiteProgress = std::function<void(const std::string& message)>;

/// Runs every variant for every seed on `source`, and scores each set on the
/// source (white-box) and every target against fixed galleries.
AblationResult ablation_suite(const NamedModel& source, const std::vector<NamedModel>& targets,
                              const std::vector<data::Pair>& eval_pairs, const data::Vocabulary& vocab,
                              const attack::CandidateLexicon& lexicon, const attack::AttackConfig& base,
                              const AblationSpec& spec, const SuiteProgress& progress = {});

/// Mean ASR@K over seeds for one variant / target / direction; nullopt if no
/// seed had a defined value.
std::optional<double> mean_asr(const TransferMatrix& m, const std::string& source, const std::string& target,
                               Direction d, std::size_t k_index = 0);

std::string reports_to_json(const std::vector<TransferMatrix>& matrices);
std::vector<TransferMatrix> reports_from_json(std::string_view json);

/// Flat per-report table: one row per (method, seed, source, target, direction).
std::string reports_to_csv(const std::vector<TransferMatrix>& matrices);

/// Comparison table averaged over seeds: one row per (method, source, target)
/// with ASR@1/5/10 per direction, in the usual attack-table layout.
std::string comparison_csv(const std::vector<TransferMatrix>& matrices);

}  // namespace maa::eval
