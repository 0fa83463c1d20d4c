#pragma once

#include "maa/attack.hpp"
#include "maa/config.hpp"
#include "maa/eval.hpp"

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

namespace maa::pipeline {

/// A verb was run before the artifacts it depends on exist.
struct MissingPrerequisite : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string code_version();

/// Artifact locations inside a run directory.
struct RunLayout {
  std::filesystem::path root;

  std::filesystem::path dataset() const { return root / "dataset"; }
  std::filesystem::path checkpoint(const std::string& model_id) const { return root / "checkpoints" / (model_id + ".ckpt"); }
  std::filesystem::path attack_dir(const std::string& method, std::uint64_t seed) const;
  std::filesystem::path ablation_dir(const std::string& variant, std::uint64_t seed) const;
  std::filesystem::path reports() const { return root / "reports"; }
};

/// Writes effective_config.ini, version.txt and seeds.json into the run
/// directory.
void write_run_metadata(const config::RunConfig& cfg);

void save_adversarial_set(const attack::AdversarialSet& set, const std::filesystem::path& dir);
attack::AdversarialSet load_adversarial_set(const std::filesystem::path& dir);

// Verbs. Each returns the process exit status: 0 on success, 3 when a budget
// audit fails. Missing inputs throw MissingPrerequisite naming the verb to run.
int gen_data(const config::RunConfig& cfg, std::ostream& log);
int train_models(const config::RunConfig& cfg, std::ostream& log);
int run_attack(const config::RunConfig& cfg, std::ostream& log);
int run_eval(const config::RunConfig& cfg, std::ostream& log);
int run_ablation(const config::RunConfig& cfg, std::ostream& log);
int run_report(const config::RunConfig& cfg, std::ostream& out);

/// Debug dump of the crop plan the source model's attack uses for one
/// sample and step.
int dump_schedule(const config::RunConfig& cfg, std::uint64_t sample_id, int step, std::ostream& out);

inline constexpr int kAuditFailed = 3;

}  // namespace maa::pipeline
