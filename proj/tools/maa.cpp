#include "maa/config.hpp"
#include "maa/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

int main(int argc, char** argv) {
  CLI::App app{"Multi-granularity adversarial attack lab for toy vision-language encoders"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::uint64_t sample = 0;
  int step = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "run configuration (INI)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "global seed; re-derives every seed not fixed in the config");
    sub->add_option("--out", out_dir, "output root, overriding run.output_root");
  };
  auto* gen = app.add_subcommand("gen-data", "render the synthetic caption corpus");
  auto* train = app.add_subcommand("train", "train the source and target encoders");
  auto* attack = app.add_subcommand("attack", "attack the evaluation subset on the source model");
  auto* eval = app.add_subcommand("eval", "score the saved adversarial set on every model");
  auto* ablate = app.add_subcommand("ablate", "run every attack variant for every seed and score transfer");
  auto* report = app.add_subcommand("report", "render comparison tables from saved reports");
  auto* schedule = app.add_subcommand("schedule", "print the crop plan for one sample and step");
  for (auto* sub : {gen, train, attack, eval, ablate, report, schedule}) add_common(sub);
  schedule->add_option("--sample", sample, "dataset index of the sample");
  schedule->add_option("--step", step, "attack iteration (0-based)");

  CLI11_PARSE(app, argc, argv);

  try {
    auto cfg = maa::config::load(config_path);
    if (out_dir) cfg.output_root = std::filesystem::absolute(*out_dir).lexically_normal();
    if (seed) cfg.set_global_seed(*seed);
    cfg.validate();

    namespace p = maa::pipeline;
    if (gen->parsed()) return p::gen_data(cfg, std::cerr);
    if (train->parsed()) return p::train_models(cfg, std::cerr);
    if (attack->parsed()) return p::run_attack(cfg, std::cerr);
    if (eval->parsed()) return p::run_eval(cfg, std::cerr);
    if (ablate->parsed()) return p::run_ablation(cfg, std::cerr);
    if (report->parsed()) return p::run_report(cfg, std::cout);
    if (schedule->parsed()) return p::dump_schedule(cfg, sample, step, std::cout);
  } catch (const maa::pipeline::MissingPrerequisite& e) {
    std::cerr << "maa: " << e.what() << "\n";
    return 4;
  } catch (const maa::config::ConfigError& e) {
    std::cerr << "maa: config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "maa: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
