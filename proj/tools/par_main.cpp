#include <cstdint>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "par/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Backdoor poisoning and cleaning experiments for a small dual-encoder model"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  par::CommandOptions opts;
  std::uint64_t seed_flag = 0;
  const std::vector<std::string> names = {"make-data", "poison",     "clean",      "eval",
                                          "sweep-tau", "sweep-rate", "export-proj"};
  const std::vector<std::string> descriptions = {
      "render the synthetic image-caption corpus",
      "pretrain or load a base model, poison it, evaluate",
      "clean a poisoned checkpoint (perturb-and-recover or augmentation baseline)",
      "re-evaluate a checkpoint on the eval split",
      "clean once per (tau, seed) grid point and average",
      "poison-then-clean across poison rates",
      "project clean vs triggered eval embeddings to 2D"};
  for (std::size_t i = 0; i < names.size(); ++i) {
    CLI::App* sub = app.add_subcommand(names[i], descriptions[i]);
    sub->add_option("--config", opts.config_path, "JSON config file (defaults apply when absent)")
        ->check(CLI::ExistingFile);
    sub->add_option("--set", opts.overrides,
                    "dotted.path=value override, applied after the file; repeatable");
    sub->add_option("--out", opts.out_dir, "directory that receives run directories")
        ->capture_default_str();
    sub->add_option("--seed", seed_flag, "root seed, overrides the config")
        ->each([&opts](const std::string& value) { opts.seed = std::stoull(value); });
    sub->add_flag("--quiet", opts.quiet, "suppress progress logging");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  return par::run_command(app.get_subcommands().front()->get_name(), opts);
}
