#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "somnus.h"

namespace {

int fail(const char* what, somnus_status status) {
  std::fprintf(stderr, "somnus: %s: %s\n", what, somnus_last_error());
  return static_cast<int>(status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"somnus: self-supervised multimodal sleep-signal workbench"};
  app.set_version_flag("--version", std::string(somnus_version()));
  app.fallthrough();
  app.require_subcommand(1);

  std::string config_path, out_dir, modalities, task;
  long long seed = -1;
  int scenario = 0;
  double label_fraction = -1.0;
  std::vector<std::string> overrides;

  app.add_option("--config", config_path,
                 "JSON config file merged over the built-in defaults");
  app.add_option("--out-dir", out_dir, "run directory for all outputs");
  app.add_option("--seed", seed, "master seed")->check(CLI::NonNegativeNumber);
  app.add_option("--modalities", modalities,
                 "stream combination, e.g. eeg1+eog1+emg1+ecg1");
  app.add_option("--scenario", scenario, "evaluation scenario")
      ->check(CLI::Range(1, 3));
  app.add_option("--label-fraction", label_fraction,
                 "labeled fraction for scenario 3")
      ->check(CLI::Range(0.0, 1.0));
  app.add_option("--task", task, "stage, apnea, hypopnea, or all");
  app.add_option("--set", overrides,
                 "dotted-key override, e.g. fusion.mask_ratio=0.6; "
                 "applied last, repeatable")
      ->type_name("KEY=VALUE");

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-synth", "synthesize a raw multimodal dataset"},
      {"preprocess", "resample, normalize, filter, and cut labeled epochs"},
      {"pretrain-backbone", "self-supervised pretraining per modality"},
      {"pretrain-fusion", "multimodal fusion pretraining on frozen backbones"},
      {"train", "run the configured evaluation scenario"},
      {"evaluate", "re-score stored predictions into the ledger"},
      {"knn-probe", "label-free probe over per-epoch fusion checkpoints"},
      {"hypnogram", "render a truth-vs-prediction stage plot"},
      {"plot-losses", "render a pretraining loss curve"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();

  somnus_config* cfg = nullptr;
  somnus_status st = somnus_config_create(&cfg);
  if (st != SOMNUS_OK) return fail("config", st);

  if (!config_path.empty() &&
      (st = somnus_config_load_file(cfg, config_path.c_str())) != SOMNUS_OK) {
    somnus_config_destroy(cfg);
    return fail(config_path.c_str(), st);
  }

  std::vector<std::pair<std::string, std::string>> sets;
  if (seed >= 0) sets.emplace_back("seed", std::to_string(seed));
  if (!out_dir.empty()) sets.emplace_back("out_dir", out_dir);
  if (!modalities.empty()) sets.emplace_back("modalities", modalities);
  if (scenario > 0) sets.emplace_back("scenario", std::to_string(scenario));
  if (label_fraction >= 0.0)
    sets.emplace_back("scenario3.label_fraction",
                      std::to_string(label_fraction));
  if (!task.empty()) sets.emplace_back("task", task);
  for (const auto& kv : overrides) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      std::fprintf(stderr, "somnus: --set expects KEY=VALUE, got '%s'\n",
                   kv.c_str());
      somnus_config_destroy(cfg);
      return static_cast<int>(SOMNUS_INVALID_ARGUMENT);
    }
    sets.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
  }
  for (const auto& [key, value] : sets) {
    if ((st = somnus_config_set(cfg, key.c_str(), value.c_str())) !=
        SOMNUS_OK) {
      somnus_config_destroy(cfg);
      return fail(key.c_str(), st);
    }
  }

  st = somnus_run_command(cfg, command.c_str());
  somnus_config_destroy(cfg);
  if (st != SOMNUS_OK) return fail(command.c_str(), st);
  return 0;
}
