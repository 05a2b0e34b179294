#include <cstdio>
#include <filesystem>
#include <string>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string output;
};

CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string(SOMNUS_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CliResult r;
  char buf[4096];
  while (size_t n = fread(buf, 1, sizeof(buf), pipe)) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path scratch_dir() {
  const fs::path p = fs::temp_directory_path() / "somnus-cli-test";
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("cli: version and help") {
  const auto v = run_cli("--version");
  CHECK(v.code == 0);
  CHECK(v.output.find('.') != std::string::npos);

  const auto h = run_cli("--help");
  CHECK(h.code == 0);
  CHECK(h.output.find("gen-synth") != std::string::npos);
  CHECK(h.output.find("pretrain-fusion") != std::string::npos);
  CHECK(h.output.find("knn-probe") != std::string::npos);
}

TEST_CASE("cli: a subcommand is required") {
  const auto r = run_cli("");
  CHECK(r.code != 0);
}

TEST_CASE("cli: gen-synth writes a dataset") {
  const fs::path run = scratch_dir() / "gen";
  fs::remove_all(run);
  const auto r = run_cli("gen-synth --out-dir " + run.string() +
                         " --set synth.subject_count=2"
                         " --set synth.epochs_per_subject=3");
  CHECK(r.code == 0);
  CHECK(fs::exists(run / "data" / "manifest.json"));
  CHECK(fs::exists(run / "resolved_config.json"));
}

TEST_CASE("cli: flag overrides land in the resolved config") {
  const fs::path run = scratch_dir() / "flags";
  fs::remove_all(run);
  const auto r = run_cli("gen-synth --out-dir " + run.string() +
                         " --seed 77 --modalities eeg1+ecg1"
                         " --set synth.subject_count=2"
                         " --set synth.epochs_per_subject=3");
  CHECK(r.code == 0);
  std::string resolved;
  {
    FILE* f = fopen((run / "resolved_config.json").string().c_str(), "r");
    REQUIRE(f != nullptr);
    char buf[4096];
    while (size_t n = fread(buf, 1, sizeof(buf), f)) resolved.append(buf, n);
    fclose(f);
  }
  CHECK(resolved.find("\"seed\": 77") != std::string::npos);
  CHECK(resolved.find("eeg1+ecg1") != std::string::npos);
}

TEST_CASE("cli: bad arguments exit nonzero with a message") {
  const auto bad_set = run_cli("gen-synth --set not-a-pair");
  CHECK(bad_set.code != 0);
  CHECK(bad_set.output.find("KEY=VALUE") != std::string::npos);

  const auto bad_key = run_cli("gen-synth --set fusion.bogus=1");
  CHECK(bad_key.code != 0);
  CHECK(bad_key.output.find("fusion.bogus") != std::string::npos);

  const auto bad_cmd = run_cli("transmogrify");
  CHECK(bad_cmd.code != 0);
}

TEST_CASE("cli: missing upstream artifacts exit with the dependency status") {
  const fs::path run = scratch_dir() / "empty";
  fs::remove_all(run);
  const auto r = run_cli("preprocess --out-dir " + run.string());
  CHECK(r.code == 4);
  CHECK(r.output.find("gen-synth") != std::string::npos);

  const auto t = run_cli("train --out-dir " + run.string());
  CHECK(t.code == 4);
}
