#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace somnus::run {

namespace fs = std::filesystem;

// Layered run configuration: built-in defaults, then an optional config file,
// then individual overrides. Keys absent from the defaults are rejected at
// every layer so typos fail fast.
class RunConfig {
 public:
  RunConfig();

  static nlohmann::json defaults();

  void load_file(const fs::path& path);
  // dotted key, e.g. "fusion.mask_ratio"; the value is parsed as JSON when
  // possible and treated as a string otherwise.
  void set(const std::string& dotted_key, const std::string& value);

  const nlohmann::json& json() const { return j_; }
  nlohmann::json value_at(const std::string& dotted_key) const;

  double number(const std::string& key) const;
  long integer(const std::string& key) const;
  bool boolean(const std::string& key) const;
  std::string text(const std::string& key) const;
  std::vector<long> integers(const std::string& key) const;
  uint64_t seed() const;
  fs::path out_dir() const;

  // Writes the fully resolved configuration snapshot into the run directory.
  void write_resolved(const fs::path& dir) const;

 private:
  nlohmann::json j_;
};

// Stream names like "eeg2+eog2+emg1+ecg1" -> uppercase channel names.
std::vector<std::string> parse_modalities(const std::string& spec);

}  // namespace somnus::run
