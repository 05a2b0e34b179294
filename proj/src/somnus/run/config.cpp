#include "somnus/run/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "somnus/common.hpp"

namespace somnus::run {

using nlohmann::json;

namespace {

bool types_compatible(const json& have, const json& incoming) {
  if (have.is_number() && incoming.is_number()) return true;
  if (have.is_array() && incoming.is_array()) return true;
  return have.type() == incoming.type();
}

void merge_checked(json& target, const json& incoming, const std::string& at) {
  if (!incoming.is_object())
    throw_invalid("config section '" + (at.empty() ? "<root>" : at) +
                  "' must be an object");
  for (const auto& [key, value] : incoming.items()) {
    const std::string path = at.empty() ? key : at + "." + key;
    if (!target.contains(key))
      throw_invalid("unknown config key '" + path + "'");
    json& slot = target[key];
    if (slot.is_object()) {
      merge_checked(slot, value, path);
    } else {
      if (!types_compatible(slot, value))
        throw_invalid("config key '" + path + "' has the wrong type");
      slot = value;
    }
  }
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(cur);
  return parts;
}

}  // namespace

json RunConfig::defaults() {
  return nlohmann::json{
      {"seed", 1234},
      {"out_dir", "runs/default"},
      {"modalities", "eeg1+eeg2+eog1+eog2+emg1+ecg1"},
      {"scenario", 1},
      {"task", "stage"},
      {"synth",
       {{"subject_count", 4},
        {"epochs_per_subject", 200},
        {"apnea_rate", 0.12},
        {"hypopnea_rate", 0.10},
        {"unscored_rate", 0.02}}},
      {"preprocess", {{"event_rule", "any"}}},
      {"backbone",
       {{"epoch", 50},
        {"batch_size", 1024},
        {"frame_size", 3.0},
        {"overlap_step", 0.75},
        {"encoder_dim", 768},
        {"encoder_depth", 4},
        {"encoder_head", 8},
        {"decoder_dim", 256},
        {"decoder_depth", 3},
        {"decoder_head", 8},
        {"projection_hidden", {1024, 512}},
        {"temperature_scale", 0.05},
        {"mask_ratio", 0.75},
        {"learning_rate", 2e-5},
        {"mlp_ratio", 4},
        {"contra_mode", "interleaved"}}},
      {"fusion",
       {{"epoch", 100},
        {"batch_size", 512},
        {"encoder_dim", 512},
        {"encoder_depth", 4},
        {"encoder_head", 8},
        {"decoder_dim", 256},
        {"decoder_depth", 3},
        {"decoder_head", 8},
        {"projection_hidden", {512, 256}},
        {"temperature_scale", 0.1},
        {"mask_ratio", 0.4},
        {"lora_r", 4},
        {"lora_alpha", 16.0},
        {"lora_dropout", 0.05},
        {"learning_rate", 1e-4},
        {"contra_weight", 1.0},
        {"mlp_ratio", 4},
        {"contra_mode", "interleaved"},
        {"save_every", 1}}},
      {"scenario1",
       {{"epoch", 150}, {"batch_size", 512}, {"learning_rate", 2e-4}}},
      {"scenario2",
       {{"epoch", 50},
        {"batch_size", 128},
        {"learning_rate", 2.5e-4},
        {"weight_decay", 0.01},
        {"context_length", 20},
        {"mamba_layers", 2},
        {"mamba_d_state", 16},
        {"mamba_d_conv", 4},
        {"mamba_expand", 2},
        {"center_target", false}}},
      {"scenario3", {{"label_fraction", 0.05}}},
      {"eval", {{"fold_count", 4}, {"fold", 0}, {"pretrain_ratio", 0.8}}},
      {"knn", {{"k", 5}, {"pca_dims", 50}}},
      {"plot", {{"log", "fusion"}}},
      {"hypnogram", {{"scenario", 2}, {"subject", ""}}},
  };
}

RunConfig::RunConfig() : j_(defaults()) {}

void RunConfig::load_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw_io("cannot open config file " + path.string());
  nlohmann::json incoming = nlohmann::json::parse(in, nullptr, false);
  if (incoming.is_discarded())
    throw_invalid("config file " + path.string() + " is not valid JSON");
  merge_checked(j_, incoming, "");
}

void RunConfig::set(const std::string& dotted_key, const std::string& value) {
  const std::vector<std::string> parts = split(dotted_key, '.');
  nlohmann::json* slot = &j_;
  for (const auto& p : parts) {
    if (p.empty() || !slot->is_object() || !slot->contains(p))
      throw_invalid("unknown config key '" + dotted_key + "'");
    slot = &(*slot)[p];
  }
  if (slot->is_object())
    throw_invalid("config key '" + dotted_key + "' names a section");

  nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
  if (slot->is_string()) {
    *slot = value;
    return;
  }
  if (parsed.is_discarded() || !types_compatible(*slot, parsed))
    throw_invalid("config key '" + dotted_key +
                  "' cannot take the value '" + value + "'");
  *slot = parsed;
}

json RunConfig::value_at(const std::string& dotted_key) const {
  const std::vector<std::string> parts = split(dotted_key, '.');
  const nlohmann::json* slot = &j_;
  for (const auto& p : parts) {
    if (p.empty() || !slot->is_object() || !slot->contains(p))
      throw_invalid("unknown config key '" + dotted_key + "'");
    slot = &slot->at(p);
  }
  return *slot;
}

double RunConfig::number(const std::string& key) const {
  const nlohmann::json v = value_at(key);
  if (!v.is_number()) throw_invalid("config key '" + key + "' is not a number");
  return v.get<double>();
}

long RunConfig::integer(const std::string& key) const {
  const nlohmann::json v = value_at(key);
  if (!v.is_number_integer())
    throw_invalid("config key '" + key + "' is not an integer");
  return v.get<long>();
}

bool RunConfig::boolean(const std::string& key) const {
  const nlohmann::json v = value_at(key);
  if (!v.is_boolean())
    throw_invalid("config key '" + key + "' is not a boolean");
  return v.get<bool>();
}

std::string RunConfig::text(const std::string& key) const {
  const nlohmann::json v = value_at(key);
  if (!v.is_string()) throw_invalid("config key '" + key + "' is not a string");
  return v.get<std::string>();
}

std::vector<long> RunConfig::integers(const std::string& key) const {
  const nlohmann::json v = value_at(key);
  if (!v.is_array()) throw_invalid("config key '" + key + "' is not an array");
  std::vector<long> out;
  for (const auto& e : v) {
    if (!e.is_number_integer())
      throw_invalid("config key '" + key + "' must hold integers");
    out.push_back(e.get<long>());
  }
  return out;
}

uint64_t RunConfig::seed() const {
  const long s = integer("seed");
  if (s < 0) throw_invalid("seed must be non-negative");
  return static_cast<uint64_t>(s);
}

fs::path RunConfig::out_dir() const {
  const std::string d = text("out_dir");
  if (d.empty()) throw_invalid("out_dir must not be empty");
  return d;
}

void RunConfig::write_resolved(const fs::path& dir) const {
  fs::create_directories(dir);
  std::ofstream out(dir / "resolved_config.json");
  if (!out) throw_io("cannot write resolved config in " + dir.string());
  out << j_.dump(2) << "\n";
}

std::vector<std::string> parse_modalities(const std::string& spec) {
  std::vector<std::string> out;
  for (std::string part : split(spec, '+')) {
    std::erase_if(part, [](unsigned char c) { return std::isspace(c); });
    if (part.empty()) throw_invalid("empty entry in modality combination");
    std::string upper;
    for (char c : part)
      upper += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    std::string prefix;
    for (char c : upper)
      if (!std::isdigit(static_cast<unsigned char>(c))) prefix += c;
    if (prefix != "EEG" && prefix != "EOG" && prefix != "EMG" && prefix != "ECG")
      throw_invalid("unrecognized stream '" + part +
                    "' in modality combination");
    if (std::find(out.begin(), out.end(), upper) != out.end())
      throw_invalid("duplicate stream '" + part + "' in modality combination");
    out.push_back(upper);
  }
  return out;
}

}  // namespace somnus::run
