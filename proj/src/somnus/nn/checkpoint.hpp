#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "somnus/nn/layers.hpp"

namespace somnus::nn {

namespace fs = std::filesystem;

// Named-tensor store: magic, JSON header listing tensors in order, then
// row-major float32 payloads. Layout details live in docs/FORMATS.md.
void save_checkpoint(const fs::path& path, const Params& params,
                     const nlohmann::json& meta);

// Strict load into an existing parameter set: every tensor must match by name
// and shape, with nothing missing and nothing extra.
void load_checkpoint(const fs::path& path, Params& params,
                     nlohmann::json* meta_out = nullptr);

nlohmann::json read_checkpoint_meta(const fs::path& path);

// Exact float64 snapshot of every tensor, for byte-wise freeze audits.
std::string serialize_params_f64(const Params& params);

}  // namespace somnus::nn
