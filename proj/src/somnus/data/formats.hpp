#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "somnus/signal/pipeline.hpp"

namespace somnus::data {

namespace fs = std::filesystem;

// Ingestion manifest: one entry per subject pointing at flat float32 channel
// files and a structured annotation file. The layout is documented in
// docs/FORMATS.md and is the only ingestion path (no EDF).
struct ChannelRef {
  std::string name;
  signal::Modality modality = signal::Modality::eeg;
  double rate_hz = 0.0;
  std::string file;  // relative to the dataset directory
};

struct SubjectRef {
  std::string subject_id;
  std::string annotations;  // relative path
  std::vector<ChannelRef> channels;
};

struct Manifest {
  std::vector<SubjectRef> subjects;
};

Manifest read_manifest(const fs::path& path);
void write_manifest(const Manifest& manifest, const fs::path& path);

// Raw little-endian float32 arrays.
std::vector<float> read_f32(const fs::path& path);
void write_f32(const fs::path& path, const std::vector<float>& samples);

signal::PsgRecord read_record(const fs::path& data_dir, const SubjectRef& ref);

// Writes channel files + annotations for every record and a manifest.json.
void write_dataset(const std::vector<signal::PsgRecord>& records,
                   const fs::path& data_dir);

// Epoch store: one binary file per subject (header + fixed-size epoch blocks).
void write_epoch_store(const signal::SubjectEpochs& epochs, const fs::path& path);
signal::SubjectEpochs read_epoch_store(const fs::path& path);

}  // namespace somnus::data
