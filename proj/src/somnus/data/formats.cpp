#include "somnus/data/formats.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"
#include "somnus/common.hpp"

namespace somnus::data {
namespace {

using nlohmann::json;

constexpr char kEpochMagic[8] = {'S', 'O', 'M', 'N', 'E', 'P', 'O', '1'};
constexpr uint32_t kEpochVersion = 1;
constexpr char kManifestFormat[] = "somnus-dataset";

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_io("cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  if (in.bad()) throw_io("read failed for " + path.string());
  return data;
}

void write_file(const fs::path& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw_io("cannot create " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  out.flush();
  if (!out) throw_io("write failed for " + path.string());
}

void put_u32(std::string& out, uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff),
               static_cast<char>((v >> 24) & 0xff)};
  out.append(b, 4);
}

void put_i32(std::string& out, int32_t v) {
  put_u32(out, static_cast<uint32_t>(v));
}

void put_f32(std::string& out, float v) {
  uint32_t u = 0;
  std::memcpy(&u, &v, 4);
  put_u32(out, u);
}

struct Cursor {
  const std::string& data;
  size_t pos = 0;
  const fs::path& path;

  void need(size_t n) const {
    if (pos + n > data.size())
      throw_corrupt("truncated file: " + path.string());
  }
  uint32_t u32() {
    need(4);
    const auto* p = reinterpret_cast<const unsigned char*>(data.data() + pos);
    pos += 4;
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) |
           (static_cast<uint32_t>(p[3]) << 24);
  }
  int32_t i32() { return static_cast<int32_t>(u32()); }
  float f32() {
    uint32_t u = u32();
    float v = 0.0f;
    std::memcpy(&v, &u, 4);
    return v;
  }
  uint8_t u8() {
    need(1);
    return static_cast<uint8_t>(data[pos++]);
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = data.substr(pos, n);
    pos += n;
    return s;
  }
};

json parse_json_file(const fs::path& path) {
  const std::string text = read_file(path);
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw_corrupt("invalid JSON in " + path.string());
  return j;
}

const json& require(const json& j, const char* key, const fs::path& path) {
  auto it = j.find(key);
  if (it == j.end())
    throw_corrupt("missing key '" + std::string(key) + "' in " + path.string());
  return *it;
}

std::vector<signal::EventInterval> parse_events(const json& j,
                                               const fs::path& path) {
  std::vector<signal::EventInterval> events;
  if (!j.is_array()) throw_corrupt("event list is not an array in " + path.string());
  for (const auto& e : j) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number())
      throw_corrupt("event entries must be [start_s, end_s] in " + path.string());
    events.push_back({e[0].get<double>(), e[1].get<double>()});
  }
  return events;
}

json events_to_json(const std::vector<signal::EventInterval>& events) {
  json j = json::array();
  for (const auto& e : events) j.push_back(json::array({e.start_s, e.end_s}));
  return j;
}

}  // namespace

Manifest read_manifest(const fs::path& path) {
  json j = parse_json_file(path);
  if (!j.is_object()) throw_corrupt("manifest is not an object: " + path.string());
  if (require(j, "format", path).get<std::string>() != kManifestFormat)
    throw_corrupt("unrecognized manifest format in " + path.string());
  if (require(j, "version", path).get<int>() != 1)
    throw_corrupt("unsupported manifest version in " + path.string());

  Manifest manifest;
  for (const auto& js : require(j, "subjects", path)) {
    SubjectRef ref;
    ref.subject_id = require(js, "subject_id", path).get<std::string>();
    ref.annotations = require(js, "annotations", path).get<std::string>();
    for (const auto& jc : require(js, "channels", path)) {
      ChannelRef ch;
      ch.name = require(jc, "name", path).get<std::string>();
      ch.modality = signal::modality_from_name(
          require(jc, "modality", path).get<std::string>());
      ch.rate_hz = require(jc, "rate_hz", path).get<double>();
      ch.file = require(jc, "file", path).get<std::string>();
      if (ch.rate_hz <= 0.0)
        throw_corrupt("non-positive rate_hz in " + path.string());
      ref.channels.push_back(std::move(ch));
    }
    manifest.subjects.push_back(std::move(ref));
  }
  return manifest;
}

void write_manifest(const Manifest& manifest, const fs::path& path) {
  json subjects = json::array();
  for (const auto& ref : manifest.subjects) {
    json channels = json::array();
    for (const auto& ch : ref.channels) {
      channels.push_back({{"name", ch.name},
                          {"modality", signal::modality_name(ch.modality)},
                          {"rate_hz", ch.rate_hz},
                          {"file", ch.file}});
    }
    subjects.push_back({{"subject_id", ref.subject_id},
                        {"annotations", ref.annotations},
                        {"channels", channels}});
  }
  json j = {{"format", kManifestFormat}, {"version", 1}, {"subjects", subjects}};
  write_file(path, j.dump(2) + "\n");
}

std::vector<float> read_f32(const fs::path& path) {
  const std::string data = read_file(path);
  if (data.size() % 4 != 0)
    throw_corrupt("float32 file size not a multiple of 4: " + path.string());
  std::vector<float> samples(data.size() / 4);
  Cursor cur{data, 0, path};
  for (auto& v : samples) v = cur.f32();
  return samples;
}

void write_f32(const fs::path& path, const std::vector<float>& samples) {
  std::string out;
  out.reserve(samples.size() * 4);
  for (float v : samples) put_f32(out, v);
  write_file(path, out);
}

signal::PsgRecord read_record(const fs::path& data_dir, const SubjectRef& ref) {
  signal::PsgRecord rec;
  rec.subject_id = ref.subject_id;
  for (const auto& cref : ref.channels) {
    signal::Channel ch;
    ch.name = cref.name;
    ch.modality = cref.modality;
    ch.rate_hz = cref.rate_hz;
    ch.samples = read_f32(data_dir / cref.file);
    rec.channels.push_back(std::move(ch));
  }

  const fs::path ann_path = data_dir / ref.annotations;
  json j = parse_json_file(ann_path);
  if (require(j, "subject_id", ann_path).get<std::string>() != ref.subject_id)
    throw_corrupt("annotation subject_id mismatch in " + ann_path.string());
  for (const auto& code : require(j, "stages", ann_path))
    rec.stage_codes.push_back(code.get<std::string>());
  rec.apnea_events = parse_events(require(j, "apnea_events", ann_path), ann_path);
  rec.hypopnea_events =
      parse_events(require(j, "hypopnea_events", ann_path), ann_path);
  return rec;
}

void write_dataset(const std::vector<signal::PsgRecord>& records,
                   const fs::path& data_dir) {
  fs::create_directories(data_dir);
  Manifest manifest;
  for (const auto& rec : records) {
    SubjectRef ref;
    ref.subject_id = rec.subject_id;
    ref.annotations = rec.subject_id + "_annotations.json";
    for (const auto& ch : rec.channels) {
      ChannelRef cref;
      cref.name = ch.name;
      cref.modality = ch.modality;
      cref.rate_hz = ch.rate_hz;
      cref.file = rec.subject_id + "_" + ch.name + ".f32";
      write_f32(data_dir / cref.file, ch.samples);
      ref.channels.push_back(std::move(cref));
    }
    json ann = {{"subject_id", rec.subject_id},
                {"stages", rec.stage_codes},
                {"apnea_events", events_to_json(rec.apnea_events)},
                {"hypopnea_events", events_to_json(rec.hypopnea_events)}};
    write_file(data_dir / ref.annotations, ann.dump(2) + "\n");
    manifest.subjects.push_back(std::move(ref));
  }
  write_manifest(manifest, data_dir / "manifest.json");
}

void write_epoch_store(const signal::SubjectEpochs& epochs, const fs::path& path) {
  const size_t n_channels = epochs.channel_names.size();
  if (epochs.channel_modalities.size() != n_channels)
    throw_invalid("channel name/modality count mismatch");
  size_t samples_per_epoch = 0;
  if (!epochs.epochs.empty() && !epochs.epochs.front().signals.empty())
    samples_per_epoch = epochs.epochs.front().signals.front().size();

  json channels = json::array();
  for (size_t c = 0; c < n_channels; ++c) {
    channels.push_back(
        {{"name", epochs.channel_names[c]},
         {"modality", signal::modality_name(epochs.channel_modalities[c])}});
  }
  json header = {{"version", kEpochVersion},
                 {"subject_id", epochs.subject_id},
                 {"epoch_count", epochs.epochs.size()},
                 {"samples_per_epoch", samples_per_epoch},
                 {"channels", channels}};
  const std::string header_text = header.dump();

  std::string out;
  out.append(kEpochMagic, 8);
  put_u32(out, static_cast<uint32_t>(header_text.size()));
  out += header_text;
  for (const auto& ep : epochs.epochs) {
    if (ep.signals.size() != n_channels)
      throw_invalid("epoch channel count mismatch for " + epochs.subject_id);
    put_i32(out, ep.epoch_index);
    out.push_back(ep.stage.has_value() ? 1 : 0);
    out.push_back(ep.stage.has_value() ? static_cast<char>(*ep.stage) : 0);
    out.push_back(static_cast<char>(ep.apnea));
    out.push_back(static_cast<char>(ep.hypopnea));
    for (const auto& sig : ep.signals) {
      if (sig.size() != samples_per_epoch)
        throw_invalid("epoch sample count mismatch for " + epochs.subject_id);
      for (float v : sig) put_f32(out, v);
    }
  }
  write_file(path, out);
}

signal::SubjectEpochs read_epoch_store(const fs::path& path) {
  const std::string data = read_file(path);
  Cursor cur{data, 0, path};
  if (cur.bytes(8) != std::string(kEpochMagic, 8))
    throw_corrupt("bad magic in " + path.string());
  const uint32_t header_len = cur.u32();
  if (header_len > data.size() - cur.pos)
    throw_corrupt("header overruns file in " + path.string());
  json header = json::parse(cur.bytes(header_len), nullptr, false);
  if (header.is_discarded())
    throw_corrupt("invalid header JSON in " + path.string());
  if (require(header, "version", path).get<uint32_t>() != kEpochVersion)
    throw_corrupt("unsupported epoch store version in " + path.string());

  signal::SubjectEpochs epochs;
  epochs.subject_id = require(header, "subject_id", path).get<std::string>();
  for (const auto& jc : require(header, "channels", path)) {
    epochs.channel_names.push_back(require(jc, "name", path).get<std::string>());
    epochs.channel_modalities.push_back(signal::modality_from_name(
        require(jc, "modality", path).get<std::string>()));
  }
  const auto epoch_count = require(header, "epoch_count", path).get<size_t>();
  const auto samples_per_epoch =
      require(header, "samples_per_epoch", path).get<size_t>();
  const size_t n_channels = epochs.channel_names.size();

  const size_t block = 8 + 4 * n_channels * samples_per_epoch;
  if (data.size() - cur.pos != epoch_count * block)
    throw_corrupt("epoch payload size mismatch in " + path.string());

  for (size_t e = 0; e < epoch_count; ++e) {
    signal::EpochSample ep;
    ep.subject_id = epochs.subject_id;
    ep.epoch_index = cur.i32();
    const uint8_t has_stage = cur.u8();
    const uint8_t stage = cur.u8();
    ep.apnea = cur.u8();
    ep.hypopnea = cur.u8();
    if (has_stage > 1 || stage >= signal::kStageCount || ep.apnea > 1 ||
        ep.hypopnea > 1)
      throw_corrupt("invalid epoch flags in " + path.string());
    if (has_stage) ep.stage = static_cast<signal::Stage>(stage);
    ep.signals.assign(n_channels, std::vector<float>(samples_per_epoch));
    for (auto& sig : ep.signals)
      for (auto& v : sig) v = cur.f32();
    epochs.epochs.push_back(std::move(ep));
  }
  return epochs;
}

}  // namespace somnus::data
