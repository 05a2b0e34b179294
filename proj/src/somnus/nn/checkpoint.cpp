#include "somnus/nn/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "somnus/common.hpp"

namespace somnus::nn {
namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'S', 'O', 'M', 'N', 'C', 'K', 'P', '1'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff),
               static_cast<char>((v >> 24) & 0xff)};
  out.append(b, 4);
}

uint32_t get_u32(const std::string& data, size_t pos) {
  const auto* p = reinterpret_cast<const unsigned char*>(data.data() + pos);
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) |
         (static_cast<uint32_t>(p[3]) << 24);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_io("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

json parse_header(const std::string& data, const fs::path& path,
                  size_t* payload_off) {
  if (data.size() < 12 || data.compare(0, 8, kMagic, 8) != 0)
    throw_corrupt("bad magic in " + path.string());
  const uint32_t header_len = get_u32(data, 8);
  if (12 + static_cast<size_t>(header_len) > data.size())
    throw_corrupt("header overruns file in " + path.string());
  json header = json::parse(data.substr(12, header_len), nullptr, false);
  if (header.is_discarded())
    throw_corrupt("invalid header JSON in " + path.string());
  if (!header.contains("version") || header["version"].get<uint32_t>() != kVersion)
    throw_corrupt("unsupported checkpoint version in " + path.string());
  *payload_off = 12 + header_len;
  return header;
}

}  // namespace

void save_checkpoint(const fs::path& path, const Params& params,
                     const json& meta) {
  json tensors = json::array();
  for (const auto& p : params) {
    if (!p.var.defined()) throw_invalid("undefined parameter " + p.name);
    tensors.push_back({{"name", p.name},
                       {"rows", p.var.rows()},
                       {"cols", p.var.cols()},
                       {"buffer", p.buffer}});
  }
  json header = {{"version", kVersion}, {"tensors", tensors}, {"meta", meta}};
  const std::string header_text = header.dump();

  std::string out;
  out.append(kMagic, 8);
  put_u32(out, static_cast<uint32_t>(header_text.size()));
  out += header_text;
  for (const auto& p : params) {
    const Mat& m = p.var.value();
    for (long i = 0; i < m.rows(); ++i)
      for (long j = 0; j < m.cols(); ++j) {
        const float f = static_cast<float>(m(i, j));
        uint32_t u = 0;
        std::memcpy(&u, &f, 4);
        put_u32(out, u);
      }
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw_io("cannot create " + path.string());
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
  os.flush();
  if (!os) throw_io("write failed for " + path.string());
}

void load_checkpoint(const fs::path& path, Params& params, json* meta_out) {
  const std::string data = read_file(path);
  size_t off = 0;
  json header = parse_header(data, path, &off);
  const auto& tensors = header["tensors"];
  if (tensors.size() != params.size())
    throw_corrupt("checkpoint tensor count mismatch in " + path.string());

  size_t expected = 0;
  for (const auto& t : tensors)
    expected += static_cast<size_t>(t["rows"].get<long>()) *
                static_cast<size_t>(t["cols"].get<long>()) * 4;
  if (data.size() - off != expected)
    throw_corrupt("payload size mismatch in " + path.string());

  for (size_t k = 0; k < params.size(); ++k) {
    const auto& t = tensors[k];
    const std::string name = t["name"].get<std::string>();
    const long rows = t["rows"].get<long>(), cols = t["cols"].get<long>();
    if (name != params[k].name)
      throw_corrupt("tensor name mismatch at index " + std::to_string(k) +
                    ": expected " + params[k].name + ", found " + name);
    if (rows != params[k].var.rows() || cols != params[k].var.cols())
      throw_corrupt("tensor shape mismatch for " + name);
    Mat& m = params[k].var.value();
    for (long i = 0; i < rows; ++i)
      for (long j = 0; j < cols; ++j) {
        const uint32_t u = get_u32(data, off);
        off += 4;
        float f = 0.0f;
        std::memcpy(&f, &u, 4);
        m(i, j) = static_cast<double>(f);
      }
  }
  if (meta_out) *meta_out = header["meta"];
}

json read_checkpoint_meta(const fs::path& path) {
  const std::string data = read_file(path);
  size_t off = 0;
  json header = parse_header(data, path, &off);
  return header["meta"];
}

std::string serialize_params_f64(const Params& params) {
  std::string out;
  for (const auto& p : params) {
    out += p.name;
    out.push_back('\0');
    const Mat& m = p.var.value();
    const auto* bytes = reinterpret_cast<const char*>(m.data());
    out.append(bytes, sizeof(double) * static_cast<size_t>(m.size()));
  }
  return out;
}

}  // namespace somnus::nn
