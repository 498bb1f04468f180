#include "motionlab/cli/checkpoint.hpp"

#include "motionlab/error.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>

namespace motionlab::cli {
namespace {

using json = nlohmann::ordered_json;

constexpr char kMagic[4] = {'P', 'M', 'N', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

[[noreturn]] void bad_file(const std::string& path, const std::string& why) {
  throw Error(ErrorCode::SchemaVersionMismatch, "checkpoint '" + path + "': " + why);
}

}  // namespace

Checkpoint snapshot(const Config& config, std::size_t step, const grad::ParameterStore& params) {
  Checkpoint c{config, step, {}};
  c.tensors.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) c.tensors.emplace_back(params[i].name, params[i].value);
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  json manifest;
  manifest["config"] = to_json(ckpt.config);
  manifest["step"] = ckpt.step;
  json list = json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    list.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size();
  }
  manifest["tensors"] = std::move(list);
  const std::string text = manifest.dump();

  std::string bytes(kMagic, 4);
  put_u64(bytes, text.size());
  bytes += text;
  bytes.reserve(bytes.size() + 8 * offset);
  for (const auto& entry : ckpt.tensors) {
    for (double v : entry.second.values()) put_u64(bytes, std::bit_cast<std::uint64_t>(v));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "write to '" + path + "' failed");
}

void save_checkpoint(const Config& config, std::size_t step, const grad::ParameterStore& params,
                     const std::string& path) {
  save_checkpoint(snapshot(config, step, params), path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open checkpoint '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || bytes.compare(0, 4, kMagic, 4) != 0) bad_file(path, "missing PMN1 header");
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint64_t manifest_size = get_u64(raw + 4);
  if (manifest_size > bytes.size() - 12) bad_file(path, "manifest runs past the end of the file");

  Checkpoint ckpt;
  std::size_t payload_values = 0;
  try {
    const json manifest = json::parse(bytes.substr(12, manifest_size));
    ckpt.config = config_from_json(manifest.at("config"));
    ckpt.step = manifest.at("step").get<std::size_t>();
    for (const json& t : manifest.at("tensors")) {
      const std::string name = t.at("name").get<std::string>();
      const grad::Shape shape = t.at("shape").get<grad::Shape>();
      const std::size_t offset = t.at("offset").get<std::size_t>();
      if (offset != payload_values) bad_file(path, "tensor '" + name + "' does not follow its predecessor");
      ckpt.tensors.emplace_back(name, grad::Tensor(shape));
      payload_values += grad::volume(shape);
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    bad_file(path, std::string("bad manifest: ") + e.what());
  }
  const std::size_t payload_begin = 12 + manifest_size;
  if (bytes.size() - payload_begin != 8 * payload_values) {
    bad_file(path, "payload holds " + std::to_string((bytes.size() - payload_begin) / 8) +
                       " values, manifest lists " + std::to_string(payload_values));
  }
  const unsigned char* p = raw + payload_begin;
  for (auto& entry : ckpt.tensors) {
    for (double& v : entry.second.values()) {
      v = std::bit_cast<double>(get_u64(p));
      p += 8;
    }
  }
  return ckpt;
}

void restore(const Checkpoint& ckpt, grad::ParameterStore& params) {
  if (ckpt.tensors.size() != params.size()) {
    throw Error(ErrorCode::ConfigMismatch, "checkpoint has " + std::to_string(ckpt.tensors.size()) +
                                               " tensors, model has " + std::to_string(params.size()));
  }
  for (const auto& [name, t] : ckpt.tensors) {
    grad::Parameter* p = params.find(name);
    if (!p || p->value.shape() != t.shape()) {
      throw Error(ErrorCode::ConfigMismatch, "tensor '" + name + "' " + grad::to_string(t.shape()) +
                                                 " has no matching model parameter");
    }
    p->value = t;
  }
}

}  // namespace motionlab::cli
