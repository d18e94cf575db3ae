#pragma once

#include <torch/torch.h>

#include "json.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "wum/config.hpp"
#include "wum/errors.hpp"

namespace wum {

// Layout: 8-byte magic, u32 format version, u64 header length, JSON header,
// then the raw payload. The header lists every tensor and blob with its
// payload offset and records the effective config with its hash.
inline constexpr char kCheckpointMagic[8] = {'W', 'U', 'M', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Config config;
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, torch::Tensor> tensors;
  std::map<std::string, std::string> blobs;
};

namespace detail {

inline const char* dtype_tag(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    default: throw InvalidInput("checkpoint: unsupported tensor dtype");
  }
}

inline torch::ScalarType dtype_from(const std::string& tag) {
  if (tag == "f32") return torch::kFloat32;
  if (tag == "f64") return torch::kFloat64;
  if (tag == "i64") return torch::kInt64;
  throw IoError("checkpoint: unknown dtype tag '" + tag + "'");
}

}  // namespace detail

/// Writes atomically (temporary file, then rename).
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["config"] = to_json(ckpt.config);
  header["config_hash"] = config_hash(ckpt.config);
  header["meta"] = ckpt.meta;
  std::string payload;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, t] : ckpt.tensors) {
    auto c = t.detach().cpu().contiguous();
    const auto nbytes = static_cast<std::size_t>(c.nbytes());
    tensors.push_back({{"name", name},
                       {"dtype", detail::dtype_tag(c.scalar_type())},
                       {"shape", c.sizes().vec()},
                       {"offset", payload.size()},
                       {"nbytes", nbytes}});
    payload.append(static_cast<const char*>(c.data_ptr()), nbytes);
  }
  nlohmann::json blobs = nlohmann::json::array();
  for (const auto& [name, b] : ckpt.blobs) {
    blobs.push_back({{"name", name}, {"offset", payload.size()}, {"nbytes", b.size()}});
    payload += b;
  }
  header["tensors"] = tensors;
  header["blobs"] = blobs;
  const auto text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = detail::slurp(path);
  const std::string name = path.string();
  constexpr std::size_t fixed = sizeof(kCheckpointMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (bytes.size() < fixed || std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw IoError(name + ": not a checkpoint file");
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  std::memcpy(&version, bytes.data() + 8, sizeof(version));
  std::memcpy(&len, bytes.data() + 12, sizeof(len));
  if (version != kCheckpointVersion)
    throw IoError(name + ": unsupported checkpoint version " + std::to_string(version));
  if (len > bytes.size() - fixed) throw IoError(name + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + fixed, bytes.begin() + static_cast<std::ptrdiff_t>(fixed + len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(name + ": corrupt header: " + e.what());
  }
  const unsigned char* payload = bytes.data() + fixed + len;
  const std::size_t payload_size = bytes.size() - fixed - len;

  Checkpoint ckpt;
  try {
    ckpt.config = from_json(header.at("config"));
    if (header.at("config_hash").get<std::string>() != config_hash(ckpt.config))
      throw IoError(name + ": config hash mismatch");
    ckpt.meta = header.at("meta");
    for (const auto& t : header.at("tensors")) {
      const auto off = t.at("offset").get<std::size_t>(), nb = t.at("nbytes").get<std::size_t>();
      if (off + nb > payload_size) throw IoError(name + ": tensor payload out of range");
      auto shape = t.at("shape").get<std::vector<std::int64_t>>();
      auto out = torch::empty(shape, torch::TensorOptions().dtype(detail::dtype_from(t.at("dtype"))));
      if (static_cast<std::size_t>(out.nbytes()) != nb) throw IoError(name + ": tensor size mismatch");
      std::memcpy(out.data_ptr(), payload + off, nb);
      ckpt.tensors.emplace(t.at("name").get<std::string>(), out);
    }
    for (const auto& b : header.at("blobs")) {
      const auto off = b.at("offset").get<std::size_t>(), nb = b.at("nbytes").get<std::size_t>();
      if (off + nb > payload_size) throw IoError(name + ": blob payload out of range");
      ckpt.blobs.emplace(b.at("name").get<std::string>(),
                         std::string(reinterpret_cast<const char*>(payload + off), nb));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(name + ": malformed header: " + e.what());
  } catch (const ConfigError& e) {
    throw IoError(name + ": stored config invalid: " + e.what());
  }
  return ckpt;
}

/// Parameters and buffers of `m` under `prefix`.
inline void store_module(Checkpoint& ckpt, const std::string& prefix, const torch::nn::Module& m) {
  for (const auto& p : m.named_parameters()) ckpt.tensors[prefix + p.key()] = p.value().detach().clone();
  for (const auto& b : m.named_buffers()) ckpt.tensors[prefix + b.key()] = b.value().detach().clone();
}

/// Copies stored tensors into `m`; every parameter and buffer must be present with its shape.
inline void restore_module(const Checkpoint& ckpt, const std::string& prefix, torch::nn::Module& m) {
  torch::NoGradGuard ng;
  auto copy = [&](const std::string& key, torch::Tensor& dst) {
    auto it = ckpt.tensors.find(prefix + key);
    if (it == ckpt.tensors.end()) throw IoError("checkpoint: missing tensor " + prefix + key);
    if (it->second.sizes() != dst.sizes()) throw IoError("checkpoint: shape mismatch for " + prefix + key);
    dst.copy_(it->second);
  };
  for (auto& p : m.named_parameters()) copy(p.key(), p.value());
  for (auto& b : m.named_buffers()) copy(b.key(), b.value());
}

template <class Optim>
std::string optimizer_blob(Optim& opt) {
  std::ostringstream os;
  torch::save(opt, os);
  return os.str();
}

template <class Optim>
void restore_optimizer(const Checkpoint& ckpt, const std::string& key, Optim& opt) {
  auto it = ckpt.blobs.find(key);
  if (it == ckpt.blobs.end()) throw IoError("checkpoint: missing optimizer state " + key);
  std::istringstream is(it->second);
  torch::load(opt, is);
}

}  // namespace wum
