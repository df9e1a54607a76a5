#pragma once

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dvanet/net/config.hpp"
#include "dvanet/nn/module.hpp"
#include "dvanet/nn/optim.hpp"
#include "json.hpp"

namespace dva {

// Container layout: magic, version, scalar width, JSON header (config,
// trainer state, tensor manifest), raw payload, trailing CRC32 over
// everything before it.
inline constexpr char kCheckpointMagic[4] = {'D', 'V', 'N', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename U>
void put_raw(std::vector<std::uint8_t>& out, const U& v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(U));
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const ModelConfig& config,
                     nn::Module<T>& model, const nlohmann::json& state,
                     nn::AdamW<T>* optimizer = nullptr) {
  auto params = model.named_parameters();
  std::vector<std::pair<std::string, nn::Tensor<T>*>> buffers;
  model.collect_buffers("", buffers);

  nlohmann::json manifest = nlohmann::json::array();
  std::vector<const nn::Tensor<T>*> tensors;
  auto add = [&](const std::string& name, const nn::Tensor<T>& t) {
    manifest.push_back({{"name", name}, {"shape", t.shape()}});
    tensors.push_back(&t);
  };
  for (auto& [name, p] : params) add(name, p->value());
  for (auto& [name, b] : buffers) add("buf:" + name, *b);
  if (optimizer) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      add("opt.m:" + params[i].first, optimizer->moment1()[i]);
      add("opt.v:" + params[i].first, optimizer->moment2()[i]);
    }
  }

  nlohmann::json header;
  header["config"] = config.to_json();
  header["state"] = state;
  header["tensors"] = manifest;
  if (optimizer) header["optimizer_steps"] = optimizer->step_count();
  const std::string header_str = header.dump();

  std::vector<std::uint8_t> out;
  out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 4);
  detail::put_raw(out, kCheckpointVersion);
  detail::put_raw(out, std::uint8_t(sizeof(T)));
  detail::put_raw(out, std::uint64_t(header_str.size()));
  out.insert(out.end(), header_str.begin(), header_str.end());
  for (const auto* t : tensors) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(t->data());
    out.insert(out.end(), p, p + std::size_t(t->size()) * sizeof(T));
  }
  const std::uint32_t crc =
      std::uint32_t(::crc32(0L, out.data(), uInt(out.size())));
  detail::put_raw(out, crc);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("checkpoint: cannot write " + path);
  f.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
  if (!f) throw DataError("checkpoint: write failed for " + path);
}

namespace detail {

inline std::vector<std::uint8_t> read_checkpoint_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("checkpoint: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 21 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw DataError("checkpoint: bad magic in " + path);
  const std::uint32_t stored_crc = [&] {
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + bytes.size() - 4, 4);
    return v;
  }();
  const std::uint32_t crc =
      std::uint32_t(::crc32(0L, bytes.data(), uInt(bytes.size() - 4)));
  if (crc != stored_crc) throw DataError("checkpoint: integrity check failed: " + path);
  return bytes;
}

inline nlohmann::json parse_checkpoint_header(const std::vector<std::uint8_t>& bytes,
                                              std::size_t& payload_offset,
                                              std::uint8_t& dtype_size) {
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + 4, 4);
  if (version != kCheckpointVersion) throw DataError("checkpoint: unsupported version");
  dtype_size = bytes[8];
  std::uint64_t header_len;
  std::memcpy(&header_len, bytes.data() + 9, 8);
  if (17 + header_len + 4 > bytes.size())
    throw DataError("checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 17,
                                   bytes.begin() + 17 + std::ptrdiff_t(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: header parse: ") + e.what());
  }
  payload_offset = 17 + std::size_t(header_len);
  return header;
}

}  // namespace detail

inline ModelConfig read_checkpoint_config(const std::string& path) {
  const auto bytes = detail::read_checkpoint_bytes(path);
  std::size_t off;
  std::uint8_t dtype;
  const auto header = detail::parse_checkpoint_header(bytes, off, dtype);
  return ModelConfig::from_json(header.at("config"));
}

// Loads tensors into an already constructed model (and optimizer when its
// state is present and requested). Returns the trainer-state JSON.
template <typename T>
nlohmann::json load_checkpoint(const std::string& path, nn::Module<T>& model,
                               nn::AdamW<T>* optimizer = nullptr) {
  const auto bytes = detail::read_checkpoint_bytes(path);
  std::size_t off;
  std::uint8_t dtype;
  auto header = detail::parse_checkpoint_header(bytes, off, dtype);
  if (dtype != sizeof(T))
    throw DataError("checkpoint: scalar width mismatch (file " +
                    std::to_string(int(dtype)) + ", model " +
                    std::to_string(int(sizeof(T))) + ")");

  auto params = model.named_parameters();
  std::vector<std::pair<std::string, nn::Tensor<T>*>> buffers;
  model.collect_buffers("", buffers);
  std::map<std::string, nn::Tensor<T>*> by_name;
  for (auto& [name, p] : params) by_name[name] = &p->value();
  for (auto& [name, b] : buffers) by_name["buf:" + name] = b;
  std::size_t opt_loaded = 0;
  if (optimizer) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      by_name["opt.m:" + params[i].first] = &optimizer->moment1()[i];
      by_name["opt.v:" + params[i].first] = &optimizer->moment2()[i];
    }
  }

  std::size_t pos = off;
  std::size_t matched = 0;
  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<int>>();
    std::int64_t count = 1;
    for (int d : shape) count *= d;
    const std::size_t nbytes = std::size_t(count) * sizeof(T);
    if (pos + nbytes > bytes.size() - 4)
      throw DataError("checkpoint: truncated payload");
    auto it = by_name.find(name);
    if (it != by_name.end()) {
      if (it->second->shape() != shape)
        throw DataError("checkpoint: shape mismatch for " + name);
      std::memcpy(it->second->data(), bytes.data() + pos, nbytes);
      ++matched;
      if (name.rfind("opt.", 0) == 0) ++opt_loaded;
    } else if (name.rfind("opt.", 0) != 0) {
      throw DataError("checkpoint: unknown tensor " + name);
    }
    pos += nbytes;
  }
  const std::size_t want = params.size() + buffers.size();
  if (matched < want) throw DataError("checkpoint: missing tensors for this model");
  if (optimizer) {
    if (opt_loaded != 2 * params.size())
      throw DataError("checkpoint: no optimizer state stored");
    if (header.contains("optimizer_steps"))
      optimizer->set_step_count(header["optimizer_steps"].get<std::int64_t>());
  }
  return header.value("state", nlohmann::json::object());
}

}  // namespace dva
