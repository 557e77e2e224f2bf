// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gtex/config.hpp"
#include "gtex/tensor.hpp"

namespace gtex {

constexpr char kCheckpointMagic[8] = {'G', 'T', 'E', 'X', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to resume querying a trained model: the config snapshot
/// (dims and layer specs included), training step, instance ids, and the full
/// tensor directory (network weights plus latent codes).
struct Checkpoint {
  TrainConfig config;
  std::uint64_t step = 0;
  std::string template_id;
  std::vector<std::string> instance_ids;
  std::vector<std::pair<std::string, ad::Tensor>> tensors;

  const ad::Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

/// Layout: magic, u32 version, u64 header length, JSON header, raw
/// little-endian f64 payloads, trailing CRC-32 of everything prior.
inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json dir = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    dir.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size() * sizeof(double);
  }
  nlohmann::json header = {
      {"config", config_to_json(ckpt.config)},
      {"step", ckpt.step},
      {"template_id", ckpt.template_id},
      {"instances", ckpt.instance_ids},
      {"tensors", dir},
  };
  const std::string header_bytes = header.dump();

  std::ostringstream buf(std::ios::binary);
  buf.write(kCheckpointMagic, 8);
  le::write<std::uint32_t>(buf, kCheckpointVersion);
  le::write<std::uint64_t>(buf, header_bytes.size());
  buf.write(header_bytes.data(), static_cast<std::streamsize>(header_bytes.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    for (double v : t.value()) le::write<double>(buf, v);
  }
  const std::string body = buf.str();
  const std::uint32_t crc = Crc32::of(body.data(), body.size());

  // atomic: write a sibling temp file, then rename over the target
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint: " + path.string());
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    le::write<std::uint32_t>(out, crc);
    if (!out) throw Error("checkpoint write failed: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path.string());
  std::ostringstream ss(std::ios::binary);
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  if (bytes.size() < 8 + 4 + 8 + 4) throw Error("checkpoint truncated: " + path.string());

  const std::size_t body_len = bytes.size() - 4;
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + body_len, 4);
  if constexpr (std::endian::native == std::endian::big) {
    stored_crc = __builtin_bswap32(stored_crc);
  }
  if (Crc32::of(bytes.data(), body_len) != stored_crc) {
    throw Error("checkpoint checksum mismatch (corrupt file): " + path.string());
  }
  if (std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw Error("not a checkpoint file: " + path.string());
  }
  std::istringstream is(bytes.substr(8), std::ios::binary);
  const auto version = le::read<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw Error("unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = le::read<std::uint64_t>(is);
  std::string header_bytes(header_len, '\0');
  is.read(header_bytes.data(), static_cast<std::streamsize>(header_len));
  if (!is) throw Error("checkpoint truncated: " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_bytes);
  } catch (const std::exception& e) {
    throw Error("checkpoint header parse error: " + std::string(e.what()));
  }

  Checkpoint ckpt;
  ckpt.config = config_from_json(header.at("config"));
  ckpt.step = header.at("step").get<std::uint64_t>();
  ckpt.template_id = header.at("template_id").get<std::string>();
  ckpt.instance_ids = header.at("instances").get<std::vector<std::string>>();

  const std::size_t payload_start = 8 + 4 + 8 + header_len;
  for (const auto& entry : header.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    std::size_t count = 1;
    for (auto s : shape) count *= s;
    if (payload_start + offset + count * sizeof(double) > body_len) {
      throw Error("checkpoint payload out of range for tensor " + name);
    }
    std::vector<double> values(count);
    std::istringstream ps(bytes.substr(payload_start + offset, count * sizeof(double)),
                          std::ios::binary);
    for (auto& v : values) v = le::read<double>(ps);
    ckpt.tensors.emplace_back(name, ad::Tensor(shape, std::move(values), false, name));
  }
  return ckpt;
}

}  // namespace gtex
