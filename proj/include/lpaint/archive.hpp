#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "lpaint/tensor.hpp"

namespace lpaint {

// Container used for checkpoints, catalogs, latent codes and perturbation
// sets. On disk:
//
//   [array payloads, little-endian float32, row-major, back to back]
//   [manifest JSON, UTF-8]
//   [footer: magic "LPAR" | u32 version | u64 manifest offset | u64 manifest size]
//
// The footer sits at the end so that a truncated file fails the version check
// before anything else is parsed.
class Archive {
 public:
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json meta = nlohmann::json::object();

  void put(const std::string& name, Tensor tensor);
  bool contains(const std::string& name) const { return arrays_.contains(name); }
  const Tensor& get(const std::string& name) const;
  // Checks that the stored array has `shape`, throwing ShapeError otherwise.
  const Tensor& get(const std::string& name, const Shape& shape) const;
  const std::map<std::string, Tensor>& arrays() const { return arrays_; }

  std::string serialize() const;
  static Archive deserialize(const std::string& bytes);

  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);

 private:
  std::map<std::string, Tensor> arrays_;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

// Hex SHA-256.
std::string sha256_hex(const std::string& bytes);
std::string sha256_hex(std::span<const float> values);

}  // namespace lpaint
