#include "lpaint/archive.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "lpaint/error.hpp"

namespace lpaint {

namespace {

constexpr char kMagic[4] = {'L', 'P', 'A', 'R'};
constexpr std::size_t kFooterSize = 4 + 4 + 8 + 8;

template <typename T>
T byte_swap(T value) {
  if constexpr (sizeof(T) == 4) return __builtin_bswap32(value);
  else return __builtin_bswap64(value);
}

template <typename T>
void append_le(std::string& out, T value) {
  if constexpr (std::endian::native == std::endian::big) value = byte_swap(value);
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.append(bytes, sizeof(T));
}

template <typename T>
T read_le(const char* bytes) {
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) value = byte_swap(value);
  return value;
}

}  // namespace

void Archive::put(const std::string& name, Tensor tensor) { arrays_[name] = std::move(tensor); }

const Tensor& Archive::get(const std::string& name) const {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw ShapeError("archive has no array named '" + name + "'");
  return it->second;
}

const Tensor& Archive::get(const std::string& name, const Shape& shape) const {
  const Tensor& t = get(name);
  if (t.shape() != shape) {
    throw ShapeError("array '" + name + "' has shape " + shape_string(t.shape()) +
                     ", manifest implies " + shape_string(shape));
  }
  return t;
}

std::string Archive::serialize() const {
  std::string out;
  nlohmann::json index = nlohmann::json::array();
  for (const auto& [name, tensor] : arrays_) {
    index.push_back({{"name", name},
                     {"shape", tensor.shape()},
                     {"offset", out.size()},
                     {"count", tensor.size()}});
    for (float v : tensor.values()) append_le(out, std::bit_cast<std::uint32_t>(v));
  }
  const nlohmann::json manifest = {{"meta", meta}, {"arrays", index}};
  const std::string text = manifest.dump();
  const std::uint64_t manifest_offset = out.size();
  out += text;
  out.append(kMagic, 4);
  append_le(out, kVersion);
  append_le(out, manifest_offset);
  append_le(out, static_cast<std::uint64_t>(text.size()));
  return out;
}

Archive Archive::deserialize(const std::string& bytes) {
  if (bytes.size() < kFooterSize) {
    throw VersionError("archive too short for a version footer (truncated?)");
  }
  const char* footer = bytes.data() + bytes.size() - kFooterSize;
  if (std::memcmp(footer, kMagic, 4) != 0) {
    throw VersionError("archive footer missing: not an archive or truncated");
  }
  const auto version = read_le<std::uint32_t>(footer + 4);
  if (version != kVersion) {
    throw VersionError("unsupported archive version " + std::to_string(version));
  }
  const auto offset = read_le<std::uint64_t>(footer + 8);
  const auto size = read_le<std::uint64_t>(footer + 16);
  if (offset + size != bytes.size() - kFooterSize) {
    throw VersionError("archive footer inconsistent with file size");
  }

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(offset, size));
  } catch (const nlohmann::json::exception& e) {
    throw VersionError(std::string("archive manifest unreadable: ") + e.what());
  }

  Archive archive;
  archive.meta = manifest.at("meta");
  for (const auto& entry : manifest.at("arrays")) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<Shape>();
    const auto start = entry.at("offset").get<std::uint64_t>();
    const auto count = entry.at("count").get<std::uint64_t>();
    if (count != shape_size(shape)) {
      throw ShapeError("array '" + name + "' count does not match shape " + shape_string(shape));
    }
    if (start + count * 4 > offset) {
      throw ShapeError("array '" + name + "' extends past the payload section");
    }
    std::vector<float> values(count);
    for (std::size_t i = 0; i < count; ++i) {
      values[i] = std::bit_cast<float>(read_le<std::uint32_t>(bytes.data() + start + 4 * i));
    }
    archive.put(name, Tensor(shape, std::move(values)));
  }
  return archive;
}

void Archive::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

Archive Archive::load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &length) != 1) {
    throw Error("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < length; ++i) {
    hex.push_back(kHex[digest[i] >> 4]);
    hex.push_back(kHex[digest[i] & 15]);
  }
  return hex;
}

std::string sha256_hex(std::span<const float> values) {
  std::string bytes;
  bytes.reserve(values.size() * 4);
  for (float v : values) append_le(bytes, std::bit_cast<std::uint32_t>(v));
  return sha256_hex(bytes);
}

}  // namespace lpaint
