#pragma once

// On-disk container shared by models and patch sets: a JSON manifest plus
// one raw buffer of little-endian IEEE-754 float32 values. The manifest
// records the format tag, version, buffer length and the CRC-32 of the
// buffer file. Both files are written via temp-file + rename.

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dwd/errors.hpp"

namespace dwd {

inline constexpr int kContainerVersion = 1;

inline std::uint32_t crc32_of(std::span<const unsigned char> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t chunk = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
    crc = ::crc32(crc, bytes.data() + pos, static_cast<uInt>(chunk));
    pos += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

inline std::string crc_hex(std::uint32_t crc) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", crc);
  return buf;
}

inline std::vector<unsigned char> encode_f32le(std::span<const float> values) {
  std::vector<unsigned char> out(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) out[i * 4 + b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xffu);
  }
  return out;
}

inline std::vector<float> decode_f32le(std::span<const unsigned char> bytes) {
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[i * 4 + b]) << (8 * b);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_atomic(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) fail(ErrorKind::io, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::io, "cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, {reinterpret_cast<const unsigned char*>(text.data()), text.size()});
}

inline std::filesystem::path buffer_path_for(const std::filesystem::path& manifest_path) {
  std::filesystem::path p = manifest_path;
  p += ".bin";
  return p;
}

/// Section descriptor inside the buffer, in float elements.
inline nlohmann::json section(std::size_t offset, std::size_t count) {
  return {{"offset", offset}, {"count", count}};
}

struct ContainerPayload {
  nlohmann::json manifest;
  std::vector<float> buffer;

  // Copies a section out of the buffer, checking bounds.
  std::vector<float> take(const nlohmann::json& sec, std::size_t expected_count) const {
    const auto offset = sec.at("offset").get<std::size_t>();
    const auto count = sec.at("count").get<std::size_t>();
    if (count != expected_count) {
      fail(ErrorKind::malformed, "section holds " + std::to_string(count) + " values, shape needs " +
                                     std::to_string(expected_count));
    }
    if (offset > buffer.size() || count > buffer.size() - offset) {
      fail(ErrorKind::truncated, "section [" + std::to_string(offset) + ", +" + std::to_string(count) +
                                     ") runs past the buffer end (" + std::to_string(buffer.size()) + " values)");
    }
    return {buffer.begin() + static_cast<std::ptrdiff_t>(offset),
            buffer.begin() + static_cast<std::ptrdiff_t>(offset + count)};
  }
};

/// Writes the buffer first, then the manifest that points at it.
inline void write_container(const std::filesystem::path& manifest_path, nlohmann::json manifest, std::span<const float> buffer) {
  const std::vector<unsigned char> bytes = encode_f32le(buffer);
  const std::filesystem::path bin = buffer_path_for(manifest_path);
  manifest["version"] = kContainerVersion;
  manifest["buffer"] = {{"file", bin.filename().string()},
                        {"bytes", bytes.size()},
                        {"crc32", crc_hex(crc32_of(bytes))},
                        {"encoding", "f32le"}};
  write_file_atomic(bin, bytes);
  write_text_atomic(manifest_path, manifest.dump(2) + "\n");
}

inline ContainerPayload read_container(const std::filesystem::path& manifest_path, std::string_view expected_format) {
  const std::vector<unsigned char> text = read_file_bytes(manifest_path);
  ContainerPayload out;
  try {
    out.manifest = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::malformed, manifest_path.string() + ": manifest does not parse: " + e.what());
  }
  try {
    const auto& m = out.manifest;
    if (m.at("format").get<std::string>() != expected_format) {
      fail(ErrorKind::malformed, manifest_path.string() + ": expected format " + std::string(expected_format) + ", found " +
                                     m.at("format").get<std::string>());
    }
    const int version = m.at("version").get<int>();
    if (version != kContainerVersion) {
      fail(ErrorKind::format_version, manifest_path.string() + ": container version " + std::to_string(version) +
                                          " is not supported (expected " + std::to_string(kContainerVersion) + ")");
    }
    const auto& buf = m.at("buffer");
    const auto declared = buf.at("bytes").get<std::size_t>();
    if (declared % 4 != 0) fail(ErrorKind::malformed, "buffer length is not a multiple of 4 bytes");
    const std::filesystem::path bin = manifest_path.parent_path() / buf.at("file").get<std::string>();
    const std::vector<unsigned char> bytes = read_file_bytes(bin);
    if (bytes.size() < declared) {
      fail(ErrorKind::truncated, bin.string() + ": buffer has " + std::to_string(bytes.size()) + " bytes, manifest declares " +
                                     std::to_string(declared));
    }
    if (bytes.size() > declared) {
      fail(ErrorKind::malformed, bin.string() + ": buffer has " + std::to_string(bytes.size()) +
                                     " bytes, more than the declared " + std::to_string(declared));
    }
    const std::string want = buf.at("crc32").get<std::string>();
    const std::string got = crc_hex(crc32_of(bytes));
    if (want != got) fail(ErrorKind::checksum, bin.string() + ": crc32 " + got + " does not match manifest " + want);
    out.buffer = decode_f32le(bytes);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::malformed, manifest_path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace dwd
