#pragma once

// Shared framing for the MSTV/MSTF/MSTC containers:
//   magic[4] | u32 version | u32 header_len | header JSON | payload
// All integers and floats are little-endian.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mst/errors.hpp"

namespace mst::detail {

static_assert(std::endian::native == std::endian::little, "binary containers assume a little-endian host");

class BinaryWriter {
 public:
  void raw(const void* data, std::size_t bytes) {
    const auto* p = static_cast<const char*>(data);
    buffer_.insert(buffer_.end(), p, p + bytes);
  }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void floats(std::span<const float> values) { raw(values.data(), values.size_bytes()); }
  void bytes(std::span<const std::uint8_t> values) { raw(values.data(), values.size()); }

  void header(std::string_view magic, std::uint32_t version, const nlohmann::json& json) {
    raw(magic.data(), 4);
    u32(version);
    const std::string text = json.dump();
    u32(static_cast<std::uint32_t>(text.size()));
    raw(text.data(), text.size());
  }

  // Write to a sibling temp file then rename, so readers never see a partial file.
  void save(const std::filesystem::path& path) const {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw UsageError("cannot open " + tmp.string() + " for writing");
      out.write(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
      if (!out) throw UsageError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
  }

 private:
  std::vector<char> buffer_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string(), 0);
    buffer_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  std::uint64_t offset() const { return offset_; }
  std::size_t remaining() const { return buffer_.size() - offset_; }

  void need(std::size_t bytes, const char* what) const {
    if (remaining() < bytes) {
      throw FormatError(std::string("truncated ") + what + ": need " + std::to_string(bytes) + " bytes, have " +
                            std::to_string(remaining()),
                        offset_);
    }
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    std::memcpy(&v, buffer_.data() + offset_, 4);
    offset_ += 4;
    return v;
  }

  std::vector<float> floats(std::size_t count, const char* what, bool require_finite = true) {
    need(count * sizeof(float), what);
    std::vector<float> out(count);
    std::memcpy(out.data(), buffer_.data() + offset_, count * sizeof(float));
    if (require_finite) {
      for (std::size_t i = 0; i < count; ++i) {
        if (!std::isfinite(out[i])) {
          throw FormatError(std::string("non-finite value in ") + what, offset_ + i * sizeof(float));
        }
      }
    }
    offset_ += count * sizeof(float);
    return out;
  }

  std::vector<std::uint8_t> bytes(std::size_t count, const char* what) {
    need(count, what);
    std::vector<std::uint8_t> out(count);
    std::memcpy(out.data(), buffer_.data() + offset_, count);
    offset_ += count;
    return out;
  }

  /// Reads magic, version and JSON header; returns the header.
  nlohmann::json header(std::string_view magic, std::uint32_t expected_version) {
    need(4, "magic");
    if (std::string_view(buffer_.data(), 4) != magic) {
      throw FormatError("bad magic, expected \"" + std::string(magic) + "\"", 0);
    }
    offset_ = 4;
    const std::uint64_t version_at = offset_;
    const std::uint32_t version = u32("version");
    if (version != expected_version) {
      throw FormatError("unsupported version " + std::to_string(version), version_at);
    }
    const std::uint32_t length = u32("header length");
    need(length, "header");
    const std::uint64_t header_at = offset_;
    nlohmann::json json;
    try {
      json = nlohmann::json::parse(buffer_.begin() + static_cast<std::ptrdiff_t>(offset_),
                                   buffer_.begin() + static_cast<std::ptrdiff_t>(offset_ + length));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("malformed JSON header: ") + e.what(), header_at);
    }
    if (!json.is_object()) throw FormatError("JSON header is not an object", header_at);
    offset_ += length;
    header_offset_ = header_at;
    return json;
  }

  std::uint64_t header_offset() const { return header_offset_; }

  void expect_end(const char* what) const {
    if (remaining() != 0) {
      throw FormatError(std::to_string(remaining()) + " trailing bytes after " + what, offset_);
    }
  }

 private:
  std::vector<char> buffer_;
  std::uint64_t offset_ = 0;
  std::uint64_t header_offset_ = 0;
};

}  // namespace mst::detail
