// SPDX-License-Identifier: Apache-2.0
#pragma once

// Versioned on-disk artifacts: a text manifest `<stem>.manifest` of ordered
// key = value lines plus a little-endian binary blob `<stem>.bin` whose size
// and CRC-32 are recorded in the manifest.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bater/tensor.hpp"

namespace bater {

std::uint32_t crc32(std::span<const unsigned char> bytes) noexcept;
std::string hex32(std::uint32_t value);
/// CRC-32 of a string rendered as 8 hex digits.
std::string digest_of(std::string_view text);

class Manifest {
 public:
  Manifest(std::string kind, int version) : kind_(std::move(kind)), version_(version) {}

  const std::string& kind() const noexcept { return kind_; }
  int version() const noexcept { return version_; }

  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, double value);
  void set(const std::string& key, std::int64_t value);
  void set(const std::string& key, std::uint64_t value);
  void set(const std::string& key, int value) { set(key, static_cast<std::int64_t>(value)); }
  void set(const std::string& key, const char* value) { set(key, std::string(value)); }

  std::optional<std::string> find(std::string_view key) const;
  /// Throws FormatError naming the key when absent.
  const std::string& get(std::string_view key) const;
  double get_double(std::string_view key) const;
  std::int64_t get_int(std::string_view key) const;
  std::uint64_t get_uint(std::string_view key) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const noexcept { return entries_; }

  std::string to_text() const;
  static Manifest parse(std::string_view text);

 private:
  std::string kind_;
  int version_;
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// Sequential little-endian encoder.
class BlobWriter {
 public:
  void put_u64(std::uint64_t value);
  void put_f64(double value);
  void put_doubles(std::span<const double> values);
  void put_ints(std::span<const int> values);
  /// Rank, extents, then values.
  void put_tensor(const Tensor& tensor);
  const std::vector<unsigned char>& bytes() const noexcept { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

/// Sequential decoder; every read past the end throws FormatError with the offset.
class BlobReader {
 public:
  explicit BlobReader(std::vector<unsigned char> bytes) : bytes_(std::move(bytes)) {}
  std::uint64_t get_u64();
  double get_f64();
  std::vector<double> get_doubles(std::size_t count);
  std::vector<int> get_ints(std::size_t count);
  Tensor get_tensor();
  bool at_end() const noexcept { return offset_ == bytes_.size(); }
  std::size_t offset() const noexcept { return offset_; }

 private:
  void need(std::size_t count) const;
  std::vector<unsigned char> bytes_;
  std::size_t offset_ = 0;
};

std::filesystem::path manifest_path(const std::filesystem::path& stem);
std::filesystem::path blob_path(const std::filesystem::path& stem);
bool artifact_exists(const std::filesystem::path& stem);

/// Writes the blob and a manifest carrying its name, size and CRC-32.
void write_artifact(const std::filesystem::path& stem, Manifest manifest, const BlobWriter& blob);

struct LoadedArtifact {
  Manifest manifest;
  BlobReader blob;
};

/// Rejects a missing file (DependencyError), a kind or version mismatch, or a
/// size/checksum mismatch (FormatError).
LoadedArtifact read_artifact(const std::filesystem::path& stem, std::string_view kind, int version);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);
std::vector<unsigned char> read_binary_file(const std::filesystem::path& path);

/// Shortest round-trip decimal rendering of a double.
std::string format_double(double value);

}  // namespace bater
