// SPDX-License-Identifier: Apache-2.0
#include "bater/artifact.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "bater/errors.hpp"

namespace bater {

std::uint32_t crc32(std::span<const unsigned char> bytes) noexcept {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto step = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
    crc = ::crc32(crc, bytes.data() + done, step);
    done += step;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string hex32(std::uint32_t value) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", value);
  return buf;
}

std::string digest_of(std::string_view text) {
  return hex32(crc32({reinterpret_cast<const unsigned char*>(text.data()), text.size()}));
}

std::string format_double(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, end);
}

void Manifest::set(const std::string& key, const std::string& value) {
  if (key.find_first_of("=\n") != std::string::npos || value.find('\n') != std::string::npos)
    throw ContractError("manifest entries must be single-line and keys must not contain '='");
  for (auto& [k, v] : entries_)
    if (k == key) {
      v = value;
      return;
    }
  entries_.emplace_back(key, value);
}

void Manifest::set(const std::string& key, double value) { set(key, format_double(value)); }
void Manifest::set(const std::string& key, std::int64_t value) { set(key, std::to_string(value)); }
void Manifest::set(const std::string& key, std::uint64_t value) { set(key, std::to_string(value)); }

std::optional<std::string> Manifest::find(std::string_view key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  return std::nullopt;
}

const std::string& Manifest::get(std::string_view key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  throw FormatError(kind_ + " manifest lacks key '" + std::string(key) + "'", 0);
}

double Manifest::get_double(std::string_view key) const {
  const auto& text = get(key);
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw FormatError("manifest key '" + std::string(key) + "' is not a number: " + text, 0);
  return out;
}

std::int64_t Manifest::get_int(std::string_view key) const {
  const auto& text = get(key);
  std::int64_t out = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw FormatError("manifest key '" + std::string(key) + "' is not an integer: " + text, 0);
  return out;
}

std::uint64_t Manifest::get_uint(std::string_view key) const {
  const auto& text = get(key);
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw FormatError("manifest key '" + std::string(key) + "' is not an unsigned integer: " + text, 0);
  return out;
}

std::string Manifest::to_text() const {
  std::ostringstream out;
  out << kind_ << ' ' << version_ << '\n';
  for (const auto& [k, v] : entries_) out << k << " = " << v << '\n';
  return out.str();
}

Manifest Manifest::parse(std::string_view text) {
  std::size_t offset = 0;
  auto next_line = [&](std::string_view& line) {
    if (offset >= text.size()) return false;
    auto end = text.find('\n', offset);
    if (end == std::string_view::npos) end = text.size();
    line = text.substr(offset, end - offset);
    offset = end + 1;
    return true;
  };
  std::string_view header;
  if (!next_line(header)) throw FormatError("empty manifest", 0);
  const auto space = header.rfind(' ');
  if (space == std::string_view::npos) throw FormatError("manifest header lacks a version", 0);
  int version = 0;
  auto vtext = header.substr(space + 1);
  auto [ptr, ec] = std::from_chars(vtext.data(), vtext.data() + vtext.size(), version);
  if (ec != std::errc() || ptr != vtext.data() + vtext.size()) throw FormatError("bad manifest version", space + 1);
  Manifest manifest(std::string(header.substr(0, space)), version);
  std::string_view line;
  while (true) {
    const auto line_start = offset;
    if (!next_line(line)) break;
    if (line.empty()) continue;
    const auto eq = line.find(" = ");
    if (eq == std::string_view::npos) throw FormatError("manifest line lacks ' = '", line_start);
    manifest.entries_.emplace_back(std::string(line.substr(0, eq)), std::string(line.substr(eq + 3)));
  }
  return manifest;
}

namespace {

template <class T>
void append_le(std::vector<unsigned char>& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

template <class T>
T read_le(const unsigned char* src) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, src, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T value;
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

}  // namespace

void BlobWriter::put_u64(std::uint64_t value) { append_le(bytes_, value); }
void BlobWriter::put_f64(double value) { append_le(bytes_, value); }
void BlobWriter::put_doubles(std::span<const double> values) {
  bytes_.reserve(bytes_.size() + values.size() * 8);
  for (double v : values) append_le(bytes_, v);
}
void BlobWriter::put_ints(std::span<const int> values) {
  for (int v : values) append_le(bytes_, static_cast<std::int64_t>(v));
}
void BlobWriter::put_tensor(const Tensor& tensor) {
  put_u64(tensor.rank());
  for (auto extent : tensor.shape()) put_u64(extent);
  put_doubles(tensor.data());
}

void BlobReader::need(std::size_t count) const {
  if (bytes_.size() - offset_ < count)
    throw FormatError("blob truncated: need " + std::to_string(count) + " bytes", offset_);
}

std::uint64_t BlobReader::get_u64() {
  need(8);
  auto v = read_le<std::uint64_t>(bytes_.data() + offset_);
  offset_ += 8;
  return v;
}

double BlobReader::get_f64() {
  need(8);
  auto v = read_le<double>(bytes_.data() + offset_);
  offset_ += 8;
  return v;
}

std::vector<double> BlobReader::get_doubles(std::size_t count) {
  if (count > (bytes_.size() - offset_) / 8) need(count * 8);
  std::vector<double> out(count);
  for (auto& v : out) v = get_f64();
  return out;
}

std::vector<int> BlobReader::get_ints(std::size_t count) {
  if (count > (bytes_.size() - offset_) / 8) need(count * 8);
  std::vector<int> out(count);
  for (auto& v : out) v = static_cast<int>(static_cast<std::int64_t>(get_u64()));
  return out;
}

Tensor BlobReader::get_tensor() {
  const auto start = offset_;
  const auto rank = get_u64();
  if (rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank), start);
  Shape shape(rank);
  for (auto& extent : shape) extent = get_u64();
  try {
    return Tensor(shape, get_doubles(shape_size(shape)));
  } catch (const DimensionError& e) {
    throw FormatError(std::string("bad tensor header: ") + e.what(), start);
  }
}

std::filesystem::path manifest_path(const std::filesystem::path& stem) {
  auto p = stem;
  p += ".manifest";
  return p;
}

std::filesystem::path blob_path(const std::filesystem::path& stem) {
  auto p = stem;
  p += ".bin";
  return p;
}

bool artifact_exists(const std::filesystem::path& stem) {
  return std::filesystem::exists(manifest_path(stem)) && std::filesystem::exists(blob_path(stem));
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DependencyError("cannot open " + path.string());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error("short write to " + path.string());
}

std::vector<unsigned char> read_binary_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DependencyError("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_artifact(const std::filesystem::path& stem, Manifest manifest, const BlobWriter& blob) {
  const auto& bytes = blob.bytes();
  manifest.set("blob", blob_path(stem).filename().string());
  manifest.set("blob_bytes", static_cast<std::uint64_t>(bytes.size()));
  manifest.set("blob_crc32", hex32(crc32(bytes)));
  write_text_file(blob_path(stem), std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  write_text_file(manifest_path(stem), manifest.to_text());
}

LoadedArtifact read_artifact(const std::filesystem::path& stem, std::string_view kind, int version) {
  if (!std::filesystem::exists(manifest_path(stem)))
    throw DependencyError("missing artifact " + manifest_path(stem).string());
  auto manifest = Manifest::parse(read_text_file(manifest_path(stem)));
  if (manifest.kind() != kind)
    throw FormatError("expected a " + std::string(kind) + " artifact, found " + manifest.kind(), 0);
  if (manifest.version() != version)
    throw FormatError(std::string(kind) + " version " + std::to_string(manifest.version()) +
                          " is not supported (expected " + std::to_string(version) + ")",
                      0);
  const auto blob_file = stem.parent_path() / manifest.get("blob");
  auto bytes = read_binary_file(blob_file);
  if (bytes.size() != manifest.get_uint("blob_bytes"))
    throw FormatError(blob_file.string() + " has " + std::to_string(bytes.size()) + " bytes, manifest says " +
                          manifest.get("blob_bytes"),
                      bytes.size());
  if (hex32(crc32(bytes)) != manifest.get("blob_crc32"))
    throw FormatError(blob_file.string() + " checksum mismatch", 0);
  return LoadedArtifact{std::move(manifest), BlobReader(std::move(bytes))};
}

}  // namespace bater
