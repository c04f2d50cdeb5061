#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sphereflow/common.hpp"

namespace sfm::io {

/// Ordered key-value header for the binary file formats. Serialized as
///   <MAGIC> <version>\n
///   <key> <value>\n ...
///   END_HEADER\n
/// followed by the raw payload bytes. Values may contain spaces; keys not.
struct TextHeader {
  std::string magic;
  int version = 1;
  std::vector<std::pair<std::string, std::string>> fields;

  void set(const std::string& key, const std::string& value);
  void set_i64(const std::string& key, int64_t value);
  void set_u32(const std::string& key, uint32_t value);
  void set_f64(const std::string& key, double value);

  const std::string* find(const std::string& key) const;
  std::string get(const std::string& key) const;  // Io error when missing
  int64_t get_i64(const std::string& key) const;
  uint32_t get_u32(const std::string& key) const;
  double get_f64(const std::string& key) const;
};

std::string serialize_header(const TextHeader& h);

/// Parses the header of `bytes`, checking magic and version. The payload
/// starts at *payload_offset. Version differences raise
/// FormatVersionMismatch with both numbers in the message.
TextHeader parse_header(const std::string& bytes, const std::string& magic, int version,
                        size_t* payload_offset);

// Little-endian packing, independent of host byte order.
void append_f64le(std::string& out, const double* x, size_t n);
void append_i32le(std::string& out, const int32_t* x, size_t n);
void read_f64le(const std::string& bytes, size_t offset, double* x, size_t n);
void read_i32le(const std::string& bytes, size_t offset, int32_t* x, size_t n);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

/// Writes header + payload with `payload_bytes` and `payload_crc32` fields
/// injected, so loads can detect truncation and corruption.
void write_with_checksum(const std::string& path, TextHeader h, const std::string& payload);

/// Reads a file written by write_with_checksum and validates length and CRC.
TextHeader read_with_checksum(const std::string& path, const std::string& magic, int version,
                              std::string* payload);

}  // namespace sfm::io
