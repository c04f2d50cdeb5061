#include "sphereflow/ioutil.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace sfm::io {

void TextHeader::set(const std::string& key, const std::string& value) {
  fields.emplace_back(key, value);
}
void TextHeader::set_i64(const std::string& key, int64_t value) {
  set(key, std::to_string(value));
}
void TextHeader::set_u32(const std::string& key, uint32_t value) {
  set(key, std::to_string(value));
}
void TextHeader::set_f64(const std::string& key, double value) { set(key, format_double(value)); }

const std::string* TextHeader::find(const std::string& key) const {
  for (const auto& [k, v] : fields)
    if (k == key) return &v;
  return nullptr;
}

std::string TextHeader::get(const std::string& key) const {
  const std::string* v = find(key);
  if (!v) fail(ErrorCode::Io, magic + " header: missing field '" + key + "'");
  return *v;
}

int64_t TextHeader::get_i64(const std::string& key) const {
  try {
    return std::stoll(get(key));
  } catch (const std::logic_error&) {
    fail(ErrorCode::Io, magic + " header: field '" + key + "' is not an integer");
  }
}

uint32_t TextHeader::get_u32(const std::string& key) const {
  int64_t v = get_i64(key);
  if (v < 0 || v > 0xFFFFFFFFll)
    fail(ErrorCode::Io, magic + " header: field '" + key + "' out of u32 range");
  return static_cast<uint32_t>(v);
}

double TextHeader::get_f64(const std::string& key) const { return parse_double(get(key)); }

std::string serialize_header(const TextHeader& h) {
  std::string out = h.magic + " " + std::to_string(h.version) + "\n";
  for (const auto& [k, v] : h.fields) out += k + " " + v + "\n";
  out += "END_HEADER\n";
  return out;
}

TextHeader parse_header(const std::string& bytes, const std::string& magic, int version,
                        size_t* payload_offset) {
  TextHeader h;
  size_t pos = 0;
  bool first = true, terminated = false;
  while (pos < bytes.size()) {
    size_t eol = bytes.find('\n', pos);
    if (eol == std::string::npos) break;
    std::string line = bytes.substr(pos, eol - pos);
    pos = eol + 1;
    if (first) {
      size_t sp = line.find(' ');
      if (sp == std::string::npos || line.substr(0, sp) != magic)
        fail(ErrorCode::Io, "expected " + magic + " file, got '" + line.substr(0, 16) + "'");
      int v = 0;
      try {
        v = std::stoi(line.substr(sp + 1));
      } catch (const std::logic_error&) {
        fail(ErrorCode::Io, magic + ": malformed version line");
      }
      if (v != version)
        fail(ErrorCode::FormatVersionMismatch, magic + ": file version " + std::to_string(v) +
                                                   ", this build reads version " +
                                                   std::to_string(version));
      h.magic = magic;
      h.version = v;
      first = false;
      continue;
    }
    if (line == "END_HEADER") {
      terminated = true;
      break;
    }
    size_t sp = line.find(' ');
    if (sp == std::string::npos) fail(ErrorCode::Io, magic + ": malformed header line '" + line + "'");
    h.fields.emplace_back(line.substr(0, sp), line.substr(sp + 1));
  }
  if (first || !terminated) fail(ErrorCode::Io, magic + ": unexpected end of header");
  if (payload_offset) *payload_offset = pos;
  return h;
}

void append_f64le(std::string& out, const double* x, size_t n) {
  size_t base = out.size();
  out.resize(base + 8 * n);
  for (size_t i = 0; i < n; ++i) {
    uint64_t u;
    std::memcpy(&u, &x[i], 8);
    for (int b = 0; b < 8; ++b) out[base + 8 * i + b] = static_cast<char>((u >> (8 * b)) & 0xFF);
  }
}

void append_i32le(std::string& out, const int32_t* x, size_t n) {
  size_t base = out.size();
  out.resize(base + 4 * n);
  for (size_t i = 0; i < n; ++i) {
    uint32_t u;
    std::memcpy(&u, &x[i], 4);
    for (int b = 0; b < 4; ++b) out[base + 4 * i + b] = static_cast<char>((u >> (8 * b)) & 0xFF);
  }
}

void read_f64le(const std::string& bytes, size_t offset, double* x, size_t n) {
  if (offset + 8 * n > bytes.size()) fail(ErrorCode::Io, "binary payload shorter than declared");
  for (size_t i = 0; i < n; ++i) {
    uint64_t u = 0;
    for (int b = 7; b >= 0; --b)
      u = (u << 8) | static_cast<unsigned char>(bytes[offset + 8 * i + b]);
    std::memcpy(&x[i], &u, 8);
  }
}

void read_i32le(const std::string& bytes, size_t offset, int32_t* x, size_t n) {
  if (offset + 4 * n > bytes.size()) fail(ErrorCode::Io, "binary payload shorter than declared");
  for (size_t i = 0; i < n; ++i) {
    uint32_t u = 0;
    for (int b = 3; b >= 0; --b)
      u = (u << 8) | static_cast<unsigned char>(bytes[offset + 4 * i + b]);
    std::memcpy(&x[i], &u, 4);
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) fail(ErrorCode::Io, "read failed on '" + path + "'");
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) fail(ErrorCode::Io, "write failed on '" + path + "'");
}

void write_with_checksum(const std::string& path, TextHeader h, const std::string& payload) {
  h.set_i64("payload_bytes", static_cast<int64_t>(payload.size()));
  h.set_u32("payload_crc32", crc32(payload.data(), payload.size()));
  write_file(path, serialize_header(h) + payload);
}

TextHeader read_with_checksum(const std::string& path, const std::string& magic, int version,
                              std::string* payload) {
  std::string bytes = read_file(path);
  size_t off = 0;
  TextHeader h = parse_header(bytes, magic, version, &off);
  int64_t want_len = h.get_i64("payload_bytes");
  uint32_t want_crc = h.get_u32("payload_crc32");
  int64_t have_len = static_cast<int64_t>(bytes.size()) - static_cast<int64_t>(off);
  if (have_len != want_len)
    fail(ErrorCode::ChecksumMismatch, "'" + path + "': payload " + std::to_string(have_len) +
                                          " bytes, header declares " + std::to_string(want_len));
  uint32_t have_crc = crc32(bytes.data() + off, static_cast<size_t>(want_len));
  if (have_crc != want_crc)
    fail(ErrorCode::ChecksumMismatch, "'" + path + "': payload crc32 " + std::to_string(have_crc) +
                                          ", header declares " + std::to_string(want_crc));
  payload->assign(bytes, off, static_cast<size_t>(want_len));
  return h;
}

}  // namespace sfm::io
