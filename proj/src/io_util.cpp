// Copyright (c) 2026 cascadesv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cascade/io_util.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

#ifdef _WIN32
#include <process.h>
#else
#include <unistd.h>
#endif

namespace cascade {

void BinaryReader::need(std::size_t n) const {
  if (pos_ + n > bytes_.size()) {
    throw ParseError(ParseError::Kind::kTruncated,
                     "truncated file: need " + std::to_string(n) +
                         " more bytes at offset " + std::to_string(pos_) +
                         ", have " + std::to_string(bytes_.size() - pos_));
  }
}

std::uint8_t BinaryReader::read_u8() {
  need(1);
  return bytes_[pos_++];
}

std::uint32_t BinaryReader::read_u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) {
    v = (v << 8) | bytes_[pos_ + static_cast<std::size_t>(i)];
  }
  pos_ += 4;
  return v;
}

std::string BinaryReader::read_bytes(std::size_t n) {
  need(n);
  std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
  pos_ += n;
  return s;
}

std::vector<float> BinaryReader::read_f32(std::size_t n) {
  need(n * 4);
  std::vector<float> out(n);
  static_assert(sizeof(float) == 4);
  std::memcpy(out.data(), bytes_.data() + pos_, n * 4);
  pos_ += n * 4;
  return out;
}

void BinaryReader::expect_end() const {
  if (pos_ != bytes_.size()) {
    throw ParseError(ParseError::Kind::kTrailingData,
                     "trailing data: " + std::to_string(bytes_.size() - pos_) +
                         " unexpected bytes at end of file");
  }
}

void BinaryWriter::write_u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    bytes_.push_back(static_cast<std::uint8_t>(v & 0xFF));
    v >>= 8;
  }
}

void BinaryWriter::write_bytes(const std::string& s) {
  bytes_.insert(bytes_.end(), s.begin(), s.end());
}

void BinaryWriter::write_f32(const std::vector<float>& v) {
  const std::size_t old = bytes_.size();
  bytes_.resize(old + v.size() * 4);
  std::memcpy(bytes_.data() + old, v.data(), v.size() * 4);
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

std::string read_file_text(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

namespace {

std::filesystem::path temp_name(const std::filesystem::path& path) {
#ifdef _WIN32
  int pid = _getpid();
#else
  int pid = static_cast<int>(::getpid());
#endif
  return path.string() + ".tmp." + std::to_string(pid);
}

}  // namespace

void atomic_write_bytes(const std::filesystem::path& path,
                        const std::vector<std::uint8_t>& bytes) {
  const auto parent = path.parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  const auto tmp = temp_name(path);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::filesystem::remove(tmp);
      throw IoError("write failed: " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw IoError("rename failed: " + tmp.string() + " -> " + path.string() +
                  ": " + ec.message());
  }
}

void atomic_write_text(const std::filesystem::path& path,
                       const std::string& text) {
  atomic_write_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) {
      lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace cascade
