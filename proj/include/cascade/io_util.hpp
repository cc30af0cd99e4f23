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

#ifndef CASCADE_IO_UTIL_HPP_
#define CASCADE_IO_UTIL_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cascade/error.hpp"

namespace cascade {

// All on-disk binary formats are little-endian. These helpers read from an
// in-memory buffer with explicit truncation errors rather than streaming,
// since every artifact is small at this scale.
class BinaryReader {
 public:
  explicit BinaryReader(std::vector<std::uint8_t> bytes)
      : bytes_(std::move(bytes)) {}

  std::uint8_t read_u8();
  std::uint32_t read_u32();
  std::string read_bytes(std::size_t n);
  // Reads n little-endian float32 values.
  std::vector<float> read_f32(std::size_t n);

  std::size_t remaining() const { return bytes_.size() - pos_; }
  void expect_end() const;

 private:
  void need(std::size_t n) const;

  std::vector<std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

class BinaryWriter {
 public:
  void write_u8(std::uint8_t v) { bytes_.push_back(v); }
  void write_u32(std::uint32_t v);
  void write_bytes(const std::string& s);
  void write_f32(const std::vector<float>& v);

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
std::string read_file_text(const std::filesystem::path& path);

// Writes to "<path>.tmp.<pid>" and renames onto path, so a partial write
// never masquerades as a complete artifact.
void atomic_write_bytes(const std::filesystem::path& path,
                        const std::vector<std::uint8_t>& bytes);
void atomic_write_text(const std::filesystem::path& path,
                       const std::string& text);

std::vector<std::string> split_lines(const std::string& text);

// Fixed-format double for text artifacts: round-trips exactly and is
// byte-stable across runs.
std::string format_double(double v);

// FNV-1a 64 as a hex string; used for config hashes in run records.
std::string fnv1a_hex(const std::string& text);

}  // namespace cascade

#endif  // CASCADE_IO_UTIL_HPP_
