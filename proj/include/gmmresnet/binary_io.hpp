// Copyright (c) 2026 The gmmresnet Authors
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

#pragma once

// Little helpers for the versioned binary files (GMM banks, checkpoints,
// feature caches). Values are written in host byte order; every file starts
// with an 8-byte magic and a u32 version.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "gmmresnet/errors.hpp"

namespace gmmresnet::io {

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::string& path)
      : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw Error("cannot open for writing: " + path);
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    out_.write(reinterpret_cast<const char*>(&value), sizeof(T));
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put_array(const T* data, std::size_t count) {
    out_.write(reinterpret_cast<const char*>(data),
               static_cast<std::streamsize>(count * sizeof(T)));
  }

  void put_magic(std::string_view magic, std::uint32_t version) {
    out_.write(magic.data(), static_cast<std::streamsize>(magic.size()));
    put(version);
  }

  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

  void close() {
    out_.flush();
    if (!out_) throw Error("write failed: " + path_);
    out_.close();
  }

 private:
  std::string path_;
  std::ofstream out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::string& path)
      : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw Error("cannot open for reading: " + path);
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    T value{};
    read_raw(reinterpret_cast<char*>(&value), sizeof(T));
    return value;
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void get_array(T* data, std::size_t count) {
    read_raw(reinterpret_cast<char*>(data), count * sizeof(T));
  }

  // Reads a length prefix and rejects absurd values before allocating.
  std::uint64_t get_count(std::uint64_t limit) {
    auto n = get<std::uint64_t>();
    if (n > limit) throw FormatError(path_ + ": implausible element count");
    return n;
  }

  void expect_magic(std::string_view magic, std::uint32_t version) {
    std::string got(magic.size(), '\0');
    read_raw(got.data(), got.size());
    if (got != magic) throw FormatError(path_ + ": bad magic, not a " +
                                        std::string(magic) + " file");
    auto v = get<std::uint32_t>();
    if (v != version) {
      throw FormatError(path_ + ": unsupported version " + std::to_string(v) +
                        " (expected " + std::to_string(version) + ")");
    }
  }

  std::string get_string() {
    auto n = get<std::uint32_t>();
    if (n > (1u << 20)) throw FormatError(path_ + ": string too long");
    std::string s(n, '\0');
    read_raw(s.data(), n);
    return s;
  }

  void expect_end() {
    if (in_.peek() != std::char_traits<char>::eof()) {
      throw FormatError(path_ + ": trailing bytes");
    }
  }

 private:
  void read_raw(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw FormatError(path_ + ": truncated file");
    }
  }

  std::string path_;
  std::ifstream in_;
};

}  // namespace gmmresnet::io
