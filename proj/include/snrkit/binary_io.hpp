// Copyright 2026 The snrkit Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "snrkit/error.hpp"

// Little-endian primitive I/O shared by the WAV, feature, model and dataset
// file formats.
namespace snrkit::bin {

template <typename T>
T byteswap_if_big(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto* p = reinterpret_cast<unsigned char*>(&v);
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) {
      std::swap(p[i], p[sizeof(T) - 1 - i]);
    }
  }
  return v;
}

template <typename T>
void write_le(std::ostream& os, T v) {
  v = byteswap_if_big(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, std::string_view what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) fail(ErrorCode::kParse, "truncated input while reading " + std::string(what));
  return byteswap_if_big(v);
}

inline void write_f64(std::ostream& os, double v) {
  write_le(os, std::bit_cast<std::uint64_t>(v));
}

inline double read_f64(std::istream& is, std::string_view what) {
  return std::bit_cast<double>(read_le<std::uint64_t>(is, what));
}

void write_magic(std::ostream& os, std::string_view magic);
void expect_magic(std::istream& is, std::string_view magic);

}  // namespace snrkit::bin
