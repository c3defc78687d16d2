// Copyright 2026 The markdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "markdiff/params.hpp"

namespace markdiff {

// Binary layout, all integers and floats little-endian:
//   "FSAC" | u32 version | u32 count |
//   count x (u32 name_len | name | u32 rank | u64 dims[rank] | f64 data[])
//   | u32 crc32 of every preceding byte
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<unsigned char> encode_checkpoint(const ParamSet& tensors);
// Throws IoError on bad magic, version, truncation or CRC mismatch.
ParamSet decode_checkpoint(const std::vector<unsigned char>& bytes);

void save_checkpoint(const std::filesystem::path& path, const ParamSet& tensors);
ParamSet load_checkpoint(const std::filesystem::path& path);

}  // namespace markdiff
