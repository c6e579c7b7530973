// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "emforge/tensor.hpp"

namespace emforge {

// EMT1 tensor blob: "EMT1", u8 dtype (0=f32, 1=f64), u8 rank, rank x u64 LE
// extents, then row-major little-endian scalars.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(const std::vector<std::uint8_t>& bytes);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

namespace io {
void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
void read_exact(std::istream& in, char* dst, std::size_t n);
}  // namespace io

}  // namespace emforge
