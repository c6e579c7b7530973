// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>

#include "emforge/model.hpp"

namespace emforge {

// EMC1 checkpoint: "EMC1", u32 entry count, then per entry u32 name length,
// UTF-8 name and payload. Parameter payloads are EMT1 tensors; the reserved
// "__config__" entry (always first) carries u32 byte length + ModelConfig JSON.
inline constexpr const char* kConfigEntryName = "__config__";

void write_checkpoint(std::ostream& out, const Model& model);
Model read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace emforge
