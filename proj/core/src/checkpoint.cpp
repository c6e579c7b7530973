// SPDX-License-Identifier: Apache-2.0
#include "emforge/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "emforge/serialize.hpp"

namespace emforge {
namespace {

constexpr char kMagic[4] = {'E', 'M', 'C', '1'};

void write_name(std::ostream& out, const std::string& name) {
  io::write_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
}

std::string read_sized_string(std::istream& in, std::uint32_t limit) {
  const std::uint32_t n = io::read_u32(in);
  if (n > limit) throw FormatError("checkpoint string length " + std::to_string(n) + " exceeds limit");
  std::string s(n, '\0');
  io::read_exact(in, s.data(), n);
  return s;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Model& model) {
  validate_model(model);
  out.write(kMagic, 4);
  io::write_u32(out, static_cast<std::uint32_t>(model.params.size() + 1));
  write_name(out, kConfigEntryName);
  const std::string config = to_json(model.config).dump();
  io::write_u32(out, static_cast<std::uint32_t>(config.size()));
  out.write(config.data(), static_cast<std::streamsize>(config.size()));
  for (const auto& [name, t] : model.params) {
    write_name(out, name);
    write_tensor(out, t);
  }
  if (!out) throw FormatError("checkpoint write failed");
}

Model read_checkpoint(std::istream& in) {
  char magic[4];
  io::read_exact(in, magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad checkpoint magic (expected EMC1)");
  const std::uint32_t count = io::read_u32(in);
  if (count == 0) throw FormatError("checkpoint has no entries");
  Model model;
  bool have_config = false;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = read_sized_string(in, 1u << 16);
    if (name == kConfigEntryName) {
      if (have_config) throw FormatError("duplicate __config__ entry");
      const std::string json = read_sized_string(in, 1u << 24);
      try {
        model.config = model_config_from_json(nlohmann::json::parse(json));
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint config is not valid JSON: ") + e.what());
      }
      have_config = true;
    } else {
      if (model.params.contains(name)) throw FormatError("duplicate checkpoint entry '" + name + "'");
      model.params.set(name, read_tensor(in));
    }
  }
  if (!have_config) throw FormatError("checkpoint lacks the __config__ entry");
  validate_model(model);
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, model);
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace emforge
