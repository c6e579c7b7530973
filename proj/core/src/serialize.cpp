// SPDX-License-Identifier: Apache-2.0
#include "emforge/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace emforge {
namespace {

constexpr char kMagic[4] = {'E', 'M', 'T', '1'};

template <class U>
void write_le(std::ostream& out, U v) {
  unsigned char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <class U>
U read_le(std::istream& in) {
  unsigned char bytes[sizeof(U)];
  io::read_exact(in, reinterpret_cast<char*>(bytes), sizeof(U));
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
  return v;
}

template <class T>
void write_scalars(std::ostream& out, std::span<const T> values) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (T v : values) write_le<U>(out, std::bit_cast<U>(v));
  }
}

template <class T>
std::vector<T> read_scalars(std::istream& in, std::size_t n) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  std::vector<T> values(n);
  if constexpr (std::endian::native == std::endian::little) {
    io::read_exact(in, reinterpret_cast<char*>(values.data()), n * sizeof(T));
  } else {
    for (auto& v : values) v = std::bit_cast<T>(read_le<U>(in));
  }
  return values;
}

}  // namespace

namespace io {
void write_u32(std::ostream& out, std::uint32_t v) { write_le(out, v); }
void write_u64(std::ostream& out, std::uint64_t v) { write_le(out, v); }
std::uint32_t read_u32(std::istream& in) { return read_le<std::uint32_t>(in); }
std::uint64_t read_u64(std::istream& in) { return read_le<std::uint64_t>(in); }

void read_exact(std::istream& in, char* dst, std::size_t n) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw FormatError("unexpected end of stream");
}
}  // namespace io

void write_tensor(std::ostream& out, const Tensor& t) {
  if (!t.defined()) throw FormatError("write_tensor: undefined tensor");
  if (t.rank() > 255) throw FormatError("write_tensor: rank exceeds 255");
  out.write(kMagic, 4);
  out.put(static_cast<char>(t.dtype()));
  out.put(static_cast<char>(t.rank()));
  for (auto e : t.shape()) io::write_u64(out, e);
  dispatch(t.dtype(), [&](auto tag) { write_scalars(out, t.data<decltype(tag)>()); });
  if (!out) throw FormatError("write_tensor: stream failure");
}

Tensor read_tensor(std::istream& in) {
  char magic[4];
  io::read_exact(in, magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad tensor magic (expected EMT1)");
  char header[2];
  io::read_exact(in, header, 2);
  const auto dtype_byte = static_cast<std::uint8_t>(header[0]);
  const auto rank = static_cast<std::uint8_t>(header[1]);
  if (dtype_byte > 1) throw FormatError("bad tensor dtype byte " + std::to_string(dtype_byte));
  if (rank == 0) throw FormatError("tensor rank must be at least 1");
  Shape shape(rank);
  for (auto& e : shape) {
    const auto v = io::read_u64(in);
    if (v == 0 || v > (std::uint64_t{1} << 40)) throw FormatError("bad tensor extent " + std::to_string(v));
    e = static_cast<std::size_t>(v);
  }
  const std::size_t n = shape_numel(shape);
  if (dtype_byte == 0) return make_tensor<float>(std::move(shape), read_scalars<float>(in, n));
  return make_tensor<double>(std::move(shape), read_scalars<double>(in, n));
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  std::ostringstream os(std::ios::binary);
  write_tensor(os, t);
  const std::string s = os.str();
  return {s.begin(), s.end()};
}

Tensor decode_tensor(const std::vector<std::uint8_t>& bytes) {
  std::istringstream is(std::string(bytes.begin(), bytes.end()), std::ios::binary);
  Tensor t = read_tensor(is);
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after tensor");
  return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_tensor(in);
}

}  // namespace emforge
