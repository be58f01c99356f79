#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "morphogen/adam.hpp"
#include "morphogen/errors.hpp"
#include "morphogen/tensor.hpp"

namespace morphogen {

// Weight checkpoints ("MFWT") and sibling optimiser state ("MFOS").
//
// MFWT layout: magic, version u16, then per-parameter records until EOF:
//   name length u16, UTF-8 name, rank u8, extents u32 each, f32 LE payload.
// MFOS layout: magic, version u16, then per-parameter records until EOF:
//   name length u16, UTF-8 name, step u64, rank u8, extents u32 each,
//   f32 LE first-moment payload, f32 LE second-moment payload.
// All integers little-endian.

namespace io {

constexpr uint16_t kFormatVersion = 1;

inline void put_u16(std::ostream& os, uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  os.write(b, 2);
}

inline void put_u32(std::ostream& os, uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

inline void put_u64(std::ostream& os, uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

inline void put_f32(std::ostream& os, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

inline bool get_bytes(std::istream& is, char* dst, size_t n) {
  is.read(dst, static_cast<std::streamsize>(n));
  return static_cast<size_t>(is.gcount()) == n;
}

inline uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  if (!get_bytes(is, reinterpret_cast<char*>(b), 2))
    fail(ErrorCode::TruncatedPayload, "truncated stream reading u16");
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

inline uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!get_bytes(is, reinterpret_cast<char*>(b), 4))
    fail(ErrorCode::TruncatedPayload, "truncated stream reading u32");
  uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!get_bytes(is, reinterpret_cast<char*>(b), 8))
    fail(ErrorCode::TruncatedPayload, "truncated stream reading u64");
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline float get_f32(std::istream& is) {
  uint32_t bits = get_u32(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline void check_magic(std::istream& is, const char* magic,
                        const std::string& what) {
  char got[4];
  if (!get_bytes(is, got, 4))
    fail(ErrorCode::TruncatedPayload, what + ": stream shorter than magic");
  if (std::memcmp(got, magic, 4) != 0)
    fail(ErrorCode::BadMagic, what + ": bad magic '" + std::string(got, 4) +
                                  "', expected '" + magic + "'");
}

}  // namespace io

template <class T>
void save_weights(const std::string& path,
                  const std::vector<Parameter<T>*>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::Io, "cannot open '" + path + "' for writing");
  os.write("MFWT", 4);
  io::put_u16(os, io::kFormatVersion);
  for (const Parameter<T>* p : params) {
    io::put_u16(os, static_cast<uint16_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    const Shape& s = p->tensor.shape();
    os.put(static_cast<char>(s.size()));
    for (int64_t e : s) io::put_u32(os, static_cast<uint32_t>(e));
    for (T v : p->tensor.value()) io::put_f32(os, static_cast<float>(v));
  }
  if (!os) fail(ErrorCode::Io, "write failed for '" + path + "'");
}

// Loads records into the matching parameters by name. Every parameter must
// be present with matching shape; unknown record names are an error.
template <class T>
void load_weights(const std::string& path,
                  const std::vector<Parameter<T>*>& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::CheckpointMissing, "cannot open '" + path + "'");
  io::check_magic(is, "MFWT", path);
  const uint16_t version = io::get_u16(is);
  if (version != io::kFormatVersion)
    fail(ErrorCode::UnsupportedVersion,
         path + ": unsupported format version " + std::to_string(version));

  std::vector<bool> seen(params.size(), false);
  while (is.peek() != std::char_traits<char>::eof()) {
    const uint16_t name_len = io::get_u16(is);
    std::string name(name_len, '\0');
    if (!io::get_bytes(is, name.data(), name_len))
      fail(ErrorCode::TruncatedPayload, path + ": truncated parameter name");
    unsigned char rank_c;
    if (!io::get_bytes(is, reinterpret_cast<char*>(&rank_c), 1))
      fail(ErrorCode::TruncatedPayload, path + ": truncated rank");
    Shape shape(rank_c);
    for (auto& e : shape) e = io::get_u32(is);
    const int64_t n = shape_numel(shape);
    size_t target = params.size();
    for (size_t i = 0; i < params.size(); ++i)
      if (params[i]->name == name) {
        target = i;
        break;
      }
    if (target == params.size())
      fail(ErrorCode::CheckpointMismatch,
           path + ": unknown parameter '" + name + "'");
    if (params[target]->tensor.shape() != shape)
      fail(ErrorCode::CheckpointMismatch,
           path + ": shape mismatch for '" + name + "': file " +
               shape_str(shape) + " vs model " +
               shape_str(params[target]->tensor.shape()));
    auto& dst = params[target]->tensor.value();
    for (int64_t i = 0; i < n; ++i) dst[i] = static_cast<T>(io::get_f32(is));
    seen[target] = true;
  }
  for (size_t i = 0; i < params.size(); ++i)
    if (!seen[i])
      fail(ErrorCode::CheckpointMismatch,
           path + ": missing parameter '" + params[i]->name + "'");
}

template <class T>
void save_opt_state(const std::string& path,
                    const std::vector<Parameter<T>*>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::Io, "cannot open '" + path + "' for writing");
  os.write("MFOS", 4);
  io::put_u16(os, io::kFormatVersion);
  for (const Parameter<T>* p : params) {
    io::put_u16(os, static_cast<uint16_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    io::put_u64(os, static_cast<uint64_t>(p->step));
    const Shape& s = p->tensor.shape();
    os.put(static_cast<char>(s.size()));
    for (int64_t e : s) io::put_u32(os, static_cast<uint32_t>(e));
    const size_t n = p->tensor.value().size();
    for (size_t i = 0; i < n; ++i)
      io::put_f32(os, p->m.empty() ? 0.0f : static_cast<float>(p->m[i]));
    for (size_t i = 0; i < n; ++i)
      io::put_f32(os, p->v.empty() ? 0.0f : static_cast<float>(p->v[i]));
  }
  if (!os) fail(ErrorCode::Io, "write failed for '" + path + "'");
}

template <class T>
void load_opt_state(const std::string& path,
                    const std::vector<Parameter<T>*>& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::CheckpointMissing, "cannot open '" + path + "'");
  io::check_magic(is, "MFOS", path);
  const uint16_t version = io::get_u16(is);
  if (version != io::kFormatVersion)
    fail(ErrorCode::UnsupportedVersion,
         path + ": unsupported format version " + std::to_string(version));
  while (is.peek() != std::char_traits<char>::eof()) {
    const uint16_t name_len = io::get_u16(is);
    std::string name(name_len, '\0');
    if (!io::get_bytes(is, name.data(), name_len))
      fail(ErrorCode::TruncatedPayload, path + ": truncated parameter name");
    const uint64_t step = io::get_u64(is);
    unsigned char rank_c;
    if (!io::get_bytes(is, reinterpret_cast<char*>(&rank_c), 1))
      fail(ErrorCode::TruncatedPayload, path + ": truncated rank");
    Shape shape(rank_c);
    for (auto& e : shape) e = io::get_u32(is);
    const int64_t n = shape_numel(shape);
    Parameter<T>* target = nullptr;
    for (Parameter<T>* p : params)
      if (p->name == name) {
        target = p;
        break;
      }
    if (!target)
      fail(ErrorCode::CheckpointMismatch,
           path + ": unknown parameter '" + name + "'");
    if (target->tensor.shape() != shape)
      fail(ErrorCode::CheckpointMismatch,
           path + ": shape mismatch for '" + name + "'");
    target->step = static_cast<int64_t>(step);
    target->m.resize(n);
    target->v.resize(n);
    for (int64_t i = 0; i < n; ++i)
      target->m[i] = static_cast<T>(io::get_f32(is));
    for (int64_t i = 0; i < n; ++i)
      target->v[i] = static_cast<T>(io::get_f32(is));
  }
}

}  // namespace morphogen
