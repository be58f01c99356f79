#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "morphogen/checkpoint.hpp"
#include "morphogen/errors.hpp"

namespace morphogen {

// Multi-channel 3-D intensity grid. Channel 0 is cytoplasm, channel 1 the
// nucleus; single-channel volumes carry signal readouts. Preprocessed
// volumes are cube-shaped with values in [-1, 1].
struct CellVolume {
  int64_t channels = 0;
  int64_t d = 0, h = 0, w = 0;
  float voxel_size = 1.0f;
  std::vector<float> data;  // channel-major, C order

  CellVolume() = default;
  CellVolume(int64_t channels_, int64_t d_, int64_t h_, int64_t w_)
      : channels(channels_), d(d_), h(h_), w(w_),
        data(static_cast<size_t>(channels_ * d_ * h_ * w_), 0.0f) {}

  int64_t voxels_per_channel() const { return d * h * w; }

  float& at(int64_t c, int64_t z, int64_t y, int64_t x) {
    return data[((c * d + z) * h + y) * w + x];
  }
  float at(int64_t c, int64_t z, int64_t y, int64_t x) const {
    return data[((c * d + z) * h + y) * w + x];
  }

  const float* channel(int64_t c) const {
    return data.data() + c * voxels_per_channel();
  }
  float* channel(int64_t c) { return data.data() + c * voxels_per_channel(); }
};

// ---- "MVOL" codec ----
// Layout: magic "MVOL", version u16, channel count u8, extents 3x u32 LE
// (D,H,W), dtype code u8 (0 = f32 LE), payload channel-major C order.

namespace mvol {

constexpr uint16_t kVersion = 1;
constexpr uint8_t kDtypeF32 = 0;

inline void write(std::ostream& os, const CellVolume& vol) {
  os.write("MVOL", 4);
  io::put_u16(os, kVersion);
  os.put(static_cast<char>(vol.channels));
  io::put_u32(os, static_cast<uint32_t>(vol.d));
  io::put_u32(os, static_cast<uint32_t>(vol.h));
  io::put_u32(os, static_cast<uint32_t>(vol.w));
  os.put(static_cast<char>(kDtypeF32));
  for (float v : vol.data) io::put_f32(os, v);
}

inline CellVolume read(std::istream& is, const std::string& what = "stream") {
  io::check_magic(is, "MVOL", what);
  const uint16_t version = io::get_u16(is);
  if (version != kVersion)
    fail(ErrorCode::UnsupportedVersion,
         what + ": unsupported MVOL version " + std::to_string(version));
  unsigned char channels;
  if (!io::get_bytes(is, reinterpret_cast<char*>(&channels), 1))
    fail(ErrorCode::TruncatedPayload, what + ": truncated header");
  const uint32_t d = io::get_u32(is);
  const uint32_t h = io::get_u32(is);
  const uint32_t w = io::get_u32(is);
  unsigned char dtype;
  if (!io::get_bytes(is, reinterpret_cast<char*>(&dtype), 1))
    fail(ErrorCode::TruncatedPayload, what + ": truncated header");
  if (dtype != kDtypeF32)
    fail(ErrorCode::UnsupportedVersion,
         what + ": unsupported dtype code " + std::to_string(dtype));
  CellVolume vol(channels, d, h, w);
  for (auto& v : vol.data) {
    unsigned char b[4];
    if (!io::get_bytes(is, reinterpret_cast<char*>(b), 4))
      fail(ErrorCode::TruncatedPayload, what + ": truncated payload");
    uint32_t bits = 0;
    for (int i = 3; i >= 0; --i) bits = (bits << 8) | b[i];
    std::memcpy(&v, &bits, 4);
  }
  return vol;
}

inline void save(const std::string& path, const CellVolume& vol) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::Io, "cannot open '" + path + "' for writing");
  write(os, vol);
  if (!os) fail(ErrorCode::Io, "write failed for '" + path + "'");
}

inline CellVolume load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::Io, "cannot open '" + path + "'");
  return read(is, path);
}

inline std::vector<uint8_t> to_bytes(const CellVolume& vol) {
  std::ostringstream os(std::ios::binary);
  write(os, vol);
  const std::string s = os.str();
  return std::vector<uint8_t>(s.begin(), s.end());
}

inline CellVolume from_bytes(const std::vector<uint8_t>& bytes) {
  std::istringstream is(std::string(bytes.begin(), bytes.end()),
                        std::ios::binary);
  return read(is, "bytes");
}

}  // namespace mvol

// ---- preprocessing ----

namespace detail {

// Trilinear resample to new extents, sampling at voxel centres.
inline std::vector<float> trilinear_resize(const float* src, int64_t d,
                                           int64_t h, int64_t w, int64_t nd,
                                           int64_t nh, int64_t nw) {
  std::vector<float> out(static_cast<size_t>(nd * nh * nw));
  const double sd = static_cast<double>(d) / nd;
  const double sh = static_cast<double>(h) / nh;
  const double sw = static_cast<double>(w) / nw;
  auto clamp = [](double v, int64_t n) {
    return std::min(std::max(v, 0.0), static_cast<double>(n - 1));
  };
  for (int64_t z = 0; z < nd; ++z) {
    const double fz = clamp((z + 0.5) * sd - 0.5, d);
    const int64_t z0 = static_cast<int64_t>(fz);
    const int64_t z1 = std::min(z0 + 1, d - 1);
    const double tz = fz - z0;
    for (int64_t y = 0; y < nh; ++y) {
      const double fy = clamp((y + 0.5) * sh - 0.5, h);
      const int64_t y0 = static_cast<int64_t>(fy);
      const int64_t y1 = std::min(y0 + 1, h - 1);
      const double ty = fy - y0;
      for (int64_t x = 0; x < nw; ++x) {
        const double fx = clamp((x + 0.5) * sw - 0.5, w);
        const int64_t x0 = static_cast<int64_t>(fx);
        const int64_t x1 = std::min(x0 + 1, w - 1);
        const double tx = fx - x0;
        auto v = [&](int64_t zz, int64_t yy, int64_t xx) {
          return static_cast<double>(src[(zz * h + yy) * w + xx]);
        };
        const double c00 = v(z0, y0, x0) * (1 - tx) + v(z0, y0, x1) * tx;
        const double c01 = v(z0, y1, x0) * (1 - tx) + v(z0, y1, x1) * tx;
        const double c10 = v(z1, y0, x0) * (1 - tx) + v(z1, y0, x1) * tx;
        const double c11 = v(z1, y1, x0) * (1 - tx) + v(z1, y1, x1) * tx;
        const double c0 = c00 * (1 - ty) + c01 * ty;
        const double c1 = c10 * (1 - ty) + c11 * ty;
        out[(z * nh + y) * nw + x] =
            static_cast<float>(c0 * (1 - tz) + c1 * tz);
      }
    }
  }
  return out;
}

}  // namespace detail

// Isotropic trilinear resize so the largest axis equals target_cube, then
// per-channel min-max normalisation to [-1, 1], then centred padding with
// the background value -1 up to a full cube. With constant_to_background a
// zero-dynamic-range channel maps to all -1 instead of raising.
inline CellVolume preprocess(const CellVolume& raw, int64_t target_cube,
                             bool constant_to_background = false) {
  if (raw.d < 1 || raw.h < 1 || raw.w < 1 || raw.channels < 1)
    fail(ErrorCode::InvalidArgument, "preprocess: empty extents");
  for (float v : raw.data)
    if (!std::isfinite(v))
      fail(ErrorCode::NonFiniteInput, "preprocess: non-finite intensity");

  const int64_t max_ext = std::max({raw.d, raw.h, raw.w});
  auto scaled = [&](int64_t ext) {
    return std::max<int64_t>(
        1, llround(static_cast<double>(ext) * target_cube / max_ext));
  };
  const int64_t nd = scaled(raw.d), nh = scaled(raw.h), nw = scaled(raw.w);

  CellVolume out(raw.channels, target_cube, target_cube, target_cube);
  out.voxel_size = raw.voxel_size * static_cast<float>(max_ext) /
                   static_cast<float>(target_cube);
  std::fill(out.data.begin(), out.data.end(), -1.0f);

  const int64_t off_z = (target_cube - nd) / 2;
  const int64_t off_y = (target_cube - nh) / 2;
  const int64_t off_x = (target_cube - nw) / 2;

  for (int64_t c = 0; c < raw.channels; ++c) {
    std::vector<float> resized;
    const float* src = raw.channel(c);
    if (nd == raw.d && nh == raw.h && nw == raw.w)
      resized.assign(src, src + raw.voxels_per_channel());
    else
      resized = detail::trilinear_resize(src, raw.d, raw.h, raw.w, nd, nh, nw);

    float lo = resized[0], hi = resized[0];
    for (float v : resized) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (hi == lo) {
      if (!constant_to_background)
        fail(ErrorCode::DegenerateInput,
             "preprocess: channel " + std::to_string(c) +
                 " has zero dynamic range");
      continue;  // stays background
    }
    // affine map with exact endpoints; identity when already [-1, 1]
    const float a = 2.0f / (hi - lo);
    const float b = -1.0f - a * lo;
    for (int64_t z = 0; z < nd; ++z)
      for (int64_t y = 0; y < nh; ++y)
        for (int64_t x = 0; x < nw; ++x) {
          const float v = resized[(z * nh + y) * nw + x] * a + b;
          out.at(c, z + off_z, y + off_y, x + off_x) =
              std::min(1.0f, std::max(-1.0f, v));
        }
  }
  return out;
}

}  // namespace morphogen
