#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "morphogen/errors.hpp"
#include "morphogen/linalg.hpp"

namespace morphogen {

struct BinaryMask {
  int64_t d = 0, h = 0, w = 0;
  std::vector<uint8_t> voxels;

  BinaryMask() = default;
  BinaryMask(int64_t d_, int64_t h_, int64_t w_)
      : d(d_), h(h_), w(w_), voxels(static_cast<size_t>(d_ * h_ * w_), 0) {}

  uint8_t at(int64_t z, int64_t y, int64_t x) const {
    return voxels[(z * h + y) * w + x];
  }
  void set(int64_t z, int64_t y, int64_t x, uint8_t v) {
    voxels[(z * h + y) * w + x] = v;
  }
  int64_t count() const {
    int64_t c = 0;
    for (uint8_t v : voxels) c += v != 0;
    return c;
  }
};

using Vec3 = std::array<double, 3>;

inline Vec3 operator-(const Vec3& a, const Vec3& b) {
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}
inline Vec3 operator+(const Vec3& a, const Vec3& b) {
  return {a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}
inline Vec3 operator*(const Vec3& a, double s) {
  return {a[0] * s, a[1] * s, a[2] * s};
}
inline double dot(const Vec3& a, const Vec3& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
          a[0] * b[1] - a[1] * b[0]};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

struct Mesh {
  std::vector<Vec3> vertices;             // (x, y, z) in voxel units
  std::vector<std::array<int, 3>> faces;  // outward-oriented triangles

  double volume() const {
    double v = 0.0;
    for (const auto& f : faces) {
      const Vec3& a = vertices[f[0]];
      const Vec3& b = vertices[f[1]];
      const Vec3& c = vertices[f[2]];
      v += dot(a, cross(b, c));
    }
    return v / 6.0;
  }

  double surface_area() const {
    double s = 0.0;
    for (const auto& f : faces) {
      const Vec3 e1 = vertices[f[1]] - vertices[f[0]];
      const Vec3 e2 = vertices[f[2]] - vertices[f[0]];
      s += 0.5 * norm(cross(e1, e2));
    }
    return s;
  }

  // Closed iff every undirected edge is shared by exactly two faces with
  // opposite directions.
  bool is_closed() const {
    std::map<std::pair<int, int>, int> directed;
    for (const auto& f : faces)
      for (int e = 0; e < 3; ++e) {
        const int a = f[e], b = f[(e + 1) % 3];
        directed[{a, b}] += 1;
      }
    for (const auto& [edge, count] : directed) {
      if (count != 1) return false;
      auto twin = directed.find({edge.second, edge.first});
      if (twin == directed.end() || twin->second != 1) return false;
    }
    return true;
  }

  int64_t euler_characteristic() const {
    std::map<std::pair<int, int>, bool> undirected;
    for (const auto& f : faces)
      for (int e = 0; e < 3; ++e) {
        int a = f[e], b = f[(e + 1) % 3];
        if (a > b) std::swap(a, b);
        undirected[{a, b}] = true;
      }
    return static_cast<int64_t>(vertices.size()) -
           static_cast<int64_t>(undirected.size()) +
           static_cast<int64_t>(faces.size());
  }
};

// ---- Otsu thresholding ----

namespace detail {

// Split index maximising between-class variance; ties go to the lower split.
// Bins <= k form class 0.
inline int otsu_split(const std::vector<double>& hist) {
  const int bins = static_cast<int>(hist.size());
  double total = 0.0, total_mean_num = 0.0;
  for (int i = 0; i < bins; ++i) {
    total += hist[i];
    total_mean_num += hist[i] * i;
  }
  double w0 = 0.0, num0 = 0.0;
  double best = -1.0;
  int best_k = 0;
  for (int k = 0; k < bins - 1; ++k) {
    w0 += hist[k];
    num0 += hist[k] * k;
    const double w1 = total - w0;
    if (w0 <= 0.0 || w1 <= 0.0) continue;
    const double mu0 = num0 / w0;
    const double mu1 = (total_mean_num - num0) / w1;
    const double sigma_b = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
    if (sigma_b > best) {
      best = sigma_b;
      best_k = k;
    }
  }
  return best_k;
}

}  // namespace detail

// Histogram-based Otsu threshold; returns the upper edge of the chosen
// split bin, so `value > threshold` selects the upper class.
inline float otsu_threshold(const float* values, int64_t n, int bins = 256) {
  if (n < 1) fail(ErrorCode::EmptyInput, "otsu: empty input");
  float lo = values[0], hi = values[0];
  for (int64_t i = 0; i < n; ++i) {
    lo = std::min(lo, values[i]);
    hi = std::max(hi, values[i]);
  }
  if (hi == lo)
    fail(ErrorCode::ConstantInput, "otsu: input has fewer than 2 distinct values");
  std::vector<double> hist(bins, 0.0);
  const double scale = bins / (static_cast<double>(hi) - lo);
  for (int64_t i = 0; i < n; ++i) {
    int b = static_cast<int>((values[i] - lo) * scale);
    b = std::min(std::max(b, 0), bins - 1);
    hist[b] += 1.0;
  }
  const int k = detail::otsu_split(hist);
  return static_cast<float>(lo + (k + 1) * (static_cast<double>(hi) - lo) / bins);
}

inline float otsu_threshold(const std::vector<float>& values, int bins = 256) {
  return otsu_threshold(values.data(), static_cast<int64_t>(values.size()),
                        bins);
}

inline BinaryMask binarize(const float* values, int64_t d, int64_t h,
                           int64_t w, float threshold) {
  BinaryMask mask(d, h, w);
  const int64_t n = d * h * w;
  for (int64_t i = 0; i < n; ++i) mask.voxels[i] = values[i] > threshold;
  return mask;
}

// ---- binary dilation (6-connectivity) ----

inline BinaryMask binary_dilation(const BinaryMask& mask, int iterations) {
  if (iterations < 0)
    fail(ErrorCode::InvalidArgument, "binary_dilation: negative iterations");
  BinaryMask cur = mask;
  for (int it = 0; it < iterations; ++it) {
    BinaryMask next = cur;
    for (int64_t z = 0; z < cur.d; ++z)
      for (int64_t y = 0; y < cur.h; ++y)
        for (int64_t x = 0; x < cur.w; ++x) {
          if (!cur.at(z, y, x)) continue;
          if (z > 0) next.set(z - 1, y, x, 1);
          if (z < cur.d - 1) next.set(z + 1, y, x, 1);
          if (y > 0) next.set(z, y - 1, x, 1);
          if (y < cur.h - 1) next.set(z, y + 1, x, 1);
          if (x > 0) next.set(z, y, x - 1, 1);
          if (x < cur.w - 1) next.set(z, y, x + 1, 1);
        }
    cur = std::move(next);
  }
  return cur;
}

// ---- isosurface extraction ----
//
// Cube-decomposition marching: every cell is split into six tetrahedra
// around the main diagonal, each contributing up to two triangles with
// vertices linearly interpolated onto the iso level. The fixed diagonal
// makes facet choices agree across neighbouring cells, so the surface is
// watertight by construction. Interpolation parameters are kept strictly
// inside (0,1) so no face degenerates.

namespace detail {

struct MeshBuilder {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
  std::map<std::pair<int64_t, int64_t>, int> edge_vertex;

  int vertex_on_edge(int64_t ga, int64_t gb, const Vec3& pa, const Vec3& pb,
                     double va, double vb, double iso) {
    if (ga > gb) return vertex_on_edge(gb, ga, pb, pa, vb, va, iso);
    auto it = edge_vertex.find({ga, gb});
    if (it != edge_vertex.end()) return it->second;
    double t = (iso - va) / (vb - va);
    t = std::min(1.0 - 1e-6, std::max(1e-6, t));
    const Vec3 p = pa + (pb - pa) * t;
    const int idx = static_cast<int>(vertices.size());
    vertices.push_back(p);
    edge_vertex.emplace(std::make_pair(ga, gb), idx);
    return idx;
  }

  // Emit a triangle oriented so its normal points away from the inside
  // region (reference: inward point `inside_ref`).
  void emit(int a, int b, int c, const Vec3& inside_ref) {
    const Vec3& pa = vertices[a];
    const Vec3 n = cross(vertices[b] - pa, vertices[c] - pa);
    const Vec3 centroid = (pa + vertices[b] + vertices[c]) * (1.0 / 3.0);
    if (dot(n, inside_ref - centroid) > 0)
      faces.push_back({a, c, b});
    else
      faces.push_back({a, b, c});
  }
};

// Corner order of the six-tetrahedron split; every tet shares the 0-7
// diagonal. Corner bit 0 -> +x, bit 1 -> +y, bit 2 -> +z.
constexpr int kTets[6][4] = {{0, 1, 3, 7}, {0, 3, 2, 7}, {0, 2, 6, 7},
                             {0, 6, 4, 7}, {0, 4, 5, 7}, {0, 5, 1, 7}};

}  // namespace detail

inline Mesh extract_mesh(const float* values, int64_t d, int64_t h, int64_t w,
                         float iso) {
  // pad by one background voxel so boundary-touching surfaces close
  const int64_t pd = d + 2, ph = h + 2, pw = w + 2;
  float lo = values[0], hi = values[0];
  for (int64_t i = 0; i < d * h * w; ++i) {
    lo = std::min(lo, values[i]);
    hi = std::max(hi, values[i]);
  }
  const float pad_value = std::min(lo, iso) - std::max(1e-3f, (hi - lo) * 0.01f);
  std::vector<float> grid(static_cast<size_t>(pd * ph * pw), pad_value);
  bool any_inside = false;
  for (int64_t z = 0; z < d; ++z)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        const float v = values[(z * h + y) * w + x];
        grid[((z + 1) * ph + y + 1) * pw + x + 1] = v;
        any_inside = any_inside || v > iso;
      }
  if (!any_inside)
    fail(ErrorCode::EmptySurface, "extract_mesh: no voxel above the iso level");

  detail::MeshBuilder builder;
  auto gid = [&](int64_t z, int64_t y, int64_t x) {
    return (z * ph + y) * pw + x;
  };

  for (int64_t z = 0; z + 1 < pd; ++z)
    for (int64_t y = 0; y + 1 < ph; ++y)
      for (int64_t x = 0; x + 1 < pw; ++x) {
        int64_t corner_id[8];
        double corner_val[8];
        Vec3 corner_pos[8];
        bool inside[8];
        int n_inside = 0;
        for (int c = 0; c < 8; ++c) {
          const int64_t cx = x + (c & 1);
          const int64_t cy = y + ((c >> 1) & 1);
          const int64_t cz = z + ((c >> 2) & 1);
          corner_id[c] = gid(cz, cy, cx);
          corner_val[c] = grid[corner_id[c]];
          // shift back to unpadded voxel coordinates
          corner_pos[c] = {static_cast<double>(cx - 1),
                           static_cast<double>(cy - 1),
                           static_cast<double>(cz - 1)};
          inside[c] = corner_val[c] > iso;
          n_inside += inside[c];
        }
        if (n_inside == 0 || n_inside == 8) continue;

        for (const auto& tet : detail::kTets) {
          int in_corners[4], out_corners[4];
          int ni = 0, no = 0;
          for (int t = 0; t < 4; ++t) {
            if (inside[tet[t]])
              in_corners[ni++] = tet[t];
            else
              out_corners[no++] = tet[t];
          }
          if (ni == 0 || ni == 4) continue;

          auto edge_vert = [&](int ci, int co) {
            return builder.vertex_on_edge(corner_id[ci], corner_id[co],
                                          corner_pos[ci], corner_pos[co],
                                          corner_val[ci], corner_val[co],
                                          iso);
          };

          if (ni == 1) {
            const int a = in_corners[0];
            const int v0 = edge_vert(a, out_corners[0]);
            const int v1 = edge_vert(a, out_corners[1]);
            const int v2 = edge_vert(a, out_corners[2]);
            builder.emit(v0, v1, v2, corner_pos[a]);
          } else if (ni == 3) {
            const int a = out_corners[0];
            const int v0 = edge_vert(in_corners[0], a);
            const int v1 = edge_vert(in_corners[1], a);
            const int v2 = edge_vert(in_corners[2], a);
            Vec3 inref = (corner_pos[in_corners[0]] +
                          corner_pos[in_corners[1]] +
                          corner_pos[in_corners[2]]) *
                         (1.0 / 3.0);
            builder.emit(v0, v1, v2, inref);
          } else {  // ni == 2: quad split into two triangles
            const int a = in_corners[0], b = in_corners[1];
            const int c = out_corners[0], e = out_corners[1];
            const int vac = edge_vert(a, c);
            const int vae = edge_vert(a, e);
            const int vbc = edge_vert(b, c);
            const int vbe = edge_vert(b, e);
            const Vec3 inref = (corner_pos[a] + corner_pos[b]) * 0.5;
            builder.emit(vac, vae, vbe, inref);
            builder.emit(vac, vbe, vbc, inref);
          }
        }
      }

  Mesh mesh;
  mesh.vertices = std::move(builder.vertices);
  mesh.faces = std::move(builder.faces);
  return mesh;
}

inline Mesh extract_mesh(const std::vector<float>& values, int64_t d,
                         int64_t h, int64_t w, float iso) {
  return extract_mesh(values.data(), d, h, w, iso);
}

// ---- convex hull (incremental quickhull) volume ----

namespace detail {

struct HullFace {
  int a, b, c;
  Vec3 normal;  // outward, unit-ish
  double offset;
  bool alive = true;
  std::vector<int> outside;
};

inline double hull_plane_dist(const HullFace& f, const Vec3& p) {
  return dot(f.normal, p) - f.offset;
}

}  // namespace detail

// Volume of the convex hull of `points`. Returns 0 with `degenerate` set
// when the points are affinely dependent (coplanar or worse).
inline double convex_hull_volume(const std::vector<Vec3>& points,
                                 bool* degenerate = nullptr) {
  if (degenerate) *degenerate = false;
  const int n = static_cast<int>(points.size());
  if (n < 4) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }

  Vec3 lo = points[0], hi = points[0];
  for (const Vec3& p : points)
    for (int k = 0; k < 3; ++k) {
      lo[k] = std::min(lo[k], p[k]);
      hi[k] = std::max(hi[k], p[k]);
    }
  const double diag = norm(hi - lo);
  const double eps = std::max(1e-12, diag * 1e-10);

  // initial extreme pair
  int i0 = 0, i1 = 0;
  double best = -1.0;
  for (int axis = 0; axis < 3; ++axis) {
    int lo_i = 0, hi_i = 0;
    for (int i = 1; i < n; ++i) {
      if (points[i][axis] < points[lo_i][axis]) lo_i = i;
      if (points[i][axis] > points[hi_i][axis]) hi_i = i;
    }
    const double dist = norm(points[hi_i] - points[lo_i]);
    if (dist > best) {
      best = dist;
      i0 = lo_i;
      i1 = hi_i;
    }
  }
  if (best < eps) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }

  // farthest from the line
  int i2 = -1;
  best = eps;
  const Vec3 dir = points[i1] - points[i0];
  for (int i = 0; i < n; ++i) {
    const Vec3 rel = points[i] - points[i0];
    const double dist = norm(cross(rel, dir)) / norm(dir);
    if (dist > best) {
      best = dist;
      i2 = i;
    }
  }
  if (i2 < 0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }

  // farthest from the plane
  Vec3 pn = cross(points[i1] - points[i0], points[i2] - points[i0]);
  pn = pn * (1.0 / norm(pn));
  int i3 = -1;
  best = eps;
  for (int i = 0; i < n; ++i) {
    const double dist = std::abs(dot(pn, points[i] - points[i0]));
    if (dist > best) {
      best = dist;
      i3 = i;
    }
  }
  if (i3 < 0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }

  std::vector<detail::HullFace> faces;
  const Vec3 centroid =
      (points[i0] + points[i1] + points[i2] + points[i3]) * 0.25;
  auto add_face = [&](int a, int b, int c) {
    detail::HullFace f;
    f.a = a;
    f.b = b;
    f.c = c;
    Vec3 normal = cross(points[b] - points[a], points[c] - points[a]);
    const double len = norm(normal);
    normal = normal * (1.0 / len);
    double offset = dot(normal, points[a]);
    if (dot(normal, centroid) - offset > 0) {  // flip outward
      std::swap(f.b, f.c);
      normal = normal * -1.0;
      offset = -offset;
    }
    f.normal = normal;
    f.offset = offset;
    faces.push_back(std::move(f));
    return static_cast<int>(faces.size()) - 1;
  };
  add_face(i0, i1, i2);
  add_face(i0, i1, i3);
  add_face(i0, i2, i3);
  add_face(i1, i2, i3);

  for (int i = 0; i < n; ++i) {
    if (i == i0 || i == i1 || i == i2 || i == i3) continue;
    for (auto& f : faces)
      if (detail::hull_plane_dist(f, points[i]) > eps) {
        f.outside.push_back(i);
        break;
      }
  }

  // expand until no face has outside points
  for (size_t fi = 0; fi < faces.size(); ++fi) {
    if (!faces[fi].alive || faces[fi].outside.empty()) continue;
    // farthest outside point of this face
    int far_pt = faces[fi].outside[0];
    double far_dist = detail::hull_plane_dist(faces[fi], points[far_pt]);
    for (int p : faces[fi].outside) {
      const double dist = detail::hull_plane_dist(faces[fi], points[p]);
      if (dist > far_dist) {
        far_dist = dist;
        far_pt = p;
      }
    }

    // all faces visible from far_pt
    std::vector<int> visible;
    std::vector<int> orphan;
    for (size_t gi = 0; gi < faces.size(); ++gi)
      if (faces[gi].alive &&
          detail::hull_plane_dist(faces[gi], points[far_pt]) > eps) {
        visible.push_back(static_cast<int>(gi));
        for (int p : faces[gi].outside)
          if (p != far_pt) orphan.push_back(p);
        faces[gi].alive = false;
        faces[gi].outside.clear();
      }

    // horizon: directed edges of visible faces whose twin is not visible
    std::map<std::pair<int, int>, int> edge_count;
    for (int gi : visible) {
      const auto& f = faces[gi];
      const int vs[3] = {f.a, f.b, f.c};
      for (int e = 0; e < 3; ++e) {
        int a = vs[e], b = vs[(e + 1) % 3];
        edge_count[{std::min(a, b), std::max(a, b)}] += 1;
      }
    }
    std::vector<std::pair<int, int>> horizon;
    for (int gi : visible) {
      const auto& f = faces[gi];
      const int vs[3] = {f.a, f.b, f.c};
      for (int e = 0; e < 3; ++e) {
        const int a = vs[e], b = vs[(e + 1) % 3];
        if (edge_count[{std::min(a, b), std::max(a, b)}] == 1)
          horizon.push_back({a, b});
      }
    }

    std::vector<int> fresh;
    for (const auto& [a, b] : horizon) fresh.push_back(add_face(a, b, far_pt));

    for (int p : orphan) {
      if (p == far_pt) continue;
      for (int gi : fresh)
        if (detail::hull_plane_dist(faces[gi], points[p]) > eps) {
          faces[gi].outside.push_back(p);
          break;
        }
    }
    fi = static_cast<size_t>(-1);  // restart scan; face list changed
  }

  double volume = 0.0;
  for (const auto& f : faces) {
    if (!f.alive) continue;
    const Vec3 a = points[f.a] - centroid;
    const Vec3 b = points[f.b] - centroid;
    const Vec3 c = points[f.c] - centroid;
    volume += dot(a, cross(b, c));
  }
  return volume / 6.0;
}

// ---- shape descriptors ----

struct DescriptorVector {
  double volume = 0.0;
  double surface_area = 0.0;
  double sphericity = 0.0;
  double eccentricity = 0.0;
  double protrusivity = 0.0;
};

inline DescriptorVector compute_descriptors(const BinaryMask& mask,
                                            const Mesh& mesh,
                                            bool warn_degenerate_hull = true) {
  if (mask.count() == 0)
    fail(ErrorCode::EmptyInput, "compute_descriptors: empty mask");
  if (mesh.faces.empty() || !mesh.is_closed())
    fail(ErrorCode::OpenMesh,
         "compute_descriptors: mesh is open; volume undefined");

  DescriptorVector desc;
  desc.volume = mesh.volume();
  desc.surface_area = mesh.surface_area();
  desc.sphericity = std::pow(3.14159265358979323846, 1.0 / 3.0) *
                    std::pow(6.0 * desc.volume, 2.0 / 3.0) /
                    desc.surface_area;

  // eccentricity from the voxel-coordinate covariance
  double mean[3] = {0, 0, 0};
  int64_t count = 0;
  for (int64_t z = 0; z < mask.d; ++z)
    for (int64_t y = 0; y < mask.h; ++y)
      for (int64_t x = 0; x < mask.w; ++x)
        if (mask.at(z, y, x)) {
          mean[0] += x;
          mean[1] += y;
          mean[2] += z;
          ++count;
        }
  for (double& m : mean) m /= count;
  std::vector<double> cov(9, 0.0);
  for (int64_t z = 0; z < mask.d; ++z)
    for (int64_t y = 0; y < mask.h; ++y)
      for (int64_t x = 0; x < mask.w; ++x)
        if (mask.at(z, y, x)) {
          const double rel[3] = {x - mean[0], y - mean[1], z - mean[2]};
          for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) cov[i * 3 + j] += rel[i] * rel[j];
        }
  for (double& c : cov) c /= count;
  const std::vector<double> eig = symmetric_eig(cov, 3, nullptr);
  const double lambda_min = std::max(eig[0], 0.0);
  const double lambda_max = eig[2];
  desc.eccentricity =
      lambda_max > 1e-12 ? std::sqrt(1.0 - lambda_min / lambda_max) : 0.0;

  bool degenerate = false;
  const double hull_vol = convex_hull_volume(mesh.vertices, &degenerate);
  if (degenerate || hull_vol <= 0.0) {
    if (warn_degenerate_hull)
      std::cerr << "warning: degenerate convex hull; protrusivity set to 0\n";
    desc.protrusivity = 0.0;
  } else {
    desc.protrusivity = std::max(0.0, 1.0 - desc.volume / hull_vol);
  }
  return desc;
}

// ---- ERK ratio ----

// mean(signal | nucleus) / mean(signal | ring), ring = dilation minus
// nucleus. Higher ratio reads as lower ERK signalling.
inline double erk_ratio(const float* signal, const BinaryMask& nucleus,
                        int dilate_iters = 7) {
  if (nucleus.count() == 0) fail(ErrorCode::EmptyInput, "erk_ratio: empty nucleus");
  const BinaryMask dilated = binary_dilation(nucleus, dilate_iters);
  double nuc_sum = 0.0, ring_sum = 0.0;
  int64_t nuc_n = 0, ring_n = 0;
  const int64_t total = nucleus.d * nucleus.h * nucleus.w;
  for (int64_t i = 0; i < total; ++i) {
    if (nucleus.voxels[i]) {
      nuc_sum += signal[i];
      ++nuc_n;
    } else if (dilated.voxels[i]) {
      ring_sum += signal[i];
      ++ring_n;
    }
  }
  if (ring_n == 0) fail(ErrorCode::EmptyRing, "erk_ratio: empty ring region");
  const double ring_mean = ring_sum / ring_n;
  if (ring_mean == 0.0)
    fail(ErrorCode::ZeroRingMean, "erk_ratio: ring mean is zero");
  return (nuc_sum / nuc_n) / ring_mean;
}

// ---- mesh export ----

// ASCII Wavefront-style text: `v x y z` then `f i j k` with 1-based indices.
inline void save_mesh_obj(const std::string& path, const Mesh& mesh) {
  std::ofstream os(path);
  if (!os) fail(ErrorCode::Io, "cannot open '" + path + "' for writing");
  for (const auto& v : mesh.vertices)
    os << "v " << v[0] << " " << v[1] << " " << v[2] << "\n";
  for (const auto& f : mesh.faces)
    os << "f " << f[0] + 1 << " " << f[1] + 1 << " " << f[2] + 1 << "\n";
  if (!os) fail(ErrorCode::Io, "write failed for '" + path + "'");
}

}  // namespace morphogen
