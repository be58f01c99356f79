#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "morphogen/geometry.hpp"
#include "morphogen/rng.hpp"
#include "morphogen/volume.hpp"

namespace morphogen {

// Procedural phenotype class. Cells are star-convex blobs: an ellipsoid body
// whose radius is modulated by Gaussian bumps along random directions, with
// a nucleus ellipsoid strictly contained in the body.
struct Archetype {
  std::string name;
  double base_radius = 0.26;        // fraction of the cube edge
  double elong_lo = 0.85, elong_hi = 1.2;
  int protrusions_lo = 2, protrusions_hi = 4;
  double protrusion_len_lo = 0.2, protrusion_len_hi = 0.45;
  double protrusion_width = 0.15;   // angular width of the bumps
  double nucleus_scale_lo = 0.32, nucleus_scale_hi = 0.48;
  bool signal_nuclear_high = false; // ERK-style rule for the signal channel
};

inline Archetype archetype_by_name(const std::string& name) {
  if (name == "control") return Archetype{"control"};
  if (name == "round") {
    Archetype a{"round"};
    a.base_radius = 0.30;
    a.elong_lo = 0.92;
    a.elong_hi = 1.08;
    a.protrusions_lo = 0;
    a.protrusions_hi = 1;
    a.protrusion_len_lo = 0.05;
    a.protrusion_len_hi = 0.12;
    a.protrusion_width = 0.2;
    a.signal_nuclear_high = true;  // "inhibited" phenotype
    return a;
  }
  if (name == "protrusive") {
    Archetype a{"protrusive"};
    a.base_radius = 0.20;
    a.elong_lo = 0.7;
    a.elong_hi = 1.35;
    a.protrusions_lo = 5;
    a.protrusions_hi = 9;
    a.protrusion_len_lo = 0.5;
    a.protrusion_len_hi = 1.0;
    a.protrusion_width = 0.07;
    return a;
  }
  fail(ErrorCode::InvalidArgument, "unknown archetype '" + name + "'");
}

struct GeneratedCell {
  CellVolume volume;        // 2 channels: cytoplasm, nucleus (raw intensities)
  CellVolume signal;        // 1 channel; defined when requested
  BinaryMask cyto_mask;     // ground truth, exact by construction
  BinaryMask nucleus_mask;
};

inline GeneratedCell generate_cell(const Archetype& arch, int64_t cube,
                                   uint64_t seed, bool with_signal = false) {
  Rng rng(seed);
  const double edge = 0.8;  // intensity falloff width in voxels

  const double half = cube / 2.0;
  const double cx = half + rng.uniform(-0.04, 0.04) * cube;
  const double cy = half + rng.uniform(-0.04, 0.04) * cube;
  const double cz = half + rng.uniform(-0.04, 0.04) * cube;

  const double base = arch.base_radius * cube;
  const double ax = base * rng.uniform(arch.elong_lo, arch.elong_hi);
  const double ay = base * rng.uniform(arch.elong_lo, arch.elong_hi);
  const double az = base * rng.uniform(arch.elong_lo, arch.elong_hi);

  const int n_spikes =
      arch.protrusions_lo +
      static_cast<int>(rng.below(arch.protrusions_hi - arch.protrusions_lo + 1));
  std::vector<Vec3> spike_dir(n_spikes);
  std::vector<double> spike_len(n_spikes);
  for (int s = 0; s < n_spikes; ++s) {
    Vec3 dir = {rng.normal(), rng.normal(), rng.normal()};
    const double len = norm(dir);
    spike_dir[s] = dir * (1.0 / (len > 1e-9 ? len : 1.0));
    spike_len[s] = rng.uniform(arch.protrusion_len_lo, arch.protrusion_len_hi);
  }

  const double nscale = rng.uniform(arch.nucleus_scale_lo, arch.nucleus_scale_hi);
  // offset kept small enough that nucleus + offset stays strictly inside
  // the body ellipsoid: |M o| + nscale < 1
  const double max_off = (1.0 - nscale) * 0.6;
  Vec3 noff = {rng.uniform(-max_off, max_off) * ax,
               rng.uniform(-max_off, max_off) * ay,
               rng.uniform(-max_off, max_off) * az};
  const double off_scaled = std::sqrt((noff[0] / ax) * (noff[0] / ax) +
                                      (noff[1] / ay) * (noff[1] / ay) +
                                      (noff[2] / az) * (noff[2] / az));
  if (off_scaled + nscale >= 0.98) {
    const double shrink = (0.98 - nscale) / off_scaled;
    noff = noff * shrink;
  }
  const double nax = ax * nscale, nay = ay * nscale, naz = az * nscale;

  GeneratedCell cell;
  cell.volume = CellVolume(2, cube, cube, cube);
  cell.cyto_mask = BinaryMask(cube, cube, cube);
  cell.nucleus_mask = BinaryMask(cube, cube, cube);
  if (with_signal) cell.signal = CellVolume(1, cube, cube, cube);

  auto sigmoid = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };

  for (int64_t z = 0; z < cube; ++z)
    for (int64_t y = 0; y < cube; ++y)
      for (int64_t x = 0; x < cube; ++x) {
        const Vec3 rel = {x - cx, y - cy, z - cz};
        const double r = norm(rel);
        const Vec3 u = r > 1e-9 ? rel * (1.0 / r) : Vec3{1, 0, 0};

        const double inv_rell =
            std::sqrt((u[0] / ax) * (u[0] / ax) + (u[1] / ay) * (u[1] / ay) +
                      (u[2] / az) * (u[2] / az));
        const double r_ell = 1.0 / std::max(inv_rell, 1e-9);
        double bump = 1.0;
        for (int s = 0; s < n_spikes; ++s) {
          const double align = dot(u, spike_dir[s]);
          bump += spike_len[s] *
                  std::exp((align - 1.0) / (arch.protrusion_width *
                                            arch.protrusion_width * 2.0));
        }
        const double radius = r_ell * bump;
        const double sdf = radius - r;

        const double q = std::sqrt(
            ((x - cx - noff[0]) / nax) * ((x - cx - noff[0]) / nax) +
            ((y - cy - noff[1]) / nay) * ((y - cy - noff[1]) / nay) +
            ((z - cz - noff[2]) / naz) * ((z - cz - noff[2]) / naz));

        cell.cyto_mask.set(z, y, x, sdf > 0.0);
        cell.nucleus_mask.set(z, y, x, q < 1.0);

        const double inside = sigmoid(sdf / edge);
        const double falloff = r < radius ? 1.0 - 0.45 * (r / radius) : 0.55;
        const double noise_c = rng.normal() * 0.02;
        cell.volume.at(0, z, y, x) =
            static_cast<float>(std::max(0.0, inside * falloff + noise_c));

        const double nuc_sdf = (1.0 - q) * std::min({nax, nay, naz});
        const double inside_n = sigmoid(nuc_sdf / edge);
        const double noise_n = rng.normal() * 0.02;
        cell.volume.at(1, z, y, x) = static_cast<float>(
            std::max(0.0, inside_n * (1.0 - 0.35 * std::min(q, 1.0)) + noise_n));

        if (with_signal) {
          // clean rule with known ground-truth ERK ratio per cell; the
          // baseline keeps ring means bounded away from zero
          const bool in_nucleus = q < 1.0;
          const bool in_cyto = sdf > 0.0;
          double s;
          if (arch.signal_nuclear_high)
            s = in_nucleus ? 1.0 : 0.25;
          else
            s = (in_cyto && !in_nucleus) ? 1.0 : 0.25;
          cell.signal.at(0, z, y, x) = static_cast<float>(s);
        }
      }
  return cell;
}

// Per-cell seeds derived from the master seed.
inline uint64_t cell_seed(uint64_t master_seed, int64_t index) {
  uint64_t state = master_seed;
  uint64_t mixed = splitmix64(state);
  state = mixed ^ (0x100000001b3ull * static_cast<uint64_t>(index + 1));
  return splitmix64(state);
}

struct DatasetEntry {
  std::string sample_id;
  std::string archetype;
  uint64_t seed;
  std::string path;
};

// n "MVOL" files plus a manifest CSV `sample_id,archetype,seed`.
inline std::vector<DatasetEntry> generate_dataset(
    const Archetype& arch, int64_t n, uint64_t master_seed,
    const std::string& out_dir, int64_t cube, bool with_signal = false) {
  if (n < 1) fail(ErrorCode::InvalidArgument, "generate_dataset: n must be >= 1");
  std::filesystem::create_directories(out_dir);
  std::vector<DatasetEntry> entries;
  std::ofstream manifest(out_dir + "/manifest.csv");
  if (!manifest)
    fail(ErrorCode::Io, "cannot open manifest in '" + out_dir + "'");
  manifest << "sample_id,archetype,seed\n";
  for (int64_t i = 0; i < n; ++i) {
    const uint64_t seed = cell_seed(master_seed, i);
    char id[64];
    std::snprintf(id, sizeof id, "%s_%04lld", arch.name.c_str(),
                  static_cast<long long>(i));
    GeneratedCell cell = generate_cell(arch, cube, seed, with_signal);
    const std::string path = out_dir + "/" + id + ".mvol";
    mvol::save(path, cell.volume);
    if (with_signal)
      mvol::save(out_dir + "/" + id + "_signal.mvol", cell.signal);
    manifest << id << "," << arch.name << "," << seed << "\n";
    entries.push_back({id, arch.name, seed, path});
  }
  return entries;
}

// Manifest reader for both dataset schemas (`sample_id,archetype,seed` from
// synth and `sample_id,perturbation,seed,t_bridge` from sampling); the
// label column fills `archetype`. File paths resolve against the directory.
inline std::vector<DatasetEntry> load_manifest(const std::string& dir) {
  const std::string path = dir + "/manifest.csv";
  std::ifstream is(path);
  if (!is) fail(ErrorCode::Io, "cannot open '" + path + "'");
  auto split = [](const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
      if (c == ',') {
        fields.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    fields.push_back(cur);
    return fields;
  };

  std::string line;
  if (!std::getline(is, line))
    fail(ErrorCode::Config, path + ": empty manifest");
  const auto header = split(line);
  size_t id_col = header.size(), label_col = header.size(),
         seed_col = header.size();
  for (size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "sample_id") id_col = i;
    if (header[i] == "archetype" || header[i] == "perturbation") label_col = i;
    if (header[i] == "seed") seed_col = i;
  }
  if (id_col == header.size() || label_col == header.size() ||
      seed_col == header.size())
    fail(ErrorCode::Config, path + ": unexpected manifest header '" + line + "'");

  std::vector<DatasetEntry> entries;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto fields = split(line);
    if (fields.size() != header.size())
      fail(ErrorCode::Config, path + ": ragged manifest row '" + line + "'");
    entries.push_back({fields[id_col], fields[label_col],
                       static_cast<uint64_t>(std::stoull(fields[seed_col])),
                       dir + "/" + fields[id_col] + ".mvol"});
  }
  return entries;
}

}  // namespace morphogen
