#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "morphogen/metrics.hpp"
#include "morphogen/synth.hpp"

using namespace morphogen;

namespace {

double cell_sphericity(const CellVolume& vol) {
  const float iso =
      otsu_threshold(vol.channel(0), vol.voxels_per_channel());
  Mesh mesh = extract_mesh(vol.channel(0), vol.d, vol.h, vol.w, iso);
  BinaryMask mask = binarize(vol.channel(0), vol.d, vol.h, vol.w, iso);
  return compute_descriptors(mask, mesh, /*warn=*/false).sphericity;
}

}  // namespace

TEST_CASE("nucleus mask is strictly inside the cytoplasm mask") {
  for (const char* name : {"control", "round", "protrusive"}) {
    const Archetype arch = archetype_by_name(name);
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
      GeneratedCell cell = generate_cell(arch, 32, seed);
      int64_t violations = 0;
      for (size_t i = 0; i < cell.nucleus_mask.voxels.size(); ++i)
        if (cell.nucleus_mask.voxels[i] && !cell.cyto_mask.voxels[i])
          ++violations;
      CHECK(violations == 0);
      CHECK(cell.nucleus_mask.count() > 0);
      CHECK(cell.cyto_mask.count() > cell.nucleus_mask.count());
    }
  }
}

TEST_CASE("same seed twice gives bit-identical volumes") {
  const Archetype arch = archetype_by_name("control");
  GeneratedCell a = generate_cell(arch, 32, 77, true);
  GeneratedCell b = generate_cell(arch, 32, 77, true);
  CHECK(a.volume.data == b.volume.data);
  CHECK(a.signal.data == b.signal.data);
}

TEST_CASE("generated volumes pass preprocess without the degenerate flag") {
  for (const char* name : {"control", "round", "protrusive"}) {
    const Archetype arch = archetype_by_name(name);
    GeneratedCell cell = generate_cell(arch, 32, 11);
    const CellVolume prep = preprocess(cell.volume, 32);
    CHECK(prep.d == 32);
    for (float v : prep.data) {
      CHECK(v >= -1.0f);
      CHECK(v <= 1.0f);
    }
  }
}

TEST_CASE("round vs protrusive sphericity separates under a KS test") {
  const Archetype round = archetype_by_name("round");
  const Archetype protr = archetype_by_name("protrusive");
  std::vector<double> s_round, s_protr;
  for (int i = 0; i < 40; ++i) {
    s_round.push_back(cell_sphericity(
        generate_cell(round, 32, cell_seed(100, i)).volume));
    s_protr.push_back(cell_sphericity(
        generate_cell(protr, 32, cell_seed(200, i)).volume));
  }
  const KsResult ks = ks_two_sample(s_round, s_protr);
  CHECK(ks.p_value < 0.01);
  double mean_round = 0, mean_protr = 0;
  for (double v : s_round) mean_round += v;
  for (double v : s_protr) mean_protr += v;
  CHECK(mean_round / s_round.size() > mean_protr / s_protr.size());
}

TEST_CASE("archetype separation is reproducible across master seeds") {
  const Archetype round = archetype_by_name("round");
  const Archetype protr = archetype_by_name("protrusive");
  for (uint64_t master : {1000ull, 2000ull, 3000ull}) {
    std::vector<double> s_round, s_protr;
    for (int i = 0; i < 25; ++i) {
      s_round.push_back(cell_sphericity(
          generate_cell(round, 32, cell_seed(master, i)).volume));
      s_protr.push_back(cell_sphericity(
          generate_cell(protr, 32, cell_seed(master + 1, i)).volume));
    }
    CHECK(ks_two_sample(s_round, s_protr).p_value < 0.01);
  }
}

TEST_CASE("generate_dataset writes n files plus a matching manifest") {
  const std::string dir = "synth_test_out";
  std::filesystem::remove_all(dir);
  const auto entries =
      generate_dataset(archetype_by_name("control"), 5, 42, dir, 16);
  CHECK(entries.size() == 5);
  const auto loaded = load_manifest(dir);
  REQUIRE(loaded.size() == 5);
  for (size_t i = 0; i < 5; ++i) {
    CHECK(loaded[i].sample_id == entries[i].sample_id);
    CHECK(loaded[i].seed == entries[i].seed);
    CHECK(std::filesystem::exists(loaded[i].path));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("fixed master seed reproduces identical file bytes") {
  const std::string dir_a = "synth_bytes_a";
  const std::string dir_b = "synth_bytes_b";
  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
  generate_dataset(archetype_by_name("round"), 3, 9, dir_a, 16);
  generate_dataset(archetype_by_name("round"), 3, 9, dir_b, 16);
  for (int i = 0; i < 3; ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "round_%04d.mvol", i);
    std::ifstream fa(dir_a + "/" + name, std::ios::binary);
    std::ifstream fb(dir_b + "/" + name, std::ios::binary);
    const std::string a((std::istreambuf_iterator<char>(fa)),
                        std::istreambuf_iterator<char>());
    const std::string b((std::istreambuf_iterator<char>(fb)),
                        std::istreambuf_iterator<char>());
    CHECK(a == b);
    CHECK_FALSE(a.empty());
  }
  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
}

TEST_CASE("descriptor means across archetypes differ in the designed direction") {
  const Archetype round = archetype_by_name("round");
  const Archetype protr = archetype_by_name("protrusive");
  double protr_round = 0, protr_protr = 0, ecc_round = 0, ecc_protr = 0;
  const int n = 30;
  for (int i = 0; i < n; ++i) {
    auto cr = generate_cell(round, 32, cell_seed(500, i));
    auto cp = generate_cell(protr, 32, cell_seed(600, i));
    for (auto* pair : {&cr, &cp}) {
      const CellVolume& vol = pair->volume;
      const float iso = otsu_threshold(vol.channel(0), vol.voxels_per_channel());
      Mesh mesh = extract_mesh(vol.channel(0), vol.d, vol.h, vol.w, iso);
      BinaryMask mask = binarize(vol.channel(0), vol.d, vol.h, vol.w, iso);
      const auto desc = compute_descriptors(mask, mesh, false);
      if (pair == &cr) {
        protr_round += desc.protrusivity;
        ecc_round += desc.eccentricity;
      } else {
        protr_protr += desc.protrusivity;
        ecc_protr += desc.eccentricity;
      }
    }
  }
  CHECK(protr_protr / n > protr_round / n);
  CHECK(ecc_protr / n > ecc_round / n);
}

TEST_CASE("signal channel obeys the archetype rule with known ERK ratio") {
  // nuclear-high rule: 1 in nucleus, 0.25 elsewhere -> ratio 4
  const Archetype round = archetype_by_name("round");
  GeneratedCell cell = generate_cell(round, 32, 5, true);
  const double ratio =
      erk_ratio(cell.signal.channel(0), cell.nucleus_mask, 7);
  CHECK(ratio == doctest::Approx(4.0).epsilon(0.05));

  // cytoplasm-high rule: ring saturated, nucleus at baseline -> ratio ~ 0.25
  const Archetype protr = archetype_by_name("protrusive");
  GeneratedCell cell2 = generate_cell(protr, 32, 6, true);
  const double ratio2 =
      erk_ratio(cell2.signal.channel(0), cell2.nucleus_mask, 7);
  CHECK(ratio2 < 0.5);
  CHECK(ratio2 > 0.2);
}
