#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "morphogen/synth.hpp"
#include "morphogen/vqgan.hpp"

using namespace morphogen;

namespace {

VqganConfig<float> tiny_config(int64_t cube = 8) {
  VqganConfig<float> cfg;
  cfg.cube = cube;
  cfg.base_width = 8;
  cfg.n_z = 4;
  cfg.codebook_size = 16;
  cfg.seed = 7;
  return cfg;
}

Tensor<float> random_preprocessed(int64_t channels, int64_t cube,
                                  uint64_t seed) {
  Rng rng(seed);
  Tensor<float> x({1, channels, cube, cube, cube});
  for (auto& v : x.value()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return x;
}

}  // namespace

TEST_CASE("encode yields cube/4 latent grid with n_z features per channel") {
  Vqgan<float> model(tiny_config(8));
  Tensor<float> x = random_preprocessed(2, 8, 1);
  auto latents = model.encode(x);
  REQUIRE(latents.size() == 2);
  for (const auto& z : latents) CHECK(z.shape() == Shape{1, 4, 2, 2, 2});
}

TEST_CASE("channel independence: cytoplasm latents ignore the nucleus channel") {
  Vqgan<float> model(tiny_config(8));
  Tensor<float> a = random_preprocessed(2, 8, 2);
  Tensor<float> b = Tensor<float>::from(a.shape(), a.value());
  // perturb only channel 1
  const int64_t per_channel = 8 * 8 * 8;
  for (int64_t i = 0; i < per_channel; ++i)
    b.value()[per_channel + i] = -b.value()[per_channel + i] * 0.5f;
  auto za = model.encode(a);
  auto zb = model.encode(b);
  CHECK(za[0].value() == zb[0].value());
  CHECK(za[1].value() != zb[1].value());
}

TEST_CASE("unpreprocessed input is rejected on range and extent violations") {
  Vqgan<float> model(tiny_config(8));
  Tensor<float> wrong_extent = random_preprocessed(2, 16, 3);
  try {
    model.encode(wrong_extent);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnpreprocessedInput);
  }
  Tensor<float> out_of_range = random_preprocessed(2, 8, 4);
  out_of_range.value()[10] = 3.0f;
  try {
    model.encode(out_of_range);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnpreprocessedInput);
  }
}

TEST_CASE("decode(encode(x)) restores the input shape, bounded to [-1,1]") {
  Vqgan<float> model(tiny_config(8));
  Tensor<float> x = random_preprocessed(2, 8, 5);
  auto latents = model.encode(x);
  Tensor<float> x_hat = model.decode(latents, /*quantize_first=*/true);
  CHECK(x_hat.shape() == x.shape());
  for (float v : x_hat.value()) {
    CHECK(v >= -1.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("decoder has no channel firewall: nucleus latents affect cytoplasm") {
  Vqgan<float> model(tiny_config(8));
  Tensor<float> x = random_preprocessed(2, 8, 6);
  auto latents = model.encode(x);
  Tensor<float> base = model.decode(latents, false);
  auto perturbed = latents;
  perturbed[1] = scale(latents[1], 2.0f);
  Tensor<float> changed = model.decode(perturbed, false);
  // compare channel-0 output voxels
  const int64_t per_channel = 8 * 8 * 8;
  bool any_diff = false;
  for (int64_t i = 0; i < per_channel; ++i)
    any_diff = any_diff || base.value()[i] != changed.value()[i];
  CHECK(any_diff);
}

TEST_CASE("all-background volume gives finite, position-uniform interior latents") {
  Vqgan<float> model(tiny_config(64));
  Tensor<float> x = Tensor<float>::full({1, 2, 64, 64, 64}, -1.0f);
  auto latents = model.encode(x);
  // latent grid 16^3; the conv stack's receptive halo spans ~6 latent
  // positions, so positions 6..9 see no padding influence at all
  const auto& z = latents[0];
  const int64_t l = 16;
  for (float v : z.value()) CHECK(std::isfinite(v));
  for (int64_t f = 0; f < z.extent(1); ++f) {
    const float ref = z.value()[((f * l + 6) * l + 6) * l + 6];
    for (int64_t d = 6; d <= 9; ++d)
      for (int64_t h = 6; h <= 9; ++h)
        for (int64_t w = 6; w <= 9; ++w)
          CHECK(z.value()[((f * l + d) * l + h) * l + w] ==
                doctest::Approx(ref).epsilon(1e-5));
  }
}

TEST_CASE("losses: identical volumes give zero reconstruction loss") {
  Vqgan<float> model(tiny_config(8));
  Tensor<float> x = random_preprocessed(2, 8, 7);
  auto latents = model.encode(x);
  auto q = model.quantize_latents(latents);
  auto losses = model.losses(x, x, latents, q, true);
  CHECK(losses.l_rec.item() == 0.0f);
}

TEST_CASE("l_rec equals (m0 + m1) / 2 against an independent computation") {
  Vqgan<float> model(tiny_config(8));
  Tensor<float> x = random_preprocessed(2, 8, 8);
  Tensor<float> x_hat = random_preprocessed(2, 8, 9);
  auto latents = model.encode(x);
  auto q = model.quantize_latents(latents);
  auto losses = model.losses(x, x_hat, latents, q, true);

  const int64_t per_channel = 8 * 8 * 8;
  double m0 = 0, m1 = 0;
  for (int64_t i = 0; i < per_channel; ++i) {
    const double d0 = x.value()[i] - x_hat.value()[i];
    const double d1 = x.value()[per_channel + i] - x_hat.value()[per_channel + i];
    m0 += d0 * d0;
    m1 += d1 * d1;
  }
  m0 /= per_channel;
  m1 /= per_channel;
  CHECK(losses.l_rec.item() ==
        doctest::Approx((m0 + m1) / 2.0).epsilon(1e-5));
}

TEST_CASE("hinge form: a real sample scored 1 contributes zero loss") {
  Tensor<float> d_real = Tensor<float>::scalar(1.0f);
  CHECK(mean(hinge_relu(d_real, 1.0f, -1.0f)).item() == 0.0f);
}

TEST_CASE("train_vqgan rejects an empty dataset before any step") {
  Vqgan<float> model(tiny_config(8));
  std::vector<CellVolume> empty;
  try {
    train_vqgan(model, empty, "vq_empty_out");
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyDataset);
  }
  std::filesystem::remove_all("vq_empty_out");
}

TEST_CASE("short training run is deterministic and emits the log format") {
  auto make_dataset = [] {
    std::vector<CellVolume> data;
    for (int i = 0; i < 6; ++i) {
      GeneratedCell cell =
          generate_cell(archetype_by_name("control"), 16, 100 + i);
      data.push_back(preprocess(cell.volume, 8));
    }
    return data;
  };
  auto run = [&](const std::string& dir) {
    VqganConfig<float> cfg = tiny_config(8);
    cfg.steps = 8;
    cfg.disc_warmup_frac = 0.5;
    Vqgan<float> model(cfg);
    return train_vqgan(model, make_dataset(), dir);
  };
  std::filesystem::remove_all("vq_det_a");
  std::filesystem::remove_all("vq_det_b");
  auto ha = run("vq_det_a");
  auto hb = run("vq_det_b");
  REQUIRE(ha.size() == 8);
  for (size_t i = 0; i < ha.size(); ++i) {
    CHECK(ha[i].l_rec == hb[i].l_rec);
    CHECK(ha[i].l_comm == hb[i].l_comm);
    CHECK(ha[i].l_disc == hb[i].l_disc);
    CHECK(ha[i].l_gen == hb[i].l_gen);
    CHECK(std::isfinite(ha[i].l_rec));
  }
  std::ifstream log("vq_det_a/vqgan_train_log.csv");
  std::string header;
  std::getline(log, header);
  CHECK(header == "step,l_rec,l_comm,l_disc,l_gen");
  CHECK(std::filesystem::exists("vq_det_a/vqgan.mfwt"));
  CHECK(std::filesystem::exists("vq_det_a/vqgan.mfos"));
  std::filesystem::remove_all("vq_det_a");
  std::filesystem::remove_all("vq_det_b");
}

TEST_CASE("checkpoint round-trip restores encode outputs exactly") {
  VqganConfig<float> cfg = tiny_config(8);
  Vqgan<float> model(cfg);
  Tensor<float> x = random_preprocessed(2, 8, 10);
  const auto before = model.encode(x)[0].value();
  model.save("vq_ckpt.mfwt");

  cfg.seed = 999;  // different init
  Vqgan<float> other(cfg);
  const auto fresh = other.encode(x)[0].value();
  CHECK(fresh != before);
  other.load("vq_ckpt.mfwt");
  CHECK(other.encode(x)[0].value() == before);
  std::remove("vq_ckpt.mfwt");
}

TEST_CASE("embed has dimension channels * n_z and is deterministic") {
  Vqgan<float> model(tiny_config(8));
  GeneratedCell cell = generate_cell(archetype_by_name("round"), 16, 55);
  CellVolume prep = preprocess(cell.volume, 8);
  auto e1 = model.embed(volume_to_batch<float>(prep));
  auto e2 = model.embed(volume_to_batch<float>(prep));
  CHECK(e1.size() == 8);  // 2 channels x n_z 4
  CHECK(e1 == e2);
}
