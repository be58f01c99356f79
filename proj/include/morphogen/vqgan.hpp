#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "morphogen/checkpoint.hpp"
#include "morphogen/codebook.hpp"
#include "morphogen/layers.hpp"
#include "morphogen/volume.hpp"

namespace morphogen {

template <class T>
struct VqganConfig {
  int64_t cube = 64;            // desk scale 32
  int64_t channels = 2;         // 1 for signal-channel autoencoders
  int64_t n_z = 16;
  int64_t codebook_size = 1024;
  int64_t base_width = 16;
  T lr = T(3e-4);
  T beta1 = T(0.9);
  T beta2 = T(0.99);
  int64_t batch = 2;
  int64_t steps = 100000;       // desk scale 2000
  T commitment_weight = T(0.25);
  T disc_weight = T(0.1);
  double disc_warmup_frac = 0.25;  // adversarial term enabled after this
  bool use_ema_codebook = false;
  T codebook_ema_decay = T(0.99);
  int64_t dead_entry_steps = 1000;
  bool paper_literal_hinge = false;
  uint64_t seed = 0;

  static constexpr int64_t downsample = 4;
  int64_t latent_extent() const { return cube / downsample; }
  int64_t latent_channels() const { return channels * n_z; }

  void validate() const {
    if (cube % downsample != 0)
      fail(ErrorCode::Config, "vqgan: cube must be divisible by " +
                                  std::to_string(downsample));
    if (channels < 1 || channels > 2)
      fail(ErrorCode::Config, "vqgan: channels must be 1 or 2");
  }
};

// Shared-weight per-channel encoder: two stride-2 downsampling stages and
// two residual blocks, projecting to n_z features per latent position.
// Both heavy stages run at reduced resolution (the first conv is also the
// first downsample).
template <class T>
struct VqEncoder {
  Conv3dLayer<T> down1, down2;
  NormAct<T> na1, na_out;
  ResBlock3d<T> res1, res2;
  Conv3dLayer<T> conv_out;

  VqEncoder(const std::string& name, int64_t width, int64_t n_z, Rng& rng)
      : down1(name + ".down1", 1, width, 4, 2, 1, rng),
        down2(name + ".down2", width, width, 4, 2, 1, rng),
        na1(name + ".na1", width),
        na_out(name + ".na_out", width),
        res1(name + ".res1", width, rng),
        res2(name + ".res2", width, rng),
        conv_out(name + ".conv_out", width, n_z, 3, 1, 1, rng) {}

  Tensor<T> operator()(const Tensor<T>& x) const {
    Tensor<T> h = down1(x);
    h = down2(na1(h));
    h = res1(h);
    h = res2(h);
    return conv_out(na_out(h));
  }
  void collect(std::vector<Parameter<T>*>& out) {
    down1.collect(out);
    down2.collect(out);
    na1.collect(out);
    na_out.collect(out);
    res1.collect(out);
    res2.collect(out);
    conv_out.collect(out);
  }
};

// Joint decoder over the concatenated per-channel latents; mirrored
// transpose-conv upsampling with a bounded (tanh) output. The full-
// resolution tail runs at half width.
template <class T>
struct VqDecoder {
  Conv3dLayer<T> conv_in;
  ResBlock3d<T> res1, res2;
  NormAct<T> na_up1, na_up2, na_out;
  ConvT3dLayer<T> up1, up2;
  Conv3dLayer<T> conv_out;
  int64_t half_width;

  VqDecoder(const std::string& name, int64_t latent_channels, int64_t width,
            int64_t out_channels, Rng& rng)
      : conv_in(name + ".conv_in", latent_channels, width, 3, 1, 1, rng),
        res1(name + ".res1", width, rng),
        res2(name + ".res2", width, rng),
        na_up1(name + ".na_up1", width),
        na_up2(name + ".na_up2", width),
        na_out(name + ".na_out", std::max<int64_t>(width / 2, 4)),
        up1(name + ".up1", width, width, 4, 2, 1, rng),
        up2(name + ".up2", width, std::max<int64_t>(width / 2, 4), 4, 2, 1,
            rng),
        conv_out(name + ".conv_out", std::max<int64_t>(width / 2, 4),
                 out_channels, 3, 1, 1, rng),
        half_width(std::max<int64_t>(width / 2, 4)) {}

  Tensor<T> operator()(const Tensor<T>& z) const {
    Tensor<T> h = conv_in(z);
    h = res1(h);
    h = res2(h);
    h = up1(na_up1(h));
    h = up2(na_up2(h));
    return tanh_op(conv_out(na_out(h)));
  }
  void collect(std::vector<Parameter<T>*>& out) {
    conv_in.collect(out);
    res1.collect(out);
    res2.collect(out);
    na_up1.collect(out);
    na_up2.collect(out);
    na_out.collect(out);
    up1.collect(out);
    up2.collect(out);
    conv_out.collect(out);
  }
};

// Three stride-2 stages to patch logits.
template <class T>
struct PatchDiscriminator {
  Conv3dLayer<T> conv1, conv2, conv3, head;
  NormAct<T> na2, na3;

  PatchDiscriminator(const std::string& name, int64_t in_channels,
                     int64_t width, Rng& rng)
      : conv1(name + ".conv1", in_channels, width, 2, 2, 0, rng),
        conv2(name + ".conv2", width, width * 2, 2, 2, 0, rng),
        conv3(name + ".conv3", width * 2, width * 4, 2, 2, 0, rng),
        head(name + ".head", width * 4, 1, 3, 1, 1, rng),
        na2(name + ".na2", width * 2),
        na3(name + ".na3", width * 4) {}

  Tensor<T> operator()(const Tensor<T>& x) const {
    Tensor<T> h = silu(conv1(x));
    h = na2(conv2(h));
    h = na3(conv3(h));
    return head(h);
  }
  void collect(std::vector<Parameter<T>*>& out) {
    conv1.collect(out);
    conv2.collect(out);
    conv3.collect(out);
    head.collect(out);
    na2.collect(out);
    na3.collect(out);
  }
};

template <class T>
struct VqganLosses {
  Tensor<T> l_rec, l_comm, l_code, l_disc, l_gen, total_g, total_d;
};

template <class T>
class Vqgan {
 public:
  explicit Vqgan(VqganConfig<T> cfg)
      : cfg_(cfg), init_rng_(Rng::stream(cfg.seed, 0xE0C0)) {
    cfg_.validate();
    encoder_ = std::make_unique<VqEncoder<T>>("enc", cfg_.base_width, cfg_.n_z,
                                              init_rng_);
    decoder_ = std::make_unique<VqDecoder<T>>(
        "dec", cfg_.latent_channels(), cfg_.base_width, cfg_.channels,
        init_rng_);
    disc_ = std::make_unique<PatchDiscriminator<T>>("disc", cfg_.channels,
                                                    cfg_.base_width, init_rng_);
    const T init_std = T(1) / std::sqrt(static_cast<T>(cfg_.n_z));
    books_.reserve(cfg_.channels);
    const char* book_names[2] = {"codebook.cytoplasm", "codebook.nucleus"};
    for (int64_t c = 0; c < cfg_.channels; ++c)
      books_.push_back(std::make_unique<Codebook<T>>(
          book_names[c], cfg_.codebook_size, cfg_.n_z, init_std, init_rng_));
  }

  const VqganConfig<T>& config() const { return cfg_; }
  Codebook<T>& codebook(int64_t channel) { return *books_[channel]; }

  // Checks the preprocessing contract: cube extents and [-1, 1] range.
  void check_preprocessed(const Tensor<T>& batch) const {
    if (batch.rank() != 5 || batch.extent(1) != cfg_.channels ||
        batch.extent(2) != cfg_.cube || batch.extent(3) != cfg_.cube ||
        batch.extent(4) != cfg_.cube)
      fail(ErrorCode::UnpreprocessedInput,
           "vqgan: expected (B," + std::to_string(cfg_.channels) + "," +
               std::to_string(cfg_.cube) + "^3) input, got " +
               shape_str(batch.shape()));
    for (T v : batch.value())
      if (v < T(-1.001) || v > T(1.001))
        fail(ErrorCode::UnpreprocessedInput,
             "vqgan: input outside [-1, 1]; run preprocess first");
  }

  // Per-channel unquantised latents, each (B, n_z, l, l, l); the shared
  // encoder sees one channel at a time.
  std::vector<Tensor<T>> encode(const Tensor<T>& batch) const {
    check_preprocessed(batch);
    std::vector<Tensor<T>> latents;
    for (int64_t c = 0; c < cfg_.channels; ++c)
      latents.push_back((*encoder_)(slice(batch, 1, c, 1)));
    return latents;
  }

  struct QuantizedLatents {
    std::vector<QuantizeResult<T>> per_channel;
    Tensor<T> joint;  // straight-through grids concatenated on features
  };

  QuantizedLatents quantize_latents(const std::vector<Tensor<T>>& latents) {
    QuantizedLatents q;
    std::vector<Tensor<T>> grids;
    for (size_t c = 0; c < latents.size(); ++c) {
      const Shape grid_shape = latents[c].shape();
      Tensor<T> rows = grid_to_rows(latents[c]);
      QuantizeResult<T> res = books_[c]->quantize(rows);
      grids.push_back(rows_to_grid(res.quantized, grid_shape));
      q.per_channel.push_back(std::move(res));
    }
    q.joint = grids.size() == 1 ? grids[0] : concat(grids, 1);
    return q;
  }

  // Latent extents must match the config; quantisation is optional so the
  // diffusion stage can decode externally quantised latents.
  Tensor<T> decode(const std::vector<Tensor<T>>& latents, bool quantize_first) {
    for (const auto& z : latents)
      if (z.rank() != 5 || z.extent(1) != cfg_.n_z ||
          z.extent(2) != cfg_.latent_extent() ||
          z.extent(3) != cfg_.latent_extent() ||
          z.extent(4) != cfg_.latent_extent())
        fail(ErrorCode::GeometryMismatch,
             "vqgan decode: latent " + shape_str(z.shape()) +
                 " does not match configured geometry");
    if (static_cast<int64_t>(latents.size()) != cfg_.channels)
      fail(ErrorCode::GeometryMismatch, "vqgan decode: channel count mismatch");
    Tensor<T> joint;
    if (quantize_first) {
      joint = quantize_latents(latents).joint;
    } else {
      joint = latents.size() == 1 ? latents[0]
                                  : concat(std::vector<Tensor<T>>(latents), 1);
    }
    return (*decoder_)(joint);
  }

  // Decoder over an already-assembled joint latent grid.
  Tensor<T> decode_joint(const Tensor<T>& joint) { return (*decoder_)(joint); }

  Tensor<T> discriminate(const Tensor<T>& volumes) const {
    return (*disc_)(volumes);
  }

  // Mean-pooled (or max-pooled) pre-quantisation latents, channels
  // concatenated: the embedding used across the evaluation suite.
  std::vector<double> embed(const Tensor<T>& single_volume,
                            bool max_pool = false) const {
    const std::vector<Tensor<T>> latents = encode(single_volume);
    std::vector<double> features;
    for (const auto& z : latents) {
      const int64_t spatial = z.numel() / z.extent(1);
      for (int64_t f = 0; f < z.extent(1); ++f) {
        const T* base = z.value().data() + f * spatial;
        double acc = max_pool ? -1e300 : 0.0;
        for (int64_t i = 0; i < spatial; ++i)
          acc = max_pool ? std::max(acc, static_cast<double>(base[i]))
                         : acc + base[i];
        features.push_back(max_pool ? acc : acc / spatial);
      }
    }
    return features;
  }

  VqganLosses<T> losses(const Tensor<T>& x, const Tensor<T>& x_hat,
                        const std::vector<Tensor<T>>& enc_latents,
                        const QuantizedLatents& q, bool adversarial_on) {
    detail::check_same_shape(x, x_hat, "vqgan losses");
    VqganLosses<T> out;

    Tensor<T> rec_sum;
    for (int64_t c = 0; c < cfg_.channels; ++c) {
      Tensor<T> term = mse(slice(x, 1, c, 1), slice(x_hat, 1, c, 1));
      rec_sum = rec_sum.defined() ? add(rec_sum, term) : term;
    }
    out.l_rec = scale(rec_sum, T(0.5));

    std::vector<std::pair<Tensor<T>, Tensor<T>>> pairs;
    for (size_t c = 0; c < enc_latents.size(); ++c)
      pairs.emplace_back(grid_to_rows(enc_latents[c]),
                         q.per_channel[c].gathered);
    VqLossTerms<T> vq = vq_losses(pairs, cfg_.commitment_weight);
    out.l_comm = vq.commitment;
    out.l_code = vq.codebook;

    Tensor<T> d_fake = discriminate(x_hat);
    out.l_gen = scale(mean(d_fake), T(-1));

    Tensor<T> d_real = discriminate(x);
    Tensor<T> d_fake_detached = discriminate(stop_gradient(x_hat));
    const T fake_slope = cfg_.paper_literal_hinge ? T(-1) : T(1);
    out.l_disc = scale(
        add(mean(hinge_relu(d_real, T(1), T(-1))),
            mean(hinge_relu(d_fake_detached, T(1), fake_slope))),
        T(0.5));

    Tensor<T> total_g = add(out.l_rec, out.l_comm);
    if (!cfg_.use_ema_codebook) total_g = add(total_g, out.l_code);
    if (adversarial_on)
      total_g = add(total_g, scale(out.l_gen, cfg_.disc_weight));
    out.total_g = total_g;
    out.total_d = out.l_disc;
    return out;
  }

  std::vector<Parameter<T>*> generator_params() {
    std::vector<Parameter<T>*> out;
    encoder_->collect(out);
    decoder_->collect(out);
    if (!cfg_.use_ema_codebook)
      for (auto& book : books_) out.push_back(&book->entries());
    return out;
  }

  std::vector<Parameter<T>*> discriminator_params() {
    std::vector<Parameter<T>*> out;
    disc_->collect(out);
    return out;
  }

  std::vector<Parameter<T>*> all_params() {
    std::vector<Parameter<T>*> out;
    encoder_->collect(out);
    decoder_->collect(out);
    disc_->collect(out);
    for (auto& book : books_) out.push_back(&book->entries());
    return out;
  }

  void save(const std::string& weights_path) {
    save_weights<T>(weights_path, all_params());
  }
  void save_opt(const std::string& opt_path) {
    auto params = all_params();
    save_opt_state<T>(opt_path, params);
  }
  void load(const std::string& weights_path) {
    auto params = all_params();
    load_weights<T>(weights_path, params);
  }

 private:
  VqganConfig<T> cfg_;
  Rng init_rng_;
  std::unique_ptr<VqEncoder<T>> encoder_;
  std::unique_ptr<VqDecoder<T>> decoder_;
  std::unique_ptr<PatchDiscriminator<T>> disc_;
  std::vector<std::unique_ptr<Codebook<T>>> books_;
};

// ---- stage-1 training ----

template <class T>
struct TrainLogRow {
  int64_t step;
  double l_rec, l_comm, l_disc, l_gen;
};

template <class T>
Tensor<T> volume_to_batch(const CellVolume& vol) {
  Tensor<T> batch({1, vol.channels, vol.d, vol.h, vol.w});
  for (size_t i = 0; i < vol.data.size(); ++i)
    batch.value()[i] = static_cast<T>(vol.data[i]);
  return batch;
}

template <class T>
CellVolume batch_to_volume(const Tensor<T>& batch, int64_t index = 0) {
  CellVolume vol(batch.extent(1), batch.extent(2), batch.extent(3),
                 batch.extent(4));
  const int64_t per = vol.channels * vol.voxels_per_channel();
  for (int64_t i = 0; i < per; ++i)
    vol.data[i] = static_cast<float>(batch.value()[index * per + i]);
  return vol;
}

// Builds a (B, channels, cube^3) batch tensor from preprocessed volumes.
template <class T>
Tensor<T> batch_from_volumes(const std::vector<const CellVolume*>& vols) {
  const CellVolume& first = *vols[0];
  Tensor<T> batch({static_cast<int64_t>(vols.size()), first.channels, first.d,
                   first.h, first.w});
  auto& bv = batch.value();
  const int64_t per = first.channels * first.voxels_per_channel();
  for (size_t i = 0; i < vols.size(); ++i) {
    if (vols[i]->d != first.d || vols[i]->channels != first.channels)
      fail(ErrorCode::ShapeMismatch, "batch: volume extents differ");
    for (int64_t j = 0; j < per; ++j)
      bv[i * per + j] = static_cast<T>(vols[i]->data[j]);
  }
  return batch;
}

template <class T>
std::vector<TrainLogRow<T>> train_vqgan(Vqgan<T>& model,
                                        const std::vector<CellVolume>& dataset,
                                        const std::string& out_dir,
                                        const std::string& tag = "vqgan") {
  const VqganConfig<T>& cfg = model.config();
  if (dataset.empty())
    fail(ErrorCode::EmptyDataset, "train_vqgan: empty dataset");

  std::filesystem::create_directories(out_dir);
  std::ofstream log(out_dir + "/" + tag + "_train_log.csv");
  log << "step,l_rec,l_comm,l_disc,l_gen\n";
  log.precision(10);

  Rng batch_rng = Rng::stream(cfg.seed, 0xBA7C);
  Rng dead_rng = Rng::stream(cfg.seed, 0xDEAD);
  AdamConfig<T> adam{cfg.lr, cfg.beta1, cfg.beta2, T(1e-8)};

  auto gen_params = model.generator_params();
  auto disc_params = model.discriminator_params();
  std::vector<TrainLogRow<T>> history;
  history.reserve(cfg.steps);

  const int64_t warmup_steps =
      static_cast<int64_t>(cfg.disc_warmup_frac * cfg.steps);

  for (int64_t step = 0; step < cfg.steps; ++step) {
    std::vector<const CellVolume*> picks;
    for (int64_t b = 0; b < cfg.batch; ++b)
      picks.push_back(&dataset[batch_rng.below(dataset.size())]);

    try {
      Tensor<T> x = batch_from_volumes<T>(picks);
      const bool adversarial_on = step >= warmup_steps;

      VqganLosses<T> losses;
      typename Vqgan<T>::QuantizedLatents q;
      std::vector<Tensor<T>> enc_rows;  // per-channel encoder rows snapshot
      Tensor<T> x_hat_const;
      {
        Tape<T> tape;
        std::vector<Tensor<T>> latents = model.encode(x);
        q = model.quantize_latents(latents);
        Tensor<T> x_hat = model.decode_joint(q.joint);
        losses = model.losses(x, x_hat, latents, q, adversarial_on);
        if (!std::isfinite(static_cast<double>(losses.total_g.item())))
          fail(ErrorCode::NanLoss, "generator loss non-finite");
        x_hat_const = stop_gradient(x_hat);
        for (const auto& z : latents)
          enc_rows.push_back(stop_gradient(grid_to_rows(z)));
        tape.backward(losses.total_g);
      }
      adam_step(gen_params, adam);
      // the adversarial term leaks gradients into the frozen critic
      for (Parameter<T>* p : disc_params) p->tensor.zero_grad();

      {
        Tape<T> tape;
        Tensor<T> d_real = model.discriminate(x);
        Tensor<T> d_fake = model.discriminate(x_hat_const);
        const T fake_slope = cfg.paper_literal_hinge ? T(-1) : T(1);
        Tensor<T> l_disc = scale(
            add(mean(hinge_relu(d_real, T(1), T(-1))),
                mean(hinge_relu(d_fake, T(1), fake_slope))),
            T(0.5));
        if (!std::isfinite(static_cast<double>(l_disc.item())))
          fail(ErrorCode::NanLoss, "discriminator loss non-finite");
        tape.backward(l_disc);
      }
      adam_step(disc_params, adam);
      for (Parameter<T>* p : gen_params) p->tensor.zero_grad();

      // codebook maintenance: EMA updates, usage tracking, dead entries
      for (int64_t c = 0; c < cfg.channels; ++c) {
        auto& book = model.codebook(c);
        if (cfg.use_ema_codebook)
          book.ema_update(enc_rows[c], q.per_channel[c].indices,
                          cfg.codebook_ema_decay);
        book.note_step(q.per_channel[c].indices);
        book.refresh_dead(enc_rows[c], dead_rng, cfg.dead_entry_steps);
      }

      TrainLogRow<T> row{step, losses.l_rec.item(), losses.l_comm.item(),
                         losses.l_disc.item(), losses.l_gen.item()};
      history.push_back(row);
      log << step << "," << row.l_rec << "," << row.l_comm << ","
          << row.l_disc << "," << row.l_gen << "\n";
    } catch (const Error& e) {
      if (e.code() == ErrorCode::NanLoss ||
          e.code() == ErrorCode::NonFiniteInput)
        fail(ErrorCode::NanLoss, "train_vqgan aborted at step " +
                                     std::to_string(step) + ": " + e.what());
      throw;
    }
  }

  model.save(out_dir + "/" + tag + ".mfwt");
  {
    auto params = model.all_params();
    save_opt_state<T>(out_dir + "/" + tag + ".mfos", params);
  }
  return history;
}

}  // namespace morphogen
