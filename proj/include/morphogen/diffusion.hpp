#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "morphogen/geometry.hpp"
#include "morphogen/unet.hpp"
#include "morphogen/vqgan.hpp"

namespace morphogen {

template <class T>
struct NoiseSchedule {
  int64_t steps = 0;  // T
  std::vector<T> beta;       // beta[t-1] for t in 1..T
  std::vector<T> alpha;      // 1 - beta
  std::vector<T> alpha_bar;  // cumulative product

  T beta_at(int64_t t) const { return beta[t - 1]; }
  T alpha_at(int64_t t) const { return alpha[t - 1]; }
  T alpha_bar_at(int64_t t) const { return alpha_bar[t - 1]; }

  void check_step(int64_t t, const char* op) const {
    if (t < 1 || t > steps)
      fail(ErrorCode::StepOutOfRange,
           std::string(op) + ": step " + std::to_string(t) +
               " outside [1, " + std::to_string(steps) + "]");
  }
};

// Linear beta interpolation; alpha_bar by cumulative product.
template <class T>
NoiseSchedule<T> build_schedule(int64_t steps, T beta_start, T beta_end) {
  if (steps < 2 || beta_start <= T(0) || beta_end >= T(1) ||
      beta_start > beta_end)
    fail(ErrorCode::InvalidArgument,
         "build_schedule: need T >= 2 and 0 < beta_start <= beta_end < 1");
  NoiseSchedule<T> s;
  s.steps = steps;
  s.beta.resize(steps);
  s.alpha.resize(steps);
  s.alpha_bar.resize(steps);
  T prod = T(1);
  for (int64_t t = 0; t < steps; ++t) {
    s.beta[t] = beta_start + (beta_end - beta_start) *
                                 static_cast<T>(t) /
                                 static_cast<T>(steps - 1);
    s.alpha[t] = T(1) - s.beta[t];
    prod *= s.alpha[t];
    s.alpha_bar[t] = prod;
  }
  return s;
}

// Closed-form forward marginal: z_t = sqrt(ab_t) z0 + sqrt(1 - ab_t) noise.
template <class T>
Tensor<T> q_sample(const Tensor<T>& z0, int64_t t, const Tensor<T>& noise,
                   const NoiseSchedule<T>& schedule) {
  schedule.check_step(t, "q_sample");
  detail::check_same_shape(z0, noise, "q_sample");
  const T ab = schedule.alpha_bar_at(t);
  return add(scale(z0, std::sqrt(ab)), scale(noise, std::sqrt(T(1) - ab)));
}

// One reverse step from the model's noise prediction: posterior mean with
// fixed variance beta_t; no noise is added at the terminal step t = 1.
template <class T>
Tensor<T> posterior_step(const Tensor<T>& z_t, int64_t t,
                         const Tensor<T>& eps_hat,
                         const NoiseSchedule<T>& schedule,
                         const Tensor<T>& noise) {
  schedule.check_step(t, "posterior_step");
  detail::check_same_shape(z_t, eps_hat, "posterior_step");
  const T beta = schedule.beta_at(t);
  const T alpha = schedule.alpha_at(t);
  const T ab = schedule.alpha_bar_at(t);
  const T eps_coef = beta / std::sqrt(T(1) - ab);
  Tensor<T> mu = scale(sub(z_t, scale(eps_hat, eps_coef)),
                       T(1) / std::sqrt(alpha));
  if (t == 1) return mu;
  detail::check_same_shape(z_t, noise, "posterior_step noise");
  return add(mu, scale(noise, std::sqrt(beta)));
}

template <class T>
Tensor<T> gaussian_like(const Shape& shape, Rng& rng) {
  Tensor<T> t(shape);
  for (auto& v : t.value()) v = static_cast<T>(rng.normal());
  return t;
}

template <class T>
struct DdpmConfig {
  int64_t timesteps = 1000;  // desk scale 100
  T beta_start = T(1e-4);
  T beta_end = T(0.02);
  T lr = T(1e-4);
  T beta1 = T(0.9);
  T beta2 = T(0.99);
  int64_t batch = 2;
  int64_t steps = 30000;  // training steps; desk scale set by caller
  T ema_decay = T(0.995);
  int64_t base_width = 32;
  std::vector<int64_t> dim_mults = {1, 2, 4, 8};
  int64_t latent_channels = 32;  // diffused features (channels * n_z)
  int64_t cond_channels = 0;     // conditioning features, concatenated
  int64_t latent_extent = 8;
  uint64_t seed = 0;
};

// Latent diffusion model: noise schedule + dual-channel UNet + EMA shadow.
// One model per perturbation setting; conditioning, when present, is a
// fixed latent concatenated onto the UNet input at every step.
template <class T>
class Ddpm {
 public:
  explicit Ddpm(DdpmConfig<T> cfg)
      : cfg_(cfg),
        schedule_(build_schedule<T>(cfg.timesteps, cfg.beta_start,
                                    cfg.beta_end)),
        latent_scale_("latent_scale", Tensor<T>::scalar(T(1))) {
    UnetConfig<T> ucfg;
    ucfg.in_channels = cfg_.latent_channels + cfg_.cond_channels;
    ucfg.out_channels = cfg_.latent_channels;
    ucfg.base_width = cfg_.base_width;
    ucfg.dim_mults = cfg_.dim_mults;
    ucfg.seed = cfg_.seed;
    unet_ = std::make_unique<DualUnet<T>>(ucfg);
    ema_.init(unet_->params());
    latent_scale_.tensor.set_requires_grad(false);
  }

  const DdpmConfig<T>& config() const { return cfg_; }
  const NoiseSchedule<T>& schedule() const { return schedule_; }
  T latent_scale() const { return latent_scale_.tensor.value()[0]; }
  void set_latent_scale(T s) { latent_scale_.tensor.value()[0] = s; }
  EmaShadow<T>& ema() { return ema_; }
  DualUnet<T>& unet() { return *unet_; }

  // eps prediction; conditioning is concatenated on the feature axis.
  Tensor<T> predict_noise(const Tensor<T>& z_t,
                          const std::vector<int64_t>& timesteps,
                          const Tensor<T>& cond) const {
    Tensor<T> input = z_t;
    if (cfg_.cond_channels > 0) {
      if (!cond.defined())
        fail(ErrorCode::MissingConditioning,
             "ddpm: model requires a conditioning latent");
      input = concat<T>({z_t, cond}, 1);
    }
    return (*unet_)(input, timesteps);
  }

  // Reverse chain from depth `from_t` down to 0. Per-step noise comes from
  // streams keyed (seed, step), so chains starting at different depths
  // agree bit-exactly on their shared suffix.
  Tensor<T> reverse_chain(Tensor<T> z, int64_t from_t, const Tensor<T>& cond,
                          uint64_t seed) const {
    schedule_.check_step(from_t, "reverse_chain");
    for (int64_t t = from_t; t >= 1; --t) {
      Tensor<T> eps_hat = predict_noise(z, {t}, cond);
      Tensor<T> noise;
      if (t > 1) {
        Rng step_rng = Rng::stream(seed, kReverseStream + t);
        noise = gaussian_like<T>(z.shape(), step_rng);
      }
      z = posterior_step(z, t, eps_hat, schedule_, noise);
    }
    return z;
  }

  std::vector<Parameter<T>*> trainable_params() { return unet_->params(); }

  std::vector<Parameter<T>*> checkpoint_params() {
    std::vector<Parameter<T>*> out = unet_->params();
    for (Parameter<T>* p : ema_.params()) out.push_back(p);
    out.push_back(&latent_scale_);
    return out;
  }

  void save(const std::string& path) {
    save_weights<T>(path, checkpoint_params());
  }
  void load(const std::string& path, bool apply_ema) {
    auto params = checkpoint_params();
    load_weights<T>(path, params);
    if (apply_ema) ema_.apply_to(unet_->params());
  }

  static constexpr uint64_t kReverseStream = 0x9E3779B900000000ull;

 private:
  DdpmConfig<T> cfg_;
  NoiseSchedule<T> schedule_;
  std::unique_ptr<DualUnet<T>> unet_;
  EmaShadow<T> ema_;
  Parameter<T> latent_scale_;
};

inline int64_t uniform_timestep(Rng& rng, int64_t timesteps) {
  return 1 + static_cast<int64_t>(rng.below(timesteps));
}

// ---- stage-2 training ----

struct DdpmLogRow {
  int64_t step;
  double l1_loss;
};

// Latents must come from a frozen stage-1 encoder. A global scale factor
// is fitted so the diffused data has unit variance; it is stored in the
// checkpoint and undone before decoding.
template <class T>
std::vector<DdpmLogRow> train_ddpm(
    Ddpm<T>& model, const std::vector<Tensor<T>>& latents,
    const std::vector<Tensor<T>>& conds,  // empty when unconditional
    const std::string& out_dir, const std::string& tag = "ddpm") {
  const DdpmConfig<T>& cfg = model.config();
  if (latents.empty()) fail(ErrorCode::EmptyDataset, "train_ddpm: no latents");
  if (!conds.empty() && conds.size() != latents.size())
    fail(ErrorCode::MissingConditioning,
         "train_ddpm: conditioning count does not match latents");
  if (conds.empty() && cfg.cond_channels > 0)
    fail(ErrorCode::MissingConditioning,
         "train_ddpm: model expects conditioning latents");

  double sq_sum = 0.0;
  int64_t count = 0;
  for (const auto& z : latents) {
    for (T v : z.value()) sq_sum += static_cast<double>(v) * v;
    count += z.numel();
  }
  const double std_dev = std::sqrt(sq_sum / count);
  model.set_latent_scale(static_cast<T>(std_dev > 1e-8 ? 1.0 / std_dev : 1.0));
  const T ls = model.latent_scale();

  std::filesystem::create_directories(out_dir);
  std::ofstream log(out_dir + "/" + tag + "_train_log.csv");
  log << "step,l1\n";
  log.precision(10);

  Rng batch_rng = Rng::stream(cfg.seed, 0xBA7C);
  Rng t_rng = Rng::stream(cfg.seed, 0x717E);
  Rng noise_rng = Rng::stream(cfg.seed, 0x9015E);
  AdamConfig<T> adam{cfg.lr, cfg.beta1, cfg.beta2, T(1e-8)};
  auto params = model.trainable_params();

  std::vector<DdpmLogRow> history;
  history.reserve(cfg.steps);
  for (int64_t step = 0; step < cfg.steps; ++step) {
    try {
      // assemble batch of scaled latents with per-row timesteps
      std::vector<Tensor<T>> zs, cs;
      std::vector<int64_t> ts;
      for (int64_t b = 0; b < cfg.batch; ++b) {
        const size_t pick = batch_rng.below(latents.size());
        zs.push_back(scale(latents[pick], ls));
        if (!conds.empty()) cs.push_back(conds[pick]);
        ts.push_back(uniform_timestep(t_rng, cfg.timesteps));
      }
      Tensor<T> z0 = concat<T>(zs, 0);
      Tensor<T> cond =
          conds.empty() ? Tensor<T>() : concat<T>(cs, 0);

      // per-row noising depths need per-row alpha_bar: rows handled
      // separately then stacked
      std::vector<Tensor<T>> noised, noises;
      for (int64_t b = 0; b < cfg.batch; ++b) {
        Tensor<T> eps = gaussian_like<T>(zs[b].shape(), noise_rng);
        noised.push_back(q_sample(zs[b], ts[b], eps, model.schedule()));
        noises.push_back(eps);
      }
      Tensor<T> z_t = concat<T>(noised, 0);
      Tensor<T> eps_true = concat<T>(noises, 0);

      double loss_value;
      {
        Tape<T> tape;
        Tensor<T> eps_hat = model.predict_noise(z_t, ts, cond);
        Tensor<T> loss = l1(eps_true, eps_hat);
        loss_value = loss.item();
        if (!std::isfinite(loss_value))
          fail(ErrorCode::NanLoss, "ddpm loss non-finite");
        tape.backward(loss);
      }
      adam_step(params, adam);
      model.ema().update(params, cfg.ema_decay);

      history.push_back({step, loss_value});
      log << step << "," << loss_value << "\n";
    } catch (const Error& e) {
      if (e.code() == ErrorCode::NanLoss ||
          e.code() == ErrorCode::NonFiniteInput)
        fail(ErrorCode::NanLoss, "train_ddpm aborted at step " +
                                     std::to_string(step) + ": " + e.what());
      throw;
    }
  }

  model.save(out_dir + "/" + tag + ".mfwt");
  {
    auto params_all = model.checkpoint_params();
    save_opt_state<T>(out_dir + "/" + tag + ".mfos", params_all);
  }
  return history;
}

// Joint latents (1, channels * n_z, l, l, l) of the frozen encoder for
// every dataset volume.
template <class T>
std::vector<Tensor<T>> encode_dataset(Vqgan<T>& vqgan,
                                      const std::vector<CellVolume>& volumes) {
  std::vector<Tensor<T>> latents;
  latents.reserve(volumes.size());
  for (const auto& vol : volumes) {
    auto per_channel = vqgan.encode(volume_to_batch<T>(vol));
    latents.push_back(per_channel.size() == 1 ? per_channel[0]
                                              : concat(per_channel, 1));
  }
  return latents;
}

// ---- sampling and bridging ----

namespace detail {

// Split a joint latent grid into per-channel grids, unscale, quantise and
// decode through the stage-1 model.
template <class T>
CellVolume decode_latent(Vqgan<T>& vqgan, const Tensor<T>& joint_scaled,
                         T latent_scale) {
  Tensor<T> joint = scale(joint_scaled, T(1) / latent_scale);
  const int64_t n_z = vqgan.config().n_z;
  std::vector<Tensor<T>> channels;
  for (int64_t c = 0; c < vqgan.config().channels; ++c)
    channels.push_back(slice(joint, 1, c * n_z, n_z));
  Tensor<T> decoded = vqgan.decode(channels, /*quantize_first=*/true);
  return batch_to_volume(decoded);
}

}  // namespace detail

// Independent per-sample RNG streams derived from the master seed; each
// chain starts from a standard normal latent and runs all T reverse steps.
template <class T>
std::vector<CellVolume> sample_unconditional(Ddpm<T>& model, Vqgan<T>& vqgan,
                                             int64_t n, uint64_t master_seed) {
  if (model.config().latent_channels !=
          vqgan.config().channels * vqgan.config().n_z ||
      model.config().latent_extent != vqgan.config().latent_extent())
    fail(ErrorCode::CheckpointMismatch,
         "sample: diffusion and stage-1 latent geometries disagree");
  std::vector<CellVolume> out;
  for (int64_t i = 0; i < n; ++i) {
    const uint64_t chain_seed = Rng::stream(master_seed, i).next_u64();
    Rng init_rng = Rng::stream(chain_seed, 0x1217);
    Tensor<T> z = gaussian_like<T>(
        {1, model.config().latent_channels, model.config().latent_extent,
         model.config().latent_extent, model.config().latent_extent},
        init_rng);
    z = model.reverse_chain(z, model.config().timesteps, Tensor<T>(),
                            chain_seed);
    out.push_back(detail::decode_latent(vqgan, z, model.latent_scale()));
  }
  return out;
}

// Encode with the frozen stage-1 encoder, corrupt to depth t_bridge with
// Gaussian noise under the source schedule, then denoise t_bridge steps
// under the target model. At t_bridge = T the source is fully destroyed
// and the chain start equals the unconditional draw for the same seed.
template <class T>
void check_latent_geometry(const Ddpm<T>& model, const Vqgan<T>& vqgan,
                           const char* op) {
  if (model.config().latent_channels !=
          vqgan.config().channels * vqgan.config().n_z ||
      model.config().latent_extent != vqgan.config().latent_extent())
    fail(ErrorCode::GeometryMismatch,
         std::string(op) + ": diffusion latent geometry (" +
             std::to_string(model.config().latent_channels) + " x " +
             std::to_string(model.config().latent_extent) +
             "^3) does not match the stage-1 encoder");
}

template <class T>
CellVolume bridge_conditional(const CellVolume& source, Vqgan<T>& vqgan,
                              const NoiseSchedule<T>& source_schedule,
                              Ddpm<T>& target, int64_t t_bridge,
                              uint64_t seed) {
  source_schedule.check_step(t_bridge, "bridge_conditional");
  check_latent_geometry(target, vqgan, "bridge_conditional");
  if (source_schedule.steps != target.schedule().steps)
    fail(ErrorCode::GeometryMismatch,
         "bridge: source and target schedules have different lengths");
  auto per_channel = vqgan.encode(volume_to_batch<T>(source));
  Tensor<T> z0 = per_channel.size() == 1 ? per_channel[0]
                                         : concat(per_channel, 1);
  z0 = scale(z0, target.latent_scale());

  Rng forward_rng = Rng::stream(seed, 0xF02D);
  Tensor<T> eps = gaussian_like<T>(z0.shape(), forward_rng);
  Tensor<T> z_t;
  if (t_bridge == source_schedule.steps) {
    Rng init_rng = Rng::stream(seed, 0x1217);
    z_t = gaussian_like<T>(z0.shape(), init_rng);  // full-noise limit
  } else {
    z_t = q_sample(z0, t_bridge, eps, source_schedule);
  }
  Tensor<T> z = target.reverse_chain(z_t, t_bridge, Tensor<T>(), seed);
  return detail::decode_latent(vqgan, z, target.latent_scale());
}

struct TrajectoryEntry {
  int64_t timestep;
  CellVolume volume;
  DescriptorVector descriptors[2];  // cytoplasm, nucleus
  bool descriptors_valid[2] = {false, false};
};

template <class T>
std::vector<TrajectoryEntry> traverse_trajectory(
    const CellVolume& source, Vqgan<T>& vqgan,
    const NoiseSchedule<T>& source_schedule, Ddpm<T>& target,
    int64_t t_bridge, int64_t stride, uint64_t seed) {
  source_schedule.check_step(t_bridge, "traverse_trajectory");
  check_latent_geometry(target, vqgan, "traverse_trajectory");
  if (stride < 1 || t_bridge % stride != 0)
    fail(ErrorCode::StrideInvalid,
         "traverse: stride must divide t_bridge");

  auto per_channel = vqgan.encode(volume_to_batch<T>(source));
  Tensor<T> z0 = per_channel.size() == 1 ? per_channel[0]
                                         : concat(per_channel, 1);
  z0 = scale(z0, target.latent_scale());
  Rng forward_rng = Rng::stream(seed, 0xF02D);
  Tensor<T> eps = gaussian_like<T>(z0.shape(), forward_rng);  // shared draw

  std::vector<TrajectoryEntry> entries;
  for (int64_t t = t_bridge; t >= 0; t -= stride) {
    Tensor<T> z;
    if (t == 0) {
      z = z0;
    } else {
      Tensor<T> z_t;
      if (t == source_schedule.steps) {
        Rng init_rng = Rng::stream(seed, 0x1217);
        z_t = gaussian_like<T>(z0.shape(), init_rng);
      } else {
        z_t = q_sample(z0, t, eps, source_schedule);
      }
      z = target.reverse_chain(z_t, t, Tensor<T>(), seed);
    }
    TrajectoryEntry entry;
    entry.timestep = t;
    entry.volume = detail::decode_latent(vqgan, z, target.latent_scale());
    for (int64_t c = 0; c < entry.volume.channels && c < 2; ++c) {
      try {
        const float* chan = entry.volume.channel(c);
        const float iso =
            otsu_threshold(chan, entry.volume.voxels_per_channel());
        Mesh mesh = extract_mesh(chan, entry.volume.d, entry.volume.h,
                                 entry.volume.w, iso);
        BinaryMask mask = binarize(chan, entry.volume.d, entry.volume.h,
                                   entry.volume.w, iso);
        entry.descriptors[c] = compute_descriptors(mask, mesh, false);
        entry.descriptors_valid[c] = true;
      } catch (const Error&) {
        entry.descriptors_valid[c] = false;
      }
    }
    entries.push_back(std::move(entry));
  }
  return entries;
}

// Reverse diffusion over the signal-channel latent with the morphology
// latent fixed as conditioning; decoded to one channel through the signal
// stage-1 model.
template <class T>
CellVolume synthesize_signal_channel(const CellVolume& morphology,
                                     Vqgan<T>& morpho_vqgan,
                                     Vqgan<T>& signal_vqgan,
                                     Ddpm<T>& signal_model, uint64_t seed) {
  if (signal_model.config().cond_channels !=
      morpho_vqgan.config().channels * morpho_vqgan.config().n_z)
    fail(ErrorCode::MissingConditioning,
         "synthesize_signal_channel: model conditioning width does not match "
         "the morphology encoder");
  auto per_channel = morpho_vqgan.encode(volume_to_batch<T>(morphology));
  Tensor<T> cond = per_channel.size() == 1 ? per_channel[0]
                                           : concat(per_channel, 1);
  Rng init_rng = Rng::stream(seed, 0x1217);
  Tensor<T> z = gaussian_like<T>(
      {1, signal_model.config().latent_channels,
       signal_model.config().latent_extent, signal_model.config().latent_extent,
       signal_model.config().latent_extent},
      init_rng);
  z = signal_model.reverse_chain(z, signal_model.config().timesteps, cond,
                                 seed);
  return detail::decode_latent(signal_vqgan, z, signal_model.latent_scale());
}

}  // namespace morphogen
