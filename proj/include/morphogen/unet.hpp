#pragma once

#include <memory>
#include <string>
#include <vector>

#include "morphogen/layers.hpp"

namespace morphogen {

template <class T>
struct UnetConfig {
  int64_t in_channels = 32;   // latent features (plus conditioning if any)
  int64_t out_channels = 32;  // one noise-prediction slab per channel group
  int64_t base_width = 32;
  std::vector<int64_t> dim_mults = {1, 2, 4, 8};
  uint64_t seed = 0;
};

// 3-D UNet over latent grids with a sinusoidal timestep embedding injected
// into every residual block. One depth-wise attention layer sits at the
// mult-2 level and one spatial attention layer at the mult-4 level.
template <class T>
class DualUnet {
 public:
  explicit DualUnet(UnetConfig<T> cfg)
      : cfg_(std::move(cfg)), rng_(Rng::stream(cfg_.seed, 0x03E7)) {
    const int64_t tdim = cfg_.base_width;
    time1_ = std::make_unique<Linear<T>>("unet.time1", tdim, tdim, rng_);
    time2_ = std::make_unique<Linear<T>>("unet.time2", tdim, tdim, rng_);
    conv_in_ = std::make_unique<Conv3dLayer<T>>(
        "unet.conv_in", cfg_.in_channels, cfg_.base_width, 3, 1, 1, rng_);

    int64_t prev = cfg_.base_width;
    for (size_t i = 0; i < cfg_.dim_mults.size(); ++i) {
      const int64_t width = cfg_.base_width * cfg_.dim_mults[i];
      const std::string tag = "unet.down" + std::to_string(i);
      down_blocks_.push_back(
          std::make_unique<TimeResBlock<T>>(tag, prev, width, tdim, rng_));
      if (cfg_.dim_mults[i] == 2)
        depth_attn_ = std::make_unique<AttentionBlock<T>>(
            tag + ".depth_attn", width, /*depth_wise=*/true, rng_);
      if (cfg_.dim_mults[i] == 4)
        spatial_attn_ = std::make_unique<AttentionBlock<T>>(
            tag + ".spatial_attn", width, /*depth_wise=*/false, rng_);
      if (i + 1 < cfg_.dim_mults.size())
        downsamples_.push_back(std::make_unique<Conv3dLayer<T>>(
            tag + ".down", width, width, 2, 2, 0, rng_));
      prev = width;
    }

    mid_ = std::make_unique<TimeResBlock<T>>("unet.mid", prev, prev, tdim,
                                             rng_);

    for (size_t i = cfg_.dim_mults.size(); i-- > 0;) {
      const int64_t width = cfg_.base_width * cfg_.dim_mults[i];
      const std::string tag = "unet.up" + std::to_string(i);
      // input: current features + skip of equal width
      up_blocks_.push_back(std::make_unique<TimeResBlock<T>>(
          tag, width * 2, width, tdim, rng_));
      if (i > 0) {
        const int64_t wider = cfg_.base_width * cfg_.dim_mults[i - 1];
        upsamples_.push_back(std::make_unique<ConvT3dLayer<T>>(
            tag + ".up", width, wider, 2, 2, 0, rng_));
      }
    }

    out_norm_ = std::make_unique<NormAct<T>>("unet.out_norm", cfg_.base_width);
    conv_out_ = std::make_unique<Conv3dLayer<T>>(
        "unet.conv_out", cfg_.base_width, cfg_.out_channels, 3, 1, 1, rng_);
  }

  const UnetConfig<T>& config() const { return cfg_; }

  // x: (B, in_channels, l, l, l); timesteps: one integer per batch row.
  Tensor<T> operator()(const Tensor<T>& x,
                       const std::vector<int64_t>& timesteps) const {
    if (x.rank() != 5 || x.extent(1) != cfg_.in_channels)
      fail(ErrorCode::ShapeMismatch,
           "unet: expected (B," + std::to_string(cfg_.in_channels) +
               ",l,l,l), got " + shape_str(x.shape()));
    if (static_cast<int64_t>(timesteps.size()) != x.extent(0))
      fail(ErrorCode::ShapeMismatch, "unet: one timestep per batch row");

    Tensor<T> temb =
        sinusoidal_embedding<T>(timesteps, cfg_.base_width);
    temb = (*time2_)(silu((*time1_)(temb)));

    Tensor<T> h = (*conv_in_)(x);
    std::vector<Tensor<T>> skips;
    size_t down_idx = 0;
    for (size_t i = 0; i < down_blocks_.size(); ++i) {
      h = (*down_blocks_[i])(h, temb);
      if (cfg_.dim_mults[i] == 2 && depth_attn_) h = (*depth_attn_)(h);
      if (cfg_.dim_mults[i] == 4 && spatial_attn_) h = (*spatial_attn_)(h);
      skips.push_back(h);
      if (i + 1 < down_blocks_.size()) h = (*downsamples_[down_idx++])(h);
    }

    h = (*mid_)(h, temb);

    size_t up_idx = 0;
    for (size_t j = 0; j < up_blocks_.size(); ++j) {
      const size_t level = down_blocks_.size() - 1 - j;
      h = (*up_blocks_[j])(concat<T>({h, skips[level]}, 1), temb);
      if (level > 0) h = (*upsamples_[up_idx++])(h);
    }

    return (*conv_out_)((*out_norm_)(h));
  }

  std::vector<Parameter<T>*> params() {
    std::vector<Parameter<T>*> out;
    time1_->collect(out);
    time2_->collect(out);
    conv_in_->collect(out);
    for (auto& b : down_blocks_) b->collect(out);
    for (auto& d : downsamples_) d->collect(out);
    if (depth_attn_) depth_attn_->collect(out);
    if (spatial_attn_) spatial_attn_->collect(out);
    mid_->collect(out);
    for (auto& b : up_blocks_) b->collect(out);
    for (auto& u : upsamples_) u->collect(out);
    out_norm_->collect(out);
    conv_out_->collect(out);
    return out;
  }

 private:
  UnetConfig<T> cfg_;
  Rng rng_;
  std::unique_ptr<Linear<T>> time1_, time2_;
  std::unique_ptr<Conv3dLayer<T>> conv_in_, conv_out_;
  std::vector<std::unique_ptr<TimeResBlock<T>>> down_blocks_, up_blocks_;
  std::vector<std::unique_ptr<Conv3dLayer<T>>> downsamples_;
  std::vector<std::unique_ptr<ConvT3dLayer<T>>> upsamples_;
  std::unique_ptr<AttentionBlock<T>> depth_attn_, spatial_attn_;
  std::unique_ptr<TimeResBlock<T>> mid_;
  std::unique_ptr<NormAct<T>> out_norm_;
};

// Exponential moving average of a parameter set; the sampling-time weights.
template <class T>
struct EmaShadow {
  std::vector<Parameter<T>> shadow;

  void init(const std::vector<Parameter<T>*>& params) {
    shadow.clear();
    for (const Parameter<T>* p : params) {
      Parameter<T> s("ema." + p->name,
                     Tensor<T>::from(p->tensor.shape(), p->tensor.value()));
      s.tensor.set_requires_grad(false);
      shadow.push_back(std::move(s));
    }
  }

  void update(const std::vector<Parameter<T>*>& params, T decay) {
    for (size_t i = 0; i < shadow.size(); ++i) {
      auto& s = shadow[i].tensor.value();
      const auto& p = params[i]->tensor.value();
      for (size_t j = 0; j < s.size(); ++j)
        s[j] = decay * s[j] + (T(1) - decay) * p[j];
    }
  }

  void apply_to(const std::vector<Parameter<T>*>& params) const {
    for (size_t i = 0; i < shadow.size(); ++i)
      params[i]->tensor.value() = shadow[i].tensor.value();
  }

  std::vector<Parameter<T>*> params() {
    std::vector<Parameter<T>*> out;
    for (auto& s : shadow) out.push_back(&s);
    return out;
  }
};

}  // namespace morphogen
