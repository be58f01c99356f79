#pragma once

#include <memory>
#include <string>
#include <vector>

#include "morphogen/adam.hpp"
#include "morphogen/conv.hpp"
#include "morphogen/nn.hpp"

namespace morphogen {

template <class T>
struct Conv3dLayer {
  Parameter<T> w, b;
  int64_t stride, pad;

  Conv3dLayer(const std::string& name, int64_t cin, int64_t cout, int64_t k,
              int64_t stride_, int64_t pad_, Rng& rng)
      : w(name + ".w",
          kaiming_init<T>({cout, cin, k, k, k}, cin * k * k * k, rng)),
        b(name + ".b", Tensor<T>::zeros({cout})),
        stride(stride_),
        pad(pad_) {}

  Tensor<T> operator()(const Tensor<T>& x) const {
    return conv3d(x, w.tensor, b.tensor, stride, pad);
  }
  void collect(std::vector<Parameter<T>*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

template <class T>
struct ConvT3dLayer {
  Parameter<T> w, b;
  int64_t stride, pad;

  ConvT3dLayer(const std::string& name, int64_t cin, int64_t cout, int64_t k,
               int64_t stride_, int64_t pad_, Rng& rng)
      : w(name + ".w",
          kaiming_init<T>({cin, cout, k, k, k}, cin * k * k * k, rng)),
        b(name + ".b", Tensor<T>::zeros({cout})),
        stride(stride_),
        pad(pad_) {}

  Tensor<T> operator()(const Tensor<T>& x) const {
    return conv_transpose3d(x, w.tensor, b.tensor, stride, pad);
  }
  void collect(std::vector<Parameter<T>*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

// Instance norm -> learnable channel affine -> SiLU.
template <class T>
struct NormAct {
  Parameter<T> gamma, beta;

  NormAct(const std::string& name, int64_t channels)
      : gamma(name + ".gamma", Tensor<T>::full({channels}, T(1))),
        beta(name + ".beta", Tensor<T>::zeros({channels})) {}

  Tensor<T> operator()(const Tensor<T>& x) const {
    return silu(channel_affine(instance_norm(x), gamma.tensor, beta.tensor));
  }
  void collect(std::vector<Parameter<T>*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

// Pre-activation residual block, channels unchanged.
template <class T>
struct ResBlock3d {
  NormAct<T> na1, na2;
  Conv3dLayer<T> conv1, conv2;

  ResBlock3d(const std::string& name, int64_t channels, Rng& rng)
      : na1(name + ".na1", channels),
        na2(name + ".na2", channels),
        conv1(name + ".conv1", channels, channels, 3, 1, 1, rng),
        conv2(name + ".conv2", channels, channels, 3, 1, 1, rng) {}

  Tensor<T> operator()(const Tensor<T>& x) const {
    return add(x, conv2(na2(conv1(na1(x)))));
  }
  void collect(std::vector<Parameter<T>*>& out) {
    na1.collect(out);
    na2.collect(out);
    conv1.collect(out);
    conv2.collect(out);
  }
};

template <class T>
struct Linear {
  Parameter<T> w, b;

  Linear(const std::string& name, int64_t in, int64_t out_dim, Rng& rng)
      : w(name + ".w", kaiming_init<T>({in, out_dim}, in, rng)),
        b(name + ".b", Tensor<T>::zeros({out_dim})) {}

  Tensor<T> operator()(const Tensor<T>& x) const {
    return add_row_bias(matmul(x, w.tensor), b.tensor);
  }
  void collect(std::vector<Parameter<T>*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

// Residual block with a per-channel timestep bias injected between the two
// convolutions; changes channel count via a 1x1 skip when needed.
template <class T>
struct TimeResBlock {
  NormAct<T> na1, na2;
  Conv3dLayer<T> conv1, conv2;
  Linear<T> time_proj;
  std::unique_ptr<Conv3dLayer<T>> skip;

  TimeResBlock(const std::string& name, int64_t cin, int64_t cout,
               int64_t time_dim, Rng& rng)
      : na1(name + ".na1", cin),
        na2(name + ".na2", cout),
        conv1(name + ".conv1", cin, cout, 3, 1, 1, rng),
        conv2(name + ".conv2", cout, cout, 3, 1, 1, rng),
        time_proj(name + ".time", time_dim, cout, rng) {
    if (cin != cout)
      skip = std::make_unique<Conv3dLayer<T>>(name + ".skip", cin, cout, 1, 1,
                                              0, rng);
  }

  Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& temb) const {
    Tensor<T> h = conv1(na1(x));
    h = add_bc_bias(h, time_proj(temb));
    h = conv2(na2(h));
    return add(skip ? (*skip)(x) : x, h);
  }
  void collect(std::vector<Parameter<T>*>& out) {
    na1.collect(out);
    na2.collect(out);
    conv1.collect(out);
    conv2.collect(out);
    time_proj.collect(out);
    if (skip) skip->collect(out);
  }
};

// Single-head self-attention over flattened spatial positions, or over the
// depth axis independently per (h, w) column.
template <class T>
struct AttentionBlock {
  Linear<T> to_q, to_k, to_v, proj;
  bool depth_wise;
  int64_t channels;

  AttentionBlock(const std::string& name, int64_t channels_, bool depth_wise_,
                 Rng& rng)
      : to_q(name + ".q", channels_, channels_, rng),
        to_k(name + ".k", channels_, channels_, rng),
        to_v(name + ".v", channels_, channels_, rng),
        proj(name + ".proj", channels_, channels_, rng),
        depth_wise(depth_wise_),
        channels(channels_) {}

  Tensor<T> operator()(const Tensor<T>& x) const {
    const int64_t b = x.extent(0), c = x.extent(1), d = x.extent(2),
                  h = x.extent(3), w = x.extent(4);
    Tensor<T> y = instance_norm(x);
    Tensor<T> rows;
    int64_t batch, seq;
    if (depth_wise) {
      rows = permute(y, {0, 3, 4, 2, 1});  // (B, H, W, D, C)
      batch = b * h * w;
      seq = d;
    } else {
      rows = permute(y, {0, 2, 3, 4, 1});  // (B, D, H, W, C)
      batch = b;
      seq = d * h * w;
    }
    Tensor<T> flat = reshape(rows, {batch * seq, c});
    auto lift = [&](const Linear<T>& lin) {
      return reshape(lin(flat), {batch, seq, c});
    };
    Tensor<T> att = scaled_dot_attention(lift(to_q), lift(to_k), lift(to_v));
    Tensor<T> out_rows = proj(reshape(att, {batch * seq, c}));
    Tensor<T> grid;
    if (depth_wise) {
      grid = permute(reshape(out_rows, {b, h, w, d, c}), {0, 4, 3, 1, 2});
    } else {
      grid = permute(reshape(out_rows, {b, d, h, w, c}), {0, 4, 1, 2, 3});
    }
    return add(x, grid);
  }
  void collect(std::vector<Parameter<T>*>& out) {
    to_q.collect(out);
    to_k.collect(out);
    to_v.collect(out);
    proj.collect(out);
  }
};

// Latent grid (B, C, spatial...) to position-major rows (B*S, C) and back.
template <class T>
Tensor<T> grid_to_rows(const Tensor<T>& x) {
  const int64_t b = x.extent(0), c = x.extent(1);
  const int64_t s = x.numel() / (b * c);
  Tensor<T> moved = permute(x, {0, 2, 3, 4, 1});
  return reshape(moved, {b * s, c});
}

template <class T>
Tensor<T> rows_to_grid(const Tensor<T>& rows, const Shape& grid_shape) {
  const int64_t b = grid_shape[0], c = grid_shape[1];
  Shape interim = {b, grid_shape[2], grid_shape[3], grid_shape[4], c};
  Tensor<T> moved = reshape(rows, interim);
  return permute(moved, {0, 4, 1, 2, 3});
}

}  // namespace morphogen
