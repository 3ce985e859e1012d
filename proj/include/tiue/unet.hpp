// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tiue/params.hpp"

namespace tiue {

struct UNetConfig {
  int image_size = 24;
  int in_channels = 3;
  int out_channels = 3;
  int base_channels = 32;
  std::vector<int> channel_mults{1, 2, 4};
  int resblocks = 2;
  int time_embed_dim = 128;
  int cond_dim = 16;
  int groups = 8;

  int levels() const { return static_cast<int>(channel_mults.size()); }
  /// Sinusoid width fed to the time MLP.
  int sinusoid_dim() const { return base_channels; }
  /// Encoder blocks that each append one skip feature (resblocks + downsamplers).
  int encoder_stage_count() const { return levels() * resblocks + (levels() - 1); }
  void validate() const;

  bool operator==(const UNetConfig&) const = default;
};

/// Frozen encoder output at the key step: one skip per encoder stage plus the
/// input convolution, and the mid-block output. Never mutated after encode().
template <class T>
struct EncoderCache {
  std::vector<Var<T>> skips;
  Var<T> mid;
  std::vector<std::int64_t> key_step;
  Tensor<T> cond;
};

template <class T>
struct DecodeResult {
  Var<T> eps;
  /// Final decoder hidden state before the output norm/conv.
  Var<T> hidden;
};

/// Epsilon-prediction UNet. Stateless: parameters come from a ParamBinding.
///
/// Parameter namespace:
///   time.mlp0.{weight,bias}  time.mlp1.{weight,bias}  cond.proj.{weight,bias}
///   enc.conv_in.{weight,bias}
///   enc.down<l>.res<r>.*     mid.res<0|1>.*     dec.up<l>.res<r>.*
///   dec.up<l>.upconv.{weight,bias}   dec.norm_out.{gamma,beta}   dec.conv_out.{weight,bias}
/// where a resblock owns norm1.{gamma,beta} conv1.{weight,bias} emb.{weight,bias}
/// norm2.{gamma,beta} conv2.{weight,bias} and, when channels change, skip.{weight,bias}.
template <class T>
class UNet {
 public:
  explicit UNet(UNetConfig config);

  const UNetConfig& config() const noexcept { return config_; }

  /// Randomly initialized parameters; deterministic in `seed`.
  ParamStore<T> init_params(std::uint64_t seed) const;
  /// Parameter names accepting low-rank adapters: linear and 1x1 conv weights.
  std::vector<std::string> lora_targets(const ParamStore<T>& params) const;

  /// Sinusoidal features of t (before the MLP): (len(t), sinusoid_dim).
  Tensor<T> sinusoid(std::span<const std::int64_t> t) const;
  /// MLP(sinusoid(t)) + proj(cond): (B, time_embed_dim).
  Var<T> embedding(const ParamBinding<T>& p, std::span<const std::int64_t> t, const Var<T>& cond) const;

  EncoderCache<T> encode(const ParamBinding<T>& p, const Var<T>& z, std::span<const std::int64_t> t_enc, const Tensor<T>& cond) const;
  DecodeResult<T> decode_features(const ParamBinding<T>& p, const EncoderCache<T>& cache, std::span<const std::int64_t> t_dec) const;
  Var<T> decode(const ParamBinding<T>& p, const EncoderCache<T>& cache, std::span<const std::int64_t> t_dec) const {
    return decode_features(p, cache, t_dec).eps;
  }
  /// decode(encode(z, t), t): the standard single-time pass.
  Var<T> forward(const ParamBinding<T>& p, const Var<T>& z, std::span<const std::int64_t> t, const Tensor<T>& cond) const;

  /// Convenience: every batch item at the same index.
  static std::vector<std::int64_t> same_t(std::int64_t t, std::int64_t batch) { return std::vector<std::int64_t>(static_cast<std::size_t>(batch), t); }

 private:
  Var<T> resblock(const ParamBinding<T>& p, const std::string& prefix, const Var<T>& x, const Var<T>& emb_act) const;
  void check_input(const Var<T>& z, std::span<const std::int64_t> t, const Tensor<T>& cond) const;

  UNetConfig config_;
};

extern template class UNet<float>;
extern template class UNet<double>;

}  // namespace tiue
