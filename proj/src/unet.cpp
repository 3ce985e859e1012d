// SPDX-License-Identifier: Apache-2.0
#include "tiue/unet.hpp"

#include <cmath>

#include "tiue/random.hpp"

namespace tiue {

namespace {

struct ResSpec {
  std::string prefix;
  int in;
  int out;
};

struct EncStep {
  bool down;  // false: resblock
  ResSpec res;
};

struct DecStep {
  bool up;  // false: resblock consuming one skip
  ResSpec res;
};

struct Layout {
  int base;
  std::vector<EncStep> enc;
  std::vector<int> skip_channels;
  std::vector<ResSpec> mid;
  std::vector<DecStep> dec;
  int final_channels;
};

Layout make_layout(const UNetConfig& c) {
  Layout lay;
  lay.base = c.base_channels;
  int ch = c.base_channels;
  lay.skip_channels.push_back(ch);
  for (int l = 0; l < c.levels(); ++l) {
    const int out = c.base_channels * c.channel_mults[static_cast<std::size_t>(l)];
    for (int r = 0; r < c.resblocks; ++r) {
      lay.enc.push_back({false, {"enc.down" + std::to_string(l) + ".res" + std::to_string(r), ch, out}});
      ch = out;
      lay.skip_channels.push_back(ch);
    }
    if (l + 1 < c.levels()) {
      lay.enc.push_back({true, {"", ch, ch}});
      lay.skip_channels.push_back(ch);
    }
  }
  lay.mid = {{"mid.res0", ch, ch}, {"mid.res1", ch, ch}};
  std::vector<int> pending = lay.skip_channels;
  for (int l = c.levels() - 1; l >= 0; --l) {
    const int out = c.base_channels * c.channel_mults[static_cast<std::size_t>(l)];
    for (int r = 0; r <= c.resblocks; ++r) {
      const int skip = pending.back();
      pending.pop_back();
      lay.dec.push_back({false, {"dec.up" + std::to_string(l) + ".res" + std::to_string(r), ch + skip, out}});
      ch = out;
    }
    if (l > 0) lay.dec.push_back({true, {"dec.up" + std::to_string(l) + ".upconv", ch, ch}});
  }
  lay.final_channels = ch;
  return lay;
}

template <class T>
Tensor<T> uniform_init(const Shape& shape, double bound, std::uint64_t seed, const std::string& name) {
  std::uint64_t stream = 1469598103934665603ULL;
  for (char c : name) stream = (stream ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
  CounterRng rng(seed, stream);
  Tensor<T> t(shape);
  for (auto& v : t.values()) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
  return t;
}

template <class T>
void add_conv(ParamStore<T>& ps, const std::string& prefix, int in, int out, int k, std::uint64_t seed) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * k * k));
  ps.add(prefix + ".weight", uniform_init<T>(Shape{out, in, k, k}, bound, seed, prefix + ".weight"));
  ps.add(prefix + ".bias", Tensor<T>(Shape{out}));
}

template <class T>
void add_linear(ParamStore<T>& ps, const std::string& prefix, int in, int out, std::uint64_t seed) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  ps.add(prefix + ".weight", uniform_init<T>(Shape{out, in}, bound, seed, prefix + ".weight"));
  ps.add(prefix + ".bias", Tensor<T>(Shape{out}));
}

template <class T>
void add_norm(ParamStore<T>& ps, const std::string& prefix, int ch) {
  ps.add(prefix + ".gamma", Tensor<T>(Shape{ch}, T(1)));
  ps.add(prefix + ".beta", Tensor<T>(Shape{ch}));
}

template <class T>
void add_resblock(ParamStore<T>& ps, const ResSpec& r, int temb, std::uint64_t seed) {
  add_norm(ps, r.prefix + ".norm1", r.in);
  add_conv(ps, r.prefix + ".conv1", r.in, r.out, 3, seed);
  add_linear(ps, r.prefix + ".emb", temb, 2 * r.out, seed);
  add_norm(ps, r.prefix + ".norm2", r.out);
  add_conv(ps, r.prefix + ".conv2", r.out, r.out, 3, seed);
  if (r.in != r.out) add_conv(ps, r.prefix + ".skip", r.in, r.out, 1, seed);
}

}  // namespace

void UNetConfig::validate() const {
  auto bad = [](const std::string& msg) { fail(ErrorCode::InvalidAttr, "UNetConfig: " + msg); };
  if (channel_mults.empty()) bad("channel_mults must not be empty");
  if (image_size <= 0 || in_channels <= 0 || out_channels <= 0 || base_channels <= 0 || resblocks <= 0 || time_embed_dim <= 0 ||
      cond_dim <= 0 || groups <= 0)
    bad("all sizes must be positive");
  if (image_size % (1 << (levels() - 1)) != 0) bad("image_size must be divisible by 2^(levels-1)");
  if (base_channels % 2 != 0) bad("base_channels must be even (sinusoid halves)");
  for (int m : channel_mults) {
    if (m <= 0) bad("channel multipliers must be positive");
    if ((base_channels * m) % groups != 0) bad("channel count not divisible by group count");
  }
}

template <class T>
UNet<T>::UNet(UNetConfig config) : config_(std::move(config)) {
  config_.validate();
}

template <class T>
ParamStore<T> UNet<T>::init_params(std::uint64_t seed) const {
  const auto& c = config_;
  const auto lay = make_layout(c);
  ParamStore<T> ps;
  add_linear(ps, "time.mlp0", c.sinusoid_dim(), c.time_embed_dim, seed);
  add_linear(ps, "time.mlp1", c.time_embed_dim, c.time_embed_dim, seed);
  add_linear(ps, "cond.proj", c.cond_dim, c.time_embed_dim, seed);
  add_conv(ps, "enc.conv_in", c.in_channels, c.base_channels, 3, seed);
  for (const auto& s : lay.enc)
    if (!s.down) add_resblock(ps, s.res, c.time_embed_dim, seed);
  for (const auto& r : lay.mid) add_resblock(ps, r, c.time_embed_dim, seed);
  for (const auto& s : lay.dec) {
    if (s.up)
      add_conv(ps, s.res.prefix, s.res.in, s.res.out, 3, seed);
    else
      add_resblock(ps, s.res, c.time_embed_dim, seed);
  }
  add_norm(ps, "dec.norm_out", lay.final_channels);
  add_conv(ps, "dec.conv_out", lay.final_channels, c.out_channels, 3, seed);
  return ps;
}

template <class T>
std::vector<std::string> UNet<T>::lora_targets(const ParamStore<T>& params) const {
  std::vector<std::string> out;
  for (const auto& e : params.entries()) {
    const auto& n = e.name;
    if (n.size() < 7 || n.compare(n.size() - 7, 7, ".weight") != 0) continue;
    const auto& s = e.value.shape();
    if (s.size() == 2 || (s.size() == 4 && s[2] == 1 && s[3] == 1)) out.push_back(n);
  }
  return out;
}

template <class T>
Tensor<T> UNet<T>::sinusoid(std::span<const std::int64_t> t) const {
  const int dim = config_.sinusoid_dim();
  const int half = dim / 2;
  Tensor<T> out(Shape{static_cast<std::int64_t>(t.size()), dim});
  for (std::size_t b = 0; b < t.size(); ++b) {
    if (t[b] < 0) fail(ErrorCode::InvalidTimestep, "time index must be >= 0");
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
      const double arg = static_cast<double>(t[b]) * freq;
      out[static_cast<std::int64_t>(b) * dim + i] = static_cast<T>(std::sin(arg));
      out[static_cast<std::int64_t>(b) * dim + half + i] = static_cast<T>(std::cos(arg));
    }
  }
  return out;
}

template <class T>
Var<T> UNet<T>::embedding(const ParamBinding<T>& p, std::span<const std::int64_t> t, const Var<T>& cond) const {
  auto s = Var<T>::constant(sinusoid(t));
  auto h = ops::linear(s, p("time.mlp0.weight"), p("time.mlp0.bias"));
  h = ops::linear(ops::silu(h), p("time.mlp1.weight"), p("time.mlp1.bias"));
  return ops::add(h, ops::linear(cond, p("cond.proj.weight"), p("cond.proj.bias")));
}

template <class T>
Var<T> UNet<T>::resblock(const ParamBinding<T>& p, const std::string& pre, const Var<T>& x, const Var<T>& emb_act) const {
  const int g = config_.groups;
  auto h = ops::group_norm(x, p(pre + ".norm1.gamma"), p(pre + ".norm1.beta"), g);
  h = ops::conv2d(ops::silu(h), p(pre + ".conv1.weight"), p(pre + ".conv1.bias"), 1);
  auto ss = ops::linear(emb_act, p(pre + ".emb.weight"), p(pre + ".emb.bias"));
  h = ops::group_norm(h, p(pre + ".norm2.gamma"), p(pre + ".norm2.beta"), g);
  h = ops::conv2d(ops::silu(ops::film(h, ss)), p(pre + ".conv2.weight"), p(pre + ".conv2.bias"), 1);
  const auto skip_name = pre + ".skip.weight";
  auto skip = p.store().contains(skip_name) ? ops::conv2d(x, p(skip_name), p(pre + ".skip.bias"), 0) : x;
  return ops::add(skip, h);
}

template <class T>
void UNet<T>::check_input(const Var<T>& z, std::span<const std::int64_t> t, const Tensor<T>& cond) const {
  const auto& c = config_;
  if (z.value().rank() != 4 || z.dim(1) != c.in_channels || z.dim(2) != c.image_size || z.dim(3) != c.image_size)
    fail(ErrorCode::ShapeMismatch, "UNet input " + shape_str(z.shape()) + " does not match config");
  const auto batch = z.dim(0);
  if (static_cast<std::int64_t>(t.size()) != batch) fail(ErrorCode::ShapeMismatch, "one time index per batch item required");
  if (cond.rank() != 2 || cond.dim(0) != batch || cond.dim(1) != c.cond_dim)
    fail(ErrorCode::ShapeMismatch, "condition " + shape_str(cond.shape()) + " must be (batch, cond_dim)");
}

template <class T>
EncoderCache<T> UNet<T>::encode(const ParamBinding<T>& p, const Var<T>& z, std::span<const std::int64_t> t_enc, const Tensor<T>& cond) const {
  check_input(z, t_enc, cond);
  const auto lay = make_layout(config_);
  EncoderCache<T> cache;
  cache.cond = cond;
  cache.key_step.assign(t_enc.begin(), t_enc.end());
  auto emb_act = ops::silu(embedding(p, t_enc, Var<T>::constant(cond)));
  auto h = ops::conv2d(z, p("enc.conv_in.weight"), p("enc.conv_in.bias"), 1);
  cache.skips.push_back(h);
  for (const auto& s : lay.enc) {
    h = s.down ? ops::avg_pool2(h) : resblock(p, s.res.prefix, h, emb_act);
    cache.skips.push_back(h);
  }
  for (const auto& r : lay.mid) h = resblock(p, r.prefix, h, emb_act);
  cache.mid = h;
  return cache;
}

template <class T>
DecodeResult<T> UNet<T>::decode_features(const ParamBinding<T>& p, const EncoderCache<T>& cache, std::span<const std::int64_t> t_dec) const {
  const auto lay = make_layout(config_);
  if (cache.skips.size() != lay.skip_channels.size() || !cache.mid.defined())
    fail(ErrorCode::CacheMismatch, "cache holds " + std::to_string(cache.skips.size()) + " skips, decoder expects " +
                                       std::to_string(lay.skip_channels.size()));
  const auto batch = cache.mid.dim(0);
  for (std::size_t i = 0; i < cache.skips.size(); ++i) {
    const auto& s = cache.skips[i];
    if (s.value().rank() != 4 || s.dim(0) != batch || s.dim(1) != lay.skip_channels[i])
      fail(ErrorCode::CacheMismatch, "skip " + std::to_string(i) + " has shape " + shape_str(s.shape()));
  }
  if (static_cast<std::int64_t>(t_dec.size()) != batch) fail(ErrorCode::ShapeMismatch, "one time index per batch item required");

  auto emb_act = ops::silu(embedding(p, t_dec, Var<T>::constant(cache.cond)));
  auto h = cache.mid;
  std::size_t next_skip = cache.skips.size();
  for (const auto& s : lay.dec) {
    if (s.up) {
      h = ops::conv2d(ops::upsample_nearest2(h), p(s.res.prefix + ".weight"), p(s.res.prefix + ".bias"), 1);
    } else {
      const auto& skip = cache.skips[--next_skip];
      if (skip.dim(2) != h.dim(2) || skip.dim(3) != h.dim(3))
        fail(ErrorCode::CacheMismatch, "skip resolution " + shape_str(skip.shape()) + " vs decoder " + shape_str(h.shape()));
      h = resblock(p, s.res.prefix, ops::concat_channels(h, skip), emb_act);
    }
  }
  DecodeResult<T> out;
  out.hidden = h;
  auto o = ops::silu(ops::group_norm(h, p("dec.norm_out.gamma"), p("dec.norm_out.beta"), config_.groups));
  out.eps = ops::conv2d(o, p("dec.conv_out.weight"), p("dec.conv_out.bias"), 1);
  return out;
}

template <class T>
Var<T> UNet<T>::forward(const ParamBinding<T>& p, const Var<T>& z, std::span<const std::int64_t> t, const Tensor<T>& cond) const {
  return decode(p, encode(p, z, t, cond), t);
}

template class UNet<float>;
template class UNet<double>;

}  // namespace tiue
