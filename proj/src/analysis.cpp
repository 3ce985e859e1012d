// SPDX-License-Identifier: Apache-2.0
#include "tiue/analysis.hpp"

#include <cmath>
#include <cstdio>
#include <json.hpp>

#include "tiue/data.hpp"

namespace tiue {

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size() || a.empty()) fail(ErrorCode::ShapeMismatch, "cosine similarity needs equal non-empty inputs");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Per-item cosine between two (B, ...) tensors, averaged over the batch.
double batch_cosine(const Tensor<float>& a, const Tensor<float>& b) {
  const auto batch = a.dim(0), per = a.numel() / batch;
  double s = 0.0;
  for (std::int64_t i = 0; i < batch; ++i)
    s += cosine_similarity(std::span<const float>(a.data() + i * per, static_cast<std::size_t>(per)),
                           std::span<const float>(b.data() + i * per, static_cast<std::size_t>(per)));
  return s / static_cast<double>(batch);
}

}  // namespace

double SimilarityTrace::mean_enc() const { return mean_of(enc_sim); }
double SimilarityTrace::mean_dec() const { return mean_of(dec_sim); }

std::string SimilarityTrace::to_csv() const {
  std::string out = "step_from,step_to,enc_sim,dec_sim\n";
  char buf[128];
  for (std::size_t i = 0; i < enc_sim.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%lld,%lld,%.9f,%.9f\n", static_cast<long long>(steps[i]), static_cast<long long>(steps[i + 1]), enc_sim[i],
                  dec_sim[i]);
    out += buf;
  }
  return out;
}

std::string SimilarityTrace::metadata_json() const {
  nlohmann::json j{{"estimator", "adjacent-step cosine similarity of flattened features, per probe, averaged over probes"},
                   {"encoder_layer", "mid.res1 output"},
                   {"decoder_layer", "last decoder block output before dec.norm_out"},
                   {"probes", probes},
                   {"seed", seed},
                   {"probe_noise_indices", "0.." + std::to_string(probes - 1)},
                   {"steps", steps},
                   {"mean_enc_sim", mean_enc()},
                   {"mean_dec_sim", mean_dec()}};
  return j.dump(2);
}

SimilarityTrace feature_similarity_trace(const DiffusionModel<float>& model, std::int64_t steps, std::int64_t probes, std::uint64_t seed,
                                         const TraceOptions& opts) {
  if (steps < 2 || steps > model.schedule.steps()) fail(ErrorCode::InvalidSteps, "trace needs 2 <= steps <= schedule length");
  if (probes < 1) fail(ErrorCode::InvalidAttr, "trace needs probes >= 1");
  const auto sel = select_timesteps(steps, model.schedule.steps(), opts.spacing);
  const auto cond = stack_conds<float>(cycled_conditions(probes));
  const ParamBinding<float> p(model.params);
  const auto z_init = initial_noise<float>(model.net.config(), probes, seed, 0);
  auto z = z_init;

  SimilarityTrace tr;
  tr.steps = sel.timesteps;
  tr.probes = probes;
  tr.seed = seed;
  Tensor<float> prev_enc, prev_dec;
  for (std::size_t j = 0; j < sel.timesteps.size(); ++j) {
    const auto t = sel.timesteps[j];
    const auto ts = UNet<float>::same_t(t, probes);
    const auto& input = opts.hold_latent_fixed ? z_init : z;
    const auto cache = model.net.encode(p, Var<float>::view(input), ts, cond);
    const auto dec = model.net.decode_features(p, cache, ts);
    const auto enc_feat = cache.mid.value();
    const auto dec_feat = dec.hidden.value();
    if (j > 0) {
      tr.enc_sim.push_back(batch_cosine(prev_enc, enc_feat));
      tr.dec_sim.push_back(batch_cosine(prev_dec, dec_feat));
    }
    prev_enc = enc_feat;
    prev_dec = dec_feat;
    const auto t_prev = j + 1 < sel.timesteps.size() ? sel.timesteps[j + 1] : sel.terminal;
    z = ddim_step(z, dec.eps.value(), t, t_prev, model.schedule);
  }
  return tr;
}

std::vector<QualityPoint> quality_vs_steps(const DiffusionModel<float>& model, const std::vector<std::int64_t>& steps_list,
                                           std::int64_t n_samples, const FeatureSet& real, std::uint64_t seed, const Embedder& embed) {
  if (n_samples < 1) fail(ErrorCode::InvalidAttr, "n_samples must be >= 1");
  for (auto s : steps_list)
    if (s < 1) fail(ErrorCode::InvalidSteps, "every step count must be >= 1");
  const auto conds = cycled_conditions(n_samples);
  std::vector<QualityPoint> out;
  for (auto s : steps_list) {
    SampleRequest<float> req;
    req.seed = seed;
    req.mode = SampleMode::Ddim;
    req.steps = s;
    const auto images = sample_many(model, req, conds);
    auto fake = embed(images);
    fake.provenance = Provenance::Generated;
    out.push_back({s, frechet_proxy(real, fake)});
  }
  return out;
}

std::string quality_csv(const std::vector<QualityPoint>& points) {
  std::string out = "steps,frechet\n";
  char buf[64];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%lld,%.9g\n", static_cast<long long>(p.steps), p.frechet);
    out += buf;
  }
  return out;
}

}  // namespace tiue
