// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tiue/metrics.hpp"
#include "tiue/sampler.hpp"

namespace tiue {

/// Cosine similarity of two equally sized buffers; 0 when either is all zeros.
double cosine_similarity(std::span<const float> a, std::span<const float> b);

struct SimilarityTrace {
  std::vector<std::int64_t> steps;  // sampling order
  std::vector<double> enc_sim;      // enc_sim[i]: steps[i] vs steps[i + 1]
  std::vector<double> dec_sim;
  std::int64_t probes = 0;
  std::uint64_t seed = 0;

  double mean_enc() const;
  double mean_dec() const;
  /// step_from,step_to,enc_sim,dec_sim
  std::string to_csv() const;
  /// Estimator, probe layers and seeds.
  std::string metadata_json() const;
};

struct TraceOptions {
  /// Test hook: feed the initial noise at every step instead of the running latent.
  bool hold_latent_fixed = false;
  Spacing spacing = Spacing::Trailing;
};

/// Full multi-step DDIM per probe (probe p uses class p mod 12 and noise index p), recording the
/// encoder mid output and the last decoder hidden state at each step.
SimilarityTrace feature_similarity_trace(const DiffusionModel<float>& model, std::int64_t steps, std::int64_t probes, std::uint64_t seed,
                                         const TraceOptions& opts = {});

struct QualityPoint {
  std::int64_t steps;
  double frechet;
};

using Embedder = std::function<FeatureSet(const Tensor<float>& images)>;

/// Frechet proxy of n_samples DDIM samples against `real` for each step count.
std::vector<QualityPoint> quality_vs_steps(const DiffusionModel<float>& model, const std::vector<std::int64_t>& steps_list,
                                           std::int64_t n_samples, const FeatureSet& real, std::uint64_t seed, const Embedder& embed);

std::string quality_csv(const std::vector<QualityPoint>& points);

}  // namespace tiue
