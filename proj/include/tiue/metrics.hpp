// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tiue/unet.hpp"

namespace tiue {

enum class Provenance { Real, Generated };
enum class EmbeddingKind { FlatPixels, TeacherEncoder };

std::string to_string(EmbeddingKind k);

/// n x d row-major embedding matrix.
struct FeatureSet {
  std::int64_t n = 0;
  std::int64_t d = 0;
  std::vector<double> rows;
  Provenance provenance = Provenance::Real;
  EmbeddingKind kind = EmbeddingKind::FlatPixels;

  FeatureSet() = default;
  FeatureSet(std::int64_t n, std::int64_t d, std::vector<double> rows, Provenance p = Provenance::Real,
             EmbeddingKind k = EmbeddingKind::FlatPixels);

  const double* row(std::int64_t i) const { return rows.data() + i * d; }
};

/// Squared Frechet distance between Gaussian fits of the two sets.
double frechet_proxy(const FeatureSet& real, const FeatureSet& fake);

struct PrecisionRecall {
  double precision;
  double recall;
};

struct DensityCoverage {
  double density;
  double coverage;
};

/// k-th nearest-neighbor radius of every row within its own set (self excluded).
std::vector<double> knn_radii(const FeatureSet& set, int k);

PrecisionRecall precision_recall(const FeatureSet& real, const FeatureSet& fake, int k);
DensityCoverage density_coverage(const FeatureSet& real, const FeatureSet& fake, int k);

struct NoiseStats {
  double mean = 0.0;
  double var = 0.0;
  double excess_kurtosis = 0.0;
  double kl = 0.0;
  bool degenerate = false;
  std::int64_t count = 0;
};

/// Elementwise moments and the moment-matched KL to N(0, 1) over the whole tensor.
NoiseStats normality_stats(std::span<const float> values);
NoiseStats normality_stats(std::span<const double> values);

/// Per-row moments, KL per row, averaged over rows: the same reduction kl_loss uses.
double mean_row_kl(std::span<const double> values, std::int64_t rows);

struct MetricsReport {
  double frechet = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double density = 0.0;
  double coverage = 0.0;
  bool has_noise = false;
  NoiseStats noise;
  int k = 3;
  std::int64_t n_real = 0;
  std::int64_t n_fake = 0;
  EmbeddingKind embedding = EmbeddingKind::FlatPixels;

  std::string to_json() const;
};

double f1_score(double p, double r);

MetricsReport evaluate(const FeatureSet& real, const FeatureSet& fake, int k);

/// Images (n, C, H, W) flattened to rows.
FeatureSet embed_pixels(const Tensor<float>& images, Provenance p);

/// Teacher encoder mid output at t = 0 with the null condition, averaged over space.
FeatureSet embed_teacher(const UNet<float>& net, const ParamStore<float>& params, const Tensor<float>& images, Provenance p,
                         std::int64_t chunk = 64);

}  // namespace tiue
