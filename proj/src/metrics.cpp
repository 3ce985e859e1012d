// SPDX-License-Identifier: Apache-2.0
#include "tiue/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <json.hpp>

namespace tiue {

std::string to_string(EmbeddingKind k) { return k == EmbeddingKind::FlatPixels ? "flat_pixels" : "teacher_encoder"; }

FeatureSet::FeatureSet(std::int64_t n_, std::int64_t d_, std::vector<double> rows_, Provenance p, EmbeddingKind k)
    : n(n_), d(d_), rows(std::move(rows_)), provenance(p), kind(k) {
  if (n < 1 || d < 1) fail(ErrorCode::InvalidAttr, "feature set needs n >= 1 and d >= 1");
  if (static_cast<std::int64_t>(rows.size()) != n * d) fail(ErrorCode::ShapeMismatch, "feature buffer does not hold n * d values");
}

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void moments(const FeatureSet& f, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
  const Eigen::Map<const Mat> x(f.rows.data(), f.n, f.d);
  mu = x.colwise().mean().transpose();
  const Mat centered = x.rowwise() - mu.transpose();
  cov = (centered.transpose() * centered) / static_cast<double>(f.n - 1);
}

double sq_dist(const double* a, const double* b, std::int64_t d) {
  double s = 0.0;
  for (std::int64_t i = 0; i < d; ++i) {
    const double t = a[i] - b[i];
    s += t * t;
  }
  return s;
}

void check_pair(const FeatureSet& real, const FeatureSet& fake, int k) {
  if (real.d != fake.d) fail(ErrorCode::DimMismatch, "feature sets differ in dimension");
  if (k < 1 || k >= std::min(real.n, fake.n)) fail(ErrorCode::KTooLarge, "k must satisfy 1 <= k < min(n_real, n_fake)");
}

// Squared radii: comparisons stay on squared distances computed once, in one order.
std::vector<double> knn_sq_radii(const FeatureSet& set, int k) {
  if (k < 1 || k >= set.n) fail(ErrorCode::KTooLarge, "k must satisfy 1 <= k < n");
  std::vector<double> out(static_cast<std::size_t>(set.n));
  std::vector<double> dist(static_cast<std::size_t>(set.n - 1));
  for (std::int64_t i = 0; i < set.n; ++i) {
    std::size_t m = 0;
    for (std::int64_t j = 0; j < set.n; ++j)
      if (j != i) dist[m++] = sq_dist(set.row(i), set.row(j), set.d);
    std::nth_element(dist.begin(), dist.begin() + (k - 1), dist.end());
    out[static_cast<std::size_t>(i)] = dist[static_cast<std::size_t>(k - 1)];
  }
  return out;
}

// Count, for every query row, the reference balls containing it.
std::vector<std::int64_t> ball_hits(const FeatureSet& ref, const std::vector<double>& sq_radii, const FeatureSet& query) {
  std::vector<std::int64_t> hits(static_cast<std::size_t>(query.n), 0);
  for (std::int64_t j = 0; j < query.n; ++j)
    for (std::int64_t i = 0; i < ref.n; ++i)
      if (sq_dist(query.row(j), ref.row(i), ref.d) <= sq_radii[static_cast<std::size_t>(i)]) ++hits[static_cast<std::size_t>(j)];
  return hits;
}

template <class V>
NoiseStats stats_impl(std::span<const V> values) {
  NoiseStats s;
  s.count = static_cast<std::int64_t>(values.size());
  if (values.empty()) fail(ErrorCode::InvalidAttr, "normality_stats needs a non-empty tensor");
  double mean = 0.0;
  for (auto v : values) mean += static_cast<double>(v);
  mean /= static_cast<double>(values.size());
  double m2 = 0.0, m4 = 0.0;
  for (auto v : values) {
    const double c = static_cast<double>(v) - mean;
    m2 += c * c;
    m4 += c * c * c * c;
  }
  m2 /= static_cast<double>(values.size());
  m4 /= static_cast<double>(values.size());
  s.mean = mean;
  s.var = m2;
  s.degenerate = m2 < 1e-12;
  const double v = std::max(m2, 1e-12);
  s.excess_kurtosis = s.degenerate ? 0.0 : m4 / (m2 * m2) - 3.0;
  s.kl = 0.5 * (mean * mean + v - 1.0 - std::log(v));
  return s;
}

}  // namespace

double frechet_proxy(const FeatureSet& real, const FeatureSet& fake) {
  if (real.d != fake.d) fail(ErrorCode::DimMismatch, "feature sets differ in dimension");
  if (real.n < real.d + 1 || fake.n < fake.d + 1)
    fail(ErrorCode::RankDeficient, "Frechet proxy needs n >= d + 1 rows in both sets (d = " + std::to_string(real.d) + ")");
  Eigen::VectorXd mu_r, mu_f;
  Eigen::MatrixXd cov_r, cov_f;
  moments(real, mu_r, cov_r);
  moments(fake, mu_f, cov_f);

  // tr sqrt(Sr Sf) = tr sqrt(sqrt(Sr) Sf sqrt(Sr)), whose argument is symmetric PSD.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> er(cov_r);
  const Eigen::VectorXd lam_r = er.eigenvalues().cwiseMax(0.0);
  const Eigen::MatrixXd sqrt_r = er.eigenvectors() * lam_r.cwiseSqrt().asDiagonal() * er.eigenvectors().transpose();
  Eigen::MatrixXd inner = sqrt_r * cov_f * sqrt_r;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ei(inner, Eigen::EigenvaluesOnly);
  const double tr_sqrt = ei.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  const double mean_term = (mu_r - mu_f).squaredNorm();
  const double value = mean_term + cov_r.trace() + cov_f.trace() - 2.0 * tr_sqrt;
  return std::max(value, 0.0);
}

std::vector<double> knn_radii(const FeatureSet& set, int k) {
  auto r = knn_sq_radii(set, k);
  for (auto& v : r) v = std::sqrt(v);
  return r;
}

PrecisionRecall precision_recall(const FeatureSet& real, const FeatureSet& fake, int k) {
  check_pair(real, fake, k);
  const auto real_r = knn_sq_radii(real, k);
  const auto fake_r = knn_sq_radii(fake, k);
  const auto fake_hits = ball_hits(real, real_r, fake);
  const auto real_hits = ball_hits(fake, fake_r, real);
  const auto covered = [](const std::vector<std::int64_t>& h) {
    return static_cast<double>(std::count_if(h.begin(), h.end(), [](std::int64_t c) { return c > 0; })) / static_cast<double>(h.size());
  };
  return {covered(fake_hits), covered(real_hits)};
}

DensityCoverage density_coverage(const FeatureSet& real, const FeatureSet& fake, int k) {
  check_pair(real, fake, k);
  const auto real_r = knn_sq_radii(real, k);
  const auto fake_hits = ball_hits(real, real_r, fake);
  std::int64_t total = 0;
  for (auto h : fake_hits) total += h;
  const double density = static_cast<double>(total) / (static_cast<double>(k) * static_cast<double>(fake.n));

  std::int64_t covered = 0;
  for (std::int64_t i = 0; i < real.n; ++i) {
    for (std::int64_t j = 0; j < fake.n; ++j)
      if (sq_dist(fake.row(j), real.row(i), real.d) <= real_r[static_cast<std::size_t>(i)]) {
        ++covered;
        break;
      }
  }
  return {density, static_cast<double>(covered) / static_cast<double>(real.n)};
}

NoiseStats normality_stats(std::span<const float> values) { return stats_impl(values); }
NoiseStats normality_stats(std::span<const double> values) { return stats_impl(values); }

double mean_row_kl(std::span<const double> values, std::int64_t rows) {
  if (rows < 1 || values.empty() || static_cast<std::int64_t>(values.size()) % rows != 0)
    fail(ErrorCode::ShapeMismatch, "values do not split into equal rows");
  const auto per = static_cast<std::int64_t>(values.size()) / rows;
  double total = 0.0;
  for (std::int64_t r = 0; r < rows; ++r) total += stats_impl(values.subspan(static_cast<std::size_t>(r * per), static_cast<std::size_t>(per))).kl;
  return total / static_cast<double>(rows);
}

double f1_score(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

MetricsReport evaluate(const FeatureSet& real, const FeatureSet& fake, int k) {
  MetricsReport m;
  m.k = k;
  m.n_real = real.n;
  m.n_fake = fake.n;
  m.embedding = real.kind;
  m.frechet = frechet_proxy(real, fake);
  const auto pr = precision_recall(real, fake, k);
  m.precision = pr.precision;
  m.recall = pr.recall;
  m.f1 = f1_score(pr.precision, pr.recall);
  const auto dc = density_coverage(real, fake, k);
  m.density = dc.density;
  m.coverage = dc.coverage;
  return m;
}

std::string MetricsReport::to_json() const {
  nlohmann::json j{{"frechet", frechet},     {"precision", precision}, {"recall", recall},   {"f1", f1},
                   {"density", density},     {"coverage", coverage},   {"k", k},             {"n_real", n_real},
                   {"n_fake", n_fake},       {"embedding", to_string(embedding)}};
  if (has_noise)
    j["noise"] = {{"mean", noise.mean},
                  {"var", noise.var},
                  {"excess_kurtosis", noise.excess_kurtosis},
                  {"kl", noise.kl},
                  {"degenerate", noise.degenerate},
                  {"count", noise.count}};
  return j.dump(2);
}

FeatureSet embed_pixels(const Tensor<float>& images, Provenance p) {
  if (images.rank() != 4) fail(ErrorCode::ShapeMismatch, "images must be (n, C, H, W)");
  const auto n = images.dim(0), d = images.numel() / n;
  std::vector<double> rows(images.values().begin(), images.values().end());
  return FeatureSet(n, d, std::move(rows), p, EmbeddingKind::FlatPixels);
}

FeatureSet embed_teacher(const UNet<float>& net, const ParamStore<float>& params, const Tensor<float>& images, Provenance p,
                         std::int64_t chunk) {
  if (images.rank() != 4) fail(ErrorCode::ShapeMismatch, "images must be (n, C, H, W)");
  const ParamBinding<float> binding(params);
  const auto n = images.dim(0), per = images.numel() / n;
  std::vector<double> rows;
  std::int64_t d = 0;
  for (std::int64_t start = 0; start < n; start += chunk) {
    const auto count = std::min(chunk, n - start);
    Tensor<float> x(Shape{count, images.dim(1), images.dim(2), images.dim(3)});
    std::copy_n(images.data() + start * per, count * per, x.data());
    const Tensor<float> null_cond(Shape{count, net.config().cond_dim});
    const auto cache = net.encode(binding, Var<float>::view(x), UNet<float>::same_t(0, count), null_cond);
    const auto& mid = cache.mid.value();
    const auto c = mid.dim(1), hw = mid.dim(2) * mid.dim(3);
    d = c;
    for (std::int64_t b = 0; b < count; ++b)
      for (std::int64_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (std::int64_t i = 0; i < hw; ++i) s += static_cast<double>(mid[(b * c + ch) * hw + i]);
        rows.push_back(s / static_cast<double>(hw));
      }
  }
  return FeatureSet(n, d, std::move(rows), p, EmbeddingKind::TeacherEncoder);
}

}  // namespace tiue
