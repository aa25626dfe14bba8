#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "wnp/core.hpp"
#include "wnp/diffmath.hpp"

namespace wnp {

/// m samples in d dimensions with uniform weights.
class EmpiricalDistribution {
 public:
  /// Accepts an [m x d] matrix, or an [m] vector read as m one-dimensional samples.
  EmpiricalDistribution(Tensor samples)  // NOLINT(google-explicit-constructor)
      : samples_(samples.rank() == 1 ? reshape(samples, Shape{samples.size(), 1})
                                     : std::move(samples)) {
    if (samples_.rank() != 2) {
      throw ShapeError("empirical distribution needs an [m x d] matrix, got " +
                       to_string(samples_.shape()));
    }
    if (samples_.shape()[0] == 0) throw ContractError("empirical distribution has no samples");
    if (!samples_.all_finite()) throw ContractError("empirical distribution has non-finite samples");
  }

  const Tensor& samples() const { return samples_; }
  std::size_t count() const { return samples_.shape()[0]; }
  std::size_t dim() const { return samples_.shape()[1]; }

 private:
  Tensor samples_;
};

/// Unit directions on the sphere S^{d-1}, one per row.
struct ProjectionSet {
  Tensor directions;
  std::uint64_t seed = 0;

  std::size_t count() const { return directions.shape()[0]; }
  std::size_t dim() const { return directions.shape()[1]; }
};

/// W_p^p between two equally sized 1D samples: the mean of |a_(i) - b_(i)|^p
/// over the sorted orders. Differentiable in both arguments.
inline Tensor wasserstein_1d_pow(const Tensor& a, const Tensor& b, double p) {
  if (a.size() != b.size()) {
    throw ContractError("wasserstein_1d_pow: sample counts differ (" + std::to_string(a.size()) +
                        " vs " + std::to_string(b.size()) + ")");
  }
  if (a.size() == 0) throw ContractError("wasserstein_1d_pow: empty samples");
  if (!(p >= 1.0)) throw ContractError("wasserstein_1d_pow: power must be >= 1");
  const Shape row{1, a.size()};
  Tensor sa = sort_rows(reshape(a, row)).values;
  Tensor sb = sort_rows(reshape(b, row)).values;
  return mean(abs_pow(sub(sa, sb), p));
}

/// Draws n_proj standard-normal rows and normalises each to unit length.
inline ProjectionSet sample_projections(std::size_t n_proj, std::size_t d, std::uint64_t seed) {
  if (d == 0) throw ContractError("sample_projections: dimension must be >= 1");
  if (n_proj == 0) throw ContractError("sample_projections: need at least one projection");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> dirs(n_proj * d);
  for (std::size_t i = 0; i < n_proj; ++i) {
    double* row = dirs.data() + i * d;
    double norm2 = 0.0;
    while (norm2 == 0.0) {
      norm2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        row[j] = normal(rng);
        norm2 += row[j] * row[j];
      }
    }
    const double norm = std::sqrt(norm2);
    for (std::size_t j = 0; j < d; ++j) row[j] /= norm;
  }
  return ProjectionSet{Tensor::matrix(n_proj, d, std::move(dirs)), seed};
}

/// Monte-Carlo sliced W_p^p: project both clouds onto every direction, sort
/// each projection, and average |difference|^p over samples and directions.
inline Tensor sliced_wasserstein_pow(const EmpiricalDistribution& x,
                                     const EmpiricalDistribution& y,
                                     const ProjectionSet& proj, double p) {
  if (x.count() != y.count()) {
    throw ContractError("sliced_wasserstein_pow: sample counts differ (" +
                        std::to_string(x.count()) + " vs " + std::to_string(y.count()) + ")");
  }
  if (x.dim() != y.dim() || proj.dim() != x.dim()) {
    throw ContractError("sliced_wasserstein_pow: dimensions differ (x " +
                        to_string(x.samples().shape()) + ", y " + to_string(y.samples().shape()) +
                        ", projections " + to_string(proj.directions.shape()) + ")");
  }
  if (!(p >= 1.0)) throw ContractError("sliced_wasserstein_pow: power must be >= 1");
  const Tensor pt = transpose(proj.directions.detached());
  // [n_proj x m]: one projected sample set per row.
  Tensor xs = sort_rows(transpose(matmul(x.samples(), pt))).values;
  Tensor ys = sort_rows(transpose(matmul(y.samples(), pt))).values;
  return mean(abs_pow(sub(xs, ys), p));
}

/// Rooted sliced distance (SW_p) with fresh projections; for logging only.
inline double sliced_wasserstein_report(const EmpiricalDistribution& x,
                                        const EmpiricalDistribution& y, std::size_t n_proj,
                                        double p, std::uint64_t seed) {
  const ProjectionSet proj = sample_projections(n_proj, x.dim(), seed);
  const double pow_value = sliced_wasserstein_pow(EmpiricalDistribution(x.samples().detached()),
                                                  EmpiricalDistribution(y.samples().detached()),
                                                  proj, p)
                               .item();
  return std::pow(std::max(pow_value, 0.0), 1.0 / p);
}

}  // namespace wnp
