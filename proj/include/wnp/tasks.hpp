#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "wnp/core.hpp"
#include "wnp/diffmath.hpp"
#include "wnp/images.hpp"

namespace wnp {

/// One regression episode: all target points plus the indices of the
/// context subset (C is a subset of T).
struct TaskBatch {
  Tensor x_target;  // [n x d_x]
  Tensor y_target;  // [n x d_y]
  std::vector<std::size_t> context_idx;

  std::size_t size() const { return x_target.shape()[0]; }
  std::size_t d_x() const { return x_target.shape()[1]; }
  std::size_t d_y() const { return y_target.shape()[1]; }

  void validate() const {
    if (x_target.rank() != 2 || y_target.rank() != 2 ||
        x_target.shape()[0] != y_target.shape()[0]) {
      throw ShapeError("task batch: inputs " + to_string(x_target.shape()) + " and outputs " +
                       to_string(y_target.shape()) + " do not pair up");
    }
    const std::size_t n = size();
    if (context_idx.empty() || context_idx.size() > n) {
      throw ContractError("task batch: context size " + std::to_string(context_idx.size()) +
                          " outside [1, " + std::to_string(n) + "]");
    }
    std::vector<std::size_t> sorted = context_idx;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw ContractError("task batch: duplicate context index");
    }
    if (sorted.back() >= n) throw ContractError("task batch: context index out of range");
  }

  Tensor x_context() const { return gather_rows(x_target.detached(), context_idx); }
  Tensor y_context() const { return gather_rows(y_target.detached(), context_idx); }
};

inline TaskBatch with_context(TaskBatch batch, std::vector<std::size_t> context) {
  batch.context_idx = std::move(context);
  batch.validate();
  return batch;
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

// ---------------------------------------------------------------------------
// Linear regression with Gaussian noise

struct LinearTask {
  std::size_t n = 500;
  double slope = 1.0;
  double intercept = 0.0;
  double noise_sd = 0.5;
  double x_lo = -2.0;
  double x_hi = 2.0;
};

/// y = slope x + intercept + N(0, noise_sd^2), x ~ U[x_lo, x_hi].
/// The context is initially every point; the trainer resamples it.
inline TaskBatch gen_linear_uniform(const LinearTask& task, Rng& rng) {
  if (task.n < 2) throw ContractError("gen_linear_uniform: need at least 2 points");
  if (!(task.x_lo < task.x_hi)) throw ContractError("gen_linear_uniform: empty x range");
  if (task.noise_sd < 0.0) throw ContractError("gen_linear_uniform: negative noise sd");
  std::uniform_real_distribution<double> ux(task.x_lo, task.x_hi);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> xs(task.n), ys(task.n);
  for (std::size_t i = 0; i < task.n; ++i) {
    xs[i] = ux(rng);
    ys[i] = task.slope * xs[i] + task.intercept + task.noise_sd * noise(rng);
  }
  return with_context(
      TaskBatch{Tensor::matrix(task.n, 1, std::move(xs)), Tensor::matrix(task.n, 1, std::move(ys)), {}},
      all_indices(task.n));
}

// ---------------------------------------------------------------------------
// g-and-kappa distribution

struct GkParams {
  double a = 3.0;
  double b = 1.0;
  double g = 2.0;
  double kappa = 0.5;

  void validate() const {
    for (double v : {a, b, g, kappa}) {
      if (!(v >= 0.0 && v <= 10.0)) {
        throw ContractError("g-and-kappa parameters must lie in [0, 10]");
      }
    }
  }
};

inline double standard_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

inline double standard_normal_quantile(double r) {
  if (!(r > 0.0 && r < 1.0)) throw ContractError("normal quantile needs r in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), r);
}

/// The g-and-kappa quantile formula evaluated at the standard-normal score z.
/// (1 - e^{-gz}) / (1 + e^{-gz}) is written as tanh(gz / 2).
inline double gk_quantile_normal(const GkParams& theta, double z) {
  return theta.a + theta.b * (1.0 + 0.8 * std::tanh(0.5 * theta.g * z)) *
                       std::pow(1.0 + z * z, theta.kappa) * z;
}

/// The g-and-kappa quantile function at r in (0, 1).
inline double gk_quantile(const GkParams& theta, double r) {
  return gk_quantile_normal(theta, standard_normal_quantile(r));
}

/// n i.i.d. draws: standard normals pushed through the quantile formula.
inline std::vector<double> gk_sample(const GkParams& theta, std::size_t n, Rng& rng) {
  theta.validate();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(n);
  for (double& v : out) v = gk_quantile_normal(theta, normal(rng));
  return out;
}

/// How a quantile position is presented to the model.
enum class GkInput {
  quantile_position,  // r in (0, 1)
  normal_score,       // z = Phi^{-1}(r)
};

/// Context rows are (r_i, s_i) with s_i a g-and-kappa draw and r_i = Phi(z_i)
/// its generating quantile position; the remaining rows use fresh r ~ U(0, 1)
/// with outputs Q(r). Context rows come first and form context_idx.
inline TaskBatch gen_gk_episode(const GkParams& theta, std::size_t n_context, std::size_t n_target,
                                Rng& rng, GkInput input = GkInput::quantile_position) {
  theta.validate();
  if (n_context == 0 || n_target == 0) throw ContractError("gen_gk_episode: counts must be >= 1");
  const std::size_t n = n_context + n_target;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> xs(n), ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    double z, r;
    if (i < n_context) {
      z = normal(rng);
      r = standard_normal_cdf(z);
    } else {
      do {
        r = unit(rng);
      } while (r <= 0.0);
      z = standard_normal_quantile(r);
    }
    xs[i] = input == GkInput::quantile_position ? r : z;
    ys[i] = gk_quantile_normal(theta, z);
  }
  return with_context(TaskBatch{Tensor::matrix(n, 1, std::move(xs)), Tensor::matrix(n, 1, std::move(ys)), {}},
                      all_indices(n_context));
}

// ---------------------------------------------------------------------------
// Tile completion

inline constexpr std::size_t kMinTileContext = 4;
inline constexpr std::size_t kMaxTileContext = 16;

/// Inputs are one-hot tile indices (d_x = 64), outputs the flattened tiles;
/// n_context tiles are sampled without replacement as context.
inline TaskBatch gen_tile_episode(const TileGrid& grid, std::size_t n_context, Rng& rng) {
  if (n_context < kMinTileContext || n_context > kMaxTileContext) {
    throw ContractError("gen_tile_episode: context size " + std::to_string(n_context) +
                        " outside [4, 16]");
  }
  if (grid.tiles.size() != kTileCount) throw ContractError("gen_tile_episode: grid needs 64 tiles");
  const std::size_t w = grid.tile_width();
  std::vector<double> xs(kTileCount * kTileCount, 0.0), ys;
  ys.reserve(kTileCount * w);
  for (std::size_t t = 0; t < kTileCount; ++t) {
    xs[t * kTileCount + t] = 1.0;
    ys.insert(ys.end(), grid.tiles[t].begin(), grid.tiles[t].end());
  }
  std::vector<std::size_t> context;
  const auto idx = all_indices(kTileCount);
  std::sample(idx.begin(), idx.end(), std::back_inserter(context), n_context, rng);
  std::shuffle(context.begin(), context.end(), rng);
  return with_context(TaskBatch{Tensor::matrix(kTileCount, kTileCount, std::move(xs)),
                                Tensor::matrix(kTileCount, w, std::move(ys)), {}},
                      std::move(context));
}

/// CSV dump with columns x0.., y0.., is_context.
inline void write_episode_csv(const std::filesystem::path& path, const TaskBatch& batch) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t j = 0; j < batch.d_x(); ++j) out << 'x' << j << ',';
  for (std::size_t j = 0; j < batch.d_y(); ++j) out << 'y' << j << ',';
  out << "is_context\n";
  std::vector<bool> in_context(batch.size(), false);
  for (std::size_t i : batch.context_idx) in_context[i] = true;
  out << std::setprecision(17);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (std::size_t j = 0; j < batch.d_x(); ++j) out << batch.x_target.at(i, j) << ',';
    for (std::size_t j = 0; j < batch.d_y(); ++j) out << batch.y_target.at(i, j) << ',';
    out << (in_context[i] ? 1 : 0) << '\n';
  }
}

}  // namespace wnp
