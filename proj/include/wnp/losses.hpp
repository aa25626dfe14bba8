#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>

#include "wnp/core.hpp"
#include "wnp/diffmath.hpp"
#include "wnp/transport.hpp"

namespace wnp {

/// A differentiable objective plus a human-readable companion value.
struct LossReport {
  Tensor loss;
  double metric = 0.0;
  /// Set when the likelihood is exactly zero; the objective then carries no
  /// gradient signal.
  bool degenerate = false;
};

/// Sliced-Wasserstein objective. With `joint`, compares the clouds of
/// concatenated (x | y) rows; otherwise compares the outputs alone.
/// loss = SW_p^p, metric = SW_p.
inline LossReport swd_loss(const Tensor& y_pred, const Tensor& y_true, const Tensor& x, bool joint,
                           std::size_t n_proj, double p, std::uint64_t seed) {
  if (y_pred.rank() != 2 || y_pred.shape() != y_true.shape()) {
    throw ShapeError("swd_loss: prediction " + to_string(y_pred.shape()) + " and target " +
                     to_string(y_true.shape()) + " differ");
  }
  if (y_pred.shape()[0] == 0) throw ContractError("swd_loss: no points");
  if (joint && (x.rank() != 2 || x.shape()[0] != y_pred.shape()[0])) {
    throw ShapeError("swd_loss: inputs " + to_string(x.shape()) + " do not match outputs " +
                     to_string(y_pred.shape()));
  }
  const Tensor xd = x.detached();
  EmpiricalDistribution model = joint ? concat_cols(xd, y_pred) : y_pred;
  EmpiricalDistribution data = joint ? concat_cols(xd, y_true) : y_true;
  const ProjectionSet proj = sample_projections(n_proj, model.dim(), seed);
  Tensor loss = sliced_wasserstein_pow(model, data, proj, p);
  return {loss, std::pow(std::max(loss.item(), 0.0), 1.0 / p), false};
}

/// Mean Gaussian negative log-likelihood over all n * d_y entries.
/// metric is the mean log-likelihood (the negated loss).
inline LossReport gaussian_nll(const Tensor& mu, const Tensor& sigma, const Tensor& y) {
  if (mu.shape() != sigma.shape() || mu.shape() != y.shape()) {
    throw ShapeError("gaussian_nll: shapes " + to_string(mu.shape()) + ", " +
                     to_string(sigma.shape()) + ", " + to_string(y.shape()) + " differ");
  }
  for (double s : sigma.values()) {
    if (!(s > 0.0)) throw ContractError("gaussian_nll: sigma must be strictly positive");
  }
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  Tensor resid = sub(y.detached(), mu);
  Tensor quad = div(mul(resid, resid), scale(mul(sigma, sigma), 2.0));
  Tensor loss = shift(mean(add(log(sigma), quad)), half_log_2pi);
  return {loss, -loss.item(), false};
}

/// Log-likelihood of y_true under a uniform noise tube of half-width
/// `halfwidth` centred on y_pred: n log(1 / (2 halfwidth)) when every
/// residual is inside the tube, -inf otherwise. The objective is piecewise
/// constant, so its gradient is exactly zero wherever it is defined.
inline LossReport uniform_loglik(const Tensor& y_pred, const Tensor& y_true, double halfwidth) {
  if (!(halfwidth > 0.0)) throw ContractError("uniform_loglik: halfwidth must be positive");
  if (y_pred.shape() != y_true.shape()) {
    throw ShapeError("uniform_loglik: prediction " + to_string(y_pred.shape()) + " and target " +
                     to_string(y_true.shape()) + " differ");
  }
  const auto pv = y_pred.values();
  const auto tv = y_true.values();
  bool inside = true;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (!(std::abs(tv[i] - pv[i]) < halfwidth)) {
      inside = false;
      break;
    }
  }
  const double n = static_cast<double>(pv.size());
  const double loglik =
      inside ? n * std::log(1.0 / (2.0 * halfwidth)) : -std::numeric_limits<double>::infinity();
  // Keep the loss on y_pred's tape with an identically zero derivative.
  Tensor loss = add(scale(sum(y_pred), 0.0), Tensor::scalar(-loglik));
  return {loss, loglik, !inside};
}

}  // namespace wnp
