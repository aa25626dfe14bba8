#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "wnp/cnp.hpp"
#include "wnp/diffmath.hpp"
#include "wnp/losses.hpp"
#include "wnp/tasks.hpp"
#include "wnp/transport.hpp"

namespace wnp {

/// Scalar function of several tensors, built on a fresh tape per call.
using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Largest norm-wise relative error, over all inputs, between reverse-mode
/// gradients of `f` and central finite differences with step `h`.
inline double max_gradient_error(const ScalarFn& f, const std::vector<Tensor>& inputs,
                                 double h = 1e-5) {
  Tape tape;
  std::vector<Tensor> vars;
  for (const auto& t : inputs) vars.push_back(tape.variable(t));
  const Gradients grads = tape.backward(f(vars));

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic = grads.of(vars[k]);
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      auto probe = [&](double delta) {
        std::vector<Tensor> moved = inputs;
        std::vector<double> v(inputs[k].values().begin(), inputs[k].values().end());
        v[i] += delta;
        moved[k] = Tensor(inputs[k].shape(), std::move(v));
        return f(moved).item();
      };
      const double numeric = (probe(h) - probe(-h)) / (2.0 * h);
      diff2 += (numeric - analytic[i]) * (numeric - analytic[i]);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
    worst = std::max(worst, std::sqrt(diff2) / denom);
  }
  return worst;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(Tensor::element_count(shape));
  for (double& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

/// Brute-force 1D W_p^p: minimum over all pairings of the mean |a_i - b_pi(i)|^p.
inline double brute_force_ot_pow(const std::vector<double>& a, const std::vector<double>& b,
                                 double p) {
  std::vector<std::size_t> perm(b.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  double best = std::numeric_limits<double>::infinity();
  do {
    double cost = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) cost += std::pow(std::abs(a[i] - b[perm[i]]), p);
    best = std::min(best, cost / static_cast<double>(a.size()));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

inline std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Small-n numeric oracle suite shipped with the library.
inline std::vector<CheckResult> run_selfcheck(std::uint64_t seed = 0) {
  std::vector<CheckResult> out;
  Rng rng(seed);
  auto record = [&](std::string name, bool ok, std::string detail) {
    out.push_back({std::move(name), ok, std::move(detail)});
  };
  auto err_text = [](double e) { return "max relative error " + sci(e); };
  constexpr double kGradTol = 1e-5;

  {
    const Tensor w = random_tensor({3, 2}, rng);
    const double e = max_gradient_error(
        [&](const std::vector<Tensor>& in) { return sum(mul(matmul(in[0], in[1]), w)); },
        {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)});
    record("gradient.matmul", e <= kGradTol, err_text(e));
  }
  {
    const double e = max_gradient_error(
        [](const std::vector<Tensor>& in) {
          Tensor t = add(tanh(in[0]), mul(softplus(in[0]), in[1]));
          return mean(add(abs_pow(div(t, shift(abs_pow(in[1], 2.0), 1.0)), 3.0), relu(in[1])));
        },
        {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)});
    record("gradient.elementwise", e <= kGradTol, err_text(e));
  }
  {
    const Tensor w = random_tensor({2, 6}, rng);
    const double e = max_gradient_error(
        [&](const std::vector<Tensor>& in) { return sum(mul(sort_rows(in[0]).values, w)); },
        {random_tensor({2, 6}, rng)});
    record("gradient.sort_rows", e <= kGradTol, err_text(e));
  }
  {
    const Tensor x = random_tensor({5, 3}, rng);
    const double e = max_gradient_error(
        [&](const std::vector<Tensor>& in) {
          Tensor h = tanh(add(matmul(x, in[0]), in[1]));
          return mean(add(matmul(h, in[2]), in[3]));
        },
        {random_tensor({3, 4}, rng), random_tensor({4}, rng), random_tensor({4, 1}, rng),
         random_tensor({1}, rng)});
    record("gradient.two_layer_mlp", e <= kGradTol, err_text(e));
  }
  {
    ModelShape shape;
    shape.hidden = 6;
    shape.r_dim = 4;
    Rng init(seed + 1);
    ModelParams params = init_params(shape, init);
    std::vector<Tensor> ts;
    for (const auto& t : params.tensors()) ts.push_back(random_tensor(t.shape(), rng, -0.5, 0.5));
    const Tensor x = random_tensor({8, 1}, rng);
    const Tensor y = random_tensor({8, 1}, rng);
    const std::vector<std::size_t> ctx{0, 3, 5};
    const Tensor xc = gather_rows(x, ctx), yc = gather_rows(y, ctx);
    const double e = max_gradient_error(
        [&](const std::vector<Tensor>& in) {
          ModelParams p = params;
          p.set_tensors(in);
          Tensor pred = decode_targets(p, x, encode_context(p, xc, yc));
          return swd_loss(pred, y, x, true, 8, 2.0, 17).loss;
        },
        ts);
    record("gradient.swd_through_cnp", e <= 1e-4, err_text(e));
  }
  {
    bool ok = true;
    double worst = 0.0;
    std::uniform_int_distribution<std::size_t> len(1, 6);
    std::uniform_real_distribution<double> pow_dist(1.0, 3.0);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t m = len(rng);
      const double p = pow_dist(rng);
      const Tensor a = random_tensor({m}, rng), b = random_tensor({m}, rng);
      const double fast = wasserstein_1d_pow(a, b, p).item();
      const double brute = brute_force_ot_pow({a.values().begin(), a.values().end()},
                                              {b.values().begin(), b.values().end()}, p);
      worst = std::max(worst, std::abs(fast - brute));
      ok = ok && std::abs(fast - brute) <= 1e-12;
    }
    record("transport.sorted_matching_vs_brute_force", ok,
           "max abs difference " + sci(worst) + " over 50 trials");
  }
  {
    const Tensor a = random_tensor({20, 1}, rng), b = random_tensor({20, 1}, rng);
    const double direct = wasserstein_1d_pow(a, b, 2.0).item();
    const double sliced = sliced_wasserstein_pow(a, b, sample_projections(7, 1, seed), 2.0).item();
    record("transport.sliced_1d_equivalence", std::abs(direct - sliced) <= 1e-10,
           "difference " + sci(std::abs(direct - sliced)));
  }
  {
    const double c = 2.0;
    const std::size_t m = 16;
    std::vector<double> xs(2 * m, 0.0), ys(2 * m, 0.0);
    for (std::size_t i = 0; i < m; ++i) ys[2 * i] = c;
    const double est = sliced_wasserstein_pow(Tensor::matrix(m, 2, xs), Tensor::matrix(m, 2, ys),
                                              sample_projections(1000, 2, seed + 2), 2.0)
                           .item();
    record("transport.sliced_calibration", std::abs(est - c * c / 2) <= 0.1 * c * c / 2,
           "estimate " + sci(est) + " vs " + sci(c * c / 2));
  }
  {
    double worst = 0.0;
    const GkParams collapse{0.0, 1.0, 0.0, 0.0};
    for (double r = 0.01; r < 0.995; r += 0.01) {
      worst = std::max(worst, std::abs(gk_quantile(collapse, r) - standard_normal_quantile(r)));
    }
    record("tasks.gk_collapse", worst <= 1e-9, "max deviation " + sci(worst));
  }
  {
    ModelShape shape;
    shape.hidden = 16;
    Rng init(seed + 3);
    const ModelParams params = init_params(shape, init);
    Tensor xc = random_tensor({30, 1}, rng), yc = random_tensor({30, 1}, rng);
    const Tensor base = encode_context(params, xc, yc);
    std::vector<std::size_t> order(30);
    std::iota(order.begin(), order.end(), std::size_t{0});
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      std::shuffle(order.begin(), order.end(), rng);
      const Tensor r = encode_context(params, gather_rows(xc, order), gather_rows(yc, order));
      for (std::size_t i = 0; i < r.size(); ++i) worst = std::max(worst, std::abs(r[i] - base[i]));
    }
    record("cnp.context_permutation_invariance", worst <= 1e-10,
           "max abs change " + sci(worst));
  }
  return out;
}

}  // namespace wnp
