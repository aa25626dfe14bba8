#pragma once

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "wnp/cnp.hpp"
#include "wnp/images.hpp"
#include "wnp/tasks.hpp"
#include "wnp/trainer.hpp"
#include "wnp/transport.hpp"

namespace wnp {

namespace fs = std::filesystem;

/// Shortest round-trip decimal text for a double ("inf"/"-inf"/"nan" otherwise).
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Ordinary least squares y = slope x + intercept.
struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};

inline LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ContractError("fit_line: need >= 2 paired points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) throw ContractError("fit_line: x values are all equal");
  return {sxy / sxx, my - sxy / sxx * mx};
}

/// Model samples (or means, for the Gaussian head) for every row of x_t.
struct Prediction {
  Tensor point;   // direct output, or Gaussian mean
  Tensor sample;  // direct output, or mean + sigma * z
};

inline Prediction predict(const ModelParams& params, const Tensor& x_c, const Tensor& y_c,
                          const Tensor& x_t, Rng& rng) {
  const Tensor r_c = encode_context(params, x_c, y_c);
  auto noise = draw_noise(params.shape, x_t.shape()[0], rng);
  const Tensor out = decode_targets(params, x_t, r_c, noise);
  if (params.shape.head == Head::direct) return {out, out};
  auto g = split_gaussian(params.shape, out);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> s(g.mean.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = g.mean[i] + g.sigma[i] * normal(rng);
  return {g.mean, Tensor(g.mean.shape(), std::move(s))};
}

// ---------------------------------------------------------------------------
// Per-task evaluation. `data_seed` fixes the held-out data and model noise;
// `projection_seed` fixes the Monte-Carlo projections.

struct RegressionEval {
  LineFit fit;
  double swd = 0.0;  // rooted joint SWD of model samples vs held-out data
  std::vector<double> grid_x, grid_y_true, grid_y_pred;
};

inline LinearTask linear_task(const TrainConfig& c) {
  LinearTask t;
  t.n = c.n_points;
  return t;
}

inline RegressionEval evaluate_regression(const ModelParams& params, const TrainConfig& config,
                                          std::size_t grid_points, std::uint64_t data_seed,
                                          std::uint64_t projection_seed) {
  Rng rng(derive_seed(data_seed, streams::kEval));
  const LinearTask task = linear_task(config);
  TaskBatch held = gen_linear_uniform(task, rng);
  const double mid = 0.5 * (config.p0 + config.p1);
  held = with_context(held, sample_context(held.size(), mid, mid, rng));

  RegressionEval ev;
  const Prediction on_data = predict(params, held.x_context(), held.y_context(), held.x_target, rng);
  ev.swd = sliced_wasserstein_report(concat_cols(held.x_target, on_data.sample),
                                     concat_cols(held.x_target, held.y_target), config.eval_proj,
                                     config.power, projection_seed);

  std::vector<double> gx(grid_points);
  for (std::size_t i = 0; i < grid_points; ++i) {
    gx[i] = task.x_lo + (task.x_hi - task.x_lo) * static_cast<double>(i) /
                            static_cast<double>(grid_points - 1);
  }
  const Tensor grid = Tensor::matrix(grid_points, 1, gx);
  const Prediction on_grid = predict(params, held.x_context(), held.y_context(), grid, rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  ev.grid_x = gx;
  ev.grid_y_pred.assign(on_grid.sample.values().begin(), on_grid.sample.values().end());
  for (double x : gx) {
    ev.grid_y_true.push_back(task.slope * x + task.intercept + task.noise_sd * normal(rng));
  }
  ev.fit = fit_line(ev.grid_x, ev.grid_y_pred);
  return ev;
}

struct GkEval {
  double distance = 0.0;    // rooted 1D W_p, model vs true samples
  double noise_floor = 0.0; // rooted 1D W_p, true vs independent true samples
  std::vector<double> model_samples, true_samples;
};

inline double wasserstein_1d(const std::vector<double>& a, const std::vector<double>& b, double p) {
  const double w = wasserstein_1d_pow(Tensor::vector(a), Tensor::vector(b), p).item();
  return std::pow(std::max(w, 0.0), 1.0 / p);
}

inline GkEval evaluate_gk(const ModelParams& params, const TrainConfig& config, std::size_t n_samples,
                          std::uint64_t data_seed, std::uint64_t sample_seed) {
  Rng rng(derive_seed(data_seed, streams::kEval));
  const TaskBatch held = gen_gk_episode(config.theta, config.gk_context, 1, rng, config.gk_input);
  Rng srng(derive_seed(sample_seed, streams::kEval, 1));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> xs(n_samples);
  for (double& x : xs) {
    double r;
    do {
      r = unit(srng);
    } while (r <= 0.0);
    x = config.gk_input == GkInput::normal_score ? standard_normal_quantile(r) : r;
  }
  const Prediction pred =
      predict(params, held.x_context(), held.y_context(), Tensor::matrix(n_samples, 1, xs), srng);
  GkEval ev;
  ev.model_samples.assign(pred.sample.values().begin(), pred.sample.values().end());
  ev.true_samples = gk_sample(config.theta, n_samples, srng);
  const auto reference = gk_sample(config.theta, n_samples, srng);
  ev.distance = wasserstein_1d(ev.model_samples, ev.true_samples, config.power);
  ev.noise_floor = wasserstein_1d(reference, ev.true_samples, config.power);
  return ev;
}

struct TileEval {
  double mean_swd = 0.0;
  std::vector<double> per_image;
  std::vector<TaskBatch> episodes;
  std::vector<Tensor> predictions;
};

inline TileEval evaluate_tiles(const ModelParams& params, const TrainConfig& config,
                               const std::vector<TileGrid>& heldout, std::uint64_t data_seed,
                               std::uint64_t projection_seed) {
  TileEval ev;
  for (std::size_t i = 0; i < heldout.size(); ++i) {
    Rng rng(derive_seed(data_seed, streams::kEval, i));
    std::uniform_int_distribution<std::size_t> count(kMinTileContext, kMaxTileContext);
    const TaskBatch ep = gen_tile_episode(heldout[i], count(rng), rng);
    const Prediction pred = predict(params, ep.x_context(), ep.y_context(), ep.x_target, rng);
    const double d =
        config.joint
            ? sliced_wasserstein_report(concat_cols(ep.x_target, pred.point),
                                        concat_cols(ep.x_target, ep.y_target), config.eval_proj,
                                        config.power, derive_seed(projection_seed, i))
            : sliced_wasserstein_report(pred.point, ep.y_target, config.eval_proj, config.power,
                                        derive_seed(projection_seed, i));
    ev.per_image.push_back(d);
    ev.mean_swd += d / static_cast<double>(heldout.size());
    ev.episodes.push_back(ep);
    ev.predictions.push_back(pred.point);
  }
  return ev;
}

/// Training and held-out tile grids for the tile task.
struct TileCorpus {
  std::vector<TileGrid> train;
  std::vector<TileGrid> heldout;
};

inline TileCorpus build_tile_corpus(const TrainConfig& config) {
  TileCorpus corpus;
  auto to_grids = [](const std::vector<Image>& images, std::vector<TileGrid>& out) {
    for (const auto& img : images) out.push_back(image_to_tiles(img));
  };
  if (!config.image_dir.empty()) {
    const auto images = ingest_image_dir(config.image_dir, config.limit, config.channels);
    if (images.size() < 2) throw std::runtime_error("need at least two images to hold one out");
    const std::size_t held = std::clamp<std::size_t>(images.size() / 5, 1, config.heldout_size);
    to_grids({images.begin(), images.end() - static_cast<std::ptrdiff_t>(held)}, corpus.train);
    to_grids({images.end() - static_cast<std::ptrdiff_t>(held), images.end()}, corpus.heldout);
  } else {
    const std::uint64_t base = derive_seed(config.seed, streams::kCorpus);
    to_grids(synth_corpus(config.corpus_size, config.channels, base), corpus.train);
    // Seed-disjoint holdout: starts past the last training image seed.
    to_grids(synth_corpus(config.heldout_size, config.channels, base + config.corpus_size),
             corpus.heldout);
  }
  return corpus;
}

/// Scalar evaluation metric tracked over training (lower is better).
inline double evaluation_metric(const ModelParams& params, const TrainConfig& config,
                                const TileCorpus* corpus, std::uint64_t data_seed,
                                std::uint64_t projection_seed) {
  switch (config.task) {
    case TaskKind::uniform_regression:
      return evaluate_regression(params, config, 2, data_seed, projection_seed).swd;
    case TaskKind::gk:
      return evaluate_gk(params, config, config.eval_samples, data_seed, projection_seed).distance;
    case TaskKind::tiles:
      return evaluate_tiles(params, config, corpus->heldout, data_seed, projection_seed).mean_swd;
  }
  return 0.0;
}

inline std::uint64_t eval_projection_seed(std::uint64_t seed) {
  return derive_seed(seed, streams::kProjection, 0xE7A1);
}

// ---------------------------------------------------------------------------

struct ExperimentSummary {
  std::map<std::string, double> metrics;
  std::vector<fs::path> outputs;
  nlohmann::json json;
};

/// Draws the training episode for `step`.
class EpisodeStream {
 public:
  EpisodeStream(const TrainConfig& config, const TileCorpus* corpus)
      : config_(config), corpus_(corpus) {}

  TaskBatch at(std::size_t step) const {
    Rng rng(derive_seed(config_.seed, streams::kEpisode, step));
    switch (config_.task) {
      case TaskKind::uniform_regression:
        return gen_linear_uniform(linear_task(config_), rng);
      case TaskKind::gk:
        return gen_gk_episode(config_.theta, config_.gk_context, config_.gk_targets, rng,
                              config_.gk_input);
      case TaskKind::tiles: {
        std::uniform_int_distribution<std::size_t> pick(0, corpus_->train.size() - 1);
        std::uniform_int_distribution<std::size_t> count(kMinTileContext, kMaxTileContext);
        const std::size_t image = pick(rng);
        return gen_tile_episode(corpus_->train[image], count(rng), rng);
      }
    }
    throw ContractError("unknown task");
  }

 private:
  const TrainConfig& config_;
  const TileCorpus* corpus_;
};

namespace detail {

inline void ensure_writable_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw std::runtime_error("cannot create output directory " + dir.string());
  }
  const fs::path probe = dir / ".write_probe";
  {
    std::ofstream f(probe);
    if (!f) throw std::runtime_error("output directory " + dir.string() + " is not writable");
  }
  fs::remove(probe, ec);
}

inline Image masked_context_image(const TaskBatch& ep, std::size_t channels) {
  TileGrid grid;
  grid.channels = channels;
  grid.tiles.assign(kTileCount, std::vector<double>(grid.tile_width(), 0.0));
  for (std::size_t t : ep.context_idx) {
    for (std::size_t j = 0; j < grid.tile_width(); ++j) grid.tiles[t][j] = ep.y_target.at(t, j);
  }
  return tiles_to_image(grid);
}

inline Image rows_to_image(const Tensor& rows, std::size_t channels) {
  TileGrid grid;
  grid.channels = channels;
  grid.tiles.resize(kTileCount);
  for (std::size_t t = 0; t < kTileCount; ++t) {
    for (std::size_t j = 0; j < grid.tile_width(); ++j) {
      grid.tiles[t].push_back(std::clamp(rows.at(t, j), 0.0, 1.0));
    }
  }
  return tiles_to_image(grid);
}

}  // namespace detail

/// Trains per `config`, writing into `out_dir`:
///   metrics.csv      step,lr,loss,metric,degenerate,wall_ms (one row per step)
///   eval_curve.csv   step,eval_metric
///   checkpoints/     periodic checkpoints; model.ckpt is the final one
///   summary.json     final metrics, config echo and seed
/// plus task-specific plot data (predictions.csv, samples.csv, tiles/).
inline ExperimentSummary run_experiment(const TrainConfig& config, const fs::path& out_dir) {
  config.validate();
  detail::ensure_writable_dir(out_dir);
  detail::ensure_writable_dir(out_dir / "checkpoints");

  TileCorpus corpus;
  if (config.task == TaskKind::tiles) corpus = build_tile_corpus(config);
  const TileCorpus* corpus_ptr = config.task == TaskKind::tiles ? &corpus : nullptr;

  Rng init_rng(derive_seed(config.seed, streams::kInit));
  ModelParams params = init_params(config.model_shape(), init_rng);
  const ModelParams initial = params;
  AdamState adam;
  const EpisodeStream episodes(config, corpus_ptr);
  const std::uint64_t eval_proj = eval_projection_seed(config.seed);

  ExperimentSummary summary;
  const fs::path metrics_path = out_dir / "metrics.csv";
  const fs::path curve_path = out_dir / "eval_curve.csv";
  std::ofstream metrics(metrics_path, std::ios::trunc);
  std::ofstream curve(curve_path, std::ios::trunc);
  if (!metrics || !curve) throw std::runtime_error("cannot write metrics into " + out_dir.string());
  metrics << "step,lr,loss,metric,degenerate,wall_ms\n" << std::flush;
  curve << "step,eval_metric\n";

  auto record_eval = [&](std::size_t step) {
    const double v = evaluation_metric(params, config, corpus_ptr, config.seed, eval_proj);
    curve << step << ',' << format_double(v) << '\n' << std::flush;
    return v;
  };

  const double eval_initial = record_eval(0);
  double eval_final = eval_initial;
  std::size_t degenerate_steps = 0;
  double last_loss = 0.0, last_metric = 0.0;
  const auto start = std::chrono::steady_clock::now();

  for (std::size_t step = 0; step < config.epochs; ++step) {
    Rng step_rng(derive_seed(config.seed, streams::kContext, step));
    const StepReport rep = train_step(params, episodes.at(step), config, adam, step, step_rng);
    degenerate_steps += rep.degenerate ? 1 : 0;
    last_loss = rep.loss;
    last_metric = rep.metric;
    long long wall_ms = 0;
    if (config.record_wall_time) {
      wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                    std::chrono::steady_clock::now() - start)
                    .count();
    }
    const std::string row = std::to_string(step) + ',' + format_double(rep.lr) + ',' +
                            format_double(rep.loss) + ',' + format_double(rep.metric) + ',' +
                            (rep.degenerate ? "1" : "0") + ',' + std::to_string(wall_ms) + '\n';
    metrics.write(row.data(), static_cast<std::streamsize>(row.size()));
    metrics.flush();

    const std::size_t done = step + 1;
    if (done % config.eval_every == 0 || done == config.epochs) eval_final = record_eval(done);
    if (done % config.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "step_%06zu.ckpt", done);
      save_checkpoint(out_dir / "checkpoints" / name, params,
                      {config.seed, done, to_string(config.task)});
    }
  }
  metrics.close();
  curve.close();

  const CheckpointMeta final_meta{config.seed, config.epochs, to_string(config.task)};
  save_checkpoint(out_dir / "model.ckpt", params, final_meta);
  summary.outputs = {metrics_path, curve_path, out_dir / "model.ckpt"};

  double max_change = 0.0;
  {
    const auto a = initial.tensors();
    const auto b = params.tensors();
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = 0; j < a[i].size(); ++j)
        max_change = std::max(max_change, std::abs(a[i][j] - b[i][j]));
  }
  bool bit_identical = true;
  {
    const auto a = initial.tensors();
    const auto b = params.tensors();
    for (std::size_t i = 0; i < a.size() && bit_identical; ++i)
      for (std::size_t j = 0; j < a[i].size(); ++j)
        if (std::bit_cast<std::uint64_t>(a[i][j]) != std::bit_cast<std::uint64_t>(b[i][j])) {
          bit_identical = false;
          break;
        }
  }

  auto& m = summary.metrics;
  m["eval_initial"] = eval_initial;
  m["eval_final"] = eval_final;
  m["final_loss"] = last_loss;
  m["final_metric"] = last_metric;
  m["degenerate_steps"] = static_cast<double>(degenerate_steps);
  m["max_param_change"] = max_change;
  m["params_unchanged"] = bit_identical ? 1.0 : 0.0;

  switch (config.task) {
    case TaskKind::uniform_regression: {
      const auto ev = evaluate_regression(params, config, config.eval_grid, config.seed, eval_proj);
      m["slope"] = ev.fit.slope;
      m["intercept"] = ev.fit.intercept;
      const fs::path p = out_dir / "predictions.csv";
      std::ofstream f(p);
      f << "x,y_true,y_pred\n";
      for (std::size_t i = 0; i < ev.grid_x.size(); ++i) {
        f << format_double(ev.grid_x[i]) << ',' << format_double(ev.grid_y_true[i]) << ','
          << format_double(ev.grid_y_pred[i]) << '\n';
      }
      summary.outputs.push_back(p);
      break;
    }
    case TaskKind::gk: {
      const auto ev = evaluate_gk(params, config, config.eval_samples, config.seed, eval_proj);
      m["distance"] = ev.distance;
      m["noise_floor"] = ev.noise_floor;
      const fs::path p = out_dir / "samples.csv";
      std::ofstream f(p);
      f << "model,true\n";
      for (std::size_t i = 0; i < ev.model_samples.size(); ++i) {
        f << format_double(ev.model_samples[i]) << ',' << format_double(ev.true_samples[i]) << '\n';
      }
      summary.outputs.push_back(p);
      break;
    }
    case TaskKind::tiles: {
      const auto ev = evaluate_tiles(params, config, corpus.heldout, config.seed, eval_proj);
      m["heldout_swd"] = ev.mean_swd;
      m["heldout_ratio"] = eval_initial > 0.0 ? ev.mean_swd / eval_initial : 0.0;
      const fs::path p = out_dir / "tile_eval.csv";
      std::ofstream f(p);
      f << "image,context_tiles,swd\n";
      for (std::size_t i = 0; i < ev.per_image.size(); ++i) {
        f << i << ',' << ev.episodes[i].context_idx.size() << ',' << format_double(ev.per_image[i])
          << '\n';
      }
      summary.outputs.push_back(p);
      const fs::path tile_dir = out_dir / "tiles";
      fs::create_directories(tile_dir);
      const std::string ext = config.channels == 3 ? ".ppm" : ".pgm";
      for (std::size_t i = 0; i < std::min<std::size_t>(4, ev.episodes.size()); ++i) {
        const std::string stem = "heldout_" + std::to_string(i);
        const auto& ep = ev.episodes[i];
        write_pnm(tile_dir / (stem + "_context" + ext), detail::masked_context_image(ep, config.channels));
        write_pnm(tile_dir / (stem + "_truth" + ext), detail::rows_to_image(ep.y_target, config.channels));
        write_pnm(tile_dir / (stem + "_pred" + ext),
                  detail::rows_to_image(ev.predictions[i], config.channels));
        for (const char* kind : {"_context", "_truth", "_pred"}) {
          summary.outputs.push_back(tile_dir / (stem + kind + ext));
        }
      }
      break;
    }
  }

  nlohmann::json j;
  j["task"] = to_string(config.task);
  j["objective"] = to_string(config.objective);
  j["seed"] = config.seed;
  j["steps"] = config.epochs;
  j["config"] = to_json(config);
  nlohmann::json metrics_json;
  for (const auto& [k, v] : m) {
    metrics_json[k] = std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(format_double(v));
  }
  j["metrics"] = metrics_json;
  const fs::path summary_path = out_dir / "summary.json";
  std::ofstream(summary_path) << j.dump(2) << '\n';
  summary.outputs.push_back(summary_path);
  std::vector<fs::path> checkpoints;
  for (const auto& entry : fs::directory_iterator(out_dir / "checkpoints")) {
    checkpoints.push_back(entry.path());
  }
  std::sort(checkpoints.begin(), checkpoints.end());
  summary.outputs.insert(summary.outputs.end(), checkpoints.begin(), checkpoints.end());
  summary.json = std::move(j);
  return summary;
}

}  // namespace wnp
