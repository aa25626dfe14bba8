#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "wnp/experiment.hpp"
#include "wnp/selfcheck.hpp"
#include "wnp/trainer.hpp"

#ifndef WNP_BUILD_ID
#define WNP_BUILD_ID "unknown"
#endif

namespace wnp::cli {

namespace fs = std::filesystem;

/// Bad configuration; `key` names the offending setting.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& why)
      : std::runtime_error("config key '" + key + "': " + why), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

inline std::string normalize_key(std::string key) {
  std::replace(key.begin(), key.end(), '-', '_');
  return key;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::string unquote(std::string s) {
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) {
    return s.substr(1, s.size() - 2);
  }
  return s;
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a number, got '" + v + "'");
  }
}

inline std::uint64_t parse_count(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    const unsigned long long n = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

}  // namespace detail

/// Applies one `key = value` setting to `config`.
inline void set_config_key(TrainConfig& c, const std::string& raw_key, const std::string& raw_value) {
  using namespace detail;
  const std::string key = normalize_key(raw_key);
  const std::string v = unquote(trim(raw_value));
  try {
    if (key == "task") c.task = parse_task(v);
    else if (key == "objective") c.objective = parse_objective(v);
    else if (key == "joint") c.joint = parse_bool(key, v);
    else if (key == "n_proj") c.n_proj = parse_count(key, v);
    else if (key == "power") c.power = parse_real(key, v);
    else if (key == "p0") c.p0 = parse_real(key, v);
    else if (key == "p1") c.p1 = parse_real(key, v);
    else if (key == "lr_base") c.lr_base = parse_real(key, v);
    else if (key == "lr_max") c.lr_max = parse_real(key, v);
    else if (key == "cycle_steps") c.cycle_steps = parse_count(key, v);
    else if (key == "epochs") c.epochs = parse_count(key, v);
    else if (key == "seed") c.seed = parse_count(key, v);
    else if (key == "checkpoint_every") c.checkpoint_every = parse_count(key, v);
    else if (key == "eval_every") c.eval_every = parse_count(key, v);
    else if (key == "grad_clip") c.grad_clip = parse_real(key, v);
    else if (key == "hidden") c.hidden = parse_count(key, v);
    else if (key == "r_dim") c.r_dim = parse_count(key, v);
    else if (key == "noise_dim") c.noise_dim = parse_count(key, v);
    else if (key == "n_points") c.n_points = parse_count(key, v);
    else if (key == "halfwidth") c.halfwidth = parse_real(key, v);
    else if (key == "eval_grid") c.eval_grid = parse_count(key, v);
    else if (key == "eval_proj") c.eval_proj = parse_count(key, v);
    else if (key == "gk_context") c.gk_context = parse_count(key, v);
    else if (key == "gk_targets") c.gk_targets = parse_count(key, v);
    else if (key == "eval_samples") c.eval_samples = parse_count(key, v);
    else if (key == "corpus_size") c.corpus_size = parse_count(key, v);
    else if (key == "heldout_size") c.heldout_size = parse_count(key, v);
    else if (key == "channels") c.channels = parse_count(key, v);
    else if (key == "image_dir") c.image_dir = v;
    else if (key == "limit") c.limit = parse_count(key, v);
    else if (key == "record_wall_time") c.record_wall_time = parse_bool(key, v);
    else if (key == "gk_input") {
      if (v == "normal_score") c.gk_input = GkInput::normal_score;
      else if (v == "quantile_position") c.gk_input = GkInput::quantile_position;
      else throw ConfigError(key, "expected normal_score or quantile_position, got '" + v + "'");
    } else if (key == "theta") {
      std::string list = v;
      if (!list.empty() && list.front() == '[' && list.back() == ']') list = list.substr(1, list.size() - 2);
      std::vector<double> parts;
      std::stringstream ss(list);
      for (std::string item; std::getline(ss, item, ',');) parts.push_back(parse_real(key, trim(item)));
      if (parts.size() != 4) throw ConfigError(key, "expected four values a,b,g,kappa");
      c.theta = {parts[0], parts[1], parts[2], parts[3]};
    } else {
      throw ConfigError(key, "unknown setting");
    }
  } catch (const ContractError& e) {
    throw ConfigError(key, e.what());
  }
}

/// Parses flat `key = value` lines; `#` starts a comment.
inline std::vector<std::pair<std::string, std::string>> read_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot read " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(detail::trim(line), "line " + std::to_string(lineno) + " is not 'key = value'");
    }
    out.emplace_back(normalize_key(detail::trim(line.substr(0, eq))), detail::trim(line.substr(eq + 1)));
  }
  return out;
}

/// Effective configuration: built-in defaults for the chosen task and
/// objective, overridden by the config file, overridden by flags.
inline TrainConfig resolve_config(const std::optional<fs::path>& file,
                                  const std::vector<std::pair<std::string, std::string>>& flags) {
  std::vector<std::pair<std::string, std::string>> from_file;
  if (file) from_file = read_config_file(*file);
  auto lookup = [&](const std::string& key) -> std::optional<std::string> {
    std::optional<std::string> found;
    for (const auto& [k, v] : from_file)
      if (k == key) found = v;
    for (const auto& [k, v] : flags)
      if (normalize_key(k) == key) found = v;
    return found;
  };
  TrainConfig probe;
  if (auto t = lookup("task")) set_config_key(probe, "task", *t);
  if (auto o = lookup("objective")) set_config_key(probe, "objective", *o);
  TrainConfig config = default_config(probe.task, probe.objective);
  for (const auto& [k, v] : from_file) set_config_key(config, k, v);
  for (const auto& [k, v] : flags) set_config_key(config, k, v);
  try {
    config.validate();
  } catch (const ContractError& e) {
    const std::string msg = e.what();
    const auto q1 = msg.find('\''), q2 = msg.find('\'', q1 + 1);
    throw ConfigError(q1 != std::string::npos ? msg.substr(q1 + 1, q2 - q1 - 1) : "config",
                      msg.substr(msg.find(':') + 2));
  }
  return config;
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// manifest.json: config echo, build id, timestamps and output inventory.
inline void write_manifest(const fs::path& out_dir, const std::string& command,
                           const nlohmann::json& config, const std::string& started,
                           std::vector<fs::path> outputs) {
  const fs::path manifest = out_dir / "manifest.json";
  outputs.push_back(manifest);
  nlohmann::json files = nlohmann::json::array();
  for (const auto& p : outputs) files.push_back(fs::relative(p, out_dir).generic_string());
  nlohmann::json j{{"command", command},
                   {"build", WNP_BUILD_ID},
                   {"started", started},
                   {"finished", utc_timestamp()},
                   {"config", config},
                   {"outputs", files}};
  std::ofstream(manifest) << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------

struct EvalOptions {
  fs::path checkpoint;
  std::optional<std::string> task;
  std::size_t n_samples = 0;  // 0: task default
  std::optional<std::uint64_t> seed;
  fs::path out;
  std::optional<std::string> image_dir;
  std::optional<std::size_t> limit;
};

/// Rebuilds the training configuration that matches a checkpoint.
inline TrainConfig config_for_checkpoint(const Checkpoint& ck, const EvalOptions& opt) {
  const std::string task_name = opt.task ? *opt.task : ck.meta.task;
  if (task_name.empty()) throw ConfigError("task", "checkpoint does not record a task; pass --task");
  TrainConfig config;
  set_config_key(config, "task", task_name);
  const Objective objective =
      ck.params.shape.head == Head::gaussian ? Objective::gaussian_nll : Objective::swd;
  config = default_config(config.task, objective);
  config.seed = ck.meta.seed;
  config.hidden = ck.params.shape.hidden;
  config.r_dim = ck.params.shape.r_dim;
  config.noise_dim = ck.params.shape.noise_dim;
  if (config.task == TaskKind::tiles) {
    const std::size_t ch = ck.params.shape.d_y / (kTileSide * kTileSide);
    if (ch == 1 || ch == 3) config.channels = ch;
  }
  if (opt.image_dir) config.image_dir = *opt.image_dir;
  if (opt.limit) config.limit = *opt.limit;
  const ModelShape want = config.model_shape();
  if (want.d_x != ck.params.shape.d_x || want.d_y != ck.params.shape.d_y ||
      want.output_width() != ck.params.shape.output_width()) {
    throw std::runtime_error("checkpoint parameter shapes do not fit task " + task_name +
                             ": model maps (d_x, d_y) " +
                             to_string(Shape{ck.params.shape.d_x, ck.params.shape.d_y}) +
                             " but the task needs " + to_string(Shape{want.d_x, want.d_y}));
  }
  return config;
}

/// Writes eval.csv for a checkpoint and returns the headline metric.
inline double run_eval(const EvalOptions& opt, std::vector<fs::path>& outputs, std::ostream& log) {
  const Checkpoint ck = load_checkpoint(opt.checkpoint);
  const TrainConfig config = config_for_checkpoint(ck, opt);
  const std::uint64_t proj_seed = opt.seed ? *opt.seed : eval_projection_seed(config.seed);
  fs::create_directories(opt.out);
  const fs::path csv = opt.out / "eval.csv";
  std::ofstream f(csv);
  if (!f) throw std::runtime_error("cannot write " + csv.string());
  double headline = 0.0;
  switch (config.task) {
    case TaskKind::uniform_regression: {
      const std::size_t n = opt.n_samples ? opt.n_samples : config.eval_grid;
      const auto ev = evaluate_regression(ck.params, config, n, config.seed, proj_seed);
      f << "x,y_true,y_pred\n";
      for (std::size_t i = 0; i < ev.grid_x.size(); ++i) {
        f << format_double(ev.grid_x[i]) << ',' << format_double(ev.grid_y_true[i]) << ','
          << format_double(ev.grid_y_pred[i]) << '\n';
      }
      headline = ev.swd;
      log << "heldout_swd " << format_double(ev.swd) << "\nslope " << format_double(ev.fit.slope)
          << "\nintercept " << format_double(ev.fit.intercept) << '\n';
      break;
    }
    case TaskKind::gk: {
      const std::size_t n = opt.n_samples ? opt.n_samples : config.eval_samples;
      const auto ev = evaluate_gk(ck.params, config, n, config.seed, proj_seed);
      f << "model,true\n";
      for (std::size_t i = 0; i < n; ++i) {
        f << format_double(ev.model_samples[i]) << ',' << format_double(ev.true_samples[i]) << '\n';
      }
      headline = ev.distance;
      log << "wasserstein " << format_double(ev.distance) << "\nnoise_floor "
          << format_double(ev.noise_floor) << '\n';
      break;
    }
    case TaskKind::tiles: {
      TrainConfig c = config;
      if (opt.n_samples) c.heldout_size = opt.n_samples;
      const TileCorpus corpus = build_tile_corpus(c);
      const auto ev = evaluate_tiles(ck.params, c, corpus.heldout, c.seed, proj_seed);
      f << "image,swd\n";
      for (std::size_t i = 0; i < ev.per_image.size(); ++i) {
        f << i << ',' << format_double(ev.per_image[i]) << '\n';
      }
      headline = ev.mean_swd;
      log << "heldout_swd " << format_double(ev.mean_swd) << '\n';
      break;
    }
  }
  outputs.push_back(csv);
  return headline;
}

/// Writes model samples (no reference data) for a checkpoint.
inline void run_sample(const EvalOptions& opt, std::vector<fs::path>& outputs) {
  const Checkpoint ck = load_checkpoint(opt.checkpoint);
  const TrainConfig config = config_for_checkpoint(ck, opt);
  const std::uint64_t seed = opt.seed ? *opt.seed : config.seed;
  const std::size_t n = opt.n_samples ? opt.n_samples : 1000;
  fs::create_directories(opt.out);
  const fs::path csv = opt.out / "samples.csv";
  std::ofstream f(csv);
  if (!f) throw std::runtime_error("cannot write " + csv.string());
  Rng data_rng(derive_seed(config.seed, streams::kEval));
  Rng rng(derive_seed(seed, streams::kNoise));
  switch (config.task) {
    case TaskKind::uniform_regression: {
      TaskBatch held = gen_linear_uniform(linear_task(config), data_rng);
      const double mid = 0.5 * (config.p0 + config.p1);
      held = with_context(held, sample_context(held.size(), mid, mid, data_rng));
      std::uniform_real_distribution<double> ux(-2.0, 2.0);
      std::vector<double> xs(n);
      for (double& x : xs) x = ux(rng);
      const auto pred = predict(ck.params, held.x_context(), held.y_context(),
                                Tensor::matrix(n, 1, xs), rng);
      f << "x,y\n";
      for (std::size_t i = 0; i < n; ++i) f << format_double(xs[i]) << ',' << format_double(pred.sample[i]) << '\n';
      break;
    }
    case TaskKind::gk: {
      TrainConfig c = config;
      c.eval_samples = n;
      const auto ev = evaluate_gk(ck.params, c, n, config.seed, seed);
      f << "sample\n";
      for (double v : ev.model_samples) f << format_double(v) << '\n';
      break;
    }
    case TaskKind::tiles: {
      TrainConfig c = config;
      c.heldout_size = n;
      const TileCorpus corpus = build_tile_corpus(c);
      const auto ev = evaluate_tiles(ck.params, c, corpus.heldout, seed, seed);
      f << "image,file\n";
      const std::string ext = c.channels == 3 ? ".ppm" : ".pgm";
      for (std::size_t i = 0; i < ev.predictions.size(); ++i) {
        const fs::path img = opt.out / ("sample_" + std::to_string(i) + ext);
        TileGrid grid;
        grid.channels = c.channels;
        for (std::size_t t = 0; t < kTileCount; ++t) {
          std::vector<double> tile;
          for (std::size_t j = 0; j < grid.tile_width(); ++j) {
            tile.push_back(std::clamp(ev.predictions[i].at(t, j), 0.0, 1.0));
          }
          grid.tiles.push_back(std::move(tile));
        }
        write_pnm(img, tiles_to_image(grid));
        outputs.push_back(img);
        f << i << ',' << img.filename().string() << '\n';
      }
      break;
    }
  }
  outputs.push_back(csv);
}

/// Entry point shared by the `wnp` binary and the tests. Exit codes: 0 ok,
/// 1 runtime failure, 2 bad configuration or usage.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Wasserstein neural process experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  std::optional<std::uint64_t> seed;
  app.add_option("--seed", seed, "Random seed for every stochastic choice");

  // train
  auto* train = app.add_subcommand("train", "Train a model on one of the experiment tasks");
  std::optional<std::string> config_file;
  struct FlagSpec {
    const char* name;
    const char* help;
  };
  static const FlagSpec kTrainFlags[] = {
      {"task", "uniform_regression | gk | tiles"},
      {"objective", "swd | gaussian_nll | uniform_loglik"},
      {"joint", "compare joint (x, y) clouds (true/false)"},
      {"n-proj", "number of projection directions"},
      {"power", "Wasserstein power p"},
      {"epochs", "number of optimizer steps"},
      {"lr-base", "base learning rate"},
      {"lr-max", "peak learning rate of the cyclic schedule"},
      {"cycle-steps", "period of the cyclic schedule"},
      {"p0", "lower context fraction"},
      {"p1", "upper context fraction"},
      {"image-dir", "directory of PGM/PPM images for the tiles task"},
      {"limit", "maximum number of images to ingest"},
      {"checkpoint-every", "steps between checkpoints"},
      {"channels", "image channels (1 or 3)"},
      {"grad-clip", "global gradient-norm cap (0 disables)"},
  };
  std::map<std::string, std::string> storage;
  for (const auto& spec : kTrainFlags) {
    train->add_option(std::string("--") + spec.name, storage[spec.name], spec.help);
  }
  std::string train_out;
  train->add_option("--config", config_file, "key = value configuration file");
  train->add_option("--out", train_out, "output directory")->required();

  // eval / sample
  EvalOptions eval_opt;
  std::string eval_out, ckpt;
  std::optional<std::string> eval_task, eval_image_dir;
  std::optional<std::size_t> eval_limit;
  std::size_t n_samples = 0;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint against held-out data");
  auto* sample = app.add_subcommand("sample", "Draw model samples from a checkpoint");
  for (auto* sub : {eval, sample}) {
    sub->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    sub->add_option("--task", eval_task, "task (defaults to the one recorded in the checkpoint)");
    sub->add_option("--n-samples", n_samples, "grid points / samples / held-out images");
    sub->add_option("--out", eval_out, "output directory")->required();
    sub->add_option("--image-dir", eval_image_dir, "image directory for the tiles task");
    sub->add_option("--limit", eval_limit, "maximum number of images to ingest");
  }

  auto* selfcheck = app.add_subcommand("selfcheck", "Run the built-in numeric oracle suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  const std::string started = utc_timestamp();
  try {
    if (*train) {
      std::vector<std::pair<std::string, std::string>> flags;
      for (const auto& spec : kTrainFlags) {
        if (train->count(std::string("--") + spec.name)) flags.emplace_back(spec.name, storage[spec.name]);
      }
      if (seed) flags.emplace_back("seed", std::to_string(*seed));
      std::optional<fs::path> file;
      if (config_file) file = *config_file;
      TrainConfig config;
      try {
        config = resolve_config(file, flags);
      } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
      }
      const ExperimentSummary summary = run_experiment(config, train_out);
      for (const auto& [k, v] : summary.metrics) out << k << ' ' << format_double(v) << '\n';
      write_manifest(train_out, "train", to_json(config), started, summary.outputs);
      return 0;
    }
    if (*eval || *sample) {
      eval_opt.checkpoint = ckpt;
      eval_opt.task = eval_task;
      eval_opt.n_samples = n_samples;
      eval_opt.seed = seed;
      eval_opt.out = eval_out;
      eval_opt.image_dir = eval_image_dir;
      eval_opt.limit = eval_limit;
      if (!fs::exists(eval_opt.checkpoint)) {
        err << "error: checkpoint " << eval_opt.checkpoint.string() << " does not exist\n";
        return 1;
      }
      std::vector<fs::path> outputs;
      if (*eval) {
        run_eval(eval_opt, outputs, out);
      } else {
        run_sample(eval_opt, outputs);
      }
      nlohmann::json echo{{"checkpoint", ckpt}, {"n_samples", n_samples}};
      if (seed) echo["seed"] = *seed;
      if (eval_task) echo["task"] = *eval_task;
      write_manifest(eval_opt.out, *eval ? "eval" : "sample", echo, started, outputs);
      return 0;
    }
    if (*selfcheck) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto results = run_selfcheck(seed.value_or(0));
      bool ok = true;
      for (const auto& r : results) {
        out << (r.passed ? "[PASS] " : "[FAIL] ") << r.name << " (" << r.detail << ")\n";
        ok = ok && r.passed;
      }
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      out << results.size() << " checks, " << (ok ? "all passed" : "FAILURES") << " in " << secs
          << " s\n";
      return ok ? 0 : 1;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace wnp::cli
