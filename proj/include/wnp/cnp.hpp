#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "wnp/core.hpp"
#include "wnp/diffmath.hpp"

namespace wnp {

/// Decoder output kind: samples directly, or per-dimension Gaussian parameters.
enum class Head { direct, gaussian };

inline std::string to_string(Head head) { return head == Head::direct ? "direct" : "gaussian"; }

inline Head parse_head(const std::string& s) {
  if (s == "direct") return Head::direct;
  if (s == "gaussian") return Head::gaussian;
  throw ContractError("unknown head '" + s + "' (expected direct or gaussian)");
}

/// Lower bound added to the softplus scale of the Gaussian head.
inline constexpr double kMinSigma = 1e-3;

struct ModelShape {
  std::size_t d_x = 1;
  std::size_t d_y = 1;
  std::size_t hidden = 64;
  std::size_t r_dim = 32;
  /// Standard-normal inputs appended to each decoder row; 0 disables them.
  std::size_t noise_dim = 0;
  Head head = Head::direct;

  std::size_t output_width() const { return head == Head::gaussian ? 2 * d_y : d_y; }
  std::size_t encoder_input() const { return d_x + d_y; }
  std::size_t decoder_input() const { return d_x + r_dim + noise_dim; }

  void validate() const {
    if (d_x == 0 || d_y == 0 || hidden == 0 || r_dim == 0) {
      throw ContractError("model sizes d_x, d_y, hidden and r_dim must all be >= 1");
    }
  }

  bool operator==(const ModelShape&) const = default;
};

struct DenseLayer {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]
};

/// tanh hidden layer followed by a linear output layer.
struct TwoLayerNet {
  DenseLayer hidden;
  DenseLayer output;
};

inline Tensor hidden_activations(const TwoLayerNet& net, const Tensor& input) {
  return tanh(add(matmul(input, net.hidden.weight), net.hidden.bias));
}

inline Tensor forward(const TwoLayerNet& net, const Tensor& input) {
  return add(matmul(hidden_activations(net, input), net.output.weight), net.output.bias);
}

struct ModelParams {
  ModelShape shape;
  TwoLayerNet encoder;
  TwoLayerNet decoder;

  /// Parameter tensors in declaration order.
  std::vector<Tensor> tensors() const {
    return {encoder.hidden.weight, encoder.hidden.bias, encoder.output.weight,
            encoder.output.bias,   decoder.hidden.weight, decoder.hidden.bias,
            decoder.output.weight, decoder.output.bias};
  }

  static const std::vector<std::string>& tensor_names() {
    static const std::vector<std::string> names = {
        "encoder.hidden.weight", "encoder.hidden.bias", "encoder.output.weight",
        "encoder.output.bias",   "decoder.hidden.weight", "decoder.hidden.bias",
        "decoder.output.weight", "decoder.output.bias"};
    return names;
  }

  static std::vector<Shape> expected_shapes(const ModelShape& s) {
    const std::size_t h = s.hidden;
    return {Shape{s.encoder_input(), h}, Shape{h}, Shape{h, s.r_dim}, Shape{s.r_dim},
            Shape{s.decoder_input(), h}, Shape{h}, Shape{h, s.output_width()},
            Shape{s.output_width()}};
  }

  /// Replaces all parameter tensors; shapes must match the model shape.
  void set_tensors(const std::vector<Tensor>& ts) {
    const auto expected = expected_shapes(shape);
    if (ts.size() != expected.size()) {
      throw ContractError("expected " + std::to_string(expected.size()) + " parameter tensors, got " +
                          std::to_string(ts.size()));
    }
    for (std::size_t i = 0; i < ts.size(); ++i) {
      if (ts[i].shape() != expected[i]) {
        throw ShapeError(tensor_names()[i] + ": expected shape " + to_string(expected[i]) +
                         ", got " + to_string(ts[i].shape()));
      }
    }
    encoder.hidden.weight = ts[0];
    encoder.hidden.bias = ts[1];
    encoder.output.weight = ts[2];
    encoder.output.bias = ts[3];
    decoder.hidden.weight = ts[4];
    decoder.hidden.bias = ts[5];
    decoder.output.weight = ts[6];
    decoder.output.bias = ts[7];
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors()) n += t.size();
    return n;
  }
};

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero.
inline ModelParams init_params(const ModelShape& shape, Rng& rng) {
  shape.validate();
  ModelParams params;
  params.shape = shape;
  std::vector<Tensor> ts;
  for (const Shape& s : ModelParams::expected_shapes(shape)) {
    if (s.size() == 1) {
      ts.push_back(Tensor::zeros(s));
      continue;
    }
    const double limit = 1.0 / std::sqrt(static_cast<double>(s[0]));
    std::uniform_real_distribution<double> u(-limit, limit);
    std::vector<double> w(s[0] * s[1]);
    for (double& v : w) v = u(rng);
    ts.emplace_back(s, std::move(w));
  }
  params.set_tensors(ts);
  return params;
}

/// Copy of `params` whose tensors are differentiable leaves on `tape`.
inline ModelParams track(const ModelParams& params, Tape& tape) {
  ModelParams out = params;
  std::vector<Tensor> ts;
  for (const auto& t : params.tensors()) ts.push_back(tape.variable(t));
  out.set_tensors(ts);
  return out;
}

/// r_C: mean over the context of the encoded (x_i, y_i) pairs. Returns [r_dim].
inline Tensor encode_context(const ModelParams& params, const Tensor& x_c, const Tensor& y_c) {
  if (x_c.rank() != 2 || y_c.rank() != 2 || x_c.shape()[0] != y_c.shape()[0]) {
    throw ShapeError("encode_context: context shapes " + to_string(x_c.shape()) + " and " +
                     to_string(y_c.shape()) + " do not pair up");
  }
  if (x_c.shape()[0] == 0) throw ContractError("encode_context: empty context set");
  if (x_c.shape()[1] != params.shape.d_x || y_c.shape()[1] != params.shape.d_y) {
    throw ShapeError("encode_context: expected x/y widths " + std::to_string(params.shape.d_x) +
                     "/" + std::to_string(params.shape.d_y) + ", got " + to_string(x_c.shape()) +
                     " and " + to_string(y_c.shape()));
  }
  return mean(forward(params.encoder, concat_cols(x_c, y_c)), 0);
}

/// Decodes every target row conditioned on r_C. Direct head: [n x d_y]
/// samples. Gaussian head: [n x 2 d_y], means then positive scales.
inline Tensor decode_targets(const ModelParams& params, const Tensor& x_t, const Tensor& r_c,
                             const std::optional<Tensor>& noise = std::nullopt) {
  const ModelShape& s = params.shape;
  if (x_t.rank() != 2 || x_t.shape()[1] != s.d_x) {
    throw ShapeError("decode_targets: target inputs " + to_string(x_t.shape()) +
                     " do not have width " + std::to_string(s.d_x));
  }
  if (r_c.size() != s.r_dim) {
    throw ShapeError("decode_targets: representation " + to_string(r_c.shape()) +
                     " does not have width " + std::to_string(s.r_dim));
  }
  const std::size_t n = x_t.shape()[0];
  Tensor input = concat_cols(x_t, repeat_rows(reshape(r_c, Shape{1, s.r_dim}), n));
  if (s.noise_dim > 0) {
    if (!noise || noise->shape() != Shape{n, s.noise_dim}) {
      throw ShapeError("decode_targets: model expects noise of shape " +
                       to_string(Shape{n, s.noise_dim}) +
                       (noise ? ", got " + to_string(noise->shape()) : ", got none"));
    }
    input = concat_cols(input, *noise);
  }
  Tensor out = forward(params.decoder, input);
  if (s.head == Head::direct) return out;
  Tensor mu = slice_cols(out, 0, s.d_y);
  Tensor sigma = shift(softplus(slice_cols(out, s.d_y, 2 * s.d_y)), kMinSigma);
  return concat_cols(mu, sigma);
}

struct GaussianPrediction {
  Tensor mean;
  Tensor sigma;
};

inline GaussianPrediction split_gaussian(const ModelShape& shape, const Tensor& decoded) {
  return {slice_cols(decoded, 0, shape.d_y), slice_cols(decoded, shape.d_y, 2 * shape.d_y)};
}

/// Standard-normal decoder noise for n rows (empty when the model takes none).
inline std::optional<Tensor> draw_noise(const ModelShape& shape, std::size_t n, Rng& rng) {
  if (shape.noise_dim == 0) return std::nullopt;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> z(n * shape.noise_dim);
  for (double& v : z) v = normal(rng);
  return Tensor::matrix(n, shape.noise_dim, std::move(z));
}

// ---------------------------------------------------------------------------
// Checkpoints: one JSON header line, then little-endian doubles for every
// parameter tensor in declaration order.

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::size_t step = 0;
  std::string task;
};

struct Checkpoint {
  ModelParams params;
  CheckpointMeta meta;
};

namespace detail {

inline std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(v);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                            const CheckpointMeta& meta) {
  nlohmann::json header;
  header["format"] = "wnp-checkpoint";
  header["version"] = 1;
  header["head"] = to_string(params.shape.head);
  header["d_x"] = params.shape.d_x;
  header["d_y"] = params.shape.d_y;
  header["hidden"] = params.shape.hidden;
  header["r_dim"] = params.shape.r_dim;
  header["noise_dim"] = params.shape.noise_dim;
  header["seed"] = meta.seed;
  header["step"] = meta.step;
  header["task"] = meta.task;
  nlohmann::json tensors = nlohmann::json::array();
  const auto ts = params.tensors();
  for (std::size_t i = 0; i < ts.size(); ++i) {
    tensors.push_back({{"name", ModelParams::tensor_names()[i]}, {"shape", ts[i].shape()}});
  }
  header["tensors"] = tensors;

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    out << header.dump() << '\n';
    for (const auto& t : ts) {
      for (double v : t.values()) {
        const std::uint64_t bits = detail::to_little_endian(std::bit_cast<std::uint64_t>(v));
        out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
      }
    }
    if (!out) throw std::runtime_error("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("checkpoint " + path.string() + " is empty");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint header is not valid JSON: " + std::string(e.what()));
  }
  if (header.value("format", "") != "wnp-checkpoint") {
    throw std::runtime_error(path.string() + " is not a checkpoint file");
  }

  Checkpoint ck;
  ModelShape& s = ck.params.shape;
  s.head = parse_head(header.at("head").get<std::string>());
  s.d_x = header.at("d_x").get<std::size_t>();
  s.d_y = header.at("d_y").get<std::size_t>();
  s.hidden = header.at("hidden").get<std::size_t>();
  s.r_dim = header.at("r_dim").get<std::size_t>();
  s.noise_dim = header.value("noise_dim", std::size_t{0});
  s.validate();
  ck.meta.seed = header.value("seed", std::uint64_t{0});
  ck.meta.step = header.value("step", std::size_t{0});
  ck.meta.task = header.value("task", std::string{});

  const auto expected = ModelParams::expected_shapes(s);
  const auto& listed = header.at("tensors");
  if (listed.size() != expected.size()) {
    throw std::runtime_error("checkpoint lists " + std::to_string(listed.size()) +
                             " tensors, model needs " + std::to_string(expected.size()));
  }
  std::vector<Tensor> ts;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const Shape stored = listed[i].at("shape").get<Shape>();
    if (stored != expected[i]) {
      throw std::runtime_error("checkpoint tensor " + ModelParams::tensor_names()[i] + " has shape " +
                               to_string(stored) + ", model expects " + to_string(expected[i]));
    }
    std::vector<double> values(Tensor::element_count(stored));
    for (double& v : values) {
      std::uint64_t bits = 0;
      if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits)) {
        throw std::runtime_error("checkpoint " + path.string() + " is truncated");
      }
      v = std::bit_cast<double>(detail::to_little_endian(bits));
    }
    ts.emplace_back(stored, std::move(values));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw std::runtime_error("checkpoint " + path.string() + " has trailing data");
  }
  ck.params.set_tensors(ts);
  return ck;
}

}  // namespace wnp
