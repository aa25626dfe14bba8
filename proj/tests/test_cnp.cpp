#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "oracles.hpp"
#include "wnp/cnp.hpp"
#include "wnp/losses.hpp"

using namespace wnp;
using oracle::uniform;

namespace {

ModelParams small_model(Head head = Head::direct, std::size_t noise = 0, std::uint64_t seed = 1) {
  ModelShape s;
  s.d_x = 2;
  s.d_y = 1;
  s.hidden = 8;
  s.r_dim = 5;
  s.noise_dim = noise;
  s.head = head;
  Rng rng(seed);
  return init_params(s, rng);
}

std::filesystem::path temp_file(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "wnp_test_cnp";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Encode, SingleContextPointIsItsOwnRepresentation) {
  const ModelParams m = small_model();
  const Tensor x = Tensor::matrix(1, 2, {0.3, -0.7}), y = Tensor::matrix(1, 1, {1.2});
  const Tensor r = encode_context(m, x, y);
  const Tensor h = forward(m.encoder, concat_cols(x, y));
  EXPECT_EQ(r.shape(), (Shape{5}));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(r[i], h[i]);
}

TEST(Encode, PermutationInvariant) {
  const ModelParams m = small_model();
  std::mt19937_64 rng(2);
  const Tensor x = uniform({40, 2}, rng), y = uniform({40, 1}, rng);
  const Tensor base = encode_context(m, x, y);
  std::vector<std::size_t> order(40);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int trial = 0; trial < 200; ++trial) {
    std::shuffle(order.begin(), order.end(), rng);
    EXPECT_LE(oracle::max_abs_diff(encode_context(m, gather_rows(x, order), gather_rows(y, order)), base),
              1e-10);
  }
}

TEST(Encode, DuplicatedContextGivesSameRepresentation) {
  const ModelParams m = small_model();
  std::mt19937_64 rng(3);
  const Tensor x = uniform({17, 2}, rng), y = uniform({17, 1}, rng);
  std::vector<std::size_t> twice(34);
  for (std::size_t i = 0; i < 34; ++i) twice[i] = i % 17;
  EXPECT_LE(oracle::max_abs_diff(encode_context(m, gather_rows(x, twice), gather_rows(y, twice)),
                                 encode_context(m, x, y)),
            1e-10);
}

TEST(Encode, EmptyContextIsAContractError) {
  EXPECT_THROW(encode_context(small_model(), Tensor::zeros({0, 2}), Tensor::zeros({0, 1})), ContractError);
}

TEST(Encode, ScaleDoesNotGrowWithContextSize) {
  const ModelParams m = small_model();
  std::mt19937_64 rng(4);
  auto norm = [](const Tensor& t) {
    double s = 0.0;
    for (double v : t.values()) s += v * v;
    return std::sqrt(s);
  };
  const double n10 = norm(encode_context(m, uniform({10, 2}, rng), uniform({10, 1}, rng)));
  const double n100 = norm(encode_context(m, uniform({100, 2}, rng), uniform({100, 1}, rng)));
  EXPECT_LE(n100, 3.0 * n10);
  EXPECT_GE(n100, n10 / 3.0);
}

TEST(Decode, OutputShapes) {
  std::mt19937_64 rng(5);
  const Tensor x = uniform({7, 2}, rng);
  const ModelParams direct = small_model(Head::direct);
  EXPECT_EQ(decode_targets(direct, x, Tensor::zeros({5})).shape(), (Shape{7, 1}));
  const ModelParams gauss = small_model(Head::gaussian);
  EXPECT_EQ(decode_targets(gauss, x, Tensor::zeros({5})).shape(), (Shape{7, 2}));
}

TEST(Decode, Deterministic) {
  std::mt19937_64 rng(6);
  const ModelParams m = small_model();
  const Tensor x = uniform({7, 2}, rng), r = uniform({5}, rng);
  EXPECT_EQ(oracle::to_vec(decode_targets(m, x, r)), oracle::to_vec(decode_targets(m, x, r)));
}

TEST(Decode, RepresentationWidthMismatchThrows) {
  EXPECT_THROW(decode_targets(small_model(), Tensor::zeros({3, 2}), Tensor::zeros({4})), ShapeError);
}

TEST(Decode, GaussianSigmaStrictlyPositive) {
  ModelParams m = small_model(Head::gaussian);
  // Push the sigma pre-activation far negative.
  std::vector<double> bias = oracle::to_vec(m.decoder.output.bias);
  bias[1] = -500.0;
  m.decoder.output.bias = Tensor::vector(bias);
  std::mt19937_64 rng(7);
  const auto g = split_gaussian(m.shape, decode_targets(m, uniform({9, 2}, rng), uniform({5}, rng)));
  for (double s : g.sigma.values()) EXPECT_GT(s, 0.0);
}

TEST(Decode, GradientWrtDecoderWeightsMatchesFiniteDifferences) {
  ModelParams m = small_model();
  std::mt19937_64 rng(8);
  const Tensor x = uniform({6, 2}, rng), r = uniform({5}, rng);
  const double gap = oracle::gradient_gap(
      [&](const std::vector<Tensor>& in) {
        ModelParams p = m;
        p.decoder = {{in[0], in[1]}, {in[2], in[3]}};
        return mean(decode_targets(p, x, r));
      },
      {m.decoder.hidden.weight, uniform({8}, rng), m.decoder.output.weight, m.decoder.output.bias});
  EXPECT_LE(gap, 1e-5);
}

TEST(Pipeline, SwdThroughModelMatchesFiniteDifferences) {
  for (Head head : {Head::direct}) {
    ModelParams m = small_model(head, 1);
    std::mt19937_64 rng(9);
    std::vector<Tensor> ts;
    for (const auto& t : m.tensors()) ts.push_back(uniform(t.shape(), rng, -0.6, 0.6));
    const Tensor x = uniform({10, 2}, rng), y = uniform({10, 1}, rng), z = uniform({10, 1}, rng);
    const std::vector<std::size_t> ctx{1, 4, 6, 9};
    const double gap = oracle::gradient_gap(
        [&](const std::vector<Tensor>& in) {
          ModelParams p = m;
          p.set_tensors(in);
          const Tensor r = encode_context(p, gather_rows(x, ctx), gather_rows(y, ctx));
          return swd_loss(decode_targets(p, x, r, z), y, x, true, 16, 2.0, 5).loss;
        },
        ts);
    EXPECT_LE(gap, 1e-4);
  }
}

TEST(Init, DeterministicPerSeed) {
  const auto a = small_model(Head::direct, 0, 7).tensors();
  const auto b = small_model(Head::direct, 0, 7).tensors();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(oracle::to_vec(a[i]), oracle::to_vec(b[i]));
}

TEST(Init, BiasesZeroAndWeightsWithinFanInBound) {
  const ModelParams m = small_model();
  for (const Tensor* b : {&m.encoder.hidden.bias, &m.encoder.output.bias, &m.decoder.hidden.bias,
                          &m.decoder.output.bias}) {
    for (double v : b->values()) EXPECT_EQ(v, 0.0);
  }
  const double bound = 1.0 / std::sqrt(3.0);  // encoder fan-in d_x + d_y
  for (double v : m.encoder.hidden.weight.values()) EXPECT_LE(std::abs(v), bound);
}

TEST(Init, HiddenActivationScale) {
  ModelShape s;
  s.d_x = 1;
  s.d_y = 1;
  s.hidden = 64;
  Rng rng(10);
  const ModelParams m = init_params(s, rng);
  std::mt19937_64 data(11);
  const Tensor h = hidden_activations(m.encoder, uniform({1000, 2}, data));
  double mean = 0.0;
  for (double v : h.values()) mean += v;
  mean /= static_cast<double>(h.size());
  double var = 0.0;
  for (double v : h.values()) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(h.size()));
  EXPECT_GT(sd, 0.1);
  EXPECT_LT(sd, 2.0);
}

TEST(ModelShapeTest, InvalidSizesRejected) {
  ModelShape s;
  s.r_dim = 0;
  EXPECT_THROW(s.validate(), ContractError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const ModelParams m = small_model(Head::gaussian, 1, 12);
  const auto path = temp_file("round.ckpt");
  save_checkpoint(path, m, {99, 1234, "gk"});
  const Checkpoint ck = load_checkpoint(path);
  EXPECT_EQ(ck.meta.seed, 99u);
  EXPECT_EQ(ck.meta.step, 1234u);
  EXPECT_EQ(ck.meta.task, "gk");
  EXPECT_EQ(ck.params.shape.head, Head::gaussian);
  const auto a = m.tensors(), b = ck.params.tensors();
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].shape(), b[i].shape());
    EXPECT_EQ(oracle::to_vec(a[i]), oracle::to_vec(b[i]));
  }
}

TEST(Checkpoint, LayoutIsHeaderLineThenLittleEndianDoubles) {
  const ModelParams m = small_model();
  const auto path = temp_file("layout.ckpt");
  save_checkpoint(path, m, {1, 2, "uniform_regression"});
  std::ifstream in(path, std::ios::binary);
  std::string header;
  std::getline(in, header);
  EXPECT_NE(header.find("wnp-checkpoint"), std::string::npos);
  const auto payload = std::filesystem::file_size(path) - header.size() - 1;
  EXPECT_EQ(payload, m.parameter_count() * sizeof(double));
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | bytes[i];
  EXPECT_EQ(std::bit_cast<double>(bits), m.encoder.hidden.weight[0]);
}

TEST(Checkpoint, TruncatedFileIsRejected) {
  const auto path = temp_file("trunc.ckpt");
  save_checkpoint(path, small_model(), {1, 2, "gk"});
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
  EXPECT_ANY_THROW(load_checkpoint(path));
}

TEST(Checkpoint, MissingFileIsRejected) {
  EXPECT_ANY_THROW(load_checkpoint(temp_file("does_not_exist.ckpt")));
}

TEST(Checkpoint, SetTensorsNamesMismatchedShape) {
  ModelParams m = small_model();
  auto ts = m.tensors();
  ts[2] = Tensor::zeros({3, 3});
  try {
    m.set_tensors(ts);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.output.weight"), std::string::npos);
  }
}
