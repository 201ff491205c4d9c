#include "tscodec/model.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace tscodec;
using namespace tscodec::model;
namespace ou = tscodec::oracle_util;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.base_channels = 1;
  cfg.latent_dim = 4;
  cfg.residual_units_per_block = 1;
  return cfg;
}

signal::Waveform random_wave(std::size_t n, std::uint64_t seed) {
  const auto x = ou::random_signal(n, seed);
  return {std::vector<float>(x.begin(), x.end()), 24000};
}

}  // namespace

TEST(Model, FrameArithmetic) {
  const ModelConfig cfg;
  EXPECT_EQ(cfg.total_stride(), 320);
  EXPECT_EQ(output_frames(24000, cfg), 75);
  EXPECT_DOUBLE_EQ(cfg.frame_rate(), 75.0);
  EXPECT_EQ(output_frames(8640, cfg), 27);
  EXPECT_EQ(output_frames(1, cfg), 1);
  EXPECT_EQ(output_frames(960, cfg), 3);
  EXPECT_EQ(output_frames(961, cfg), 4);
  EXPECT_THROW(output_frames(0, cfg), InvalidArgument);
}

TEST(Model, EncodeDecodeShapes) {
  const ModelConfig cfg;
  const Encoder<float> enc(cfg);
  const Decoder<float> dec(cfg);
  const auto pe = enc.init_parameters(1);
  const auto pd = dec.init_parameters(2);
  for (auto [len, frames] : {std::pair<std::size_t, Index>{960, 3}, {320, 1}, {961, 4}}) {
    const auto z = encode(random_wave(len, len), enc, pe);
    EXPECT_EQ(z.rows(), frames);
    EXPECT_EQ(z.cols(), 256);
    const auto y = decode(z, dec, pd);
    EXPECT_EQ(y.samples.size(), static_cast<std::size_t>(frames * 320));
    for (float v : y.samples) ASSERT_TRUE(std::isfinite(v));
  }
}

TEST(Model, ShapeAlgebraAllLengths) {
  const ModelConfig cfg = tiny_config();
  const Encoder<float> enc(cfg);
  const Decoder<float> dec(cfg);
  const auto pe = enc.init_parameters(3);
  const auto pd = dec.init_parameters(4);
  for (std::size_t len = 1; len <= 2000; ++len) {
    const auto z = encode(random_wave(len, 5), enc, pe);
    const auto y = decode(z, dec, pd);
    ASSERT_EQ(y.samples.size(), static_cast<std::size_t>(output_frames(len, cfg) * 320)) << len;
  }
}

TEST(Model, EncoderIsCausal) {
  const ModelConfig cfg;
  const Encoder<float> enc(cfg);
  const auto pe = enc.init_parameters(7);
  const auto a = random_wave(3200, 8);
  for (std::size_t t : {640u, 1000u, 2880u}) {
    auto b = a;
    for (std::size_t i = t; i < b.samples.size(); ++i) b.samples[i] = -b.samples[i] + 0.3f;
    const auto za = encode(a, enc, pe);
    const auto zb = encode(b, enc, pe);
    for (Index f = 0; f < za.rows(); ++f) {
      const bool past_only = static_cast<std::size_t>((f + 1) * 320) <= t;
      const double diff = (za.row(f) - zb.row(f)).cwiseAbs().maxCoeff();
      if (past_only) {
        EXPECT_EQ(diff, 0.0) << "frame " << f << " changed by samples from " << t;
      }
    }
    // the frame containing t must react
    EXPECT_GT((za.row(static_cast<Index>(t / 320)) - zb.row(static_cast<Index>(t / 320))).norm(), 0.0);
  }
}

TEST(Model, DecoderIsCausal) {
  const ModelConfig cfg = tiny_config();
  const Decoder<float> dec(cfg);
  const auto pd = dec.init_parameters(9);
  LatentSequence z = LatentSequence::Random(5, 4);
  const auto y1 = decode(z, dec, pd);
  z.row(3).setConstant(2.0f);
  const auto y2 = decode(z, dec, pd);
  for (std::size_t i = 0; i < 3 * 320; ++i) ASSERT_EQ(y1.samples[i], y2.samples[i]) << i;
}

TEST(Model, DeterministicForward) {
  const ModelConfig cfg;
  const Encoder<float> enc(cfg);
  const auto pe = enc.init_parameters(10);
  const auto w = random_wave(1500, 11);
  EXPECT_EQ(encode(w, enc, pe), encode(w, enc, pe));
  EXPECT_EQ(enc.init_parameters(10), pe);
}

TEST(Model, ShapeMismatchThrows) {
  const ModelConfig cfg;
  const Encoder<float> enc(cfg);
  const Decoder<float> dec(cfg);
  std::vector<float> wrong(10, 0.0f);
  EXPECT_THROW(encode(random_wave(320, 1), enc, wrong), InvalidArgument);
  EXPECT_THROW(decode(LatentSequence::Zero(2, 256), dec, wrong), InvalidArgument);
  EXPECT_THROW(decode(LatentSequence::Zero(2, 17), dec, dec.init_parameters(1)), InvalidArgument);
  ModelConfig bad;
  bad.strides = {2, 0};
  EXPECT_THROW(bad.validate(), InvalidArgument);
}

TEST(Model, GradientsMatchFiniteDifferences) {
  ModelConfig cfg = tiny_config();
  cfg.strides = {2, 4};
  cfg.base_channels = 2;
  const Encoder<double> enc(cfg);
  const Decoder<double> dec(cfg);
  const auto pe = enc.init_parameters(12);
  const auto pd = dec.init_parameters(13);
  const auto x = ou::random_signal(64, 14);
  const auto probe = ou::random_signal(64, 15);
  auto loss = [&](const std::vector<double>& e, const std::vector<double>& d) {
    nn::Cache<double> ce, cd;
    const auto z = enc.forward(e, x, ce);
    const auto y = dec.forward(d, z, cd);
    double acc = 0.0;
    for (Index i = 0; i < y.data.size(); ++i) acc += y.data(0, i) * probe[static_cast<std::size_t>(i)];
    return acc;
  };
  nn::Cache<double> ce, cd;
  const auto z = enc.forward(pe, x, ce);
  dec.forward(pd, z, cd);
  std::vector<double> ge(pe.size(), 0.0), gd(pd.size(), 0.0);
  const auto gz = dec.backward(pd, cd, probe, gd);
  enc.backward(pe, ce, gz, ge);
  EXPECT_LE(ou::relative_error(gd, ou::finite_difference([&](const std::vector<double>& d) { return loss(pe, d); }, pd)), 1e-6);
  EXPECT_LE(ou::relative_error(ge, ou::finite_difference([&](const std::vector<double>& e) { return loss(e, pd); }, pe)), 1e-6);
}

TEST(Digest, StableAndSensitive) {
  const Encoder<float> enc(ModelConfig{});
  auto p = enc.init_parameters(1);
  const auto d = parameter_digest(p);
  EXPECT_EQ(d, parameter_digest(p));
  p[p.size() / 2] = std::nextafter(p[p.size() / 2], 10.0f);
  EXPECT_NE(d, parameter_digest(p));
  EXPECT_EQ(digest_hex(0xabcULL), "0000000000000abc");
  std::vector<float> a{0.0f}, b{-0.0f};
  EXPECT_NE(parameter_digest(a), parameter_digest(b));
}
